"""Command-line entry point: ``vapps run|serve|client|validate <config> ...``.

Exit codes: 0 all asserted bounds held, 1 a bound was violated, 2 invalid
configuration, 3 socket bind or connect failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import signal
import sys
from pathlib import Path
from typing import Dict, List, Tuple

from . import __version__
from .config import ExperimentConfig, load_config
from .core import ParamKey
from .errors import ConfigError
from .sim import simulate
from .workloads import bsp, lda, sgd, synthetic

log = logging.getLogger("vapps")

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_SOCKET = 0, 1, 2, 3
SUMMARY_SCHEMA = 1

Table = Tuple[List[str], List[list]]


class Outcome:
    """Metric tables plus asserted and reported bounds of one experiment."""

    def __init__(self):
        self.metrics: Dict[str, Table] = {}
        self.bounds: Dict[str, dict] = {}
        self.observed: Dict[str, object] = {}

    def check(self, name: str, held: bool, observed=None, limit=None, asserted: bool = True) -> None:
        self.bounds[name] = {"held": bool(held), "asserted": asserted,
                             "observed": observed, "limit": limit}

    @property
    def passed(self) -> bool:
        return all(b["held"] for b in self.bounds.values() if b["asserted"])


# -- workloads ------------------------------------------------------------------

def _sim_kw(cfg: ExperimentConfig) -> dict:
    return {"profile": cfg.profile, "laggard": cfg.laggard, "delay_factor": cfg.delay_factor}


def _messages_table(messages: Dict[str, int]) -> Table:
    return ["tag", "count"], [[k, v] for k, v in sorted(messages.items())]


def _blocking_table(blocked) -> Table:
    return ["worker", "blocked_waits"], [[str(w), n] for w, n in sorted(blocked.items())]


def sgd_problem(cfg: ExperimentConfig) -> sgd.SgdProblem:
    return sgd.make_problem(K=cfg.param("K", int), T=cfg.param("T", int), P=cfg.P,
                            delta_vap=cfg.param("delta_vap", float), seed=cfg.seed,
                            L=cfg.param("L", float))


def sgd_tables_for(cfg: ExperimentConfig, problem: sgd.SgdProblem):
    policy = cfg.tables[0].policy
    # u and the v schedule follow from the problem; the table block picks model and s.
    return sgd.sgd_tables(problem, policy.model, policy.staleness_s or 0)


def run_sgd_workload(cfg: ExperimentConfig, out: Outcome) -> None:
    problem = sgd_problem(cfg)
    model = cfg.tables[0].policy.model
    staleness = cfg.tables[0].policy.staleness_s or 0
    if cfg.mode == "sim":
        audit = model.uses_clock and model.strong
        res = sgd.run_sgd(problem, cfg.topology, cfg.seed, model=model, staleness=staleness,
                          audit=audit, **_sim_kw(cfg))
        if res.view_audit is not None:
            out.check("noisy_view_audit", res.view_audit.ok, len(res.view_audit.failures), 0)
        out.observed["blocked_waits"] = res.blocked
    else:
        from .transport.sockets import run_local
        tables = sgd_tables_for(cfg, problem)
        results, _ = run_local(cfg.topology, tables, sgd.sgd_programs(problem, cfg.topology), cfg.timeout)
        res = sgd.result_from_reads(problem, sgd.collect_reads(results))
    out.check("regret_bound", res.within_bound, res.regret, res.bound)
    out.check("diameter", res.diameter_ok, 0.5 * res.max_distance_sq, problem.F ** 2, asserted=False)
    out.check("delta_norm_bound", res.delta_bound_violations == 0, res.delta_bound_violations, 0, asserted=False)
    rows, acc = [], 0.0
    for t in range(1, problem.T + 1):
        c = problem.centers[t - 1]
        gap = sgd.loss(res.reads[t], c, problem.L) - sgd.loss(res.x_star, c, problem.L)
        acc += gap
        rows.append([t, repr(gap), repr(acc)])
    out.metrics["regret"] = (["t", "loss_gap", "cumulative"], rows)
    out.metrics["delta_norms"] = (["t", "delta_norm", "delta_bound"],
                                  [[t + 1, repr(n), repr(b)] for t, (n, b) in
                                   enumerate(zip(res.delta_norms, res.delta_bounds))])
    out.observed.update(regret=res.regret, bound=res.bound, max_delta_norm=max(res.delta_norms))


def run_audit_workload(cfg: ExperimentConfig, out: Outcome) -> None:
    rows, cols = cfg.param("rows", int), cfg.param("cols", int)
    programs = synthetic.inc_programs(
        cfg.topology, cfg.seed, rows=rows, cols=cols, clocks=cfg.param("clocks", int),
        ops_per_clock=cfg.param("ops_per_clock", int), read_fraction=cfg.param("read_fraction", float),
        u=cfg.tables[0].policy.magnitude_cap_u)
    sim, res = simulate(cfg.topology, cfg.tables, programs, cfg.seed, **_sim_kw(cfg))
    summary = res.ledger.summary
    kinds = ["staleness", "read_my_writes", "unsynced", "half_synced", "fifo", "divergence"]
    for kind in kinds:
        n = sum(1 for v in summary.violations if v.kind == kind)
        out.check(kind, n == 0, n, 0)
    out.check("view_error_bound", summary.view_error_exceeded == 0, summary.view_error_exceeded, 0, asserted=False)
    totals = res.ledger.expected_totals()
    master = sim.master_state()
    out.check("conservation", all(master.get(k, 0.0) == v for k, v in totals.items()), None, None)
    out.metrics["divergence"] = (["metric", "value"], [
        ["max_divergence", repr(summary.max_divergence)],
        ["max_divergence_over_bound", repr(summary.max_divergence_ratio)],
        ["max_divergence_over_view_error_bound", repr(summary.max_view_error_ratio)],
        ["max_unsynced", repr(summary.max_unsynced)],
        ["max_half_synced", repr(summary.max_half_synced)],
    ] + [[f"checks_{k}", v] for k, v in sorted(summary.checks.items())])
    out.metrics["blocking"] = _blocking_table(res.blocked)
    out.metrics["messages"] = _messages_table(res.messages)
    out.observed.update(max_divergence=summary.max_divergence, steps=res.steps,
                        max_message_age=res.max_message_age,
                        violations=[f"{v.kind}: {v.detail}" for v in summary.violations])


def run_bsp_workload(cfg: ExperimentConfig, out: Outcome) -> None:
    rounds, rows, cols = cfg.param("rounds", int), cfg.param("rows", int), cfg.param("cols", int)
    programs = bsp.phased_programs(cfg.topology, cfg.seed, rounds, rows, cols)
    ref = bsp.serial_bsp(cfg.topology.workers, cfg.seed, rounds, rows, cols)
    final_ref = ref[-1] if ref else {}
    if cfg.mode == "sim":
        snaps = bsp.MasterSnapshots()
        sim, res = simulate(cfg.topology, cfg.tables, programs, cfg.seed, observers=[snaps], **_sim_kw(cfg))
        per_round = [snaps.after_round(r, rows, cols, cfg.topology.num_shards) == ref[r] for r in range(rounds)]
        out.check("per_clock_equal", all(per_round), sum(not x for x in per_round), 0)
        master = sim.master_state()
        out.metrics["messages"] = _messages_table(res.messages)
        out.metrics["blocking"] = _blocking_table(res.blocked)
    else:
        from .transport.sockets import run_local
        _, master = run_local(cfg.topology, cfg.tables, programs, cfg.timeout)
    final = {k: master.get(k, 0.0) for k in final_ref}
    out.check("final_equal", final == final_ref, None, None)


def run_lda_workload(cfg: ExperimentConfig, out: Outcome) -> None:
    Kt, sweeps = cfg.param("topics", int), cfg.param("sweeps", int)
    alpha, beta = cfg.param("alpha", float), cfg.param("beta", float)
    path = cfg.param("corpus")
    if path:
        corpus = lda.read_corpus(path)
    else:
        corpus = lda.synth_corpus(Kt, cfg.param("docs", int), cfg.param("vocab", int),
                                  cfg.param("doc_len", int), cfg.seed)
    policy = cfg.tables[0].policy
    if cfg.mode == "sim":
        res = lda.run_lda(corpus, cfg.topology, policy, Kt, sweeps, cfg.seed, alpha, beta, **_sim_kw(cfg))
    else:
        from .transport.sockets import run_local
        tables = lda.lda_tables(corpus, Kt, policy)
        results, master = run_local(cfg.topology, tables,
                                    lda.lda_programs(corpus, cfg.topology, Kt, sweeps, cfg.seed, alpha, beta),
                                    cfg.timeout)
        z = [None] * corpus.D
        for zmap in results.values():
            for d, zd in zmap.items():
                z[d] = zd
        wt = {(k.row_id, k.col_id): v for k, v in master.items() if k.table_id == lda.WORD_TOPIC}
        tt = [master.get(ParamKey(lda.TOPIC_TOTAL, 0, k), 0.0) for k in range(Kt)]
        res = lda.LdaResult(z, lda.log_likelihood(corpus, z, Kt, alpha, beta), wt, tt,
                            lda.check_conservation(corpus, z, wt, tt, Kt),
                            all(v >= 0 for v in wt.values()) and all(v >= 0 for v in tt), 0)
    out.check("count_conservation", res.conserved, None, None)
    out.check("non_negative_counts", res.non_negative, None, None)
    rows = [["final", repr(res.final_ll)]]
    if cfg.param("compare_sequential", bool):
        _, lls = lda.sequential_gibbs(corpus, Kt, sweeps, cfg.seed, alpha, beta)
        rel = abs(res.final_ll - lls[-1]) / abs(lls[-1])
        tol = cfg.param("tolerance", float)
        out.check("ll_vs_sequential", rel <= tol, rel, tol)
        rows += [[f"sequential_{i + 1}", repr(v)] for i, v in enumerate(lls)]
    out.metrics["lda_ll"] = (["sweep", "log_likelihood"], rows)
    out.observed.update(final_ll=res.final_ll, tokens=corpus.num_tokens)


RUNNERS = {"sgd": run_sgd_workload, "audit": run_audit_workload, "bsp": run_bsp_workload,
           "lda": run_lda_workload}


# -- output ---------------------------------------------------------------------

def write_outputs(cfg: ExperimentConfig, out: Outcome) -> Path:
    dest = Path(cfg.output)
    dest.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in sorted(out.metrics.items()):
        with open(dest / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
    summary = {
        "schema_version": SUMMARY_SCHEMA,
        "vapps_version": __version__,
        "workload": cfg.workload,
        "mode": cfg.mode,
        "seed": cfg.seed,
        "P": cfg.P,
        "tables": {str(t): {"model": s.policy.model.value, "staleness": s.policy.staleness_s,
                            "value_bound": s.policy.value_bound_v, "magnitude_cap": s.policy.magnitude_cap_u}
                   for t, s in sorted(cfg.tables.items())},
        "bounds": out.bounds,
        "observed": out.observed,
        "passed": out.passed,
    }
    (dest / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    return dest


# -- commands -------------------------------------------------------------------

def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"ok: {cfg.workload} workload, mode {cfg.mode}, P={cfg.P}, "
          f"{cfg.topology.num_shards} shard(s), tables {sorted(cfg.tables)}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = Outcome()
    RUNNERS[cfg.workload](cfg, out)
    dest = write_outputs(cfg, out)
    for name, b in sorted(out.bounds.items()):
        tag = "ok" if b["held"] else ("VIOLATED" if b["asserted"] else "exceeded (reported only)")
        print(f"{name}: {tag} (observed {b['observed']}, limit {b['limit']})")
    print(f"summary written to {dest / 'summary.json'}")
    return EXIT_OK if out.passed else EXIT_VIOLATION


def _programs_for(cfg: ExperimentConfig):
    if cfg.workload == "sgd":
        problem = sgd_problem(cfg)
        return sgd_tables_for(cfg, problem), sgd.sgd_programs(problem, cfg.topology)
    if cfg.workload == "bsp":
        return cfg.tables, bsp.phased_programs(cfg.topology, cfg.seed, cfg.param("rounds", int),
                                               cfg.param("rows", int), cfg.param("cols", int))
    if cfg.workload == "lda":
        Kt = cfg.param("topics", int)
        path = cfg.param("corpus")
        corpus = lda.read_corpus(path) if path else lda.synth_corpus(
            Kt, cfg.param("docs", int), cfg.param("vocab", int), cfg.param("doc_len", int), cfg.seed)
        return (lda.lda_tables(corpus, Kt, cfg.tables[0].policy),
                lda.lda_programs(corpus, cfg.topology, Kt, cfg.param("sweeps", int), cfg.seed,
                                 cfg.param("alpha", float), cfg.param("beta", float)))
    raise ConfigError(f"workload {cfg.workload} cannot run over sockets")


def _install_sigterm() -> None:
    def handler(signum, frame):
        raise KeyboardInterrupt
    signal.signal(signal.SIGTERM, handler)


def cmd_serve(args) -> int:
    from .transport.sockets import ServerNode
    cfg = load_config(args.config)
    if not 0 <= args.shard < cfg.topology.num_shards:
        raise ConfigError(f"shard {args.shard} outside 0..{cfg.topology.num_shards - 1}")
    tables, _ = _programs_for(cfg)
    host, port = cfg.address(args.shard)
    try:
        node = ServerNode(args.shard, cfg.topology, tables, host, port)
    except OSError as exc:
        print(f"error: cannot listen on {host}:{port}: {exc}", file=sys.stderr)
        return EXIT_SOCKET
    _install_sigterm()
    node.start()
    print(f"shard {args.shard} listening on {host}:{port}", flush=True)
    try:
        node.join()
    except KeyboardInterrupt:
        print("interrupted; closing connections", file=sys.stderr)
    master = {f"{k.table_id},{k.row_id},{k.col_id}": v for k, v in node.shard.master_snapshot().items()}
    dest = Path(cfg.output)
    dest.mkdir(parents=True, exist_ok=True)
    (dest / f"shard{args.shard}_master.json").write_text(json.dumps(master, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_client(args) -> int:
    from .transport.sockets import ClientNode
    cfg = load_config(args.config)
    if args.proc not in cfg.topology.processes:
        raise ConfigError(f"process {args.proc} not in topology")
    tables, programs = _programs_for(cfg)
    addrs = [cfg.address(s) for s in range(cfg.topology.num_shards)]
    try:
        node = ClientNode(args.proc, cfg.topology, tables, addrs, cfg.timeout, connect_timeout=cfg.timeout)
    except OSError as exc:
        print(f"error: cannot reach shards {addrs}: {exc}", file=sys.stderr)
        return EXIT_SOCKET
    _install_sigterm()
    try:
        node.run_programs({w: programs[w] for w in cfg.topology.processes[args.proc]})
    except KeyboardInterrupt:
        print("interrupted; flushing and closing", file=sys.stderr)
        with node.cond:
            for w in node.client.threads:
                node.client.flush_now(w, force=True)
    finally:
        node.close()
    print(f"process {args.proc} finished", flush=True)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vapps", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"vapps {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment and write metrics")
    r.add_argument("config")
    r.set_defaults(func=cmd_run)
    v = sub.add_parser("validate", help="check a config file")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)
    s = sub.add_parser("serve", help="run one server shard over TCP")
    s.add_argument("config")
    s.add_argument("shard", type=int)
    s.set_defaults(func=cmd_serve)
    c = sub.add_parser("client", help="run one client process over TCP")
    c.add_argument("config")
    c.add_argument("proc", type=int)
    c.set_defaults(func=cmd_client)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
