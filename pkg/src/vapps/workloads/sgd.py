"""Distributed SGD over a shared weight row, with regret and view audits.

Components are f_t(x) = h(||x - c_t||) where h is the Huber function with
knee L: quadratic up to L, linear beyond, so every gradient has norm <= L.
Centers lie in the unit ball, hence the minimizer of sum_t f_t is the mean
of the centers whenever every center is within L of that mean.

Worker p (index in sorted worker order) owns global steps t = i*P + p + 1,
i = 0, 1, ...; its i-th update is stamped with clock i. The reference
sequence is x_t = x_0 + sum_{t' < t} u_{t'}.
"""

from __future__ import annotations

import math
import random
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from ..core import DENSE, ParamKey, WorkerId, grow_partials
from ..errors import ConfigError
from ..policy import ConsistencyPolicy, Model
from ..topology import TableSpec, Topology

TABLE = 0
ROW = 0


@dataclass(frozen=True)
class SgdProblem:
    K: int
    T: int
    P: int
    L: float
    F: float
    sigma: float
    delta_vap: float
    centers: Tuple[Tuple[float, ...], ...]

    @property
    def u(self) -> float:
        """Largest possible single-coordinate update: eta_1 * L."""
        return self.sigma * self.L

    def eta(self, t: int) -> float:
        return self.sigma / math.sqrt(t)

    def v_at_clock(self, clock: int) -> float:
        # Epoch-stepped threshold: clock i covers global steps up to (i+1)P.
        return self.delta_vap / math.sqrt((clock + 1) * self.P)


def make_problem(K: int = 4, T: int = 200, P: int = 1, delta_vap: float = 0.0, seed: int = 0,
                 L: float = 4.0) -> SgdProblem:
    if T % P:
        raise ConfigError(f"T={T} must be a multiple of P={P}")
    rng = random.Random(f"sgd-centers:{seed}:{K}:{T}")
    centers = []
    for _ in range(T):
        g = [rng.gauss(0.0, 1.0) for _ in range(K)]
        n = math.sqrt(math.fsum(x * x for x in g))
        r = rng.random() ** (1.0 / K)
        centers.append(tuple(r * x / n for x in g))
    # Iterates and x* stay in the unit ball up to the asynchrony noise, so
    # 0.5*||x - x'||^2 <= 0.5 * 3^2 leaves a margin of one radius.
    F = math.sqrt(4.5)
    problem = SgdProblem(K, T, P, L, F, F / L, delta_vap, tuple(centers))
    check_lipschitz(problem, seed)
    return problem


def loss(x: Sequence[float], c: Sequence[float], L: float) -> float:
    r = math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(x, c)))
    return 0.5 * r * r if r <= L else L * r - 0.5 * L * L


def grad(x: Sequence[float], c: Sequence[float], L: float) -> List[float]:
    diff = [a - b for a, b in zip(x, c)]
    r = math.sqrt(math.fsum(d * d for d in diff))
    scale = 1.0 if r <= L else L / r
    return [d * scale for d in diff]


def check_lipschitz(problem: SgdProblem, seed: int, samples: int = 200) -> None:
    rng = random.Random(f"lipschitz:{seed}")
    for _ in range(samples):
        x = [rng.uniform(-10, 10) for _ in range(problem.K)]
        c = problem.centers[rng.randrange(problem.T)]
        g = grad(x, c, problem.L)
        if math.sqrt(math.fsum(v * v for v in g)) > problem.L * (1 + 1e-12):
            raise ConfigError("component gradient exceeds L")


def compute_regret_bound(sigma: float, L: float, F: float, T: int, delta_vap: float,
                         P: int, K: int) -> float:
    if sigma == 0:
        raise ConfigError("sigma must be non-zero")
    if T < 1:
        raise ConfigError("T must be >= 1")
    rt = math.sqrt(T)
    return sigma * L * L * rt + F * F * rt / sigma + 4 * delta_vap * L * P * math.sqrt(K * T)


def reference_optimum(problem: SgdProblem, tol: float = 1e-10, max_iter: int = 100_000) -> List[float]:
    """Minimize sum_t f_t by full-gradient descent (independent of the closed form)."""
    x = [0.0] * problem.K
    T = problem.T
    for _ in range(max_iter):
        g = [0.0] * problem.K
        parts = [[] for _ in range(problem.K)]
        for c in problem.centers:
            for k, gk in enumerate(grad(x, c, problem.L)):
                parts[k].append(gk)
        g = [math.fsum(p) / T for p in parts]
        if math.sqrt(math.fsum(v * v for v in g)) <= tol:
            return x
        x = [a - b for a, b in zip(x, g)]  # unit step is exact Newton in the quadratic zone
    raise ArithmeticError("reference optimum did not converge")


def closed_form_optimum(problem: SgdProblem) -> List[float]:
    return [math.fsum(c[k] for c in problem.centers) / problem.T for k in range(problem.K)]


def sgd_tables(problem: SgdProblem, model: Model = Model.CVAP_STRONG, staleness: int = 1
               ) -> Dict[int, TableSpec]:
    kw = {}
    if model.uses_clock:
        kw["staleness_s"] = staleness
    if model.uses_value:
        kw["v_schedule"] = problem.v_at_clock
    policy = ConsistencyPolicy(model, problem.u, **kw)
    return {TABLE: TableSpec(TABLE, policy, DENSE, problem.K)}


def sgd_programs(problem: SgdProblem, topology: Topology):
    workers = topology.workers
    if len(workers) != problem.P:
        raise ConfigError(f"topology has {len(workers)} workers, problem expects P={problem.P}")

    def make(p: int):
        def program(api):
            reads = []
            for i in range(problem.T // problem.P):
                t = i * problem.P + p + 1
                row = yield from api.get_row(TABLE, ROW)
                x = [row[k] for k in range(problem.K)]
                reads.append((t, x))
                eta = problem.eta(t)
                for k, gk in enumerate(grad(x, problem.centers[t - 1], problem.L)):
                    d = -eta * gk
                    if d != 0.0:
                        yield from api.inc(TABLE, ROW, k, d)
                yield from api.clock()
            return reads
        return program

    return {w: make(p) for p, w in enumerate(workers)}


def sequential_sgd(problem: SgdProblem) -> List[List[float]]:
    """Single-worker SGD with the same exact accumulation as the table cells."""
    parts = [[] for _ in range(problem.K)]
    out = []
    for t in range(1, problem.T + 1):
        x = [math.fsum(p) for p in parts]
        out.append(x)
        eta = problem.eta(t)
        for k, gk in enumerate(grad(x, problem.centers[t - 1], problem.L)):
            d = -eta * gk
            if d != 0.0:
                grow_partials(parts[k], d)
    return out


# -- omniscient observers -------------------------------------------------------

class _Upd:
    __slots__ = ("origin", "seq", "clock", "key", "delta", "seen_by")

    def __init__(self, rec):
        self.origin, self.seq, self.clock, self.key, self.delta = rec.origin, rec.seq, rec.clock, rec.key, rec.delta
        self.seen_by = set()


@dataclass
class ViewAuditReport:
    reads: int = 0
    failures: List[str] = field(default_factory=list)
    pre_propagation: int = 0
    read_my_writes: int = 0
    best_effort: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures


class UpdateLog:
    """Every issued update with its per-process visibility set."""

    def __init__(self, topology: Topology, staleness: Optional[int] = None, audit: bool = False):
        self.topology = topology
        self.staleness = staleness
        self.audit = audit and staleness is not None
        self.by_key: Dict[ParamKey, List[_Upd]] = defaultdict(list)
        self.by_origin: Dict[WorkerId, List[_Upd]] = defaultdict(list)
        self.report = ViewAuditReport()

    def on_issue(self, client, rec) -> None:
        u = _Upd(rec)
        self.by_key[rec.key].append(u)
        self.by_origin[rec.origin].append(u)

    def on_apply(self, client, shard, chunk) -> None:
        for u in self.by_origin.get(chunk.origin, ()):
            if chunk.first_seq <= u.seq <= chunk.last_seq and \
                    self.topology.shard_of(u.key.table_id, u.key.row_id) == shard:
                u.seen_by.add(client.proc_id)

    def on_get(self, client, worker: WorkerId, key: ParamKey, value: float, clock: int) -> None:
        if self.audit:
            self.audit_noisy_view(worker, key, value, clock)

    def audit_noisy_view(self, worker: WorkerId, key: ParamKey, value: float, clock: int) -> None:
        """Split the reader's view into guaranteed-old, own and in-window peer updates."""
        rep = self.report
        rep.reads += 1
        s = self.staleness
        need = clock - s - 1
        pre, own, best, shown = [], [], [], []
        for u in self.by_key.get(key, ()):
            is_own = u.origin == worker
            visible = is_own or worker.process_id in u.seen_by
            if is_own:
                own.append(u)  # every own update must be visible
                if not visible:
                    rep.failures.append(f"{worker}@{clock}: own update {u.seq} missing on {key}")
            elif u.clock <= need:
                if not visible:
                    rep.failures.append(f"{worker}@{clock}: pre-propagation update "
                                        f"{u.origin}#{u.seq} missing on {key}")
                pre.append(u)
            elif visible:
                if not clock - s <= u.clock <= clock + s:
                    rep.failures.append(f"{worker}@{clock}: {u.origin}#{u.seq} (clock {u.clock}) "
                                        f"outside the staleness window")
                best.append(u)
            if visible:
                shown.append(u.delta)
        if any(u.origin == worker for u in best):
            rep.failures.append(f"{worker}@{clock}: own update classified best-effort")
        explained = math.fsum(shown)
        if value != explained:
            rep.failures.append(f"{worker}@{clock}: residual {value - explained!r} on {key}")
        rep.pre_propagation += len(pre)
        rep.read_my_writes += len(own)
        rep.best_effort += len(best)


@dataclass
class SgdResult:
    problem: SgdProblem
    reads: Dict[int, List[float]]
    x_star: List[float]
    regret: float
    bound: float
    delta_norms: List[float]
    delta_bounds: List[float]
    delta_bound_violations: int
    max_distance_sq: float
    view_audit: Optional[ViewAuditReport] = None
    sim_steps: int = 0
    blocked: int = 0

    @property
    def within_bound(self) -> bool:
        return self.regret <= self.bound

    @property
    def diameter_ok(self) -> bool:
        return 0.5 * self.max_distance_sq <= self.problem.F ** 2


def analyse(problem: SgdProblem, reads: Dict[int, List[float]], updates: Dict[int, List[float]],
            x_star: Sequence[float]) -> Tuple[float, List[float], List[float], int, float]:
    """Regret, ||Delta_t|| per step, view-error bounds, violations, max ||x~ - x*||^2."""
    K, P = problem.K, problem.P
    regret_terms, norms, bounds = [], [], []
    parts = [[] for _ in range(K)]
    violations = 0
    max_d2 = 0.0
    for t in range(1, problem.T + 1):
        x_ref = [math.fsum(p) for p in parts]
        xt = reads[t]
        c = problem.centers[t - 1]
        regret_terms.append(loss(xt, c, problem.L) - loss(x_star, c, problem.L))
        n = math.sqrt(math.fsum((a - b) ** 2 for a, b in zip(xt, x_ref)))
        norms.append(n)
        b = 2 * problem.v_at_clock((t - 1) // P) * math.sqrt(K) * (P - 1)
        bounds.append(b)
        if n > b:
            violations += 1
        max_d2 = max(max_d2, math.fsum((a - b) ** 2 for a, b in zip(xt, x_star)))
        for k, d in enumerate(updates[t]):
            grow_partials(parts[k], d)
    return math.fsum(regret_terms), norms, bounds, violations, max_d2


def updates_from_reads(problem: SgdProblem, reads: Dict[int, List[float]]) -> Dict[int, List[float]]:
    """Recompute each step's update from the parameters its worker read."""
    out = {}
    for t in range(1, problem.T + 1):
        eta = problem.eta(t)
        out[t] = [-eta * g for g in grad(reads[t], problem.centers[t - 1], problem.L)]
    return out


def result_from_reads(problem: SgdProblem, reads: Dict[int, List[float]],
                      x_star: Optional[Sequence[float]] = None) -> SgdResult:
    """Regret and reference-sequence analysis without an omniscient log (socket runs)."""
    if x_star is None:
        x_star = reference_optimum(problem)
    regret, norms, bounds, viol, max_d2 = analyse(problem, reads, updates_from_reads(problem, reads), x_star)
    bound = compute_regret_bound(problem.sigma, problem.L, problem.F, problem.T,
                                 problem.delta_vap, problem.P, problem.K)
    return SgdResult(problem, reads, list(x_star), regret, bound, norms, bounds, viol, max_d2)


def collect_reads(results) -> Dict[int, List[float]]:
    reads: Dict[int, List[float]] = {}
    for w_reads in results.values():
        for t, x in w_reads:
            reads[t] = x
    return reads


def run_sgd(problem: SgdProblem, topology: Topology, seed: int, *, model: Model = Model.CVAP_STRONG,
            staleness: int = 1, audit: bool = False, profile: str = "uniform",
            x_star: Optional[Sequence[float]] = None, **sim_kw) -> SgdResult:
    from ..sim import simulate

    tables = sgd_tables(problem, model, staleness)
    log = UpdateLog(topology, staleness if model.uses_clock else None, audit)
    sim, res = simulate(topology, tables, sgd_programs(problem, topology), seed, profile=profile,
                        ledger=False, observers=[log], record_log=False, **sim_kw)
    reads = collect_reads(res.results)
    workers = topology.workers
    updates: Dict[int, List[float]] = {t: [0.0] * problem.K for t in range(1, problem.T + 1)}
    for p, w in enumerate(workers):
        for u in log.by_origin.get(w, ()):
            t = u.clock * problem.P + p + 1
            updates[t][u.key.col_id] += u.delta  # one Inc per coordinate per step
    if x_star is None:
        x_star = reference_optimum(problem)
    regret, norms, bounds, viol, max_d2 = analyse(problem, reads, updates, x_star)
    bound = compute_regret_bound(problem.sigma, problem.L, problem.F, problem.T,
                                 problem.delta_vap, problem.P, problem.K)
    return SgdResult(problem, reads, list(x_star), regret, bound, norms, bounds, viol, max_d2,
                     log.report if audit else None, res.steps, sum(res.blocked.values()))
