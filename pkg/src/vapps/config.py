"""Experiment configuration: INI files read with configparser.

Grammar (every key optional unless marked required; defaults in DEFAULTS)::

    [experiment]   mode, seed, output, profile, laggard, delay_factor, timeout
    [topology]     shards, processes, threads, host, base_port
    [table.<id>]   model (required), staleness, value_bound, magnitude_cap,
                   vap_mode, row_kind, row_length
    [workload]     kind (required: sgd | lda | audit | bsp) plus kind-specific keys

Environment overrides: VAPPS_SEED replaces experiment.seed and
VAPPS_OUTPUT replaces experiment.output.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

from .core import DENSE, SPARSE
from .errors import ConfigError, ContractViolation
from .policy import MAGNITUDE, SIGNED, ConsistencyPolicy, Model
from .sim import PROFILES
from .topology import TableSpec, Topology

DEFAULTS: Dict[str, Dict[str, str]] = {
    "experiment": {
        "mode": "sim", "seed": "0", "output": "vapps-out", "profile": "uniform",
        "laggard": "", "delay_factor": "50", "timeout": "30",
    },
    "topology": {
        "shards": "1", "processes": "1", "threads": "1", "host": "127.0.0.1", "base_port": "7100",
    },
    "table": {
        "staleness": "", "value_bound": "", "magnitude_cap": "1.0", "vap_mode": MAGNITUDE,
        "row_kind": DENSE, "row_length": "",
    },
    "workload.sgd": {"K": "4", "T": "200", "delta_vap": "0.0", "L": "4.0"},
    "workload.lda": {
        "topics": "5", "docs": "500", "vocab": "100", "doc_len": "20", "sweeps": "50",
        "alpha": "0.1", "beta": "0.01", "corpus": "", "compare_sequential": "false",
        "tolerance": "0.02",
    },
    "workload.audit": {"rows": "2", "cols": "2", "clocks": "3", "ops_per_clock": "6",
                       "read_fraction": "0.4"},
    "workload.bsp": {"rounds": "4", "rows": "2", "cols": "3"},
}

WORKLOADS = ("sgd", "lda", "audit", "bsp")
ENV_SEED = "VAPPS_SEED"
ENV_OUTPUT = "VAPPS_OUTPUT"


@dataclass
class ExperimentConfig:
    mode: str
    seed: int
    output: str
    profile: str
    laggard: Optional[int]
    delay_factor: float
    timeout: float
    topology: Topology
    host: str
    base_port: int
    tables: Dict[int, TableSpec]
    workload: str
    params: Dict[str, str] = field(default_factory=dict)

    @property
    def P(self) -> int:
        return self.topology.P

    def param(self, name: str, cast=str):
        raw = self.params.get(name, DEFAULTS[f"workload.{self.workload}"].get(name))
        if raw is None:
            raise ConfigError(f"workload {self.workload} has no parameter {name}")
        try:
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError:
            raise ConfigError(f"workload.{name} = {raw!r} is not a valid {cast.__name__}") from None

    def address(self, shard: int):
        return (self.host, self.base_port + shard)


def _get(section: Mapping[str, str], defaults: Mapping[str, str], key: str, cast, where: str):
    raw = section.get(key, defaults.get(key, ""))
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"[{where}] {key} = {raw!r} is not a valid {cast.__name__}") from None


def _opt(raw: str, cast):
    return cast(raw) if raw.strip() else None


def parse_table(table_id: int, section: Mapping[str, str]) -> TableSpec:
    where = f"table.{table_id}"
    d = DEFAULTS["table"]
    if "model" not in section:
        raise ConfigError(f"[{where}] needs a model")
    try:
        model = Model(section["model"].strip().lower())
    except ValueError:
        raise ConfigError(f"[{where}] unknown model {section['model']!r}") from None
    try:
        staleness = _opt(section.get("staleness", d["staleness"]), int)
        v = _opt(section.get("value_bound", d["value_bound"]), float)
        u = float(section.get("magnitude_cap", d["magnitude_cap"]))
        row_length = _opt(section.get("row_length", d["row_length"]), int)
    except ValueError as exc:
        raise ConfigError(f"[{where}] {exc}") from None
    vap_mode = section.get("vap_mode", d["vap_mode"]).strip().lower()
    if vap_mode not in (SIGNED, MAGNITUDE):
        raise ConfigError(f"[{where}] vap_mode must be signed or magnitude")
    row_kind = section.get("row_kind", d["row_kind"]).strip().lower()
    if row_kind not in (DENSE, SPARSE):
        raise ConfigError(f"[{where}] row_kind must be dense or sparse")
    if row_kind == DENSE and (row_length is None or row_length < 1):
        raise ConfigError(f"[{where}] dense tables need a positive row_length")
    try:
        policy = ConsistencyPolicy(model, u, staleness_s=staleness, value_bound_v=v, vap_mode=vap_mode)
    except ContractViolation as exc:
        raise ConfigError(f"[{where}] {exc}") from None
    return TableSpec(table_id, policy, row_kind, row_length)


def load_config(path, env: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    env = os.environ if env is None else env
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.optionxform = str  # keep K, T, L case-sensitive
    try:
        if not cp.read(path):
            raise ConfigError(f"cannot read config {path}")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_parser(cp, env)


def config_from_parser(cp: configparser.ConfigParser, env: Mapping[str, str]) -> ExperimentConfig:
    exp = cp["experiment"] if cp.has_section("experiment") else {}
    top = cp["topology"] if cp.has_section("topology") else {}
    de, dt = DEFAULTS["experiment"], DEFAULTS["topology"]
    mode = exp.get("mode", de["mode"]).strip()
    if mode not in ("sim", "socket"):
        raise ConfigError(f"[experiment] mode must be sim or socket, not {mode!r}")
    seed = _get(exp, de, "seed", int, "experiment")
    if env.get(ENV_SEED):
        try:
            seed = int(env[ENV_SEED])
        except ValueError:
            raise ConfigError(f"{ENV_SEED}={env[ENV_SEED]!r} is not an integer") from None
    output = env.get(ENV_OUTPUT) or exp.get("output", de["output"])
    profile = exp.get("profile", de["profile"]).strip()
    if profile not in PROFILES:
        raise ConfigError(f"[experiment] profile must be one of {', '.join(PROFILES)}")
    laggard = _opt(exp.get("laggard", de["laggard"]), int)
    shards = _get(top, dt, "shards", int, "topology")
    procs = _get(top, dt, "processes", int, "topology")
    threads = _get(top, dt, "threads", int, "topology")
    if min(shards, procs, threads) < 1:
        raise ConfigError("[topology] shards, processes and threads must be >= 1")
    tables = {}
    for name in cp.sections():
        if name.startswith("table."):
            try:
                tid = int(name.split(".", 1)[1])
            except ValueError:
                raise ConfigError(f"bad table section name [{name}]") from None
            tables[tid] = parse_table(tid, cp[name])
    if not cp.has_section("workload") or "kind" not in cp["workload"]:
        raise ConfigError("[workload] kind is required")
    params = dict(cp["workload"])
    kind = params.pop("kind").strip()
    if kind not in WORKLOADS:
        raise ConfigError(f"[workload] kind must be one of {', '.join(WORKLOADS)}")
    unknown = set(params) - set(DEFAULTS[f"workload.{kind}"])
    if unknown:
        raise ConfigError(f"[workload] unknown keys for {kind}: {', '.join(sorted(unknown))}")
    cfg = ExperimentConfig(
        mode=mode, seed=seed, output=output, profile=profile, laggard=laggard,
        delay_factor=_get(exp, de, "delay_factor", float, "experiment"),
        timeout=_get(exp, de, "timeout", float, "experiment"),
        topology=Topology.uniform(procs, threads, shards),
        host=top.get("host", dt["host"]), base_port=_get(top, dt, "base_port", int, "topology"),
        tables=tables, workload=kind, params=params,
    )
    validate(cfg)
    return cfg


_REQUIRED_TABLES = {"sgd": (0,), "lda": (0, 1), "audit": (0,), "bsp": (0,)}


def validate(cfg: ExperimentConfig) -> None:
    for tid in _REQUIRED_TABLES[cfg.workload]:
        if tid not in cfg.tables:
            raise ConfigError(f"workload {cfg.workload} uses table {tid}, which has no [table.{tid}] block")
    t0 = cfg.tables[0]
    if cfg.workload == "sgd":
        K, T = cfg.param("K", int), cfg.param("T", int)
        if T % cfg.P:
            raise ConfigError(f"T={T} is not a multiple of P={cfg.P}")
        if t0.row_kind != DENSE or t0.row_length != K:
            raise ConfigError(f"sgd needs table 0 dense with row_length = K = {K}")
    elif cfg.workload == "bsp":
        if t0.policy.model is not Model.CAP or t0.policy.staleness_s != 0:
            raise ConfigError("bsp workload needs table 0 under cap with staleness 0")
        if t0.row_length != cfg.param("cols", int):
            raise ConfigError("bsp needs table 0 row_length = cols")
    elif cfg.workload == "audit":
        if cfg.mode != "sim":
            raise ConfigError("the audit workload needs the simulator's omniscient view")
        if t0.row_length != cfg.param("cols", int):
            raise ConfigError("audit needs table 0 row_length = cols")
    elif cfg.workload == "lda":
        Kt = cfg.param("topics", int)
        for tid in (0, 1):
            spec = cfg.tables[tid]
            if spec.row_length != Kt or spec.policy.magnitude_cap_u < 1:
                raise ConfigError(f"lda needs table {tid} with row_length = topics and magnitude_cap >= 1")
    if cfg.profile == "laggard" and cfg.laggard is not None and cfg.laggard not in cfg.topology.processes:
        raise ConfigError(f"laggard process {cfg.laggard} does not exist")
