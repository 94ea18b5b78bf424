"""Consistency policies and the controller's access decisions.

The controller functions are pure: they look at a snapshot of clock or
synchronization state and say whether the caller may proceed, must fetch
first, or must block. Blocking itself is done by the caller, which turns the
returned ``wait_condition`` into a predicate re-evaluated on every event.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

from .core import ParamKey, WorkerId
from .errors import ContractViolation, MagnitudeCapError


class Model(enum.Enum):
    SSP = "ssp"
    CAP = "cap"
    VAP_WEAK = "vap_weak"
    VAP_STRONG = "vap_strong"
    CVAP_WEAK = "cvap_weak"
    CVAP_STRONG = "cvap_strong"

    @property
    def uses_clock(self) -> bool:
        return self in (Model.SSP, Model.CAP, Model.CVAP_WEAK, Model.CVAP_STRONG)

    @property
    def uses_value(self) -> bool:
        return self in (Model.VAP_WEAK, Model.VAP_STRONG, Model.CVAP_WEAK, Model.CVAP_STRONG)

    @property
    def strong(self) -> bool:
        return self in (Model.VAP_STRONG, Model.CVAP_STRONG)


SIGNED = "signed"
MAGNITUDE = "magnitude"


@dataclass(frozen=True)
class ConsistencyPolicy:
    model: Model
    magnitude_cap_u: float
    staleness_s: Optional[int] = None
    value_bound_v: Optional[float] = None
    # How unsynchronized updates accumulate against v: sum of |delta| (default)
    # or |sum of delta|.
    vap_mode: str = MAGNITUDE
    # Optional decaying threshold, evaluated at the writer's clock.
    v_schedule: Optional[Callable[[int], float]] = None

    def __post_init__(self):
        if not self.magnitude_cap_u > 0:
            raise ContractViolation("magnitude_cap_u must be positive")
        if self.model.uses_clock != (self.staleness_s is not None):
            raise ContractViolation(f"{self.model.value}: staleness_s set iff the model uses clocks")
        if self.staleness_s is not None and self.staleness_s < 0:
            raise ContractViolation("staleness_s must be >= 0")
        has_v = self.value_bound_v is not None or self.v_schedule is not None
        if self.model.uses_value != has_v:
            raise ContractViolation(f"{self.model.value}: value bound set iff the model uses values")
        if self.value_bound_v is not None and self.value_bound_v < 0:
            raise ContractViolation("value_bound_v must be >= 0")
        if self.vap_mode not in (SIGNED, MAGNITUDE):
            raise ContractViolation(f"unknown vap_mode {self.vap_mode!r}")

    def value_bound(self, clock: int = 0) -> float:
        if self.v_schedule is not None:
            return self.v_schedule(clock)
        if self.value_bound_v is None:
            return math.inf
        return self.value_bound_v

    def half_sync_bound(self, clock: int = 0) -> float:
        return max(self.magnitude_cap_u, self.value_bound(clock))

    @property
    def flushes_only_at_clock(self) -> bool:
        return self.model is Model.SSP


class Verdict(enum.Enum):
    PROCEED = "proceed"
    FETCH_THEN_PROCEED = "fetch_then_proceed"
    BLOCK = "block"


@dataclass(frozen=True)
class AccessDecision:
    verdict: Verdict
    wait_condition: Optional[str] = None

    def __post_init__(self):
        if self.verdict is Verdict.BLOCK and not self.wait_condition:
            raise ContractViolation("BLOCK needs a wait_condition")

    @property
    def proceed(self) -> bool:
        return self.verdict is Verdict.PROCEED


PROCEED = AccessDecision(Verdict.PROCEED)


def required_clock(reader_clock: int, staleness: int) -> int:
    """Largest timestamp a reader at ``reader_clock`` must already see."""
    return reader_clock - staleness - 1


def check_read(policy: ConsistencyPolicy, reader: WorkerId, reader_clock: int,
               key: ParamKey, row_known_through_clock: int) -> AccessDecision:
    if reader_clock < 0:
        raise ContractViolation(f"negative reader clock {reader_clock}")
    if not policy.model.uses_clock:
        return PROCEED
    need = required_clock(reader_clock, policy.staleness_s)
    if row_known_through_clock >= need:
        return PROCEED
    return AccessDecision(Verdict.FETCH_THEN_PROCEED, f"row clock >= {need}")


def write_fits(policy: ConsistencyPolicy, delta: float, unsynced: float, clock: int = 0) -> bool:
    v = policy.value_bound(clock)
    if policy.vap_mode == MAGNITUDE:
        return unsynced + abs(delta) <= v
    return abs(unsynced + delta) <= v


def check_write(policy: ConsistencyPolicy, writer: WorkerId, key: ParamKey, delta: float,
                unsynced_sum_for_key: float, *, unsynced_empty: bool = False,
                clock: int = 0) -> AccessDecision:
    """Gate one Inc.

    ``unsynced_sum_for_key`` is the signed sum or the magnitude sum depending
    on ``policy.vap_mode``. A write with nothing else unsynchronized always
    proceeds: a single update can only be bounded by u, never by v.
    """
    if abs(delta) > policy.magnitude_cap_u:
        raise MagnitudeCapError(f"|{delta}| exceeds cap u={policy.magnitude_cap_u} on {key}")
    if not policy.model.uses_value:
        return PROCEED
    if unsynced_empty or write_fits(policy, delta, unsynced_sum_for_key, clock):
        return PROCEED
    return AccessDecision(
        Verdict.BLOCK,
        f"full-sync watermark of {writer} advances until {key} unsynced + {delta} fits v",
    )


def check_clock_advance(policy: ConsistencyPolicy, worker: WorkerId, new_clock: int,
                        global_min_clock: int, previous_clock: Optional[int] = None) -> AccessDecision:
    if previous_clock is not None and new_clock != previous_clock + 1:
        raise ContractViolation(f"{worker} clock jumped {previous_clock} -> {new_clock}")
    if not policy.model.uses_clock:
        return PROCEED
    if new_clock - global_min_clock <= policy.staleness_s:
        return PROCEED
    return AccessDecision(Verdict.BLOCK, f"global min clock >= {new_clock - policy.staleness_s}")


def gate_propagation(policy: ConsistencyPolicy, key: ParamKey, half_synced_magnitude: float,
                     candidate_batch_magnitude: float, clock: int = 0) -> AccessDecision:
    if not policy.model.strong:
        raise ContractViolation(f"propagation gate under weak model {policy.model.value}")
    if half_synced_magnitude + candidate_batch_magnitude <= policy.half_sync_bound(clock):
        return PROCEED
    return AccessDecision(Verdict.BLOCK, f"half-synchronized magnitude on {key} drains")
