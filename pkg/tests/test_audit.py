from types import SimpleNamespace

import pytest

from vapps.audit import Ledger
from vapps.core import ParamKey, UpdateRecord, WorkerId
from vapps.errors import BoundViolation
from vapps.policy import ConsistencyPolicy, Model
from vapps.topology import TableSpec, Topology
from vapps.transport.messages import Chunk, Entry

K = ParamKey(0, 0, 0)
A, A2, B = WorkerId(0, 0), WorkerId(0, 1), WorkerId(1, 0)
TOPO = Topology.uniform(2, 2)
P0, P1 = SimpleNamespace(proc_id=0), SimpleNamespace(proc_id=1)


def ledger(model, **kw):
    pol = ConsistencyPolicy(model, 1.0, staleness_s=0 if model.uses_clock else None,
                            value_bound_v=1.0 if model.uses_value else None)
    return Ledger(TOPO, {0: TableSpec(0, pol, "dense", 1)}, **kw)


def issue(led, w, seq, delta, clock=0):
    led.on_issue(None, UpdateRecord(w, seq, clock, K, delta))


def apply(led, client, w, first, last, clock=0):
    led.on_apply(client, 0, Chunk(w, first, last, clock, (Entry(K, (0.0,), 0.0),)))


def kinds(led):
    return {v.kind for v in led.summary.violations}


def test_views_follow_applies():
    led = ledger(Model.VAP_WEAK)
    issue(led, A, 1, 0.5)
    assert led.view(A, K) == 0.5 and led.view(A2, K) == 0.0
    apply(led, P0, A, 1, 1)
    assert led.view(A2, K) == 0.5 and led.view(B, K) == 0.0
    apply(led, P1, A, 1, 1)
    assert led.open_records(K) == [] and led.view(B, K) == 0.5
    assert led.summary.ok and led.expected_totals() == {K: 0.5}


def test_fifo_gap_and_bad_read_detected():
    led = ledger(Model.SSP)
    issue(led, A, 1, 1.0)
    issue(led, A, 2, 1.0)
    apply(led, P1, A, 2, 2)
    led.on_get(P1, B, K, 5.0, 0)
    assert kinds(led) == {"fifo", "read_my_writes"}


def test_stale_read_detected():
    led = ledger(Model.SSP)
    issue(led, A, 1, 1.0, clock=0)
    led.on_get(P1, B, K, 0.0, 1)  # s = 0: clock-1 reader must see clock-0 writes
    assert kinds(led) == {"staleness"}


def test_unsynced_over_v_detected():
    led = ledger(Model.VAP_WEAK)
    issue(led, A, 1, 1.0)
    assert led.summary.ok  # a lone update may reach u
    issue(led, A, 2, 0.5)
    assert "unsynced" in kinds(led)


def test_strong_counterexample_exceeds_two_m():
    # Per-worker unsynced and half-synced mass stay within max(u, v) = 1,
    # yet two views end up 3 apart.
    led = ledger(Model.VAP_STRONG)
    issue(led, A, 1, 1.0)
    issue(led, B, 1, -1.0)
    issue(led, A2, 1, 1.0)
    apply(led, P0, A2, 1, 1)
    assert kinds(led) == {"divergence"}
    assert led.pairwise_divergence(K) == (3.0, (A, B))


def test_raise_on_violation():
    led = ledger(Model.SSP, raise_on_violation=True)
    with pytest.raises(BoundViolation):
        led.on_get(P0, A, K, 1.0, 0)
