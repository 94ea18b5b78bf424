import pytest
from hypothesis import given, strategies as st

from vapps.core import ParamKey, UpdateRecord, WorkerId
from vapps.errors import ContractViolation, OutsideSimulation
from vapps.policy import MAGNITUDE, ConsistencyPolicy, Model
from vapps.topology import Topology

K = ParamKey(0, 0, 0)


def tracker(omniscient=False):
    from vapps.sync import SyncTracker
    topo = Topology.uniform(3, 1)
    return SyncTracker(topo.required, omniscient=omniscient, process_of=topo.process_of()), topo


def issue(tr, origin, seq, delta, key=K):
    return tr.record_issue(origin, UpdateRecord(origin, seq, 0, key, delta))


def test_full_watermark_needs_every_required_client():
    tr, topo = tracker()
    a = WorkerId(0, 0)
    assert tr.required(a) == (1, 2)
    issue(tr, a, 1, 0.5)
    issue(tr, a, 2, -0.25)
    assert tr.unsynced_sum(a, K) == 0.25
    assert tr.unsynced_sum(a, K, MAGNITUDE) == 0.75
    assert tr.record_ack(1, a, 2) == []
    assert tr.full_watermark(a) == 0
    assert tr.half_synced_magnitude(K) == 0.75
    assert tr.record_ack(2, a, 1) == [(a, 1)]
    assert tr.unsynced_log(a, K) == [(2, -0.25, 0.25)]
    assert tr.record_ack(2, a, 2) == [(a, 2)]
    assert not tr.has_unsynced(a, K) and tr.pending_keys() == []


def test_misuse_is_rejected():
    tr, _ = tracker()
    a = WorkerId(0, 0)
    issue(tr, a, 1, 1.0)
    with pytest.raises(ContractViolation):
        issue(tr, a, 3, 1.0)
    with pytest.raises(ContractViolation):
        tr.record_ack(1, a, 2)
    tr.record_ack(1, a, 1)
    with pytest.raises(ContractViolation):
        tr.record_ack(1, a, 0)
    with pytest.raises(ContractViolation):
        tr.record_chunk(a, 5, 6, [])
    with pytest.raises(OutsideSimulation):
        tr.view_offsets(K)


def test_lone_origin_is_always_synced():
    from vapps.sync import SyncTracker
    topo = Topology.uniform(1, 1)
    tr = SyncTracker(topo.required)
    w = WorkerId(0, 0)
    assert issue(tr, w, 1, 1.0) == 0.0
    assert tr.full_watermark(w) == 1 and not tr.has_unsynced(w, K)


def test_chunks_log_at_last_seq():
    tr, _ = tracker()
    a = WorkerId(0, 0)
    tr.record_chunk(a, 1, 3, [(K, 1.0, 3.0)])
    tr.record_ack(1, a, 3)
    tr.record_ack(2, a, 3)
    assert tr.full_watermark(a) == 3 and tr.unsynced_sum(a, K) == 0.0


def test_divergence_audit_reports_view_gap():
    tr, topo = tracker(omniscient=True)
    a, b = WorkerId(0, 0), WorkerId(1, 0)
    issue(tr, a, 1, 1.0)
    issue(tr, b, 1, -1.0)
    tr.record_ack(2, a, 1)
    offsets = tr.view_offsets(K)
    assert offsets == {a: 1.0, b: -1.0, WorkerId(2, 0): 1.0}
    pol = ConsistencyPolicy(Model.VAP_STRONG, 1.0, value_bound_v=0.5)
    rep = tr.divergence_audit(K, pol)
    assert rep.max_divergence == 2.0 and rep.strong_bound == 2.0 and rep.ok
    assert rep.weak_bound == 3.0 and rep.view_error_bound == 2.0


@given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=30), st.data())
def test_unsynced_sum_is_exact_residue(deltas, data):
    tr, _ = tracker()
    a = WorkerId(0, 0)
    for i, d in enumerate(deltas, 1):
        issue(tr, a, i, d)
    cut = data.draw(st.integers(0, len(deltas)))
    tr.record_ack(1, a, cut)
    tr.record_ack(2, a, cut)
    import math
    assert tr.unsynced_sum(a, K) == math.fsum(deltas[cut:])
    assert tr.unsynced_sum(a, K, MAGNITUDE) == math.fsum(abs(d) for d in deltas[cut:])
