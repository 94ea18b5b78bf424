import math

import pytest

from vapps.core import ParamKey, WorkerId
from vapps.errors import ContractViolation, MagnitudeCapError
from vapps.policy import (
    SIGNED, ConsistencyPolicy, Model, Verdict, check_clock_advance, check_read,
    check_write, gate_propagation, required_clock,
)

W, K = WorkerId(0, 0), ParamKey(0, 0, 0)


def test_parameter_presence_matches_model():
    ConsistencyPolicy(Model.SSP, 1.0, staleness_s=2)
    ConsistencyPolicy(Model.VAP_WEAK, 1.0, value_bound_v=4)
    ConsistencyPolicy(Model.CVAP_STRONG, 1.0, staleness_s=1, value_bound_v=4)
    for kwargs in ({"model": Model.SSP}, {"model": Model.VAP_WEAK, "staleness_s": 1},
                   {"model": Model.CAP, "staleness_s": -1},
                   {"model": Model.VAP_WEAK, "value_bound_v": -1.0}):
        with pytest.raises(ContractViolation):
            ConsistencyPolicy(magnitude_cap_u=1.0, **kwargs)
    with pytest.raises(ContractViolation):
        ConsistencyPolicy(Model.SSP, 0.0, staleness_s=0)


def test_read_requires_clock_c_minus_s_minus_1():
    p = ConsistencyPolicy(Model.SSP, 1.0, staleness_s=2)
    assert required_clock(5, 2) == 2
    assert check_read(p, W, 5, K, 2).proceed
    d = check_read(p, W, 5, K, 1)
    assert d.verdict is Verdict.FETCH_THEN_PROCEED
    vap = ConsistencyPolicy(Model.VAP_WEAK, 1.0, value_bound_v=1)
    assert check_read(vap, W, 100, K, -1).proceed


def test_write_gate_magnitude_and_signed():
    p = ConsistencyPolicy(Model.VAP_WEAK, 1.0, value_bound_v=1.5)
    assert check_write(p, W, K, 1.0, 0.5).proceed
    assert check_write(p, W, K, -1.0, 1.0).verdict is Verdict.BLOCK
    assert check_write(p, W, K, -1.0, 1.0, unsynced_empty=True).proceed
    s = ConsistencyPolicy(Model.VAP_WEAK, 1.0, value_bound_v=1.5, vap_mode=SIGNED)
    assert check_write(s, W, K, -1.0, 1.0).proceed
    with pytest.raises(MagnitudeCapError):
        check_write(p, W, K, 1.01, 0.0)
    ssp = ConsistencyPolicy(Model.SSP, 1.0, staleness_s=0)
    assert check_write(ssp, W, K, 1.0, 100.0).proceed


def test_v_schedule_decays():
    p = ConsistencyPolicy(Model.VAP_WEAK, 1.0, v_schedule=lambda c: 2.0 / math.sqrt(c + 1))
    assert p.value_bound(0) == 2.0 and p.value_bound(3) == 1.0
    assert check_write(p, W, K, 0.6, 0.5, clock=3).verdict is Verdict.BLOCK
    assert check_write(p, W, K, 0.6, 0.5, clock=0).proceed


def test_clock_advance():
    p = ConsistencyPolicy(Model.CAP, 1.0, staleness_s=1)
    assert check_clock_advance(p, W, 3, 2, 2).proceed
    assert check_clock_advance(p, W, 3, 1, 2).verdict is Verdict.BLOCK
    with pytest.raises(ContractViolation):
        check_clock_advance(p, W, 4, 3, 2)
    lockstep = ConsistencyPolicy(Model.SSP, 1.0, staleness_s=0)
    assert not check_clock_advance(lockstep, W, 1, 0).proceed


def test_propagation_gate():
    p = ConsistencyPolicy(Model.VAP_STRONG, 1.0, value_bound_v=2.0)
    assert p.half_sync_bound() == 2.0
    assert gate_propagation(p, K, 1.0, 1.0).proceed
    assert not gate_propagation(p, K, 1.5, 1.0).proceed
    with pytest.raises(ContractViolation):
        gate_propagation(ConsistencyPolicy(Model.VAP_WEAK, 1.0, value_bound_v=1), K, 0, 0)
