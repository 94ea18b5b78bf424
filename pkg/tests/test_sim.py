import pytest

from vapps.client import Wait
from vapps.core import WorkerId
from vapps.errors import ConfigError, MagnitudeCapError, SimulationDeadlock
from vapps.policy import ConsistencyPolicy, Model
from vapps.sim import PROFILES, simulate
from vapps.topology import Topology
from vapps.workloads.synthetic import inc_programs, inc_tables

TOPO = Topology.uniform(2, 2)


def policy(model, s=1, v=1.0):
    return ConsistencyPolicy(model, 1.0, staleness_s=s if model.uses_clock else None,
                             value_bound_v=v if model.uses_value else None)


def run(model, seed, profile="uniform", topo=TOPO, **kw):
    return simulate(topo, inc_tables(policy(model)), inc_programs(topo, seed), seed, profile=profile, **kw)


@pytest.mark.parametrize("profile", PROFILES)
def test_same_seed_same_trace(profile):
    _, a = run(Model.VAP_STRONG, 5, profile)
    _, b = run(Model.VAP_STRONG, 5, profile)
    _, c = run(Model.VAP_STRONG, 6, profile)
    assert a.log_digest == b.log_digest and a.results == b.results
    assert a.log_digest != c.log_digest


@pytest.mark.parametrize("model", list(Model))
def test_quiescent_master_holds_every_update(model):
    sim, res = run(model, 11, "burst")
    assert sim.master_state() == {k: v for k, v in sorted(res.ledger.expected_totals().items())}
    for c in sim.clients.values():
        for key, total in sim.master_state().items():
            assert c.cache[0].get(key.row_id, key.col_id) == total


def test_read_my_writes_and_lockstep():
    topo = Topology.uniform(2, 1)
    tables = inc_tables(policy(Model.SSP, s=0))

    def prog(api):
        seen = []
        for c in range(4):
            yield from api.inc(0, 0, 0, 1.0)
            seen.append((yield from api.get(0, 0, 0)))
            yield from api.clock()
        return seen

    for seed in range(10):
        _, res = simulate(topo, tables, {w: prog for w in topo.workers}, seed, profile="laggard")
        for seen in res.results.values():
            # own c+1 writes plus both workers' writes from every finished clock
            assert all(c + 1 + c <= v <= 2 * (c + 1) for c, v in enumerate(seen))
        assert res.ledger.summary.ok


def test_laggard_makes_fast_workers_block():
    blocked = 0
    for seed in range(5):
        _, res = run(Model.CAP, seed, "laggard", topo=Topology.uniform(3, 1))
        blocked += sum(n for w, n in res.blocked.items() if w.process_id != 2)
    assert blocked > 0


def test_fairness_bound_caps_message_age():
    for seed in range(5):
        _, res = run(Model.VAP_WEAK, seed, "laggard", fairness_bound=20, delay_factor=1000)
        assert res.max_message_age <= 20


def test_deadlock_is_reported():
    topo = Topology.uniform(1, 1)

    def stuck(api):
        yield Wait(lambda: False, "never")

    with pytest.raises(SimulationDeadlock, match="never"):
        simulate(topo, inc_tables(policy(Model.SSP)), {WorkerId(0, 0): stuck}, 0)


def test_magnitude_cap_enforced():
    topo = Topology.uniform(1, 1)

    def big(api):
        yield from api.inc(0, 0, 0, 1.5)

    with pytest.raises(MagnitudeCapError):
        simulate(topo, inc_tables(policy(Model.SSP)), {WorkerId(0, 0): big}, 0)


def test_bad_setup_rejected():
    with pytest.raises(ConfigError):
        run(Model.SSP, 0, "sideways")
    with pytest.raises(ConfigError):
        run(Model.SSP, 0, "laggard", laggard=9)
    with pytest.raises(ConfigError):
        simulate(TOPO, inc_tables(policy(Model.SSP)), {}, 0)


def test_weak_vap_blocks_writers_at_small_v():
    _, res = run(Model.VAP_WEAK, 3, "laggard")
    assert res.ledger.summary.ok
    assert res.ledger.summary.max_unsynced <= 1.0
    assert res.stats.get("blocked_writes", 0) > 0
