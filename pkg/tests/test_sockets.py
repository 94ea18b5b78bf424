import socket
import struct

import pytest

from vapps.core import WorkerId
from vapps.errors import StalenessUnavailable
from vapps.policy import ConsistencyPolicy, Model
from vapps.sim import simulate
from vapps.topology import Topology
from vapps.transport.sockets import ClientNode, ServerNode, run_local
from vapps.workloads.bsp import bsp_tables, phased_programs
from vapps.workloads.sgd import collect_reads, make_problem, sgd_programs, sgd_tables
from vapps.workloads.synthetic import inc_tables


def test_sgd_over_tcp_matches_simulator():
    p = make_problem(T=30, P=1, seed=5)
    topo = Topology.uniform(1, 1)
    tables = sgd_tables(p, Model.SSP, 1)
    results, master = run_local(topo, tables, sgd_programs(p, topo), timeout=20)
    sim, res = simulate(topo, tables, sgd_programs(p, topo), 0)
    assert collect_reads(results) == collect_reads(res.results)
    assert master == sim.master_state()


def test_sharded_bsp_over_tcp_matches_simulator():
    topo = Topology.uniform(2, 2, num_shards=3)
    tables = bsp_tables(3, 2)
    _, master = run_local(topo, tables, phased_programs(topo, 8, 3, 3, 2), timeout=20)
    sim, _ = simulate(topo, tables, phased_programs(topo, 8, 3, 3, 2), 8, profile="burst")
    assert master == sim.master_state()


def test_missing_peer_times_out():
    topo = Topology.uniform(2, 1)
    tables = inc_tables(ConsistencyPolicy(Model.SSP, 1.0, staleness_s=0))
    server = ServerNode(0, topo, tables).start()
    node = ClientNode(0, topo, tables, [server.address], timeout=0.5)

    def prog(api):
        yield from api.inc(0, 0, 0, 1.0)
        yield from api.clock()
        yield from api.clock()  # needs process 1 to reach clock 1

    with pytest.raises(StalenessUnavailable):
        node.run_programs({WorkerId(0, 0): prog})
    node.timeout = 0.2
    node.close()


def test_corrupt_frame_drops_connection():
    topo = Topology.uniform(1, 1)
    tables = inc_tables(ConsistencyPolicy(Model.SSP, 1.0, staleness_s=0))
    server = ServerNode(0, topo, tables).start()
    raw = socket.create_connection(server.address)
    raw.sendall(struct.pack(">I", 8) + b"\x01\x05garbage")
    raw.settimeout(5)
    assert raw.recv(1) == b""  # server hung up on the bad frame
    raw.close()
