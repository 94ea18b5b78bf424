import json
import socket
import subprocess
import sys


from vapps.cli import main

BSP = """
[experiment]
seed = 2
output = {out}
profile = burst
{extra}

[topology]
shards = 2
processes = 2
threads = 2

[table.0]
model = cap
staleness = 0
magnitude_cap = 1e9
row_length = 3

[workload]
kind = bsp
rounds = 3
rows = 2
cols = 3
"""

LDA_TIGHT = """
[experiment]
output = {out}

[topology]
processes = 2

[table.0]
model = vap_weak
value_bound = 4
row_length = 3

[table.1]
model = vap_weak
value_bound = 4
row_length = 3

[workload]
kind = lda
topics = 3
docs = 20
vocab = 15
doc_len = 8
sweeps = 3
compare_sequential = true
tolerance = 0
"""


def cfg(tmp_path, text, name="c.ini", **kw):
    p = tmp_path / name
    p.write_text(text.format(out=tmp_path / "out", **kw))
    return str(p)


def test_run_writes_summary_and_is_repeatable(tmp_path, capsys):
    path = cfg(tmp_path, BSP, extra="")
    assert main(["run", path]) == 0
    out = tmp_path / "out"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["schema_version"] == 1 and summary["passed"]
    assert summary["bounds"]["per_clock_equal"]["held"]
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(["run", path]) == 0
    assert {p.name: p.read_bytes() for p in out.iterdir()} == first
    assert "final_equal: ok" in capsys.readouterr().out


def test_violation_exits_one(tmp_path):
    assert main(["run", cfg(tmp_path, LDA_TIGHT)]) == 1
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert not summary["passed"] and not summary["bounds"]["ll_vs_sequential"]["held"]


def test_config_errors_exit_two(tmp_path, capsys):
    broken = cfg(tmp_path, BSP.replace("[table.0]", "[table.3]"), extra="")
    assert main(["validate", broken]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "nope.ini")]) == 2
    assert main(["validate", cfg(tmp_path, BSP, extra="")]) == 0


def test_socket_failures_exit_three(tmp_path):
    busy = socket.create_server(("127.0.0.1", 0))
    port = busy.getsockname()[1]
    try:
        extra = "mode = socket\ntimeout = 1"
        text = BSP.replace("[topology]", f"[topology]\nbase_port = {port}")
        assert main(["serve", cfg(tmp_path, text, extra=extra), "0"]) == 3
    finally:
        busy.close()
    free = socket.create_server(("127.0.0.1", 0))
    port = free.getsockname()[1]
    free.close()
    text = BSP.replace("[topology]", f"[topology]\nbase_port = {port}")
    assert main(["client", cfg(tmp_path, text, extra="mode = socket\ntimeout = 1"), "0"]) == 3


def _free_base_port(n):
    for base in range(20000, 60000, 97):
        socks = []
        try:
            for i in range(n):
                socks.append(socket.create_server(("127.0.0.1", base + i)))
            return base
        except OSError:
            continue
        finally:
            for s in socks:
                s.close()
    raise RuntimeError("no free ports")


def test_separate_processes_match_simulator(tmp_path):
    base = _free_base_port(2)
    text = BSP.replace("[topology]", f"[topology]\nbase_port = {base}")
    sock_cfg = cfg(tmp_path, text, "sock.ini", extra="mode = socket\ntimeout = 30")
    exe = [sys.executable, "-m", "vapps.cli"]
    servers = [subprocess.Popen(exe + ["serve", sock_cfg, str(s)], stdout=subprocess.PIPE, text=True)
               for s in range(2)]
    for s in servers:
        assert "listening" in s.stdout.readline()
    clients = [subprocess.Popen(exe + ["client", sock_cfg, str(p)]) for p in range(2)]
    assert [c.wait(60) for c in clients] == [0, 0]
    assert [s.wait(60) for s in servers] == [0, 0]
    socket_master = {}
    for s in range(2):
        socket_master.update(json.loads((tmp_path / "out" / f"shard{s}_master.json").read_text()))

    from vapps.config import load_config
    from vapps.sim import simulate
    from vapps.workloads.bsp import phased_programs
    c = load_config(cfg(tmp_path, BSP, "sim.ini", extra=""), env={})
    sim, _ = simulate(c.topology, c.tables, phased_programs(c.topology, c.seed, 3, 2, 3), c.seed)
    sim_master = {f"{k.table_id},{k.row_id},{k.col_id}": v for k, v in sim.master_state().items()}
    assert socket_master == sim_master
