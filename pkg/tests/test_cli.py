import json
import subprocess
import sys

import numpy as np
import pytest

from consensus_lab.cli import main, parse_nodes, parse_x0
from consensus_lab.errors import InvalidInputError
from consensus_lab.export import MOMENT_COLUMNS, SWEEP_COLUMNS, TRAJECTORY_COLUMNS, read_csv

IID = '{"model": "iid", "q": 0.5}'


def run(*args):
    return main([str(a) for a in args])


def test_check_graph(four_node_path, capsys):
    assert run("check-graph", "--graph", four_node_path) == 0
    out = capsys.readouterr().out
    assert "N: 4" in out and "|E|: 4" in out and "spanning tree: yes" in out and "M: 16" in out


def test_analyze_writes_report(four_node_path, tmp_path):
    out = tmp_path / "r.json"
    assert run("analyze", "--graph", four_node_path, "--model", IID, "--tol", "5e-3", "--out", out) == 0
    data = json.loads(out.read_text())
    assert abs(data["tau_dagger"] - 1.07) <= 0.01
    assert data["model"] == {"model": "iid", "q": 0.5}
    assert data["graph"] == {"n": 4, "arcs": [[1, 2], [2, 3], [3, 2], [3, 4]]}


def test_analyze_markov_on_incomplete_graph_exits_4(four_node_path, tmp_path, capsys):
    out = tmp_path / "r.json"
    code = run("analyze", "--graph", four_node_path, "--model", '{"model":"markov","p":0.4,"q":0.7}', "--out", out)
    assert code == 4
    data = json.loads(out.read_text())
    assert data["tau_dagger"] is not None and data["tau_natural"] is None
    assert "complete graph" in capsys.readouterr().err


def test_simulate_csv(four_node_path, tmp_path):
    out = tmp_path / "t.csv"
    assert run("simulate", "--graph", four_node_path, "--model", IID, "--x0", "5,2,1,1", "--kmax", 10, "--out", out) == 0
    header, rows = read_csv(out)
    assert header == TRAJECTORY_COLUMNS
    assert len(rows) == 11 and rows[0][3] == "4.0"
    out2 = tmp_path / "t2.csv"
    assert run("simulate", "--graph", four_node_path, "--model", IID, "--kmax", 5, "--full-state", "--out", out2) == 0
    header, rows = read_csv(out2)
    assert header == TRAJECTORY_COLUMNS + ["x_1", "x_2", "x_3", "x_4"]
    assert [float(v) for v in rows[0][5:]] == [0.0, 1.0, 2.0, 3.0]  # spread default


def test_moments_csv_and_json(four_node_path, tmp_path):
    out = tmp_path / "m.csv"
    assert run("moments", "--graph", four_node_path, "--model", IID, "--trials", 50, "--kmax", 5, "--out", out) == 0
    header, rows = read_csv(out)
    assert header == MOMENT_COLUMNS and len(rows) == 6
    out = tmp_path / "m.json"
    assert run("moments", "--graph", four_node_path, "--model", IID, "--trials", 50, "--kmax", 5, "--format", "json", "--out", out) == 0
    data = json.loads(out.read_text())
    assert data["trials_used"] == 50 and len(data["mean_X2"]) == 6


def test_sweep_csv(tmp_path, capsys):
    out = tmp_path / "s.csv"
    model = '{"model":"markov","p":0.4,"q":0.7}'
    assert run("sweep", "--family", "cycle", "--nodes", "2,3,7", "--model", model, "--out", out) == 0
    header, rows = read_csv(out)
    assert header == SWEEP_COLUMNS
    assert [r[0] for r in rows] == ["2", "3"]
    assert rows[0][2:] == ["markov", "p=0.4;q=0.7"]
    assert "N=7 skipped" in capsys.readouterr().err


def test_plots_are_written(four_node_path, tmp_path):
    pytest.importorskip("matplotlib")
    png = tmp_path / "a.png"
    assert run("analyze", "--graph", four_node_path, "--model", IID, "--out", tmp_path / "r.json", "--plot", png) == 0
    assert png.read_bytes()[:4] == b"\x89PNG"
    png = tmp_path / "m.png"
    assert run("moments", "--graph", four_node_path, "--model", IID, "--trials", 20, "--kmax", 5, "--out", tmp_path / "m.csv", "--plot", png) == 0
    assert png.exists()


@pytest.mark.parametrize(
    "args, code",
    [
        (["check-graph", "--graph", "missing.json"], 2),
        (["analyze", "--graph", "{fig}", "--model", '{"model":"iid","q":2}'], 2),
        (["analyze", "--graph", "{fig}", "--model", IID, "--format", "csv"], 2),
        (["moments", "--graph", "{fig}", "--model", IID, "--trials", "0"], 2),
        (["simulate", "--graph", "{fig}", "--model", IID, "--x0", "1,2"], 2),
        (["analyze", "--graph", "{nst}", "--model", IID], 4),
        (["analyze", "--graph", "{big}", "--model", IID], 3),
        (["sweep", "--nodes", "1:3", "--model", IID], 2),
    ],
)
def test_exit_codes(args, code, four_node_path, tmp_path, capsys):
    nst = tmp_path / "nst.json"
    nst.write_text('{"n": 3, "arcs": [[1, 2], [3, 2]]}')
    big = tmp_path / "big.json"
    big.write_text(json.dumps({"n": 6, "arcs": [[j, i] for j in range(1, 7) for i in range(1, 7) if i != j]}))
    subs = {"{fig}": four_node_path, "{nst}": nst, "{big}": big}
    args = [str(subs.get(a, a)) for a in args]
    assert run(*args) == code
    assert capsys.readouterr().err


def test_usage_errors_exit_2():
    assert main(["moments", "--graph", "x.json", "--model", IID, "--trials", "zero"]) == 2
    assert main(["frobnicate"]) == 2


def test_module_entry_point(four_node_path):
    res = subprocess.run(
        [sys.executable, "-m", "consensus_lab", "check-graph", "--graph", str(four_node_path)],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0 and "spanning tree: yes" in res.stdout


def test_x0_forms():
    assert np.array_equal(parse_x0("spread", 3, 0), [0, 1, 2])
    assert np.array_equal(parse_x0("5,2,1,1", 4, 0), [5, 2, 1, 1])
    a = parse_x0("random:-1:1", 5, 7)
    assert np.array_equal(a, parse_x0("random:-1:1", 5, 7))
    assert not np.array_equal(a, parse_x0("random:-1:1", 5, 8))
    assert np.all((a >= -1) & (a < 1))
    for bad in ("random:1", "random:2:1", "1,x", "1,2"):
        with pytest.raises(InvalidInputError):
            parse_x0(bad, 3, 0)


def test_nodes_forms():
    assert parse_nodes("2:4") == [2, 3, 4]
    assert parse_nodes("3,5") == [3, 5]
    with pytest.raises(InvalidInputError):
        parse_nodes("a:b")
