import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from trilemma.cli import main
from trilemma.netgraph import NetworkGraph

BUNDLED = {
    "graph-metrics": "bundled:c5_metrics",
    "propagate": "bundled:ring_gossip",
    "causal-chain": "bundled:causal_chain",
}


def _files(d: Path) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())} if d.exists() else {}


def _write(path: Path, obj) -> str:
    path.write_text(json.dumps(obj, indent=2))
    return str(path)


def test_graph_metrics_c5(tmp_path, capsys):
    assert main(["graph-metrics", "bundled:c5_metrics", "--out-dir", str(tmp_path), "--format", "csv"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert (rows[0]["kappa"], rows[0]["lambda"], rows[0]["mean_path_exact"]) == ("2", "2", "3/2")
    detail = json.loads((tmp_path / "c5_metrics.json").read_text())
    assert detail["runs"][0]["mean_path"] == 1.5


def test_counterexample_seed7(tmp_path, capsys):
    assert main(["counterexample", "--seed", "7", "--out-dir", str(tmp_path), "--format", "json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["runs"][0]["conjunction_holds"] is True
    cfg = json.loads((tmp_path / "counterexample_config.json").read_text())
    assert cfg["topology"]["kind"] == "baran_lattice"
    assert (tmp_path / "counterexample.csv").read_text().count("\n") == 2


@pytest.mark.parametrize("command,scenario", sorted(BUNDLED.items()))
def test_byte_reproducible(tmp_path, command, scenario):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([command, scenario, "--out-dir", str(a), "--quiet"]) == 0
    assert main([command, scenario, "--out-dir", str(b), "--quiet"]) == 0
    assert _files(a) == _files(b) and _files(a)


def test_seed_override_changes_only_seed(tmp_path):
    assert main(["propagate", "bundled:ring_gossip", "--seed", "5", "--out-dir", str(tmp_path), "--quiet"]) == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "ring_gossip.csv").read_text())))
    assert [r["seed"] for r in rows] == ["5"]


def test_quiet_prints_nothing(tmp_path, capsys):
    assert main(["graph-metrics", "bundled:c5_metrics", "--out-dir", str(tmp_path), "--quiet"]) == 0
    assert capsys.readouterr().out == ""


def test_malformed_json_exit2_no_outputs(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "schema_version": 1,\n  "graph_metrics": {,}\n}\n')
    out = tmp_path / "out"
    assert main(["graph-metrics", str(bad), "--out-dir", str(out)]) == 2
    assert "bad.json:3:" in capsys.readouterr().err
    assert not out.exists()


@pytest.mark.parametrize(
    "scenario,needle",
    [
        ({"graph_metrics": {"topology": {"kind": "ring", "params": {"n": 5}}}}, "schema_version"),
        ({"schema_version": 2, "graph_metrics": {}}, "schema_version"),
        ({"schema_version": 1}, "exactly one"),
        ({"schema_version": 1, "graph_metrics": {}, "propagation": {}}, "exactly one"),
        ({"schema_version": 1, "propagation": {}}, "expects a 'graph_metrics'"),
        ({"schema_version": 1, "graph_metrics": {}, "extra": 1}, "unknown top-level"),
        ({"schema_version": 1, "seeds": [-1], "graph_metrics": {"topology": {"kind": "ring", "params": {"n": 5}}}},
         "seeds"),
        ({"schema_version": 1, "graph_metrics": {"topology": {"kind": "ring", "params": {"n": 2}}}}, "graph_metrics"),
        ({"schema_version": 1, "graph_metrics": {"edge_list": "missing.edges"}}, "edge_list"),
        ({"schema_version": 1, "graph_metrics": {"topology": {"kind": "ring", "params": {"n": 5}},
                                                 "thresholds": {"k": 1, "l": 2, "D": 3}}}, "thresholds"),
    ],
)
def test_config_errors_exit2(tmp_path, capsys, scenario, needle):
    path = _write(tmp_path / "s.json", scenario)
    out = tmp_path / "out"
    assert main(["graph-metrics", path, "--out-dir", str(out)]) == 2
    assert needle in capsys.readouterr().err
    assert not out.exists()


def test_trilemma_field_error_has_line(tmp_path, capsys):
    data = json.loads(Path(__file__).parents[1].joinpath("src/trilemma/scenarios/counterexample.json").read_text())
    data["trilemma"]["relay"]["fanot"] = 3
    path = tmp_path / "t.json"
    path.write_text(json.dumps(data, indent=2))
    assert main(["trilemma", str(path), "--out-dir", str(tmp_path / "out")]) == 2
    err = capsys.readouterr().err
    line = next(i for i, text in enumerate(path.read_text().splitlines(), 1) if "fanot" in text)
    assert f"t.json:{line}: trilemma.relay.fanot" in err


def test_propagation_errors(tmp_path, capsys):
    base = {"schema_version": 1, "propagation": {"topology": {"kind": "ring", "params": {"n": 5}},
                                                 "message": {"size": 10}, "relay": {"model": "unicast_gossip"}}}
    for patch, needle in [
        ({"source": 9}, "source"),
        ({"relay": {"model": "smoke_signal"}}, "relay.model"),
        ({"message": {"size": 0}}, "message"),
        ({"message": {"kind": "blob", "size": 3}}, "message"),
    ]:
        scenario = {**base, "propagation": {**base["propagation"], **patch}}
        assert main(["propagate", _write(tmp_path / "p.json", scenario), "--out-dir", str(tmp_path / "o")]) == 2
        assert needle in capsys.readouterr().err


def test_runtime_failure_exit1(tmp_path, capsys):
    g = NetworkGraph.from_pairs(4, [(0, 1), (2, 3)])
    (tmp_path / "split.edges").write_text(g.to_edge_list())
    scenario = {"schema_version": 1, "propagation": {"edge_list": "split.edges", "source": 0,
                                                     "message": {"size": 10},
                                                     "relay": {"model": "multicast", "group": [2, 3]}}}
    out = tmp_path / "out"
    assert main(["propagate", _write(tmp_path / "s.json", scenario), "--out-dir", str(out)]) == 1
    assert "runtime error" in capsys.readouterr().err
    assert not out.exists()


def test_edge_list_relative_to_scenario(tmp_path):
    sub = tmp_path / "cfg"
    sub.mkdir()
    (sub / "k4.edges").write_text(NetworkGraph.from_pairs(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
                                  .to_edge_list())
    path = _write(sub / "k4.json", {"schema_version": 1, "output": {"stem": "k4"},
                                    "graph_metrics": {"edge_list": "k4.edges"}})
    assert main(["graph-metrics", path, "--out-dir", str(tmp_path / "o"), "--quiet"]) == 0
    run = json.loads((tmp_path / "o" / "k4.json").read_text())["runs"][0]
    assert (run["kappa"], run["lambda"], run["mean_path"]) == (3, 3, 1.0)


def test_merkle_vectors_emit_and_check(tmp_path, capsys):
    assert main(["merkle-vectors", "emit", "--seed", "4", "--max-leaves", "5", "--out-dir", str(tmp_path)]) == 0
    vec = tmp_path / "merkle_vectors.txt"
    first = vec.read_bytes()
    assert main(["merkle-vectors", "emit", "--seed", "4", "--max-leaves", "5", "--out-dir", str(tmp_path)]) == 0
    assert vec.read_bytes() == first
    assert main(["merkle-vectors", "check", str(vec)]) == 0
    assert "15/15" in capsys.readouterr().out
    lines = vec.read_text().splitlines()
    fields = lines[3].split()
    fields[2] = ("0" if fields[2][0] != "0" else "1") + fields[2][1:]
    lines[3] = " ".join(fields)
    vec.write_text("\n".join(lines) + "\n")
    assert main(["merkle-vectors", "check", str(vec)]) == 1
    vec.write_text("garbage\n")
    assert main(["merkle-vectors", "check", str(vec)]) == 2
    assert main(["merkle-vectors", "check"]) == 2


def test_console_script_subprocess(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "trilemma.cli", "graph-metrics", "bundled:c5_metrics", "--out-dir", str(tmp_path),
         "--format", "json"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    run = json.loads(proc.stdout)["runs"][0]
    assert (run["kappa"], run["lambda"]) == (2, 2)
    assert proc.stdout == (tmp_path / "c5_metrics.json").read_text()
