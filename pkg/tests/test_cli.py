import argparse
import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from c0embed import gallery
from c0embed.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_IO, EXIT_OK, main, parse_lambda
from c0embed.embedding import Embedding


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip().splitlines()
    return code, [json.loads(line) for line in out]


@pytest.fixture
def space_file(tmp_path, capsys):
    path = tmp_path / "s.csv"
    code, out = run(capsys, "gallery", "--kind", "lp_sample", "--n", 15, "--seed", 2, "--output", path)
    assert code == EXIT_OK and out[0]["prng"] == gallery.PRNG_ID
    return path


def test_parse_lambda():
    assert parse_lambda("sqrt(2)") == math.sqrt(2)
    assert parse_lambda("2^(1/2)") == 2 ** 0.5
    assert parse_lambda("1.5") == 1.5
    with pytest.raises(argparse.ArgumentTypeError):
        parse_lambda("two")


def test_build_strict(tmp_path, capsys, space_file):
    out_path = tmp_path / "e.json"
    code, out = run(capsys, "build", "--input", space_file, "--lambda", 2, "--mode", "strict", "--output", out_path)
    assert code == EXIT_OK
    assert len(out) == 1 and out[0]["verdict"] == "pass" and out[0]["distortion"] < 2
    cert = json.loads((tmp_path / "e.cert.json").read_text())
    assert cert["mode"] == "strict" and cert["min_upper_margin"] > 0
    assert json.loads(out_path.read_text())["kind"] == "strict"


@pytest.mark.parametrize("argv", [
    ["--lambda", "1"],
    ["--lambda", "0.5"],
    ["--lambda", "2.5"],
    ["--lambda", "3.5", "--cone"],
    ["--lambda", "1.5", "--provider", "annuli"],
    ["--lambda", "2", "--provider", "cone-annuli"],
    ["--lambda", "2", "--eps-decay", "1.5"],
])
def test_build_config_errors(capsys, space_file, argv):
    code, out = run(capsys, "build", "--input", space_file, *argv)
    assert code == EXIT_CONFIG and out == []


def test_build_lp_needs_coordinates(tmp_path, capsys):
    path = tmp_path / "g.csv"
    run(capsys, "gallery", "--kind", "graph_metric", "--n", 10, "--output", path)
    code, _ = run(capsys, "build", "--input", path, "--lambda", "sqrt(2)", "--provider", "lp")
    assert code == EXIT_CONFIG


def test_build_io_errors(tmp_path, capsys):
    code, _ = run(capsys, "build", "--input", tmp_path / "none.csv", "--lambda", 2)
    assert code == EXIT_IO
    bad = tmp_path / "bad.csv"
    bad.write_text("2\n0,1\n1,zz\n")
    assert run(capsys, "build", "--input", bad, "--lambda", 2)[0] == EXIT_IO
    tri = tmp_path / "tri.csv"
    tri.write_text("3\n0,1,3\n1,0,1\n3,1,0\n")
    assert run(capsys, "build", "--input", tri, "--lambda", 2)[0] == EXIT_IO


def test_cone_build_on_l1_config(tmp_path, capsys):
    path = tmp_path / "c.json"
    run(capsys, "gallery", "--kind", "l1_config", "--dim", 3, "--p", 1, "--output", path)
    code, out = run(capsys, "build", "--input", path, "--lambda", 3, "--cone", "--mode", "strict",
                    "--output", tmp_path / "e.json")
    assert code == EXIT_OK and out[0]["distortion"] < 3
    assert json.loads((tmp_path / "e.json").read_text())["cone"] is True


def test_audit_own_build_and_zero_map(tmp_path, capsys, space_file):
    e = tmp_path / "e.json"
    run(capsys, "build", "--input", space_file, "--lambda", "1.5", "--output", e)
    code, out = run(capsys, "audit", "--space", space_file, "--embedding", e, "--mode", "good")
    assert code == EXIT_OK and out[0]["verdict"] == "pass"
    zero = gallery.embedding_to_json(Embedding(2.0, 15, np.zeros((1, 15)), (), None))
    zero["meta"] = [{"block": 0, "c": 0.0, "scale": 1.0, "U": [0], "V": [0]}]
    z = tmp_path / "z.json"
    z.write_text(json.dumps(zero))
    code, out = run(capsys, "audit", "--space", space_file, "--embedding", z, "--mode", "plain")
    assert code == EXIT_FAIL and out[0]["kind"] == "lower"


def test_audit_pigeonhole_on_counterexample(tmp_path, capsys):
    s = tmp_path / "ce.csv"
    e = tmp_path / "e.json"
    code, _ = run(capsys, "counterexample", "--p-max", 4, "--output", s)
    assert code == EXIT_OK
    assert run(capsys, "build", "--input", s, "--lambda", 3, "--cone", "--output", e)[0] == EXIT_OK
    code, out = run(capsys, "audit", "--space", s, "--embedding", e, "--mode", "pigeonhole", "--p-max", 4)
    assert code == EXIT_FAIL and out[0]["verdict"] == "DirectViolation"


def test_counterexample_command(tmp_path, capsys):
    code, out = run(capsys, "counterexample", "--p-max", 4, "--embedding", tmp_path / "f.json")
    assert code == EXIT_OK
    assert out[0]["n"] == 22
    assert out[0]["fine"]["verdict"] == "pass" and out[0]["fine"]["lambda"] == 1.2
    assert out[0]["cone3_pigeonhole"]["verdict"] == "DirectViolation"


def test_report_targets_and_schema(tmp_path, capsys):
    out_path = tmp_path / "r.csv"
    code, out = run(capsys, "report", "--output", out_path)
    assert code == EXIT_OK
    rows = list(csv.DictReader(out_path.open()))
    assert tuple(rows[0]) == gallery.REPORT_COLUMNS
    targets = {float(r["lambda_target"]) for r in rows}
    assert targets == {2.0, math.sqrt(2), 3.0, math.sqrt(5)}
    for r in rows:
        assert 1.0 <= float(r["distortion"]) < float(r["lambda_target"])
        assert float(r["min_margin"]) > 0


def test_report_is_deterministic(tmp_path, capsys, monkeypatch):
    outs = []
    for i, threads in enumerate(("1", "4")):
        monkeypatch.setenv("C0EMBED_THREADS", threads)
        d = tmp_path / f"run{i}"
        code, _ = run(capsys, "report", "--format", "json", "--output", d / "r.json", "--embeddings", d / "emb")
        assert code == EXIT_OK
        outs.append([(p.name, p.read_bytes()) for p in sorted(d.rglob("*.json"))])
    assert outs[0] == outs[1]


def test_report_bad_target(tmp_path, capsys):
    assert run(capsys, "report", "--lambda", "1", "--output", tmp_path / "r.csv")[0] == EXIT_CONFIG


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "c0embed", "gallery", "--kind", "counterexample", "--p-max", "2",
                          "--output", str(tmp_path / "c.csv")], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["n"] == 8
