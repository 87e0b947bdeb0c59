import json
import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semistable import io
from semistable.cli import EXIT_BUDGET, EXIT_FAIL, EXIT_OK, EXIT_THEORY, EXIT_USAGE, main


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=50), st.booleans())
def test_samples_csv_round_trip(samples, header):
    text = io.format_samples_csv(samples, "size" if header else None)
    assert io.parse_samples_csv(text).tolist() == samples


def test_samples_csv_errors_carry_line_numbers():
    with pytest.raises(io.SampleParseError) as err:
        io.parse_samples_csv("size\n1\n\n2\nx3\n")
    assert err.value.line == 5
    with pytest.raises(io.SampleParseError) as err:
        io.parse_samples_csv("1\n-2\n")
    assert err.value.line == 2
    with pytest.raises(io.SampleParseError):
        io.parse_samples_csv("size\n\n")


def test_samples_json():
    assert io.parse_samples_json('{"samples": [0, 3, 1]}').tolist() == [0, 3, 1]
    with pytest.raises(io.SampleParseError):
        io.parse_samples_json('{"samples": [1, 2.5]}')
    with pytest.raises(io.SampleParseError) as err:
        io.parse_samples_json('{"samples": [1,\n 2,')
    assert err.value.line is not None


@settings(max_examples=100, deadline=None)
@given(st.floats(allow_nan=False))
def test_float_json_round_trip_exact(x):
    assert io.loads(io.dumps({"v": x}))["v"] == x
    assert isinstance(io.loads(io.dumps(x)), float)


def test_json_special_values_and_numpy():
    d = io.loads(io.dumps({"a": np.float64(1.5), "b": np.arange(3), "c": math.inf,
                           "d": np.bool_(True), "e": (1, 2)}))
    assert d == {"a": 1.5, "b": [0, 1, 2], "c": math.inf, "d": True, "e": [1, 2]}


def test_manifest_round_trip(tmp_path):
    man = io.RunManifest("estimate", {"q": 0.5}, {"f_hat": 0.1}, 7, {"input": "ab"}, {})
    p = tmp_path / "m.json"
    man.write(str(p))
    back = io.RunManifest.read(str(p))
    assert back.to_dict() == man.to_dict()


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_cli_estimate_and_replay(tmp_path, capsys):
    data = _write(tmp_path, "s.csv", "size\n1\n1\n2\n")
    man = str(tmp_path / "man.json")
    assert main(["estimate", data, "--q", "0.5", "--w", "1", "--manifest", man]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["f_hat"] == 0.0 and out["regime"] is None
    assert main(["replay", man]) == EXIT_OK
    assert "identical" in capsys.readouterr().out
    # a changed input is detected
    _write(tmp_path, "s.csv", "size\n1\n2\n2\n")
    assert main(["replay", man]) == EXIT_FAIL


def test_cli_estimate_csv_output(tmp_path, capsys):
    data = _write(tmp_path, "s.csv", "0\n1\n3\n")
    assert main(["estimate", data, "--q", "0.4", "--w", "1", "--format", "csv"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "key,value" and any(l.startswith("f_hat,") for l in lines)


def test_cli_usage_errors(tmp_path, capsys):
    empty = _write(tmp_path, "e.csv", "")
    assert main(["estimate", empty, "--q", "0.5", "--w", "1"]) == EXIT_USAGE
    bad = _write(tmp_path, "b.csv", "1\nfoo\n")
    assert main(["estimate", bad, "--q", "0.5", "--w", "1"]) == EXIT_USAGE
    assert "line 2" in capsys.readouterr().err
    assert main(["estimate", str(tmp_path / "missing.csv"), "--q", "0.5", "--w", "1"]) == EXIT_USAGE
    assert main(["limit", "--family", "geometric", "--q", "0.3"]) == EXIT_USAGE
    assert main(["nonsense"]) == EXIT_USAGE
    good = _write(tmp_path, "g.csv", "1\n2\n")
    assert main(["estimate", good, "--q", "0.5", "--w", "1", "--gamma", "0.1"]) == EXIT_USAGE


def test_cli_limit_regimes(capsys):
    assert main(["limit", "--family", "geometric", "--c", "0.6", "--q", "0.3",
                 "--levels", "4"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert [lv["k_n"] for lv in out["schedule"]["levels"]] == [9, 85, 880]
    assert main(["limit", "--family", "geometric", "--c", "0.3", "--q", "0.4"]) == EXIT_THEORY
    assert "variance" in capsys.readouterr().err
    edge = repr(0.3 / 0.7)
    assert main(["limit", "--family", "geometric", "--c", edge, "--q", "0.3"]) == EXIT_OK
    assert main(["limit", "--family", "geometric", "--c", edge, "--q", "0.3",
                 "--strict"]) == EXIT_THEORY


def test_cli_ci_and_theory_refusal(tmp_path, capsys):
    cfg = _write(tmp_path, "ci.json", json.dumps(
        {"family": "geometric", "c": 0.6, "q": 0.3, "w": 1, "gamma": 0.1, "N": 5000,
         "f_hat": 0.41, "lambda_grid_size": 5}))
    man = str(tmp_path / "ci_man.json")
    assert main(["ci", cfg, "--manifest", man]) == EXIT_OK
    lo, hi = json.loads(capsys.readouterr().out)["interval"]
    assert lo < 0.41 < hi
    assert main(["replay", man]) == EXIT_OK
    bad = _write(tmp_path, "ci2.json", json.dumps(
        {"family": "geometric", "c": 0.85, "q": 0.3, "w": 1, "N": 5000, "f_hat": 0.1}))
    assert main(["ci", bad]) == EXIT_THEORY


def test_cli_mc_seed_determinism(tmp_path, capsys):
    cfg = _write(tmp_path, "mc.json", json.dumps(
        {"family": {"family": "geometric", "c": 0.6}, "q": 0.3, "w": 1, "levels": [2],
         "replicates": 100}))
    digests = []
    for k in range(2):
        man = str(tmp_path / f"mc{k}.json")
        assert main(["mc", cfg, "--seed", "5", "--no-probe", "--manifest", man]) == EXIT_OK
        digests.append(io.RunManifest.read(man).to_dict()["outputs_digest"])
    assert digests[0] == digests[1]
    capsys.readouterr()
    bad = _write(tmp_path, "mc_bad.json", json.dumps(
        {"family": {"family": "geometric", "c": 0.6}, "q": 0.3, "w": 1, "levels": [2],
         "replicates": 0}))
    assert main(["mc", bad]) == EXIT_USAGE


def test_cli_budget_exit(tmp_path, monkeypatch, capsys):
    from semistable import cli
    from semistable.errors import BudgetExceededError

    def boom(cfg):
        raise BudgetExceededError("over budget")

    monkeypatch.setitem(cli.COMMANDS, "validate", boom)
    assert main(["validate"]) == EXIT_BUDGET


def test_cli_validate_subset(capsys):
    assert main(["validate", "--only", "thinning", "estimator"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "2/2 passed" in out


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "semistable.cli", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "estimate" in res.stdout
