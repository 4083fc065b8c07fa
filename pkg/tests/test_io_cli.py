import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from instances import random_model
from policybounds import cli
from policybounds.io import DatasetError, detect_format, format_long, parse_dataset, write_long
from policybounds.report import CSV_COLUMNS, Report, canonical_json, emit_report

FIX = Path(__file__).parent / "fixtures"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


# --------------------------------------------------------------------------- io


def test_parse_long_fixture():
    d = parse_dataset(FIX / "judges_long.csv")
    assert d.ids == ["J1", "J2", "J3", "J4"]
    assert d.grid.values == (0.0, 0.5, 1.0)
    assert d.groups == ["Q", "Q", "Q", "Qc"]
    np.testing.assert_allclose(d.pmf.sum(axis=(1, 2)), 1.0)


def test_parse_aggregate_fixture():
    d = parse_dataset(FIX / "judges_aggregate.csv")
    # release 0.55 with mean 0.30: P(Y=1, D=1) = 0.165
    assert d.pmf[0, 1, 1] == pytest.approx(0.165)
    assert d.pmf[0, 0, 1] == pytest.approx(0.385)
    assert d.pmf[0, 1, 0] == 0.0


def test_aggregate_known_y0_flag(tmp_path):
    p = write(
        tmp_path,
        "agg.csv",
        "judge_id,group,n_cases,share,release_rate,mean_y_given_released,mean_y_given_detained\n"
        "A,Q,100,1.0,0.5,0.4,0.2\n",
    )
    assert parse_dataset(p).pmf[0, 1, 0] == pytest.approx(0.1)
    assert parse_dataset(p, known_y0=True).pmf[0, 1, 0] == 0.0
    # the detained column may be absent only with the flag
    q = write(tmp_path, "agg2.csv", "judge_id,group,n_cases,share,release_rate,mean_y_given_released\nA,Q,100,1.0,0.5,0.4\n")
    assert parse_dataset(q, known_y0=True).K == 1
    with pytest.raises(DatasetError, match="missing column"):
        parse_dataset(q)


@pytest.mark.parametrize(
    "body,match",
    [
        ("A,Q,100,1.0,0,2,0.5\nA,Q,100,1.0,1,1,0.5\n", "'d' must be 0 or 1"),
        ("A,Q,100,1.0,0,0,abc\n", "not a number"),
        ("A,Q,100,1.0,0,0,1.5\n", "not a probability"),
        ("A,Q,100,1.0,0,0,0.5\nA,Q,100,1.0,0,0,0.5\n", "duplicate cell"),
        ("A,Q,100,1.0,0,0,0.5\nA,Q,200,1.0,1,1,0.5\n", "inconsistent"),
        ("A,Q,100,1.0,0,0,0.5\nA,Q,100,1.0,1,1,0.4\n", "sum"),
        ("", "no rows"),
    ],
)
def test_long_errors(tmp_path, body, match):
    p = write(tmp_path, "bad.csv", "judge_id,group,n_cases,share,y,d,prob\n" + body)
    with pytest.raises(DatasetError, match=match):
        parse_dataset(p)


def test_detect_format():
    assert detect_format(["judge_id", "prob"]) == "long"
    assert detect_format(["judge_id", "release_rate"]) == "aggregate"
    with pytest.raises(DatasetError):
        detect_format(["a", "b"])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_long_roundtrip_is_exact(seed):
    rng = np.random.default_rng(seed)
    data, _, _ = random_model(rng, int(rng.integers(1, 5)), int(rng.integers(2, 5)))
    text = format_long(data)
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "d.csv"
        write_long(data, path)
        back = parse_dataset(path, validate=False)
    assert back.ids == data.ids
    np.testing.assert_array_equal(back.pmf, data.pmf)
    np.testing.assert_array_equal(back.shares, data.shares)
    assert format_long(back) == text


# ----------------------------------------------------------------------- report


def sample_report():
    r = Report("bounds", inputs_digest="abc", versions={"x": "1"}, timings={"total_seconds": 1.5})
    r.add("theta", 0.25, 0.5, "ok", "marginal_lp")
    r.add("theta", 0.2, 0.55, "ok", "projection", 0.95, "ci")
    r.add("gap", float("nan"), float("inf"), "empty", "marginal_lp")
    return r


def test_canonical_json():
    assert canonical_json({"b": 1, "a": [1.0, -0.0, float("nan"), True, None]}) == '{"a":[1,0,null,true,null],"b":1}\n'
    assert canonical_json(0.1 + 0.2) == "0.3\n"
    assert canonical_json(np.float64(1e-20)) == "1e-20\n"
    with pytest.raises(TypeError):
        canonical_json({"x": object()})


def test_emit_formats():
    rep = sample_report()
    js = json.loads(emit_report(rep, "json"))
    assert js["schema_version"] == 1 and "timings" not in js
    assert "timings" in json.loads(emit_report(rep, "json", include_timings=True))
    assert js["results"][2]["lower"] is None
    lines = emit_report(rep, "csv").decode().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1] == "theta,0.25,0.5,ok,marginal_lp,"
    assert lines[2].endswith(",0.95")
    human = emit_report(rep, "human").decode()
    assert "[0.2500, 0.5000]" in human
    assert "(0.2000, 0.5500)" in human
    assert "∅" in human
    # a dict round-trips through the same emitter
    assert emit_report(js, "json") == emit_report(rep, "json")
    with pytest.raises(ValueError):
        emit_report(rep, "xml")


# -------------------------------------------------------------------------- cli


def run_main(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_bounds_matches_golden(capsys):
    code, out, _ = run_main(capsys, "bounds", "--config", str(FIX / "bounds.json"), "--format", "json")
    assert code == 0
    got = json.loads(out)
    want = json.loads((FIX / "bounds_golden.json").read_text())
    assert got["inputs_digest"] == want["inputs_digest"]
    assert got["info"] == want["info"]
    for g, w in zip(got["results"], want["results"], strict=True):
        assert (g["quantity"], g["status"], g["method"]) == (w["quantity"], w["status"], w["method"])
        assert g["lower"] == pytest.approx(w["lower"], abs=1e-8)
        assert g["upper"] == pytest.approx(w["upper"], abs=1e-8)


def test_cli_digest_ignores_location(tmp_path, capsys):
    for name in ("bounds.json", "judges_long.csv"):
        shutil.copy(FIX / name, tmp_path / name)
    _, a, _ = run_main(capsys, "bounds", "--config", str(FIX / "bounds.json"), "--format", "json")
    _, b, _ = run_main(capsys, "bounds", "--config", str(tmp_path / "bounds.json"), "--format", "json")
    assert json.loads(a)["inputs_digest"] == json.loads(b)["inputs_digest"]


@pytest.mark.parametrize(
    "command,config,quantities",
    [
        ("pc-effect", "bounds.json", ["theta", "pc_effect", "pc_effect"]),
        ("quota", "bounds.json", ["theta", "policy_effect", "pc_effect", "tsls_benchmark", "reallocation_effect"]),
        ("universal-release", "universal.json", ["theta", "theta", "theta"]),
        ("calibrate-dp", "calibrate.json", ["rho", "dp_bar", "od_bar"]),
        ("infer", "infer.json", ["theta", "theta"]),
        ("oracle-check", "oracle.json", ["theta", "theta"]),
    ],
)
def test_cli_commands(capsys, command, config, quantities):
    code, out, _ = run_main(capsys, command, "--config", str(FIX / config), "--format", "json")
    assert code == 0
    rep = json.loads(out)
    assert [r["quantity"] for r in rep["results"]] == quantities


def test_cli_calibrate_roundtrip(capsys):
    _, out, _ = run_main(capsys, "calibrate-dp", "--config", str(FIX / "calibrate.json"), "--format", "json")
    res = {r["quantity"]: r["lower"] for r in json.loads(out)["results"]}
    assert res["dp_bar"] == pytest.approx(0.3, abs=1e-8)
    assert res["od_bar"] == pytest.approx(0.3 * 0.3 * 0.55, abs=1e-8)


def test_cli_universal_values(capsys):
    _, out, _ = run_main(capsys, "universal-release", "--config", str(FIX / "universal.json"), "--format", "json")
    rows = json.loads(out)["results"]
    # judge intervals [0.165, 0.615], [0.1736, 0.5536], [0.1875, 0.4375]
    assert (rows[0]["lower"], rows[0]["upper"]) == pytest.approx((0.1875, 0.4375))
    assert rows[2]["kind"] == "ci" and rows[2]["lower"] < 0.1875 and rows[2]["upper"] > 0.4375


def test_cli_infer_requires_seed(tmp_path, capsys):
    cfg = json.loads((FIX / "infer.json").read_text())
    del cfg["inference"]["seed"]
    cfg["dataset"]["path"] = str(FIX / "judges_long.csv")
    p = write(tmp_path, "c.json", json.dumps(cfg))
    code, _, err = run_main(capsys, "infer", "--config", str(p))
    assert code == 3 and "seed" in err
    code, _, _ = run_main(capsys, "infer", "--config", str(p), "--seed", "5", "--format", "json")
    assert code == 0


def test_cli_empty_set_exit_code(tmp_path, capsys):
    cfg = {
        "schema_version": 1,
        "dataset": {"path": str(FIX / "judges_long.csv")},
        "policy": {"kind": "per_judge", "rates": [0.1, 0.1, 0.1, 0.1]},
        "restrictions": [{"type": "policy_monotonicity"}],
    }
    p = write(tmp_path, "c.json", json.dumps(cfg))
    code, out, _ = run_main(capsys, "bounds", "--config", str(p))
    assert code == 2
    assert "∅" in out


@pytest.mark.parametrize(
    "cfg,match",
    [
        ({"schema_version": 2}, "schema_version"),
        ({"schema_version": 1, "bogus": 1}, "Additional properties"),
        ({"schema_version": 1, "policy": {"kind": "quota", "q": 2}}, "policy/q"),
        ({"schema_version": 1, "policy": {"kind": "universal"}}, "no dataset"),
    ],
)
def test_cli_input_errors(tmp_path, capsys, cfg, match):
    p = write(tmp_path, "c.json", json.dumps(cfg))
    code, _, err = run_main(capsys, "bounds", "--config", str(p))
    assert code == 3
    assert match in err


def test_cli_bad_json(tmp_path, capsys):
    p = write(tmp_path, "c.json", "{not json")
    code, _, err = run_main(capsys, "bounds", "--config", str(p))
    assert code == 3 and "invalid JSON" in err


def test_cli_oracle_mismatch_exit_code(tmp_path, capsys, monkeypatch):
    from policybounds.identify import BoundsResult

    monkeypatch.setattr(cli, "solve_type_lp", lambda *a, **k: BoundsResult(0.0, 1.0, "ok", method="type_lp"))
    code, _, err = run_main(capsys, "oracle-check", "--config", str(FIX / "oracle.json"))
    assert code == 4 and "MISMATCH" in err


def test_cli_out_and_timings(tmp_path, capsys):
    out = tmp_path / "r.json"
    code, stdout, _ = run_main(
        capsys, "bounds", "--config", str(FIX / "bounds.json"), "--format", "json", "--out", str(out), "--timings"
    )
    assert code == 0 and stdout == ""
    rep = json.loads(out.read_text())
    assert rep["timings"]["total_seconds"] > 0


def test_cli_discretize_widens(tmp_path, capsys):
    cfg = json.loads((FIX / "bounds.json").read_text())
    cfg["dataset"]["path"] = str(FIX / "judges_long.csv")
    base = cli.run("bounds", cfg).results[0]
    cfg["discretize"] = {"points": 2}
    coarse = cli.run("bounds", cfg).results[0]
    assert coarse.lower <= base.lower + 1e-9 and base.upper <= coarse.upper + 1e-9


def test_cli_pooling_and_groups(capsys):
    cfg = json.loads((FIX / "bounds.json").read_text())
    cfg["dataset"]["path"] = str(FIX / "judges_long.csv")
    cfg["pooling"] = {"min_cases": 1000, "within_group": False}
    cfg["leniency_groups"] = {"top_share": 0.2}
    rep = cli.run("bounds", cfg)
    assert rep.info["n_judges"] == 3
    assert math.isfinite(rep.results[0].lower)


def test_console_script_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "policybounds", "bounds", "--config", str(FIX / "bounds.json"), "--format", "csv"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith(",".join(CSV_COLUMNS))
