import json
import math
import subprocess
import sys

import numpy as np
import pytest

from blowup_lab.cli import (
    RunConfig,
    UsageError,
    dump_json,
    fit_report,
    main,
    parse_config_file,
    read_series,
    resolve_config,
    series_csv,
)


def _series(f, tau_end=5.0, step=0.05):
    tau = np.linspace(0, tau_end, int(round(tau_end / step)) + 1)
    return {"tau": tau, "norm": f(tau)}


def test_fit_report_exponential():
    slope, intercept, r2 = fit_report(_series(lambda t: np.exp(-0.4 * t)))
    assert slope == pytest.approx(-0.4, abs=1e-10)
    assert intercept == pytest.approx(0.0, abs=1e-10)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_report_constant_and_growth():
    assert fit_report(_series(lambda t: 2.0 + 0 * t))[0] == pytest.approx(0.0, abs=1e-12)
    assert fit_report(_series(np.exp), tau_lo=1.0, tau_hi=4.0)[0] == pytest.approx(1.0, abs=1e-10)


def test_fit_report_rejects():
    with pytest.raises(ValueError):
        fit_report(_series(lambda t: np.exp(-t), tau_end=0.3))
    with pytest.raises(ValueError):
        fit_report(_series(lambda t: -np.ones_like(t)))
    with pytest.raises(ValueError):
        fit_report(_series(lambda t: np.exp(-t)), tau_lo=10.0, tau_hi=11.0)


def test_fit_report_from_csv(tmp_path):
    s = _series(lambda t: 3.0 * np.exp(-0.25 * t))
    rows = [{"tau": t, "norm": n, "p_component": 0.0, "weighted_eh_norm": None} for t, n in zip(s["tau"], s["norm"])]
    path = tmp_path / "series.csv"
    path.write_text(series_csv(rows))
    back = read_series(path)
    assert np.array_equal(back["tau"], s["tau"])
    assert np.all(np.isnan(back["weighted_eh_norm"]))
    slope, intercept, _ = fit_report(str(path))
    assert slope == pytest.approx(-0.25, abs=1e-12)
    assert intercept == pytest.approx(math.log(3.0), abs=1e-12)


def test_series_csv_round_trip_is_exact():
    x = [0.1 + 1e-17, 1 / 3, math.pi * 1e-300]
    text = series_csv([{"tau": v, "norm": v, "p_component": v, "weighted_eh_norm": v} for v in x])
    assert text.splitlines()[0] == "tau,norm,p_component,weighted_eh_norm"
    vals = [float(line.split(",")[0]) for line in text.splitlines()[1:]]
    assert vals == x


def test_dump_json_sorted_and_encodes_complex():
    text = dump_json({"b": 1 + 2j, "a": np.float64(math.inf), "c": np.arange(2)})
    obj = json.loads(text)
    assert list(obj) == ["a", "b", "c"]
    assert obj["b"] == {"re": 1.0, "im": 2.0} and obj["a"] == "inf" and obj["c"] == [0, 1]


@pytest.mark.parametrize(
    "argv",
    [
        ["nonsense"],
        ["spectrum", "--p", "2.5"],
        ["spectrum", "--eps", "0.6"],
        ["spectrum", "--dt", "0.01"],
        ["spectrum", "--set", "bogus=1"],
        ["spectrum", "--set", "data=weird"],
        ["spectrum", "--set", "samples"],
    ],
)
def test_usage_errors_exit_2(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2


def test_config_file_and_overrides(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text("# experiment settings\np = 7\ngrid_n = 48   # smaller grid\ndata = zero\n")
    assert parse_config_file(cfg_path) == {"p": 7.0, "grid_n": 48, "data": "zero"}
    cfg = resolve_config(["modulate", "--config", str(cfg_path), "--set", "t-prime=1.05", "--p", "5"])
    assert cfg.p == 5.0 and cfg.grid_n == 48 and cfg.data == "zero" and cfg.t_prime == 1.05
    bad = tmp_path / "bad.cfg"
    bad.write_text("p 7\n")
    with pytest.raises(UsageError):
        parse_config_file(bad)


def test_run_config_validation():
    RunConfig("spectrum").validate()
    with pytest.raises(UsageError):
        RunConfig("spectrum", T=1.6).validate()
    with pytest.raises(UsageError):
        RunConfig("spectrum", grid_n=4).validate()


def test_spectrum_experiment_outputs(tmp_path):
    out = tmp_path / "spectrum_run"
    assert main(["spectrum", "--p", "5", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["pass"] is True and rep["status"] == "ok"
    assert rep["config"]["p"] == 5.0 and rep["experiment"] == "spectrum"
    assert rep["remainder_closed_form"] == [] and rep["remainder_discrete"] == []
    header = (out / "spectrum.csv").read_text().splitlines()[0]
    assert header == "re_lambda,im_lambda,abs_c0"
    assert (out / "series.csv").read_text().splitlines() == ["tau,norm,p_component,weighted_eh_norm"]


def test_outputs_are_deterministic(tmp_path):
    out = tmp_path / "a"
    argv = ["linear-decay", "--set", "samples=3", "--tau-end", "5", "--dt", "1e-3", "--seed", "11", "--out", str(out)]
    assert main(argv) == 0
    first = {f: (out / f).read_bytes() for f in ("report.json", "series.csv")}
    assert main(argv) == 0
    for f, data in first.items():
        assert (out / f).read_bytes() == data
    rep = json.loads(first["report.json"])
    assert rep["config"]["seed"] == 11 and rep["config"]["samples"] == 3
    cols = read_series(out / "series.csv")
    assert cols["tau"][0] == 0 and cols["tau"][-1] == pytest.approx(5.0)


def test_modulate_zero_data(tmp_path):
    out = tmp_path / "mod"
    assert main(["modulate", "--set", "data=zero", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert abs(rep["T_star"] - 1.0) <= 1e-8
    assert rep["pass"] is True


def test_numerical_failure_exit_1(tmp_path):
    # a bump far outside the perturbative regime: no sign change, diagnostic artifact kept
    out = tmp_path / "fail"
    code = main(["modulate", "--set", "amplitude=5", "--out", str(out)])
    assert code == 1
    rep = json.loads((out / "report.json").read_text())
    assert rep["status"] == "failed" and rep["error"]


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "blowup_lab.cli", "spectrum", "--p", "7", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads((tmp_path / "report.json").read_text())["pass"] is True


@pytest.mark.slow
def test_full_suite_writes_every_experiment(tmp_path):
    code = main(["full-suite", "--set", "samples=2", "--tau-end", "2", "--dt", "5e-4", "--out", str(tmp_path)])
    assert code == 0
    summary = json.loads((tmp_path / "report.json").read_text())
    assert summary["status"] == "ok"
    assert set(summary["exit_codes"]) == {"spectrum", "linear-decay", "projection", "nonlinear-run", "modulate", "main-theorem"}
    for name in summary["exit_codes"]:
        rep = json.loads((tmp_path / name / "report.json").read_text())
        assert rep["status"] == "ok" and rep["experiment"] == name
        assert (tmp_path / name / "series.csv").exists()
