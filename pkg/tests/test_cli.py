from __future__ import annotations

import json
import math
import subprocess
import sys

import numpy as np
import pytest
from scipy import integrate

from greybm.cli import main
from greybm.fracops import TimeGrid
from greybm.io import read_csv
from greybm.measure import ModelParams
from greybm.sampling import read_vggb, sample_vggbm


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


# ---------------------------------------------------------------- specfun


def test_specfun_values(capsys):
    code, out, _ = _run(capsys, "specfun", "ml", "--beta", "1", "--z", "1")
    assert code == 0 and out.startswith("2.718281828")
    code, out, _ = _run(capsys, "specfun", "mw", "--beta", "0.5", "--y", "1")
    assert code == 0 and out.startswith("0.439391289")
    code, out, _ = _run(capsys, "specfun", "gamma", "--x", "0.5", "5")
    vals = [float(v) for v in out.split()]
    assert vals[0] == pytest.approx(math.sqrt(math.pi), rel=1e-14) and vals[1] == pytest.approx(24.0, rel=1e-14)
    code, out, _ = _run(capsys, "specfun", "ml", "--beta", "1", "--z", "1+1j")
    assert complex(out.strip()) == pytest.approx(np.exp(1 + 1j), rel=1e-14)


def test_specfun_range_csv(tmp_path, capsys):
    out = tmp_path / "mw.csv"
    assert _run(capsys, "specfun", "mw", "--beta", "0.5", "--range", "0", "2", "5", "--out", str(out))[0] == 0
    meta, header, data = read_csv(out)
    assert header == ["y", "value"] and meta["beta"] == "0.5"
    # M_{1/2}(y) = exp(-y^2/4) / sqrt(pi)
    assert np.allclose(data[:, 1], np.exp(-data[:, 0] ** 2 / 4) / math.sqrt(math.pi), rtol=1e-12)


def test_invalid_beta_exits_2():
    res = subprocess.run(
        [sys.executable, "-m", "greybm", "specfun", "ml", "--beta", "1.5", "--z", "1"], capture_output=True, text=True
    )
    assert res.returncode == 2
    assert "beta out of range" in res.stderr
    assert res.stdout == ""


def test_bad_usage_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["specfun", "nope"])
    assert exc.value.code == 2
    assert _run(capsys, "measure", "moment", "--beta", "1.5", "--alpha", "0.8")[0] == 2


def test_bad_thread_env_exits_2(monkeypatch, capsys):
    monkeypatch.setenv("GREYBM_THREADS", "zero")
    code, _, err = _run(capsys, "sample", "mwright", "--beta", "0.5", "--paths", "10", "--seed", "1")
    assert code == 2 and "GREYBM_THREADS" in err


# ---------------------------------------------------------------- fracops and measure


def test_fracops_kernel(capsys):
    code, out, _ = _run(capsys, "fracops", "kernel", "--alpha", "0.8", "--t", "0.3", "--s", "0.9", "--quadrature")
    rec = json.loads(out)
    expected = 0.5 * (0.3**0.8 + 0.9**0.8 - 0.6**0.8)
    assert rec["value"] == pytest.approx(expected, rel=1e-14)
    assert rec["quadrature_value"] == pytest.approx(expected, abs=1e-10)


def test_fracops_indicator_skips_singular_points(tmp_path, capsys):
    out = tmp_path / "ind.csv"
    assert _run(capsys, "fracops", "indicator", "--alpha", "0.8", "--t", "1", "--out", str(out))[0] == 0
    meta, header, data = read_csv(out)
    assert meta["skipped_singular_x"] == "0 1"
    assert data.shape == (299, 2) and np.all(np.isfinite(data))


def test_measure_records(capsys):
    code, out, _ = _run(capsys, "measure", "moment", "--beta", "0.6", "--alpha", "1.0", "--coef", "1.7", "--n", "1")
    rec = json.loads(out)
    assert set(rec) >= {"operation", "params", "inputs", "value"}
    assert rec["value"] == pytest.approx(1.7**2 / math.gamma(1.6), rel=1e-14)
    assert rec["params"] == {"beta": 0.6, "alpha": 1.0, "d": 1}
    code, out, _ = _run(capsys, "measure", "donsker", "--beta", "0.7", "--alpha", "1.0")
    rec = json.loads(out)
    target = 2**-0.5 / math.gamma(0.65)
    assert rec["closed_form"] == pytest.approx(target, rel=1e-12)
    assert rec["value"] == pytest.approx(target, abs=1e-6)
    code, out, _ = _run(capsys, "measure", "charfn", "--beta", "1.0", "--alpha", "1.0", "--d", "2", "--p", "1", "2")
    assert json.loads(out)["value"] == pytest.approx(math.exp(-0.5 - 2.0), rel=1e-14)


# ---------------------------------------------------------------- sample


def test_sample_vggbm_csv_shape_and_content(tmp_path, capsys):
    out = tmp_path / "s.csv"
    argv = ["sample", "vggbm", "--beta", "0.7", "--alpha", "0.8", "--d", "2", "--T", "1", "--n", "1024",
            "--paths", "100", "--seed", "42", "--out", str(out)]
    assert _run(capsys, *argv)[0] == 0
    meta, header, data = read_csv(out)
    assert header == ["path", "i", "t", "x1", "x2"]
    assert data.shape == (100 * 1025, 5)
    for k in ("beta", "alpha", "d", "T", "N", "seed"):
        assert k in meta
    ref = sample_vggbm(ModelParams(0.7, 0.8, 2), TimeGrid(1.0, 1024), 100, seed=42)
    assert meta["checksum"] == ref.checksum()
    got = data[:, 3:].reshape(100, 1025, 2).transpose(0, 2, 1)
    assert np.array_equal(got, ref.paths)
    # identical args and seed: byte-identical file
    first = out.read_bytes()
    assert _run(capsys, *argv)[0] == 0
    assert out.read_bytes() == first


def test_sample_binary(tmp_path, capsys):
    out = tmp_path / "s.vggb"
    code, stdout, _ = _run(capsys, "sample", "vggbm", "--d", "2", "--n", "64", "--paths", "7", "--seed", "3",
                           "--format", "binary", "--out", str(out))
    assert code == 0
    ref = sample_vggbm(ModelParams(0.7, 0.8, 2), TimeGrid(1.0, 64), 7, seed=3)
    assert np.array_equal(read_vggb(out), ref.paths)
    assert json.loads(stdout)["checksum"] == ref.checksum()
    assert _run(capsys, "sample", "vggbm", "--seed", "3", "--format", "binary")[0] == 2


def test_sample_mwright_and_fbm(tmp_path, capsys):
    out = tmp_path / "y.csv"
    assert _run(capsys, "sample", "mwright", "--beta", "0.5", "--paths", "20", "--seed", "1", "--out", str(out))[0] == 0
    _, header, data = read_csv(out)
    assert header == ["y"] and data.shape == (20, 1) and np.all(data > 0)
    code, out, _ = _run(capsys, "sample", "fbm", "--H", "0.3", "--n", "8", "--paths", "2", "--seed", "1")
    lines = [l for l in out.splitlines() if not l.startswith("#")]
    assert code == 0 and lines[0] == "path,i,t,x1" and len(lines) == 1 + 2 * 9
    assert "# H=0.3" in out


# ---------------------------------------------------------------- localtime


def test_localtime_expect(capsys):
    code, out, _ = _run(capsys, "localtime", "expect", "--beta", "0.7", "--alpha", "0.8", "--d", "1", "--T", "1")
    rec = json.loads(out)
    assert code == 0
    assert set(rec) >= {"kind", "params", "closed_form", "mc_estimate", "mc_se", "quadrature_value"}
    expected = 1 / (2**-0.5 * math.gamma(0.65) * 1.2)
    assert rec["closed_form"] == pytest.approx(expected, rel=1e-12)
    assert rec["quadrature_value"] == pytest.approx(expected, rel=1e-8)
    assert rec["mc_estimate"] is None


def test_localtime_mc_and_level(capsys):
    code, out, _ = _run(capsys, "localtime", "expect", "--beta", "1", "--alpha", "1", "--paths", "3000",
                        "--n", "256", "--seed", "5")
    rec = json.loads(out)
    assert abs(rec["mc_estimate"] - rec["closed_form"]) <= 4 * rec["mc_se"] + 0.05 * rec["closed_form"]
    code, out, _ = _run(capsys, "localtime", "expect", "--beta", "1", "--alpha", "1", "--a", "0.5")
    rec = json.loads(out)
    # Brownian local time at level a: E L(a, 1) = int_0^1 exp(-a^2/2t) / sqrt(2 pi t) dt
    expected = integrate.quad(lambda t: math.exp(-0.125 / t) / math.sqrt(2 * math.pi * t), 0, 1)[0]
    assert rec["closed_form"] is None
    assert rec["quadrature_value"] == pytest.approx(expected, rel=1e-6)
    code, _, err = _run(capsys, "localtime", "expect", "--beta", "0.7", "--alpha", "1.2", "--d", "2")
    assert code == 2 and "alpha*d < 2" in err


# ---------------------------------------------------------------- sde


def _sde_spec(tmp_path, **over):
    obj = {
        "A": {"kind": "constant", "matrix": [[-1.0]]},
        "sigma": 1.0,
        "x0": [1.0],
        "T": 2.0,
        "N": 400,
        "beta": 1.0,
        "alpha": 1.0,
        "seed": 4,
        "paths": 50,
    }
    obj.update(over)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(obj))
    return path


def test_sde_solve_ou(tmp_path, capsys):
    spec = _sde_spec(tmp_path)
    out, ens = tmp_path / "ou.csv", tmp_path / "ou.vggb"
    code, _, err = _run(capsys, "sde", "solve", "--spec", str(spec), "--out", str(out), "--ensemble", str(ens))
    assert code == 0 and "sha256" in err
    meta, header, data = read_csv(out)
    assert header == ["t", "mean1", "cov11"]
    for k in ("beta", "alpha", "d", "T", "N", "seed"):
        assert k in meta
    t = data[:, 0]
    assert np.abs(data[:, 1] - np.exp(-t)).max() <= 1e-9
    assert np.abs(data[:, 2] - (1 - np.exp(-2 * t)) / 2).max() <= 1e-4
    assert read_vggb(ens).shape == (50, 1, 401)


def test_sde_zero_sigma(tmp_path, capsys):
    spec = _sde_spec(tmp_path, sigma=0.0, A={"kind": "samples", "times": [0, 2], "matrices": [[[0.0]], [[-1.0]]]})
    code, out, _ = _run(capsys, "sde", "solve", "--spec", str(spec))
    assert code == 0
    lines = [l for l in out.splitlines() if not l.startswith("#")]
    data = np.array([[float(x) for x in l.split(",")] for l in lines[1:]])
    assert np.all(data[:, 2] == 0.0)


def test_sde_bad_spec(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(capsys, "sde", "solve", "--spec", str(bad))[0] == 2
    missing = _sde_spec(tmp_path)
    obj = json.loads(missing.read_text())
    del obj["sigma"]
    missing.write_text(json.dumps(obj))
    code, _, err = _run(capsys, "sde", "solve", "--spec", str(missing))
    assert code == 2 and "sigma" in err
    assert _run(capsys, "sde", "solve", "--spec", str(tmp_path / "nope.json"))[0] == 2


# ---------------------------------------------------------------- validate


def test_validate_fast(tmp_path, capsys):
    report_path = tmp_path / "report.json"
    code, _, err = _run(capsys, "validate", "--tier", "fast", "--report", str(report_path))
    report = json.loads(report_path.read_text())
    assert code == 0 and report["passed"]
    assert {c["id"] for c in report["criteria"]} == {1, 2, 5, 6, 7, 8}
    for c in report["criteria"]:
        for chk in c["checks"]:
            assert {"measured", "target", "tolerance", "passed"} <= set(chk)
    assert sum(v["seconds"] for v in report["timing"].values()) < 30
    assert "criterion 1" in err
