import json
import shutil
import subprocess
import sys

import pytest

from explosive_mfg import __version__
from explosive_mfg.cli import RunManifest, main
from explosive_mfg.config import RunConfig
from explosive_mfg.exceptions import ConfigurationError


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _report(out):
    return json.loads((out / "report.json").read_text())


def test_defaults_resolved():
    res = RunConfig().resolved()
    assert res["mfg"]["gamma"] == pytest.approx(3.0)
    assert res["domain"]["h"] == pytest.approx(1 / 128)
    assert set(res) == {"domain", "hjb", "kfp", "coupling", "mfg", "particles", "sweep"}


def test_strict_keys():
    with pytest.raises(ConfigurationError, match=r"\['bogus'\]"):
        RunConfig.from_dict({"mfg": {"bogus": 1}})
    with pytest.raises(ConfigurationError, match="section"):
        RunConfig.from_dict({"solver": {}})


def test_gamma_outside_interval_exit3(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml", "[hjb]\nq = 1.5\n[mfg]\ngamma = 5.0\n")
    out = tmp_path / "run"
    assert main(["solve-nonlocal", "--config", cfg, "--out", str(out)]) == 3
    assert "(2, 4)" in capsys.readouterr().err
    man = json.loads((out / "manifest.json").read_text())
    assert man["version"] == __version__
    assert _report(out)["exit_status"] == 3


def test_unknown_key_exit3(tmp_path, capsys):
    cfg = _write(tmp_path, "c.toml", "[particles]\nnparticles = 5\n")
    assert main(["particles", "--config", cfg, "--out", str(tmp_path / "r")]) == 3
    assert "nparticles" in capsys.readouterr().err


def test_bad_toml_exit3(tmp_path):
    cfg = _write(tmp_path, "c.toml", "[hjb\n")
    assert main(["hjb", "--config", cfg, "--out", str(tmp_path / "r")]) == 3


def test_uniqueness_needs_two_runs():
    with pytest.raises(ConfigurationError):
        RunManifest("uniqueness", runs=("a",))


def test_solve_local_reference(tmp_path):
    cfg = _write(tmp_path, "c.toml",
                 "[hjb]\nq = 1.5\n[coupling]\nkind = \"local_function\"\nlocal_f = \"tanh\"\n")
    out = tmp_path / "run"
    assert main(["solve-local", "--config", cfg, "--out", str(out)]) == 0
    for name in ("u.csv", "m.csv", "report.json", "manifest.json", "residual_trace.csv",
                 "plot.py"):
        assert (out / name).exists(), name
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["coupling"]["local_f"] == "tanh"
    assert man["config"]["mfg"]["delta_schedule"] == [0.1, 0.05, 0.025]


def test_solver_failure_exit2(tmp_path):
    cfg = _write(tmp_path, "c.toml", "[mfg]\nmax_iterations = 2\nfp_tolerance = 1e-14\n")
    out = tmp_path / "run"
    assert main(["solve-nonlocal", "--config", cfg, "--out", str(out)]) == 2
    assert _report(out)["error_type"] == "SolverError"


def test_reproducible_and_uniqueness(tmp_path):
    tilt = _write(tmp_path, "t.toml", "[mfg]\ninitial = \"tilted\"\nfp_tolerance = 1e-10\n")
    uni = _write(tmp_path, "u.toml", "[mfg]\nfp_tolerance = 1e-10\n")
    a, a2, b = tmp_path / "a", tmp_path / "a2", tmp_path / "b"
    assert main(["solve-nonlocal", "--config", uni, "--out", str(a)]) == 0
    assert main(["solve-nonlocal", "--config", uni, "--out", str(a2)]) == 0
    assert main(["solve-nonlocal", "--config", tilt, "--out", str(b)]) == 0
    for name in ("u.csv", "m.csv", "F.csv", "residual_trace.csv"):
        assert (a / name).read_bytes() == (a2 / name).read_bytes()
    out = tmp_path / "uq"
    assert main(["uniqueness", str(a), str(b), "--out", str(out)]) == 0
    ident = json.loads((out / "identity_report.json").read_text())
    row = ident["rows"][0]
    for key in ("monotonicity", "con1", "con2", "dphi_remainder", "laplace_phi_remainder"):
        assert key in row
    assert _report(out)["m_l1_distance"] < 1e-6


def test_particles_seeded(tmp_path):
    cfg = _write(tmp_path, "p.toml",
                 "[particles]\ndrift = \"zero\"\nT = 0.05\nn_particles = 3000\n")
    r1, r2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["particles", "--config", cfg, "--out", str(r1), "--seed", "4"]) == 0
    assert main(["particles", "--config", cfg, "--out", str(r2), "--seed", "4"]) == 0
    assert (r1 / "histogram.csv").read_bytes() == (r2 / "histogram.csv").read_bytes()
    assert _report(r1)["seed"] == 4


def test_kfp_zero_and_hjb(tmp_path):
    cfg = _write(tmp_path, "k.toml", "[kfp]\ndrift = \"zero\"\n")
    assert main(["kfp", "--config", cfg, "--out", str(tmp_path / "k")]) == 0
    assert main(["hjb", "--out", str(tmp_path / "h")]) == 0
    assert (tmp_path / "h" / "bands.csv").exists()


@pytest.mark.skipif(shutil.which("explosive-mfg") is None, reason="console script not installed")
def test_console_script_and_plot(tmp_path):
    out = tmp_path / "h"
    subprocess.run(["explosive-mfg", "hjb", "--out", str(out)], check=True)
    pytest.importorskip("matplotlib")
    subprocess.run([sys.executable, str(out / "plot.py")], check=True)
    assert (out / "plots.png").exists()
