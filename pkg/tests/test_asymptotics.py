import json

import numpy as np
import pytest

from explosive_mfg import DomainSpec, SweepPlan, run_sweep
from explosive_mfg.asymptotics import plan_from_config, targets_for
from explosive_mfg.exceptions import BandSelectionError, ConfigurationError


@pytest.fixture(scope="module")
def sweep():
    return run_sweep(SweepPlan())


def test_targets():
    assert targets_for(1.5) == pytest.approx(
        {"gradient_limit": 4.0, "drift_limit": 3.0, "exponent": -1.0, "prefactor": 4.0})
    t = targets_for(1.25)
    assert (t["exponent"], t["gradient_limit"], t["drift_limit"]) == pytest.approx((-3, 256, 5))
    assert targets_for(2.0)["log_coefficient"] == 1.0


def test_plan_validation():
    with pytest.raises(ConfigurationError, match="at least 3"):
        SweepPlan(resolutions=(256, 512))
    with pytest.raises(ConfigurationError, match="geometric"):
        SweepPlan(resolutions=(256, 512, 768))
    with pytest.raises(ConfigurationError, match="must lie inside"):
        SweepPlan(bands=((0.001, 0.01),))
    with pytest.raises(ConfigurationError):
        plan_from_config({"nope": 1}, DomainSpec())


def test_default_bands():
    plan = SweepPlan()
    assert plan.bands == ((0.0125, 0.025), (0.025, 0.05), (0.05, 0.1))


def test_convergence(sweep):
    for c in sweep.convergence:
        if c["checked"]:
            assert c["ok"], c


def test_uniformity_q15(sweep):
    rows = [u for u in sweep.uniformity if u["q"] == 1.5]
    assert rows and all(u["ok"] for u in rows)


def test_uniformity_table_complete(sweep):
    """Every (q, band) row is reported, including rows that fail the envelope check."""
    assert len(sweep.uniformity) == 2 * 3
    for u in sweep.uniformity:
        assert len(u["deviations"]) == 3
        assert u["spread"] == pytest.approx(np.ptp(u["deviations"]))


def test_report_files(tmp_path, sweep):
    sweep.write_tables(tmp_path)
    sweep.to_json(tmp_path / "r.json")
    assert (tmp_path / "fits.csv").read_text().count("\n") == 1 + 2 * 3 * 3
    assert json.loads((tmp_path / "r.json").read_text())["plan"]["resolutions"] == [256, 512, 1024]


def test_ill_conditioned_fit():
    with pytest.raises(BandSelectionError):
        run_sweep(SweepPlan(q_values=(1.5,), resolutions=(128, 256, 512), g_family=(0.0,),
                            max_condition=1.0))
