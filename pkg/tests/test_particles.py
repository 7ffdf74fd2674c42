import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from explosive_mfg import DriftField, ParticleConfig, simulate
from explosive_mfg.exceptions import ConfigurationError
from explosive_mfg.particles import brownian_exit_probability, stream_key, total_variation


def test_stream_keys_distinct_and_stable():
    keys = {stream_key(7, i) for i in range(1000)}
    assert len(keys) == 1000
    assert stream_key(7, 3) == stream_key(7, 3)
    assert stream_key(7, 3) != stream_key(8, 3)


def test_zero_drift_matches_oracle(dom128):
    cfg = ParticleConfig(DriftField.zero(dom128), n_particles=4000, T=0.05, seed=1)
    rep = simulate(cfg)
    assert rep.exit_count > 0
    assert rep.exit_fraction == pytest.approx(brownian_exit_probability(0.5, 0.05), abs=0.02)


def test_reproducible(dom128):
    cfg = ParticleConfig(DriftField.zero(dom128), n_particles=300, T=0.02, seed=5)
    a, b = simulate(cfg), simulate(cfg)
    assert np.array_equal(a.histogram, b.histogram)
    assert a.exit_count == b.exit_count


def test_confining_drift_no_exits(nonlocal128):
    cfg = ParticleConfig(nonlocal128.drift, n_particles=400, T=1.0, seed=2)
    rep = simulate(cfg, density=nonlocal128.m)
    assert rep.exit_count == 0
    assert rep.certified
    assert rep.min_distance > 0
    assert 0 <= rep.tv_distance <= 1


def test_cfl_violation_rejected(dom128):
    drift = DriftField.constant(dom128, [100.0])
    with pytest.raises(ConfigurationError, match="base_dt"):
        ParticleConfig(drift, base_dt=1e-3)


def test_start_outside_rejected(dom128):
    with pytest.raises(ConfigurationError):
        ParticleConfig(DriftField.zero(dom128), n_particles=2, start=[1.5]).starts()


def test_report_serialization(tmp_path, dom128):
    rep = simulate(ParticleConfig(DriftField.zero(dom128), n_particles=50, T=0.01))
    rep.to_json(tmp_path / "r.json")
    rep.histogram_csv(tmp_path / "h.csv", dom128)
    assert (tmp_path / "h.csv").read_text().startswith("node,x,probability")


def test_total_variation_identical(nonlocal128):
    m = nonlocal128.m
    assert total_variation(m.values * m.domain.cell_volume, m) == pytest.approx(0.0, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(1e-3, 2.0))
def test_exit_probability_properties(x0, T):
    p = brownian_exit_probability(x0, T)
    assert 0.0 <= p <= 1.0
    assert p == pytest.approx(brownian_exit_probability(1 - x0, T), abs=1e-12)
    assert brownian_exit_probability(x0, 2 * T) >= p - 1e-12
