import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from explosive_mfg import DomainSpec, GridField, build_domain, extend_holder
from explosive_mfg.domain import holder_seminorm, read_field_csv
from explosive_mfg.exceptions import ConfigurationError


def test_interval_distance_values(dom128):
    i = dom128.nearest_node(0.25)
    assert dom128.d_exact[i] == pytest.approx(dom128.nodes[i, 0])
    j = dom128.nearest_node(0.5)
    assert dom128.spec.epsilon0 <= dom128.d[j] <= 1.0


def test_interval_sign_convention(dom128):
    i = dom128.nearest_node(dom128.h / 2)
    assert dom128.grad_d[i, 0] == pytest.approx(1.0)
    assert dom128.normal[i, 0] == -1.0


def test_disk_curvature():
    dom = build_domain(DomainSpec("disk", (1.0,), resolution=200))
    r = np.linalg.norm(dom.nodes, axis=1)
    i = np.argmin(np.abs(r - 0.9))
    assert dom.d_exact[i] == pytest.approx(1.0 - r[i])
    assert dom.laplacian_d[i] == pytest.approx(-1.0 / r[i])
    # finite differences of the field agree with the closed form
    x = dom.nodes[i]
    eps = 1e-4
    lap = sum((dom.distance_field(x + e)[0] - 2 * dom.distance_field(x)[0]
               + dom.distance_field(x - e)[0]) / eps ** 2 for e in np.eye(2) * eps)
    assert lap[0] == pytest.approx(-1.0 / r[i], rel=1e-4)


def test_gradient_unit_in_strip():
    for spec in (DomainSpec(resolution=128), DomainSpec("disk", (1.0,), 100)):
        dom = build_domain(spec)
        strip = dom.d_exact < spec.epsilon0
        assert np.allclose(np.linalg.norm(dom.grad_d[strip], axis=1), 1.0)
        assert np.all(dom.d <= 1.0)
        assert np.all(dom.d[~strip] >= dom.M0 - 1e-12)


def test_nested_masks(dom128):
    a, b = dom128.subdomain_mask(0.05), dom128.subdomain_mask(0.1)
    assert np.all(a[b])


def test_coarse_resolution_rejected():
    with pytest.raises(ConfigurationError, match="too coarse"):
        DomainSpec(resolution=8, epsilon0=0.2)


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        DomainSpec(kind="triangle")


def test_csv_roundtrip(tmp_path, dom128):
    vals = np.sin(dom128.nodes[:, 0])
    dom128.dump_csv(tmp_path / "f.csv", vals, name="f")
    header, data = read_field_csv(tmp_path / "f.csv")
    assert header == ["node", "x", "f"]
    assert np.array_equal(data[:, -1], vals)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=40, max_size=40),
       st.floats(0.2, 1.0), st.floats(0.06, 0.2))
def test_holder_extension_properties(raw, alpha, delta):
    dom = build_domain(DomainSpec(resolution=40))
    vals = np.interp(dom.nodes[:, 0], np.linspace(0, 1, 40), raw)
    mask = dom.subdomain_mask(delta)
    mu = GridField(np.where(mask, vals, 0.0), dom, mask)
    ext = extend_holder(mu, alpha)
    assert np.array_equal(ext.values[mask], mu.values[mask])
    inner = holder_seminorm(mu.values[mask], dom.nodes[mask], alpha)
    whole = holder_seminorm(ext.values, dom.nodes, alpha)
    assert whole <= inner * (1 + 1e-9) + 1e-12
