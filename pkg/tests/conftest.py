import numpy as np
import pytest

from explosive_mfg import (Coupling, DomainSpec, HJBProblem, MFGConfig, build_domain,
                           solve_ergodic, solve_nonlocal)
from explosive_mfg.kfp import Density


@pytest.fixture(scope="session")
def dom128():
    return build_domain(DomainSpec(resolution=128))


@pytest.fixture(scope="session")
def dom256():
    return build_domain(DomainSpec(resolution=256))


@pytest.fixture(scope="session")
def dom512():
    return build_domain(DomainSpec(resolution=512))


@pytest.fixture(scope="session")
def value15(dom512):
    return solve_ergodic(HJBProblem(dom512, 1.5))


@pytest.fixture(scope="session")
def value2(dom512):
    return solve_ergodic(HJBProblem(dom512, 2.0))


@pytest.fixture(scope="session")
def value15_coarse(dom128):
    return solve_ergodic(HJBProblem(dom128, 1.5))


def _nonlocal(dom, tol, tilted=False):
    cfg = MFGConfig(dom, 1.5, Coupling(), fp_tolerance=tol)
    m0 = None
    if tilted:
        x = dom.nodes[:, 0]
        m0 = Density.from_values(dom, np.exp(2.0 * (x - 0.5)))
    return solve_nonlocal(cfg, m0=m0)


@pytest.fixture(scope="session")
def nonlocal512():
    """Reference non-local run (uniform start, tight tolerance)."""
    return _nonlocal(build_domain(DomainSpec(resolution=512)), 1e-10)


@pytest.fixture(scope="session")
def nonlocal512_tilted(nonlocal512):
    return _nonlocal(nonlocal512.domain, 1e-10, tilted=True)


@pytest.fixture(scope="session")
def nonlocal256():
    return _nonlocal(build_domain(DomainSpec(resolution=256)), 1e-10)


@pytest.fixture(scope="session")
def nonlocal128():
    return _nonlocal(build_domain(DomainSpec(resolution=128)), 1e-10)
