"""Explosive ergodic mean field games with state constraints."""

__version__ = "0.1.0"

from .domain import DomainSpec, Domain, GridField, build_domain, extend_holder  # noqa: E402
from .hjb import (HJBProblem, ValueSolution, DriftField, ExplosiveHJB, solve_discounted,  # noqa: E402
                  solve_ergodic, drift_from_value, fit_boundary_asymptotics)
from .kfp import (Density, FokkerPlanck, LyapunovSpec, lyapunov_certificate,  # noqa: E402
                  solve_kfp_neumann, solve_kfp_whole, weighted_norm)
from .coupling import Coupling, evaluate, monotonicity_probe  # noqa: E402
from .mfg import (MFGConfig, MFGSolution, MeanFieldGame, solve_local, solve_nonlocal,  # noqa: E402
                  uniqueness_diagnostic, verify_solution)
from .particles import ParticleConfig, EnsembleReport, simulate  # noqa: E402
from .asymptotics import SweepPlan, SweepReport, run_sweep  # noqa: E402
from .config import RunConfig, load_config  # noqa: E402
