"""Error types raised by the solvers and the config layer."""


class MFGError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MFGError, ValueError):
    """Invalid user input (domain spec, solver options, config file)."""


class SolverError(MFGError, RuntimeError):
    """A nonlinear or linear solve failed to converge.

    Parameters
    ----------
    message : str
    residual : float, optional
        Last residual norm reached before giving up.
    trace : list of float, optional
        Per-iteration residual history.
    """

    def __init__(self, message, residual=None, trace=None):
        super().__init__(message)
        self.residual = residual
        self.trace = list(trace) if trace is not None else []


class CrossCheckError(SolverError):
    """Two independent estimates of the same quantity disagree."""


class StructuralError(MFGError, RuntimeError):
    """A discrete operator lacks the structure the method relies on."""


class TightnessError(SolverError):
    """Continuation members fail the L1 Cauchy test.

    ``profile`` holds the escaping-mass profile (mass within distance
    ``delta`` of the boundary for each continuation member).
    """

    def __init__(self, message, residual=None, trace=None, profile=None):
        super().__init__(message, residual=residual, trace=trace)
        self.profile = profile


class LyapunovSpecError(MFGError, ValueError):
    """The Lyapunov function does not satisfy the required drift inequality."""


class ContinuationError(SolverError):
    """The delta continuation fails its Cauchy tests."""


class StepSizeError(MFGError, FloatingPointError):
    """Arithmetic overflow in the particle integrator."""


class BandSelectionError(ConfigurationError):
    """The boundary-layer fit window gives an ill-conditioned design matrix."""
