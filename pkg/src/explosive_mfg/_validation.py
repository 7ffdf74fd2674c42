"""Small input-validation helpers shared by the public API."""
from __future__ import annotations

import numbers

import numpy as np

from .exceptions import ConfigurationError


def check_q(q):
    """Return ``q`` as float, requiring 1 < q <= 2."""
    if not isinstance(q, numbers.Real) or not (1.0 < float(q) <= 2.0):
        raise ConfigurationError(f"q must lie in (1, 2], got {q!r}")
    return float(q)


def check_scalar(x, name, low=None, high=None, closed_low=True, closed_high=True):
    """Validate a real scalar against optional bounds."""
    if isinstance(x, bool) or not isinstance(x, numbers.Real):
        raise ConfigurationError(f"{name} must be a real number, got {x!r}")
    x = float(x)
    if not np.isfinite(x):
        raise ConfigurationError(f"{name} must be finite, got {x!r}")
    if low is not None:
        bad = x < low if closed_low else x <= low
        if bad:
            op = ">=" if closed_low else ">"
            raise ConfigurationError(f"{name} must be {op} {low}, got {x}")
    if high is not None:
        bad = x > high if closed_high else x >= high
        if bad:
            op = "<=" if closed_high else "<"
            raise ConfigurationError(f"{name} must be {op} {high}, got {x}")
    return x


def check_int(x, name, low=None):
    if isinstance(x, bool) or not isinstance(x, numbers.Integral):
        raise ConfigurationError(f"{name} must be an integer, got {x!r}")
    x = int(x)
    if low is not None and x < low:
        raise ConfigurationError(f"{name} must be >= {low}, got {x}")
    return x


def check_node_array(values, n, name="values", allow_mask=None):
    """Return ``values`` as a float array of length ``n``.

    Non-finite entries are rejected on ``allow_mask`` (or everywhere when
    the mask is None).
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigurationError(f"{name} must have shape ({n},), got {arr.shape}")
    check = arr if allow_mask is None else arr[allow_mask]
    if not np.all(np.isfinite(check)):
        raise ConfigurationError(f"{name} has non-finite entries")
    return arr


def check_decreasing(seq, name):
    seq = [float(s) for s in seq]
    if len(seq) == 0:
        raise ConfigurationError(f"{name} must be non-empty")
    if any(b >= a for a, b in zip(seq, seq[1:])):
        raise ConfigurationError(f"{name} must be strictly decreasing, got {seq}")
    return seq


def gamma_interval(q):
    """Admissible open interval for the W_gamma weight at exponent q."""
    return 2.0, (2.0 * q - 1.0) / (q - 1.0)


def check_gamma(gamma, q):
    lo, hi = gamma_interval(q)
    gamma = check_scalar(gamma, "gamma")
    if not (lo < gamma < hi):
        raise ConfigurationError(
            f"gamma={gamma} outside the admissible interval ({lo:g}, {hi:g}) for q={q:g}"
        )
    return gamma
