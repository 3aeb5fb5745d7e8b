"""Gibbs and chaos functionals of a field sample, in natural-log scale.

Every function accepts either a :class:`~gmcexp.field.FieldSample` or a raw
array whose last axis runs over grid points, so a block of replicas of shape
``(m, N)`` is evaluated in one call. Integrals over ``[-1, 1]^d`` are midpoint
sums on the sampling grid, written as ``log|[-1,1]^d| + log mean_i(...)`` so
that a constant integrand gives the exact log-volume.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from .errors import PreconditionError
from .field import SamplerState


def _values(field) -> np.ndarray:
    return np.asarray(getattr(field, "values", field), dtype=float)


def _log_mean_exp(a: np.ndarray) -> np.ndarray:
    return logsumexp(a, axis=-1) - math.log(a.shape[-1])


def _log_integral(state: SamplerState, exponent: np.ndarray):
    out = state.grid.log_volume + _log_mean_exp(exponent)
    return out if np.ndim(out) else float(out)


def log_partition(field, state: SamplerState, beta: float):
    """``log Z(beta) = log int exp(beta X(x)) dx``."""
    return _log_integral(state, beta * _values(field))


def log_gmc_mass(field, state: SamplerState, beta: float):
    """``log int exp(beta X - beta^2 Var X / 2) dx``; its exponential has mean ``2^d``."""
    return _log_integral(state, _gmc_exponent(field, state, beta))


def _gmc_exponent(field, state, beta):
    return beta * _values(field) - 0.5 * beta * beta * state.variances


def log_moment_ratio(field, state: SamplerState, beta: float, q: float):
    """``log Z(q beta) - q log Z(beta)``, the log of the q-th moment of the Gibbs density."""
    return log_partition(field, state, q * beta) - q * log_partition(field, state, beta)


def participation_sum(field, state: SamplerState, beta: float, q: float):
    """``log sum_i w_i^q`` for the grid Gibbs weights ``w_i ~ exp(beta X(r_i))``."""
    x = beta * _values(field)
    out = logsumexp(q * x, axis=-1) - q * logsumexp(x, axis=-1)
    return out if np.ndim(out) else float(out)


def log_singular_integral(field, state: SamplerState, beta: float, s: float, u_index: int):
    """``log int exp(beta X - beta^2 Var X / 2) (|x - u| + eps)^(-s) dx`` with ``u`` a grid point.

    At ``x = u`` the weight is ``eps^(-s)``, finite thanks to the cutoff.
    """
    if s < 0:
        raise PreconditionError(f"s must be >= 0, got {s}")
    expo = _gmc_exponent(field, state, beta)
    if s != 0:
        dist = np.linalg.norm(state.grid.points - state.grid.points[u_index], axis=1)
        expo = expo - s * np.log(dist + state.eps)
    return _log_integral(state, expo)


def box_layout(n_per_side: int, spacing: float, box_width: float) -> int:
    """Number of grid points per box side; validates alignment."""
    ratio = box_width / spacing
    m = int(round(ratio))
    if m < 3 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise PreconditionError(
            f"box width {box_width:g} must be an integer multiple (>= 3) of the spacing {spacing:g}"
        )
    if m % 2 == 0:
        raise PreconditionError(f"boxes hold {m} points per side; need an odd count so the centre is a grid point")
    if n_per_side % m:
        raise PreconditionError(f"{n_per_side} points per side do not split into boxes of {m}")
    return m


def sup_increment(field_fine, state_fine: SamplerState, box_width: float):
    """``max_i max_{v in B_i} |X(v) - X(r_i)|`` over boxes tiling the domain.

    The fine grid must place an odd number of points along each box side so
    that each box centre ``r_i`` is itself a grid point.
    """
    grid = state_fine.grid
    m = box_layout(grid.n_per_side, grid.spacing, box_width)
    x = _values(field_fine)
    lead = x.shape[:-1]
    nb = grid.n_per_side // m
    c = m // 2
    if grid.d == 1:
        boxes = x.reshape(*lead, nb, m)
        dev = np.abs(boxes - boxes[..., c : c + 1])
    else:
        boxes = x.reshape(*lead, nb, m, nb, m)
        dev = np.abs(boxes - boxes[..., c : c + 1, :, c : c + 1])
    out = dev.reshape(*lead, -1).max(axis=-1)
    return out if np.ndim(out) else float(out)
