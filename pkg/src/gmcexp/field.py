"""Exact sampling of the regularised log-correlated field on a grid.

The covariance on the grid is ``K_ij = -log(|r_i - r_j| + eps) + g`` with a
constant ``g``. It is factored densely (Cholesky), so Gaussian draws and the
Cameron-Martin reweighting used for tilting are exact for the discrete vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefiniteError, ParameterError, PreconditionError, ResourceError

DEFAULT_MAX_POINTS = 8192
DEFAULT_G_BOUND = 10.0
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Cell centres of a uniform tiling of ``[-1, 1]^d``.

    ``points`` has shape ``(n_per_side**d, d)``; for ``d = 2`` the ordering is
    row-major in (first coordinate, second coordinate).
    """

    d: int
    n_per_side: int
    spacing: float
    points: np.ndarray

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.d

    @property
    def log_volume(self) -> float:
        """log of the Lebesgue measure of [-1, 1]^d."""
        return self.d * math.log(2.0)

    def center_index(self) -> int:
        """Index of the grid point closest to the origin (first one on ties)."""
        return int(np.argmin(np.linalg.norm(self.points, axis=1)))


def build_grid(d: int, n_per_side: int, max_points: int = DEFAULT_MAX_POINTS) -> GridSpec:
    if d not in (1, 2):
        raise ParameterError(f"unsupported dimension d={d}; only 1 and 2 are available")
    if int(n_per_side) != n_per_side or n_per_side < 2:
        raise ParameterError(f"n_per_side must be an integer >= 2, got {n_per_side!r}")
    n_per_side = int(n_per_side)
    if n_per_side**d > max_points:
        raise ResourceError(
            f"grid with {n_per_side}^{d} = {n_per_side**d} points exceeds the cap of {max_points}"
        )
    spacing = 2.0 / n_per_side
    axis = -1.0 + spacing * (np.arange(n_per_side) + 0.5)
    if d == 1:
        points = axis[:, None]
    else:
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        points = np.column_stack([xx.ravel(), yy.ravel()])
    points.setflags(write=False)
    return GridSpec(d, n_per_side, spacing, points)


@dataclass(frozen=True)
class CovarianceSpec:
    """Kernel parameters.

    ``jitter_cap`` is relative to the largest kernel entry: the diagonal
    repair ``delta`` never exceeds ``jitter_cap * max|K|``.
    """

    eps: float
    g_const: float = 0.0
    jitter_cap: float = 1e-8
    g_bound: float = DEFAULT_G_BOUND

    def __post_init__(self):
        if not (0 < self.eps <= 1):
            raise ParameterError(f"eps must lie in (0, 1], got {self.eps!r}")
        if abs(self.g_const) > self.g_bound:
            raise ParameterError(f"|g_const| = {abs(self.g_const)} exceeds the bound {self.g_bound}")
        if self.jitter_cap < 0:
            raise ParameterError("jitter_cap must be non-negative")


@dataclass(frozen=True, eq=False)
class SamplerState:
    """Kernel matrix on a grid together with its lower Cholesky factor.

    ``factor @ factor.T == cov + jitter_used * I``. ``variances`` is the
    diagonal of that matrix, i.e. the exact variance of the sampled values.
    """

    grid: GridSpec
    spec: Optional[CovarianceSpec]
    cov: np.ndarray
    factor: np.ndarray
    jitter_used: float = 0.0

    @property
    def eps(self) -> float:
        return self.spec.eps if self.spec is not None else float("nan")

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.cov) + self.jitter_used

    def sampling_cov_column(self, index) -> np.ndarray:
        """Column(s) of ``cov + jitter_used * I``; ``index`` may be an array."""
        col = self.cov[:, index].copy()
        if self.jitter_used:
            if np.ndim(index) == 0:
                col[index] += self.jitter_used
            else:
                col[np.asarray(index), np.arange(len(index))] += self.jitter_used
        return col

    def metadata(self) -> dict:
        return {
            "eps": self.eps,
            "d": self.grid.d,
            "n_per_side": self.grid.n_per_side,
            "n_points": self.grid.n_points,
            "g_const": self.spec.g_const if self.spec is not None else None,
            "jitter_used": self.jitter_used,
        }


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def kernel_matrix(grid: GridSpec, eps: float, g_const: float = 0.0) -> np.ndarray:
    if grid.d == 1:
        x = grid.points[:, 0]
        dist = np.abs(x[:, None] - x[None, :])
    else:
        dist = pairwise_distances(grid.points)
    return -np.log(dist + eps) + g_const


def _cholesky(a):
    try:
        return scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None


def build_covariance(grid: GridSpec, spec: CovarianceSpec, enforce_resolution: bool = True) -> SamplerState:
    """Assemble and factor the kernel, escalating diagonal jitter if needed.

    The grid must resolve the cutoff (``spacing <= eps / 2``); pass
    ``enforce_resolution=False`` for deliberately coarse toy grids.
    """
    if enforce_resolution and grid.spacing > spec.eps / 2 * (1 + 1e-12):
        raise PreconditionError(
            f"grid spacing {grid.spacing:g} is too coarse for eps={spec.eps:g} (need <= eps/2)"
        )
    cov = kernel_matrix(grid, spec.eps, spec.g_const)
    cov.setflags(write=False)
    k_max = float(np.max(np.abs(cov)))
    for rel in JITTER_LADDER:
        if rel > spec.jitter_cap:
            break
        delta = rel * k_max
        a = cov + delta * np.eye(grid.n_points) if delta else cov
        factor = _cholesky(a)
        if factor is not None:
            factor.setflags(write=False)
            return SamplerState(grid, spec, cov, factor, delta)
    lam_min = scipy.linalg.eigvalsh(cov, subset_by_index=[0, 0])[0]
    # in d = 2 the mean of -log|x - y| over the square is slightly negative,
    # so the near-constant mode goes negative unless g_const lifts it
    hint = " (in d=2 try g_const >= 0.25)" if grid.d == 2 and spec.g_const < 0.25 else ""
    raise NotPositiveDefiniteError(
        f"kernel at eps={spec.eps:g} on {grid.n_points} points is not positive definite "
        f"within jitter cap {spec.jitter_cap:g}; smallest eigenvalue ~ {lam_min:.3e}{hint}",
        min_eigenvalue=float(lam_min),
    )


def factor_residual(state: SamplerState) -> float:
    """``max|L L^T - (K + delta I)| / max|K|``."""
    target = state.cov + state.jitter_used * np.eye(state.grid.n_points)
    resid = state.factor @ state.factor.T - target
    return float(np.max(np.abs(resid)) / np.max(np.abs(state.cov)))


# --- random streams ---------------------------------------------------------

def child_stream(master_seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` (e.g. ``(rung, replica)``) under a master seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(master_seed, spawn_key=key)))


# --- samples ------------------------------------------------------------------

@dataclass(frozen=True)
class TiltSpec:
    """Mean shift ``strength * Cov[:, u_index]`` and its log-weight constant."""

    u_index: int
    strength: float
    mean_shift: np.ndarray
    log_weight_const: float


@dataclass(frozen=True, eq=False)
class FieldSample:
    values: np.ndarray
    tilt: Optional[TiltSpec] = field(default=None)

    def __len__(self):
        return len(self.values)


def sample(state: SamplerState, rng: np.random.Generator) -> FieldSample:
    """One exact draw ``factor @ z`` with ``z`` standard normal."""
    z = rng.standard_normal(state.grid.n_points)
    return FieldSample(state.factor @ z)


def sample_batch(state: SamplerState, z: np.ndarray) -> np.ndarray:
    """Field values for a block of standard normal rows ``z`` (shape ``(m, N)``)."""
    return z @ state.factor.T


def make_tilt(state: SamplerState, u_index: int, beta: float, q: float, c: float) -> TiltSpec:
    n = state.grid.n_points
    if not (0 <= u_index < n):
        raise ParameterError(f"u_index {u_index} out of range for {n} grid points")
    lam = beta * q * c
    col = state.sampling_cov_column(u_index)
    shift = lam * col
    shift.setflags(write=False)
    return TiltSpec(int(u_index), lam, shift, 0.5 * lam * lam * col[u_index])


def tilt_log_weight(values_at_u, tilt: TiltSpec):
    """log dP/dQ of the untilted law P against the tilted law Q, at the sampled values."""
    return -tilt.strength * values_at_u + tilt.log_weight_const


def sample_tilted(state: SamplerState, tilt: TiltSpec, rng: np.random.Generator) -> tuple[FieldSample, float]:
    """Draw from the mean-shifted law and return the exact importance log-weight.

    ``E[f(X)] = E[f(X_tilted) * exp(log_weight)]`` holds exactly for the
    discrete Gaussian vector.
    """
    base = sample(state, rng)
    values = base.values + tilt.mean_shift
    return FieldSample(values, tilt), float(tilt_log_weight(values[tilt.u_index], tilt))


# --- dyadic cascade surrogate -----------------------------------------------------

MAX_CASCADE_LEVELS = 20


def sample_cascade(levels: int, rng: np.random.Generator) -> FieldSample:
    """Branching-random-walk field on ``2**levels`` dyadic cells of [-1, 1].

    Each dyadic interval at depth ``k = 1..levels`` carries an independent
    ``N(0, log 2)`` increment; a cell's value is the sum along its ancestry, so
    two cells covary by ``log 2`` times the depth of their common ancestor.
    """
    if not (1 <= levels <= MAX_CASCADE_LEVELS):
        raise ParameterError(f"levels must be in [1, {MAX_CASCADE_LEVELS}], got {levels}")
    n = 2**levels
    values = np.zeros(n)
    sd = math.sqrt(math.log(2.0))
    for k in range(1, levels + 1):
        incr = rng.standard_normal(2**k) * sd
        values += np.repeat(incr, n >> k)
    return FieldSample(values)


def cascade_covariance(levels: int) -> np.ndarray:
    n = 2**levels
    idx = np.arange(n)
    xor = idx[:, None] ^ idx[None, :]
    # depth of the common ancestor = levels - bit_length(i xor j)
    bitlen = np.zeros_like(xor)
    nz = xor > 0
    bitlen[nz] = np.floor(np.log2(xor[nz])).astype(int) + 1
    return (levels - bitlen) * math.log(2.0)


def cascade_state(levels: int, max_points: int = DEFAULT_MAX_POINTS) -> SamplerState:
    """Dense SamplerState carrying the cascade covariance (for functionals and checks)."""
    grid = build_grid(1, 2**levels, max_points=max_points)
    cov = cascade_covariance(levels)
    cov.setflags(write=False)
    factor = _cholesky(cov)
    factor.setflags(write=False)
    return SamplerState(grid, None, cov, factor, 0.0)
