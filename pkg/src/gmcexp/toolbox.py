"""Monte Carlo harness for Gaussian comparison inequalities.

Two centred Gaussian vectors ``X ~ N(0, Sx)`` and ``Y ~ N(0, Sy)`` with
``Sx <= Sy`` entrywise satisfy

* Kahane: ``E F(sum p_i exp(X_i - Var X_i / 2)) <= E F(same with Y)`` for convex ``F``;
* Slepian (equal variances): ``P(max X_i < x) <= P(max Y_i < x)``.

Both sides are estimated from one set of standard normals (common random
numbers), so the margin ``rhs - lhs`` is a paired difference with a small
standard error. A violation is flagged when the margin is more than three
standard errors on the wrong side. :func:`brute_force_expectation` is an
independent tensor Gauss-Hermite oracle for ``n <= 3``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import ParameterError, PreconditionError

SIGMA_RULE = 3.0
MAX_TOOLBOX_DIM = 6
MAX_ORACLE_DIM = 3
MAX_ORACLE_ORDER = 64


@dataclass(frozen=True, eq=False)
class OrderedCovPair:
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    equal_diag: bool = False

    @property
    def n(self) -> int:
        return self.sigma_x.shape[0]

    def check(self, atol: float = 1e-12) -> None:
        """Raise ParameterError if any invariant of the pair fails."""
        sx, sy = self.sigma_x, self.sigma_y
        if sx.shape != sy.shape or sx.shape[0] != sx.shape[1]:
            raise ParameterError("covariances must be square and of equal size")
        for name, s in (("sigma_x", sx), ("sigma_y", sy)):
            if not np.allclose(s, s.T, atol=atol):
                raise ParameterError(f"{name} is not symmetric")
            try:
                np.linalg.cholesky(s)
            except np.linalg.LinAlgError:
                raise ParameterError(f"{name} is not positive definite") from None
        if np.any(sx > sy + atol):
            raise ParameterError("entrywise ordering sigma_x <= sigma_y fails")
        if self.equal_diag and not np.array_equal(np.diag(sx), np.diag(sy)):
            raise ParameterError("equal_diag pair has different variances")


def random_ordered_cov_pair(n: int, equal_diag: bool, rng: np.random.Generator, max_tries: int = 50) -> OrderedCovPair:
    """Random PD pair with ``sigma_x <= sigma_y`` entrywise.

    ``sigma_y = A A^T + D``; ``sigma_x = sigma_y - E`` with ``E >= 0``
    symmetric (zero diagonal when ``equal_diag``). ``E`` is halved until
    ``sigma_x`` is positive definite. Both matrices are then scaled so the
    largest variance is 1: with larger variances ``F = x^2`` of a lognormal
    sum is so heavy-tailed that sample standard errors stop being meaningful.
    """
    if not (1 <= n <= MAX_TOOLBOX_DIM):
        raise ParameterError(f"n must be in [1, {MAX_TOOLBOX_DIM}], got {n}")
    a = rng.normal(scale=0.6, size=(n, n))
    sy = a @ a.T + np.diag(rng.uniform(0.2, 1.0, n))
    e = rng.uniform(0.0, 0.8, size=(n, n))
    e = (e + e.T) / 2
    if equal_diag:
        np.fill_diagonal(e, 0.0)
    for _ in range(max_tries):
        sx = sy - e
        try:
            np.linalg.cholesky(sx)
        except np.linalg.LinAlgError:
            e = e / 2
            continue
        scale = float(np.max(np.diag(sy)))
        pair = OrderedCovPair(sx / scale, sy / scale, equal_diag)
        pair.check()
        return pair
    raise ParameterError(f"could not generate an ordered PD pair of size {n} in {max_tries} tries")


@dataclass(frozen=True)
class ConvexFunctional:
    """``F(sum_i p_i exp(Z_i - Var Z_i / 2))`` for one of a few convex ``F``.

    kinds: ``"power"`` (``x^p``, ``p >= 1``), ``"negpower"`` (``x^-p``,
    ``p > 0``) and ``"exp"`` (``exp(-p x)``, ``p > 0``). A ``"power"`` with
    ``0 < p < 1`` is concave and must be marked ``reversed=True``; the
    expected inequality then points the other way.
    """

    kind: str
    param: float
    weights: tuple = ()
    reversed: bool = False

    def __post_init__(self):
        if self.kind == "power":
            if self.param >= 1 and self.reversed:
                raise ParameterError("power >= 1 is convex; reversed makes no sense")
            if 0 < self.param < 1 and not self.reversed:
                raise ParameterError("power in (0, 1) is concave; set reversed=True")
            if self.param <= 0:
                raise ParameterError("power must be positive")
        elif self.kind in ("negpower", "exp"):
            if self.param <= 0:
                raise ParameterError(f"{self.kind} parameter must be positive")
            if self.reversed:
                raise ParameterError(f"{self.kind} is convex; reversed is only for concave powers")
        else:
            raise ParameterError(f"unknown functional kind {self.kind!r}")
        if any(w < 0 for w in self.weights):
            raise ParameterError("weights must be non-negative")

    def outer(self, s: np.ndarray) -> np.ndarray:
        if self.kind == "power":
            return s**self.param
        if self.kind == "negpower":
            return s ** (-self.param)
        return np.exp(-self.param * s)

    def __call__(self, z: np.ndarray, variances: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        p = np.asarray(self.weights, dtype=float) if self.weights else np.ones(z.shape[-1])
        s = np.exp(z - 0.5 * variances) @ p
        return self.outer(s)

    def on(self, cov: np.ndarray) -> Callable:
        """The functional as a callable of samples from ``N(0, cov)``."""
        var = np.diag(cov).copy()
        return lambda z: self(z, var)


@dataclass(frozen=True)
class ComparisonReport:
    lhs: float
    rhs: float
    lhs_stderr: float
    rhs_stderr: float
    margin: float
    margin_stderr: float
    violation: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _paired_report(a: np.ndarray, b: np.ndarray, reversed_direction: bool = False) -> ComparisonReport:
    n = a.size
    diff = b - a
    m = float(diff.mean())
    se = float(diff.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    if reversed_direction:
        bad = m > SIGMA_RULE * se
    else:
        bad = m < -SIGMA_RULE * se
    # an exactly-zero stderr with an exactly-zero margin is the equality case
    bad = bool(bad) and not (se == 0 and m == 0)
    return ComparisonReport(
        float(a.mean()), float(b.mean()),
        float(a.std(ddof=1) / math.sqrt(n)), float(b.std(ddof=1) / math.sqrt(n)),
        m, se, bad,
    )


def _coupled_draws(pair: OrderedCovPair, n_samples: int, rng):
    z = rng.standard_normal((n_samples, pair.n))
    lx = np.linalg.cholesky(pair.sigma_x)
    ly = np.linalg.cholesky(pair.sigma_y)
    return z @ lx.T, z @ ly.T


def kahane_check(pair: OrderedCovPair, f: ConvexFunctional, n_samples: int, rng: np.random.Generator) -> ComparisonReport:
    x, y = _coupled_draws(pair, n_samples, rng)
    lhs = f(x, np.diag(pair.sigma_x))
    rhs = f(y, np.diag(pair.sigma_y))
    return _paired_report(lhs, rhs, reversed_direction=f.reversed)


def slepian_check(pair: OrderedCovPair, threshold: float, n_samples: int, rng: np.random.Generator) -> ComparisonReport:
    """Compare ``P(max X_i < x)`` (lhs) with ``P(max Y_i < x)`` (rhs)."""
    if not pair.equal_diag:
        raise PreconditionError("Slepian comparison needs equal variances (equal_diag=True)")
    x, y = _coupled_draws(pair, n_samples, rng)
    lhs = (x.max(axis=1) < threshold).astype(float)
    rhs = (y.max(axis=1) < threshold).astype(float)
    return _paired_report(lhs, rhs)


def brute_force_expectation(cov: np.ndarray, functional: Callable, quadrature_order: int = 32) -> float:
    """``E[functional(Z)]`` for ``Z ~ N(0, cov)`` by tensor Gauss-Hermite quadrature.

    ``functional`` takes an array of shape ``(m, n)`` and returns ``m`` values.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    n = cov.shape[0]
    if n > MAX_ORACLE_DIM:
        raise ParameterError(f"quadrature oracle supports n <= {MAX_ORACLE_DIM}, got {n}")
    if not (1 <= quadrature_order <= MAX_ORACLE_ORDER):
        raise ParameterError(f"quadrature order must be in [1, {MAX_ORACLE_ORDER}]")
    t, w = np.polynomial.hermite.hermgauss(quadrature_order)
    nodes = np.sqrt(2.0) * t
    weights = w / math.sqrt(math.pi)
    grids = np.meshgrid(*([nodes] * n), indexing="ij")
    z = np.stack([g.ravel() for g in grids], axis=1)
    wgrid = np.meshgrid(*([weights] * n), indexing="ij")
    wt = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
    chol = scipy.linalg.cholesky(cov, lower=True)
    vals = np.asarray(functional(z @ chol.T), dtype=float)
    return float(np.dot(wt, vals))


def orthant_probability_2d(rho: float) -> float:
    """``P(Z_1 < 0, Z_2 < 0)`` for a standard bivariate normal with correlation ``rho``."""
    return 0.25 + math.asin(rho) / (2 * math.pi)


def orthant_probability(cov: np.ndarray) -> float:
    """``P(Z_i < 0 for all i)`` for ``Z ~ N(0, cov)`` with ``n <= 3``, in closed form.

    Exact where Gauss-Hermite struggles (the integrand is an indicator).
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    n = cov.shape[0]
    if n > MAX_ORACLE_DIM:
        raise ParameterError(f"closed-form orthant probability supports n <= {MAX_ORACLE_DIM}, got {n}")
    sd = np.sqrt(np.diag(cov))
    corr = np.clip(cov / np.outer(sd, sd), -1.0, 1.0)
    asins = sum(math.asin(corr[i, j]) for i in range(n) for j in range(i + 1, n))
    if n == 1:
        return 0.5
    if n == 2:
        return 0.25 + asins / (2 * math.pi)
    return 0.125 + asins / (4 * math.pi)


def run_suite(kind: str, n_pairs: int, n_samples: int, seed: int, max_dim: int = 5, threshold: float = 0.0) -> dict:
    """Randomised violation report for ``kind`` in ``{"kahane", "slepian"}``.

    Kahane instances alternate ``F = x^2`` and ``F = 1/x`` with random
    non-negative weights. Each instance records its covariances and weights
    so it can be re-checked independently.
    """
    if kind not in ("kahane", "slepian"):
        raise ParameterError(f"unknown toolbox suite {kind!r}")
    rng = np.random.default_rng(seed)
    instances = []
    for i in range(n_pairs):
        n = int(rng.integers(1, max_dim + 1))
        pair = random_ordered_cov_pair(n, equal_diag=(kind == "slepian"), rng=rng)
        weights = ()
        if kind == "kahane":
            weights = tuple(rng.uniform(0.1, 1.0, n).tolist())
            f = ConvexFunctional("power", 2.0, weights) if i % 2 == 0 else ConvexFunctional("negpower", 1.0, weights)
            rep = kahane_check(pair, f, n_samples, rng)
            label = f"{f.kind}({f.param:g})"
        else:
            rep = slepian_check(pair, threshold, n_samples, rng)
            label = f"threshold={threshold:g}"
        instances.append({
            "index": i, "n": n, "functional": label, **rep.to_dict(),
            "sigma_x": pair.sigma_x.tolist(), "sigma_y": pair.sigma_y.tolist(), "weights": list(weights),
        })
    return {
        "suite": kind,
        "n_pairs": n_pairs,
        "n_samples": n_samples,
        "seed": seed,
        "sigma_rule": SIGMA_RULE,
        "violations": sum(inst["violation"] for inst in instances),
        "instances": instances,
    }
