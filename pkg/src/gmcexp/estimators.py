"""Monte Carlo drivers over an eps ladder and log-log slope fitting.

Each rung draws ``replicas`` independent fields. Replica ``r`` of rung ``k``
uses its own stream ``child_stream(master_seed, k, r)``, so results do not
depend on block size or on how rungs are scheduled. Estimators return an
:class:`EstimateSeries` in natural-log scale; :func:`fit_exponent` turns a
series into a power-law exponent.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.stats

from . import measure
from .errors import FitError, ParameterError, PreconditionError
from .field import (
    DEFAULT_MAX_POINTS,
    CovarianceSpec,
    SamplerState,
    build_covariance,
    build_grid,
    child_stream,
    sample_batch,
)
from .theory import ModelParams, RegimeLabel, classify_regime, tilt_parameter

log = logging.getLogger(__name__)

MIN_REPLICAS = 100
KURTOSIS_LIMIT = 100.0
ESS_FRACTION_LIMIT = 0.01
BLOCK_FLOATS = 2**22
THREADS_ENV = "GMCEXP_THREADS"


# --- ladders and configuration -------------------------------------------------

@dataclass(frozen=True, eq=False)
class EpsLadder:
    eps_values: tuple
    grids: tuple
    enforce_resolution: bool = True

    def __len__(self):
        return len(self.eps_values)

    def describe(self) -> list:
        return [
            {"eps": e, "n_per_side": g.n_per_side, "n_points": g.n_points}
            for e, g in zip(self.eps_values, self.grids)
        ]


def check_eps_values(eps_values: Sequence[float]) -> tuple:
    eps = tuple(float(e) for e in eps_values)
    for i, e in enumerate(eps):
        if not (0 < e <= 1):
            raise ParameterError(f"ladder rung {i} has eps={e!r} outside (0, 1]")
        for j in range(i):
            if eps[j] == e:
                raise ParameterError(f"ladder rung {i} (eps={e!r}) duplicates rung {j}")
        if i and e > eps[i - 1]:
            raise ParameterError(f"ladder rung {i} (eps={e!r}) is larger than rung {i - 1}; eps must decrease")
    return eps


def grid_size_for(eps: float, resolution: float = 2.0) -> int:
    """Smallest ``n`` with ``2/n <= eps/resolution``."""
    return int(math.ceil(2 * resolution / eps - 1e-9))


def make_ladder(
    eps_values: Sequence[float],
    d: int = 1,
    resolution: float = 2.0,
    n_per_side: Optional[Sequence[int]] = None,
    max_points: int = DEFAULT_MAX_POINTS,
) -> EpsLadder:
    """Ladder of grids with ``spacing <= eps / resolution``.

    Explicit ``n_per_side`` values bypass the resolution rule (toy grids).
    """
    eps = check_eps_values(eps_values)
    if resolution < 2:
        raise ParameterError(f"resolution must be >= 2 (spacing <= eps/2), got {resolution}")
    if n_per_side is None:
        sizes = [grid_size_for(e, resolution) for e in eps]
        enforce = True
    else:
        sizes = list(n_per_side)
        if len(sizes) != len(eps):
            raise ParameterError("n_per_side must list one grid size per rung")
        enforce = False
    grids = tuple(build_grid(d, n, max_points=max_points) for n in sizes)
    return EpsLadder(eps, grids, enforce)


def dyadic_eps(k_min: int, k_max: int) -> list:
    return [2.0**-k for k in range(k_min, k_max + 1)]


TiltPolicy = Union[str, float]


@dataclass(frozen=True, eq=False)
class RunConfig:
    """Everything that determines an estimator run.

    ``tilt`` is ``"none"``, ``"auto"`` (use :func:`tilt_parameter`) or a
    number ``c``. ``is_integrand`` selects what the tilted estimator
    reweights: the full moment ratio (``"ratio"``) or only the integrand at
    the tilt site (``"site"``, requires ``u_policy="uniform"``).
    """

    params: ModelParams
    ladder: EpsLadder
    replicas: int
    master_seed: int = 0
    tilt: TiltPolicy = "none"
    u_policy: str = "uniform"
    g_const: float = 0.0
    jitter_cap: float = 1e-8
    is_integrand: str = "ratio"

    def __post_init__(self):
        if int(self.replicas) != self.replicas or self.replicas < MIN_REPLICAS:
            raise ParameterError(f"replicas must be an integer >= {MIN_REPLICAS}, got {self.replicas!r}")
        if self.ladder.grids and self.ladder.grids[0].d != self.params.d:
            raise ParameterError("ladder dimension does not match params.d")
        if isinstance(self.tilt, str):
            if self.tilt not in ("none", "auto"):
                raise ParameterError(f"tilt must be 'none', 'auto' or a number, got {self.tilt!r}")
        elif not math.isfinite(self.tilt):
            raise ParameterError(f"tilt must be finite, got {self.tilt!r}")
        if self.u_policy not in ("uniform", "center"):
            raise ParameterError(f"u_policy must be 'uniform' or 'center', got {self.u_policy!r}")
        if self.is_integrand not in ("ratio", "site"):
            raise ParameterError(f"is_integrand must be 'ratio' or 'site', got {self.is_integrand!r}")
        if self.is_integrand == "site" and self.u_policy != "uniform":
            raise ParameterError("is_integrand='site' needs u_policy='uniform'")

    def tilt_c(self, params: Optional[ModelParams] = None) -> Optional[float]:
        p = params or self.params
        if self.tilt == "none":
            return None
        if self.tilt == "auto":
            return tilt_parameter(p)
        return float(self.tilt)


# --- results ---------------------------------------------------------------

@dataclass
class RungEstimate:
    eps: float
    log_estimate: float
    stderr: float
    n_replicas: int
    method: str
    ess: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def warnings(self) -> list:
        return self.diagnostics.get("warnings", [])


@dataclass
class EstimateSeries:
    method: str
    records: list

    @property
    def eps(self) -> np.ndarray:
        return np.array([r.eps for r in self.records])

    @property
    def log_eps(self) -> np.ndarray:
        return np.log(self.eps)

    @property
    def log_estimate(self) -> np.ndarray:
        return np.array([r.log_estimate for r in self.records])

    @property
    def stderr(self) -> np.ndarray:
        return np.array([r.stderr for r in self.records])

    @property
    def ess(self) -> np.ndarray:
        return np.array([r.ess for r in self.records])

    @property
    def warnings(self) -> list:
        return [(r.eps, w) for r in self.records for w in r.warnings]


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    slope_stderr: float
    r_squared: float
    rungs_used: int


# --- reductions -------------------------------------------------------------

def _mean_exact(v: np.ndarray) -> float:
    # anchored at v[0] so a constant sample returns that constant bit-exactly
    return float(v[0] + np.mean(v - v[0]))


def log_mean_exp_stats(v: np.ndarray) -> dict:
    """Log of the sample mean of ``exp(v)`` with delta-method stderr and weight diagnostics."""
    v = np.asarray(v, dtype=float)
    n = v.size
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("non-finite log-summand encountered")
    if np.ptp(v) == 0:
        return {"log_estimate": float(v[0]), "stderr": 0.0, "ess": float(n), "kurtosis": 0.0}
    top = v.max()
    w = np.exp(v - top)
    mean = w.mean()
    sd = w.std(ddof=1)
    ess = float(w.sum() ** 2 / np.sum(w * w))
    kurt = float(scipy.stats.kurtosis(w, fisher=True, bias=True)) if sd > 0 else 0.0
    return {
        "log_estimate": float(top + math.log(mean)),
        "stderr": float(sd / math.sqrt(n) / mean),
        "ess": ess,
        "kurtosis": kurt,
    }


def mean_stats(v: np.ndarray) -> dict:
    v = np.asarray(v, dtype=float)
    if np.ptp(v) == 0:
        return {"mean": float(v[0]), "stderr": 0.0, "median": float(v[0])}
    return {
        "mean": _mean_exact(v),
        "stderr": float(v.std(ddof=1) / math.sqrt(v.size)),
        "median": float(np.median(v)),
    }


def _heavy_tail_warnings(stats: dict, n: int) -> list:
    out = []
    if stats["kurtosis"] > KURTOSIS_LIMIT:
        out.append(f"heavy_tail: excess kurtosis {stats['kurtosis']:.1f} > {KURTOSIS_LIMIT:g}")
    if stats["ess"] < ESS_FRACTION_LIMIT * n:
        out.append(f"low_ess: ESS {stats['ess']:.1f} < {ESS_FRACTION_LIMIT:g} * {n}")
    return out


# --- replica machinery -----------------------------------------------------------

def ladder_states(cfg: RunConfig) -> list:
    return [
        build_covariance(
            g,
            CovarianceSpec(e, g_const=cfg.g_const, jitter_cap=cfg.jitter_cap),
            enforce_resolution=cfg.ladder.enforce_resolution,
        )
        for e, g in zip(cfg.ladder.eps_values, cfg.ladder.grids)
    ]


def replica_blocks(state: SamplerState, master_seed: int, rung: int, replicas: int, draw_u: bool = False):
    """Yield ``(values, u)`` blocks; ``values`` has shape ``(m, N)``.

    Each replica's stream supplies its ``N`` normals first and then, if
    requested, its tilt site, so tilted and untilted runs share the same base
    fields.
    """
    n = state.grid.n_points
    bs = max(1, min(replicas, BLOCK_FLOATS // n))
    for start in range(0, replicas, bs):
        stop = min(replicas, start + bs)
        z = np.empty((stop - start, n))
        u = np.zeros(stop - start, dtype=np.int64)
        for j, r in enumerate(range(start, stop)):
            g = child_stream(master_seed, rung, r)
            z[j] = g.standard_normal(n)
            if draw_u:
                u[j] = g.integers(n)
        yield sample_batch(state, z), u


def _collect(state, cfg, rung, summand: Callable, draw_u=False) -> np.ndarray:
    parts = [summand(x, u) for x, u in replica_blocks(state, cfg.master_seed, rung, cfg.replicas, draw_u)]
    return np.concatenate(parts)


def _map_rungs(fn, n_rungs: int, deterministic: bool = False) -> list:
    threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    if deterministic or threads <= 1 or n_rungs <= 1:
        return [fn(k) for k in range(n_rungs)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(n_rungs)))


def _log_mean_record(eps, state, v, method, n, extra=None) -> RungEstimate:
    stats = log_mean_exp_stats(v)
    warns = _heavy_tail_warnings(stats, n)
    for w in warns:
        log.warning("%s at eps=%g: %s", method, eps, w)
    diag = {
        "kurtosis": stats["kurtosis"],
        "ess_fraction": stats["ess"] / n,
        "jitter": state.jitter_used,
        "n_points": state.grid.n_points,
        "warnings": warns,
    }
    diag.update(extra or {})
    return RungEstimate(eps, stats["log_estimate"], stats["stderr"], n, method, stats["ess"], diag)


def _log_mean_series(cfg, method, summand, states=None, draw_u=False, deterministic=False) -> EstimateSeries:
    states = states if states is not None else ladder_states(cfg)

    def run(k):
        v = _collect(states[k], cfg, k, summand(states[k]), draw_u)
        return _log_mean_record(cfg.ladder.eps_values[k], states[k], v, method, cfg.replicas)

    return EstimateSeries(method, _map_rungs(run, len(states), deterministic))


# --- estimators -----------------------------------------------------------------

def estimate_annealed_naive(cfg: RunConfig, states=None, deterministic=False) -> EstimateSeries:
    """Plain Monte Carlo estimate of ``log E[Z(q beta) / Z(beta)^q]`` per rung."""
    if cfg.tilt != "none":
        raise PreconditionError("naive annealed estimator needs tilt='none'")
    beta, q = cfg.params.beta, cfg.params.q

    def summand(state):
        return lambda x, u: measure.log_moment_ratio(x, state, beta, q)

    return _log_mean_series(cfg, "annealed_naive", summand, states, deterministic=deterministic)


def _tilt_rows(state, lam, u, x):
    """Shift each row of ``x`` by ``lam * Cov[:, u]`` and return ``(shifted, log_w)``."""
    cols = state.sampling_cov_column(u)
    xt = x + lam * cols.T
    rows = np.arange(len(u))
    log_w = -lam * xt[rows, u] + 0.5 * lam * lam * cols[u, rows]
    return xt, log_w


def estimate_annealed_tilted(cfg: RunConfig, states=None, deterministic=False) -> EstimateSeries:
    """Importance-sampled annealed estimate using an exact Cameron-Martin tilt.

    For each replica a site ``u`` is chosen (uniformly or at the centre), the
    field mean is shifted by ``beta q c Cov[:, u]`` and the summand is
    reweighted by ``exp(-lam X(u) + lam^2 Cov[u, u] / 2)``. The estimate is
    unbiased for the same grid-level expectation as the naive estimator.
    """
    p = cfg.params
    if p.beta2 == 0:
        raise ParameterError("tilted estimator is undefined at beta2 = 0")
    c = cfg.tilt_c()
    if c is None:
        raise PreconditionError("tilted estimator needs a tilt policy ('auto' or a number)")
    beta, q = p.beta, p.q
    site = cfg.is_integrand == "site"
    method = "annealed_tilted" if not site else "annealed_tilted_site"

    def summand(state):
        center = state.grid.center_index()

        def f(x, u):
            if cfg.u_policy == "center":
                u = np.full(len(x), center)
            xt, log_w = _tilt_rows(state, beta * q * c, u, x)
            if site:
                xu = xt[np.arange(len(u)), u]
                val = state.grid.log_volume + q * beta * xu - q * measure.log_partition(xt, state, beta)
            else:
                val = measure.log_moment_ratio(xt, state, beta, q)
            return val + log_w

        return f

    series = _log_mean_series(cfg, method, summand, states, draw_u=True, deterministic=deterministic)
    for r in series.records:
        r.diagnostics["tilt_c"] = c
    return series


def estimate_quenched(cfg: RunConfig, states=None, deterministic=False) -> EstimateSeries:
    """Per rung, the sample mean of ``log Z(q beta) - q log Z(beta)``; the median goes in diagnostics."""
    if cfg.tilt != "none":
        raise PreconditionError("quenched estimator needs tilt='none'")
    beta, q = cfg.params.beta, cfg.params.q
    states = states if states is not None else ladder_states(cfg)

    def run(k):
        st = states[k]
        v = _collect(st, cfg, k, lambda x, u: measure.log_moment_ratio(x, st, beta, q))
        s = mean_stats(v)
        diag = {"median": s["median"], "jitter": st.jitter_used, "n_points": st.grid.n_points, "warnings": []}
        return RungEstimate(cfg.ladder.eps_values[k], s["mean"], s["stderr"], cfg.replicas, "quenched", float(cfg.replicas), diag)

    return EstimateSeries("quenched", _map_rungs(run, len(states), deterministic))


def participation_series(cfg: RunConfig, q: Optional[float] = None, states=None, deterministic=False) -> EstimateSeries:
    """``log E[sum_i w_i^q]`` per rung; tilted if the config carries a tilt policy."""
    q = cfg.params.q if q is None else q
    p = replace(cfg.params, q=q) if q != cfg.params.q else cfg.params
    beta = p.beta
    c = cfg.tilt_c(p) if p.beta2 > 0 else None

    def summand(state):
        center = state.grid.center_index()

        def f(x, u):
            if c is None:
                return measure.participation_sum(x, state, beta, q)
            if cfg.u_policy == "center":
                u = np.full(len(x), center)
            xt, log_w = _tilt_rows(state, beta * q * c, u, x)
            return measure.participation_sum(xt, state, beta, q) + log_w

        return f

    method = "participation" if c is None else "participation_tilted"
    return _log_mean_series(cfg, method, summand, states, draw_u=c is not None, deterministic=deterministic)


# --- slope fitting --------------------------------------------------------------

def fit_loglog(log_eps, log_est, stderr=None) -> ExponentFit:
    """Weighted least squares of ``log_est`` on ``log_eps`` with weights ``1/stderr^2``.

    With known per-rung errors the slope error comes from the weights. If any
    stderr is zero (exact values) the fit is unweighted and the slope error
    comes from the residuals.
    """
    x = np.asarray(log_eps, dtype=float)
    y = np.asarray(log_est, dtype=float)
    if x.size < 3:
        raise FitError(f"need at least 3 rungs for a fit, got {x.size}")
    if len(np.unique(x)) != x.size:
        raise FitError("degenerate ladder: repeated eps values")
    se = None if stderr is None else np.asarray(stderr, dtype=float)
    known = se is not None and np.all(se > 0) and np.all(np.isfinite(se))
    w = 1.0 / se**2 if known else np.ones_like(x)
    sw = w.sum()
    xm = x[0] + np.sum(w * (x - x[0])) / sw
    ym = y[0] + np.sum(w * (y - y[0])) / sw
    dx, dy = x - xm, y - ym
    sxx = np.sum(w * dx * dx)
    slope = float(np.sum(w * dx * dy) / sxx)
    intercept = float(ym - slope * xm)
    resid = dy - slope * dx
    ss_res = float(np.sum(w * resid * resid))
    ss_tot = float(np.sum(w * dy * dy))
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    if known:
        slope_se = math.sqrt(1.0 / sxx)
    else:
        slope_se = math.sqrt(ss_res / (x.size - 2) / sxx)
    return ExponentFit(slope, intercept, float(slope_se), float(r2), int(x.size))


def fit_exponent(series: EstimateSeries) -> ExponentFit:
    return fit_loglog(series.log_eps, series.log_estimate, series.stderr)


# --- lemma diagnostics -----------------------------------------------------------

def negative_moment_probe(cfg: RunConfig, q: float, states=None, deterministic=False) -> EstimateSeries:
    """``log E[M(beta)^(-q)]`` per rung, with ``M`` the total chaos mass."""
    p = cfg.params
    if not p.beta2 < 2 * p.d:
        raise PreconditionError(f"negative moments are bounded only for beta2 < 2d; got beta2={p.beta2}")
    if q <= 0:
        raise ParameterError("q must be positive")
    beta = p.beta

    def summand(state):
        return lambda x, u: -q * measure.log_gmc_mass(x, state, beta)

    return _log_mean_series(cfg, "negative_moment", summand, states, deterministic=deterministic)


def lemma1_exponent(s: float, t: float, beta2: float, d: int) -> float:
    """``l = s - d + beta2 (t - 1) / 2``."""
    return s - d + beta2 * (t - 1) / 2


def lemma1_probe(cfg: RunConfig, s: float, t: float, states=None, deterministic=False):
    """``log E[(int M(dx) / (|x-u| + eps)^s)^t]`` with ``u`` at the grid centre.

    Returns ``(series, l)``. When ``l < 0`` the expectation stays bounded;
    otherwise it grows at most like ``eps^(-l t) log(1/eps)``.
    """
    if s <= 0:
        raise ParameterError(f"s must be > 0, got {s}")
    if not (0 < t <= 1):
        raise ParameterError(f"t must lie in (0, 1], got {t}")
    p = cfg.params
    beta = p.beta

    def summand(state):
        center = state.grid.center_index()
        return lambda x, u: t * measure.log_singular_integral(x, state, beta, s, center)

    series = _log_mean_series(cfg, "singular_moment", summand, states, deterministic=deterministic)
    return series, lemma1_exponent(s, t, p.beta2, p.d)


def lemma2_states(cfg: RunConfig, points_per_box: int = 5, max_points: int = DEFAULT_MAX_POINTS) -> list:
    """Fine-grid states with boxes of width ``1/ceil(1/eps)``, each holding ``points_per_box`` points per side.

    Returns a list of ``(state, box_width)`` pairs.
    """
    if points_per_box < 3 or points_per_box % 2 == 0:
        raise PreconditionError(f"points_per_box must be odd and >= 3, got {points_per_box}")
    out = []
    for e in cfg.ladder.eps_values:
        boxes = 2 * math.ceil(1 / e - 1e-12)
        grid = build_grid(cfg.params.d, boxes * points_per_box, max_points=max_points)
        st = build_covariance(grid, CovarianceSpec(e, g_const=cfg.g_const, jitter_cap=cfg.jitter_cap))
        out.append((st, 2.0 / boxes))
    return out


def lemma2_probe(cfg: RunConfig, c_exp: float, points_per_box: int = 5, states=None, deterministic=False) -> EstimateSeries:
    """``log E[exp(c sup_i sup_{v in B_i} |X(v) - X(r_i)|)]`` per rung."""
    if c_exp < 0:
        raise ParameterError("c_exp must be non-negative")
    pairs = states if states is not None else lemma2_states(cfg, points_per_box)

    def run(k):
        st, width = pairs[k]
        v = _collect(st, cfg, k, lambda x, u: c_exp * measure.sup_increment(x, st, width))
        return _log_mean_record(cfg.ladder.eps_values[k], st, v, "sup_increment", cfg.replicas, {"box_width": width})

    return EstimateSeries("sup_increment", _map_rungs(run, len(pairs), deterministic))


def check_prefreezing_regime(p: ModelParams, q_list: Sequence[float]) -> None:
    for q in q_list:
        label = classify_regime(replace(p, q=q)).label
        if label is not RegimeLabel.INTERMEDIATE:
            raise PreconditionError(
                f"beta2={p.beta2} is {label.value} for q={q}; pre-freezing needs the intermediate regime"
            )


def prefreezing_probe(cfg: RunConfig, q_list: Sequence[float], check_regime: bool = True, states=None) -> dict:
    """Participation-sum slopes for several ``q``; pre-freezing predicts they coincide."""
    if check_regime:
        check_prefreezing_regime(cfg.params, q_list)
    states = states if states is not None else ladder_states(cfg)
    return {q: fit_exponent(participation_series(cfg, q, states)) for q in q_list}
