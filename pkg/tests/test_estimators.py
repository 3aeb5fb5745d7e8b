import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmcexp import estimators as est
from gmcexp.errors import FitError, ParameterError, PreconditionError
from gmcexp.field import CovarianceSpec, GridSpec, SamplerState, build_covariance, build_grid
from gmcexp.theory import ModelParams

LOG2 = math.log(2.0)


# --- ladders and configs ---------------------------------------------------------

def test_ladder_defaults():
    lad = est.make_ladder(est.dyadic_eps(4, 6))
    assert lad.eps_values == (2**-4, 2**-5, 2**-6)
    assert [g.n_per_side for g in lad.grids] == [64, 128, 256]
    assert all(g.spacing <= e / 2 for e, g in zip(lad.eps_values, lad.grids))
    assert lad.enforce_resolution


def test_grid_size_for():
    assert est.grid_size_for(0.25) == 16
    assert est.grid_size_for(0.3) == 14
    assert est.grid_size_for(2**-9) == 2048


@pytest.mark.parametrize(
    "eps, match",
    [([0.1, 0.05, 0.05], "rung 2.*duplicates rung 1"), ([0.1, 0.2, 0.05], "rung 1"), ([0.1, 0.0], "rung 1"), ([1.5], "rung 0")],
)
def test_ladder_errors_name_rung(eps, match):
    with pytest.raises(ParameterError, match=match):
        est.make_ladder(eps)


def test_explicit_sizes_disable_resolution():
    lad = est.make_ladder([0.25], n_per_side=[8])
    assert not lad.enforce_resolution
    with pytest.raises(ParameterError):
        est.make_ladder([0.25, 0.125], n_per_side=[8])


def test_run_config_validation():
    lad = est.make_ladder([0.25, 0.125, 0.0625])
    p = ModelParams(0.4, 2.0)
    with pytest.raises(ParameterError):
        est.RunConfig(p, lad, 99)
    with pytest.raises(ParameterError):
        est.RunConfig(p, lad, 100, tilt="sometimes")
    with pytest.raises(ParameterError):
        est.RunConfig(p, lad, 100, u_policy="edge")
    with pytest.raises(ParameterError):
        est.RunConfig(p, lad, 100, tilt="auto", u_policy="center", is_integrand="site")
    with pytest.raises(ParameterError):
        est.RunConfig(ModelParams(0.4, 2.0, 2), lad, 100)
    assert est.RunConfig(ModelParams(1.0, 2.0), lad, 100, tilt="auto").tilt_c() == 0.75
    assert est.RunConfig(p, lad, 100, tilt=0.3).tilt_c() == 0.3
    assert est.RunConfig(p, lad, 100).tilt_c() is None


# --- reductions -------------------------------------------------------------------

def test_log_mean_exp_constant_is_exact():
    s = est.log_mean_exp_stats(np.full(500, -0.6931471805599453))
    assert s["log_estimate"] == -0.6931471805599453
    assert s["stderr"] == 0.0 and s["ess"] == 500


def test_log_mean_exp_matches_direct():
    v = np.random.default_rng(0).normal(size=1000)
    s = est.log_mean_exp_stats(v)
    w = np.exp(v)
    assert s["log_estimate"] == pytest.approx(math.log(w.mean()), abs=1e-13)
    assert s["stderr"] == pytest.approx(w.std(ddof=1) / math.sqrt(1000) / w.mean(), rel=1e-12)
    assert s["ess"] == pytest.approx(w.sum() ** 2 / (w * w).sum(), rel=1e-12)
    assert 0 < s["ess"] <= 1000


def test_log_mean_exp_huge_values():
    v = np.array([1000.0, 1000.0 + math.log(3)])
    assert est.log_mean_exp_stats(v)["log_estimate"] == pytest.approx(1000 + math.log(2), abs=1e-12)


def test_heavy_tail_warning_triggers():
    v = np.zeros(1000)
    v[0] = 40.0
    s = est.log_mean_exp_stats(v)
    warns = est._heavy_tail_warnings(s, 1000)
    assert any("heavy_tail" in w for w in warns)
    assert any("low_ess" in w for w in warns)
    assert est._heavy_tail_warnings(est.log_mean_exp_stats(np.random.default_rng(1).normal(size=1000) * 0.1), 1000) == []


# --- fitting --------------------------------------------------------------------------

def test_fit_exact_power_law():
    x = np.log([2**-k for k in range(4, 10)])
    f = est.fit_loglog(x, -0.4 * x + 1.3, np.zeros(6))
    assert f.slope == pytest.approx(-0.4, abs=1e-13)
    assert f.intercept == pytest.approx(1.3, abs=1e-12)
    assert f.r_squared == 1.0 and f.rungs_used == 6
    assert f.slope_stderr <= 1e-12


def test_fit_constant_series_exact_zero():
    x = np.log([2**-k for k in range(4, 10)])
    f = est.fit_loglog(x, np.full(6, -LOG2), np.zeros(6))
    assert f.slope == 0.0 and f.slope_stderr == 0.0


def test_fit_errors():
    with pytest.raises(FitError):
        est.fit_loglog([0.0, -1.0], [0.0, 1.0])
    with pytest.raises(FitError):
        est.fit_loglog([-1.0, -2.0, -2.0], [0.0, 1.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.floats(min_value=-2, max_value=2), st.integers(min_value=0, max_value=2**31))
def test_fit_recovers_planted_slope(slope, seed):
    rng = np.random.default_rng(seed)
    x = np.log([2.0**-k for k in range(4, 12)])
    sig = np.full(x.size, 0.01)
    y = slope * x + 0.3 + rng.normal(scale=sig)
    f = est.fit_loglog(x, y, sig)
    assert 0 <= f.r_squared <= 1 and f.slope_stderr >= 0
    # a 4-sigma bound keeps the flake rate negligible over many examples
    assert abs(f.slope - slope) <= 4 * f.slope_stderr


def test_fit_slope_error_calibrated():
    rng = np.random.default_rng(11)
    x = np.log([2.0**-k for k in range(4, 10)])
    sig = np.full(x.size, 0.01)
    z = []
    for _ in range(2000):
        f = est.fit_loglog(x, -0.5 * x + rng.normal(scale=sig), sig)
        z.append((f.slope + 0.5) / f.slope_stderr)
    assert np.std(z) == pytest.approx(1.0, abs=0.05)
    assert np.mean(np.abs(z) <= 3) >= 0.99


# --- zero coupling ---------------------------------------------------------------------

@pytest.mark.parametrize("q", [2.0, 3.0])
def test_zero_coupling_exact(small_cfg, q):
    cfg = small_cfg(beta2=0.0, q=q)
    target = (1 - q) * LOG2
    for fn in (est.estimate_annealed_naive, est.estimate_quenched):
        s = fn(cfg)
        np.testing.assert_allclose(s.log_estimate, target, rtol=4 * np.finfo(float).eps, atol=0)
        assert np.all(s.stderr == 0)
        f = est.fit_exponent(s)
        assert f.slope == 0.0


def test_zero_coupling_tilted_rejected(small_cfg):
    with pytest.raises(ParameterError):
        est.estimate_annealed_tilted(small_cfg(beta2=0.0, tilt="auto"))


def test_zero_coupling_participation_slope(small_cfg):
    for q in (2.0, 3.0):
        s = est.participation_series(small_cfg(beta2=0.0), q)
        assert est.fit_exponent(s).slope == pytest.approx(q - 1, abs=1e-12)
    fits = est.prefreezing_probe(small_cfg(beta2=0.0), [2.0, 4.0], check_regime=False)
    assert fits[2.0].slope == pytest.approx(1.0, abs=1e-12)
    assert fits[4.0].slope == pytest.approx(3.0, abs=1e-12)


def test_zero_coupling_negative_moment(small_cfg):
    s = est.negative_moment_probe(small_cfg(beta2=0.0), 2.0)
    np.testing.assert_allclose(s.log_estimate, -2 * LOG2, rtol=4 * np.finfo(float).eps, atol=0)


# --- preconditions -------------------------------------------------------------------------

def test_estimator_tilt_preconditions(small_cfg):
    with pytest.raises(PreconditionError):
        est.estimate_annealed_naive(small_cfg(tilt="auto"))
    with pytest.raises(PreconditionError):
        est.estimate_quenched(small_cfg(tilt=0.5))
    with pytest.raises(PreconditionError):
        est.estimate_annealed_tilted(small_cfg())


def test_probe_preconditions(small_cfg):
    with pytest.raises(PreconditionError):
        est.negative_moment_probe(small_cfg(beta2=3.0), 2.0)
    with pytest.raises(ParameterError):
        est.lemma1_probe(small_cfg(), 0.0, 0.5)
    with pytest.raises(ParameterError):
        est.lemma1_probe(small_cfg(), 0.5, 1.5)
    with pytest.raises(PreconditionError):
        est.prefreezing_probe(small_cfg(beta2=0.0), [3.0, 4.0])
    with pytest.raises(PreconditionError):
        est.prefreezing_probe(small_cfg(beta2=0.4), [2.0])  # high-temperature for q=2
    with pytest.raises(PreconditionError):
        est.lemma2_states(small_cfg(), points_per_box=4)


def test_lemma1_exponent():
    assert est.lemma1_exponent(0.5, 1.0, 0.7, 1) == pytest.approx(-0.5)
    assert est.lemma1_exponent(1.5, 0.5, 1.0, 1) == pytest.approx(0.25)


# --- determinism and consistency -------------------------------------------------------

def test_seed_determinism(small_cfg):
    a = est.estimate_annealed_naive(small_cfg(beta2=1.0))
    b = est.estimate_annealed_naive(small_cfg(beta2=1.0))
    assert a.log_estimate.tobytes() == b.log_estimate.tobytes()
    assert a.stderr.tobytes() == b.stderr.tobytes()
    c = est.estimate_annealed_naive(small_cfg(beta2=1.0, seed=8))
    assert not np.array_equal(a.log_estimate, c.log_estimate)


def test_block_size_independence(small_cfg, monkeypatch):
    a = est.estimate_quenched(small_cfg(beta2=1.0))
    monkeypatch.setattr(est, "BLOCK_FLOATS", 64 * 7)
    b = est.estimate_quenched(small_cfg(beta2=1.0))
    np.testing.assert_allclose(a.log_estimate, b.log_estimate, rtol=0, atol=1e-13)


def test_threaded_rungs_match_serial(small_cfg, monkeypatch):
    a = est.estimate_annealed_naive(small_cfg(beta2=1.0), deterministic=True)
    monkeypatch.setenv(est.THREADS_ENV, "3")
    b = est.estimate_annealed_naive(small_cfg(beta2=1.0))
    assert a.log_estimate.tobytes() == b.log_estimate.tobytes()


def test_zero_tilt_equals_naive(small_cfg):
    naive = est.estimate_annealed_naive(small_cfg(beta2=1.0))
    tilted = est.estimate_annealed_tilted(small_cfg(beta2=1.0, tilt=0.0))
    np.testing.assert_array_equal(naive.log_estimate, tilted.log_estimate)
    assert all(r.diagnostics["tilt_c"] == 0.0 for r in tilted.records)


def tiny_cfg(replicas, tilt="none", **kw):
    lad = est.make_ladder([0.25], n_per_side=[8])
    return est.RunConfig(ModelParams(1.0, 2.0, 1), lad, replicas, master_seed=3, tilt=tilt, **kw)


@pytest.mark.parametrize("u_policy, integrand", [("uniform", "ratio"), ("center", "ratio"), ("uniform", "site")])
def test_tilted_agrees_with_naive_on_tiny_grid(u_policy, integrand):
    naive = est.estimate_annealed_naive(tiny_cfg(100_000)).records[0]
    tilt = est.estimate_annealed_tilted(tiny_cfg(100_000, "auto", u_policy=u_policy, is_integrand=integrand)).records[0]
    se = math.hypot(naive.stderr, tilt.stderr)
    assert abs(naive.log_estimate - tilt.log_estimate) <= 3 * se


def test_series_invariants(small_cfg):
    s = est.estimate_annealed_tilted(small_cfg(beta2=1.0, tilt="auto"))
    assert np.all(np.isfinite(s.stderr))
    assert np.all((s.ess > 0) & (s.ess <= 200 + 1e-9))
    assert s.method == "annealed_tilted"
    q = est.estimate_quenched(small_cfg(beta2=1.0))
    assert all("median" in r.diagnostics for r in q.records)


def test_participation_tilted_agrees(small_cfg):
    plain = est.participation_series(small_cfg(beta2=1.0, replicas=20_000))
    tilted = est.participation_series(small_cfg(beta2=1.0, replicas=20_000, tilt="auto"))
    assert tilted.method == "participation_tilted"
    for a, b in zip(plain.records, tilted.records):
        assert abs(a.log_estimate - b.log_estimate) <= 3 * math.hypot(a.stderr, b.stderr)


# --- lemma 2 -----------------------------------------------------------------------------

def test_lemma2_states_layout(small_cfg):
    pairs = est.lemma2_states(small_cfg())
    for (st_, width), e in zip(pairs, (2**-3, 2**-4, 2**-5)):
        assert width == pytest.approx(e)
        assert st_.grid.spacing == pytest.approx(e / 5)


def test_lemma2_zero_c_and_constant_field(small_cfg):
    s = est.lemma2_probe(small_cfg(), 0.0)
    assert np.all(s.log_estimate == 0.0)
    assert est.fit_exponent(s).slope == 0.0
    # zero-variance state: every increment is 0
    pairs = []
    for e in (2**-3, 2**-4, 2**-5):
        boxes = 2 * round(1 / e)
        grid = build_grid(1, boxes * 3)
        n = grid.n_points
        zero = SamplerState(grid, CovarianceSpec(e), np.zeros((n, n)), np.zeros((n, n)), 0.0)
        pairs.append((zero, 2 / boxes))
    s = est.lemma2_probe(small_cfg(), 1.0, states=pairs)
    assert np.all(s.log_estimate == 0.0)
