import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmcexp.errors import PreconditionError
from gmcexp.field import CovarianceSpec, FieldSample, build_covariance, build_grid, sample_batch
from gmcexp.measure import (
    box_layout,
    log_gmc_mass,
    log_moment_ratio,
    log_partition,
    log_singular_integral,
    participation_sum,
    sup_increment,
)

LOG2 = math.log(2.0)


@pytest.fixture(scope="module")
def st16():
    return build_covariance(build_grid(1, 16), CovarianceSpec(0.25))


@pytest.fixture(scope="module")
def fields16(st16):
    return sample_batch(st16, np.random.default_rng(0).standard_normal((50, 16)))


def test_partition_constant_fields(st16):
    assert log_partition(np.zeros(16), st16, 1.3) == pytest.approx(LOG2, abs=1e-15)
    assert log_partition(np.full(16, 0.7), st16, 2.0) == pytest.approx(1.4 + LOG2, abs=1e-14)
    x = np.random.default_rng(1).normal(size=16)
    assert log_partition(x, st16, 0.0) == pytest.approx(LOG2, abs=1e-15)


def test_partition_accepts_field_sample(st16, fields16):
    assert log_partition(FieldSample(fields16[0]), st16, 0.8) == log_partition(fields16[0], st16, 0.8)


def test_partition_vectorised(st16, fields16):
    batch = log_partition(fields16, st16, 0.9)
    assert batch.shape == (50,)
    for i in (0, 17, 49):
        assert batch[i] == pytest.approx(log_partition(fields16[i], st16, 0.9), abs=1e-14)


def test_partition_no_overflow(st16):
    x = np.zeros(16)
    x[3] = 800.0
    v = log_partition(x, st16, 2.0)
    assert math.isfinite(v)
    assert v == pytest.approx(1600 + LOG2 - math.log(16), abs=1e-9)


def test_gmc_mass_beta_zero(st16, fields16):
    assert log_gmc_mass(fields16[0], st16, 0.0) == pytest.approx(LOG2, abs=1e-15)


def test_gmc_mass_normalisation():
    state = build_covariance(build_grid(1, 32), CovarianceSpec(2.0**-3))
    x = sample_batch(state, np.random.default_rng(2).standard_normal((100_000, 32)))
    m = np.exp(log_gmc_mass(x, state, math.sqrt(0.5)))
    assert abs(m.mean() - 2.0) <= 4 * m.std() / math.sqrt(m.size)


def test_moment_ratio_trivial_cases(st16, fields16):
    for q in (1.5, 2.0, 3.0):
        assert log_moment_ratio(fields16[0], st16, 0.0, q) == pytest.approx((1 - q) * LOG2, abs=1e-14)
        assert log_moment_ratio(np.full(16, -2.3), st16, 1.1, q) == pytest.approx((1 - q) * LOG2, abs=1e-13)
    assert log_moment_ratio(fields16[3], st16, 0.7, 1.0) == pytest.approx(0.0, abs=1e-13)


def test_participation_cases(st16, fields16):
    assert participation_sum(np.zeros(16), st16, 1.0, 2.0) == pytest.approx(-math.log(16), abs=1e-14)
    assert participation_sum(fields16[0], st16, 1.0, 1.0) == pytest.approx(0.0, abs=1e-14)
    x = np.zeros(16)
    x[5] = 200.0
    assert participation_sum(x, st16, 1.0, 3.0) == pytest.approx(0.0, abs=1e-12)


def test_singular_s_zero_is_gmc_mass(st16, fields16):
    for i in range(5):
        assert log_singular_integral(fields16[i], st16, 0.8, 0.0, 4) == log_gmc_mass(fields16[i], st16, 0.8)


def test_singular_negative_s(st16, fields16):
    with pytest.raises(PreconditionError):
        log_singular_integral(fields16[0], st16, 0.8, -0.1, 0)


@pytest.mark.parametrize("s", [0.3, 0.5, 0.9])
def test_singular_closed_form(s):
    # beta = 0, u at the centre: integral of (|x| + eps)^-s over [-1, 1]
    eps = 0.01
    state = build_covariance(build_grid(1, 2001), CovarianceSpec(eps))
    u = state.grid.center_index()
    assert state.grid.points[u, 0] == 0.0
    exact = 2 * ((1 + eps) ** (1 - s) - eps ** (1 - s)) / (1 - s)
    got = log_singular_integral(np.zeros(2001), state, 0.0, s, u)
    # midpoint error at the cusp is O(h^2 eps^(-s-2)) relative to the integral
    assert got == pytest.approx(math.log(exact), abs=2e-4)


def test_singular_off_centre_closed_form():
    eps, s = 0.02, 0.5
    state = build_covariance(build_grid(1, 1000), CovarianceSpec(eps))
    u = 700
    uu = state.grid.points[u, 0]
    exact = ((uu + 1 + eps) ** (1 - s) - eps ** (1 - s) + (1 - uu + eps) ** (1 - s) - eps ** (1 - s)) / (1 - s)
    got = log_singular_integral(np.zeros(1000), state, 0.0, s, u)
    assert got == pytest.approx(math.log(exact), abs=1e-4)


def test_box_layout_checks():
    assert box_layout(15, 2 / 15, 2 / 3) == 5
    with pytest.raises(PreconditionError):
        box_layout(16, 0.125, 0.5)  # even count
    with pytest.raises(PreconditionError):
        box_layout(15, 2 / 15, 0.3)  # not a multiple
    with pytest.raises(PreconditionError):
        box_layout(15, 2 / 15, 4 / 15)  # fewer than 3 points
    with pytest.raises(PreconditionError):
        box_layout(21, 2 / 21, 10 / 21)  # 21 does not split into boxes of 5


def test_sup_increment_cases():
    state = build_covariance(build_grid(1, 15), CovarianceSpec(0.3))
    assert sup_increment(np.full(15, 3.0), state, 2 / 3) == 0.0
    x = np.random.default_rng(3).normal(size=15)
    whole = sup_increment(x, state, 2.0)
    assert whole == pytest.approx(np.max(np.abs(x - x[7])))
    boxes = sup_increment(x, state, 2 / 3)
    ref = max(np.max(np.abs(x[5 * b : 5 * b + 5] - x[5 * b + 2])) for b in range(3))
    assert boxes == ref


def test_sup_increment_2d():
    state = build_covariance(build_grid(2, 9), CovarianceSpec(0.1, g_const=0.5), enforce_resolution=False)
    x = np.random.default_rng(4).normal(size=(4, 81))
    got = sup_increment(x, state, 2 / 3)
    grid = x.reshape(4, 9, 9)
    for r in range(4):
        ref = 0.0
        for bi in range(3):
            for bj in range(3):
                blk = grid[r, 3 * bi : 3 * bi + 3, 3 * bj : 3 * bj + 3]
                ref = max(ref, np.max(np.abs(blk - blk[1, 1])))
        assert got[r] == ref


FINE15 = build_covariance(build_grid(1, 15), CovarianceSpec(0.3))
vec16 = st.lists(st.floats(min_value=-20, max_value=20), min_size=16, max_size=16).map(np.array)


@settings(max_examples=60, deadline=None)
@given(vec16, st.floats(min_value=-10, max_value=10), st.floats(min_value=0, max_value=3), st.floats(min_value=1.01, max_value=5))
def test_shift_properties(st16, x, a, beta, q):
    assert log_partition(x + a, st16, beta) == pytest.approx(beta * a + log_partition(x, st16, beta), abs=1e-9)
    assert log_moment_ratio(x + a, st16, beta, q) == pytest.approx(log_moment_ratio(x, st16, beta, q), abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(vec16, st.floats(min_value=0, max_value=3), st.floats(min_value=1.01, max_value=5))
def test_participation_bounds(st16, x, beta, q):
    v = participation_sum(x, st16, beta, q)
    assert v <= 1e-12
    assert v >= (1 - q) * math.log(16) - 1e-9


@settings(max_examples=60, deadline=None)
@given(vec16, st.floats(min_value=0, max_value=3), st.floats(min_value=0, max_value=3))
def test_functionals_finite_and_sup_nonnegative(st16, x, beta, s):
    assert math.isfinite(log_gmc_mass(x, st16, beta))
    assert math.isfinite(log_singular_integral(x, st16, beta, s, 3))
    assert sup_increment(x[:15], FINE15, 2 / 3) >= 0
