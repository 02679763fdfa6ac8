import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gprae.nn import ShapeError
from gprae.preprocess import estimate_lag, fuse_ascans, fuse_volumes
from gprae.volume import Polarization, Volume


def delayed(a, k):
    out = np.zeros_like(a)
    if k >= 0:
        out[k:] = a[: len(a) - k]
    else:
        out[:k] = a[-k:]
    return out


def brute_force_lag(a_h, a_v, max_lag):
    # independent oracle: full correlation, then the documented tie order
    n = len(a_h)
    full = np.correlate(a_v, a_h, mode="full")  # index n-1+tau holds chi(tau)
    best = None
    for tau in range(-max_lag, max_lag + 1):
        key = (full[n - 1 + tau], -abs(tau), -np.sign(tau))
        if best is None or key > best[0]:
            best = (key, tau)
    return best[1]


def test_identical_traces_zero_lag():
    a = np.random.default_rng(0).normal(size=64)
    assert estimate_lag(a, a).tau_hat == 0


def test_impulse_pair():
    a_h, a_v = np.zeros(32), np.zeros(32)
    a_h[5], a_v[9] = 1.0, 1.0
    res = estimate_lag(a_h, a_v)
    assert res.tau_hat == 4 and res.chi_max == 1.0


@pytest.mark.parametrize("k", [-6, -1, 0, 2, 7])
def test_delayed_copy_recovers_shift(k):
    a = np.random.default_rng(1).normal(size=80)
    assert estimate_lag(a, delayed(a, k)).tau_hat == k


def test_tie_prefers_small_then_negative():
    # chi is constant zero -> tau 0
    assert estimate_lag(np.zeros(8), np.zeros(8)).tau_hat == 0
    # impulses two apart in a periodic-looking pair produce a +-tie
    a_h = np.array([0, 0, 1, 0, 0, 0, 0, 0.0])
    a_v = np.array([1, 0, 0, 0, 1, 0, 0, 0.0])
    assert estimate_lag(a_h, a_v, max_lag=3).tau_hat == -2


def test_length_mismatch():
    with pytest.raises(ShapeError):
        estimate_lag(np.zeros(5), np.zeros(6))
    with pytest.raises(ShapeError):
        fuse_ascans(np.zeros(5), np.zeros(6), 0)


def test_max_lag_bounds():
    a = np.ones(10)
    with pytest.raises(ValueError):
        estimate_lag(a, a, max_lag=10)
    assert abs(estimate_lag(a, delayed(a, 5), max_lag=2).tau_hat) <= 2


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 40), st.data())
def test_matches_brute_force_oracle(seed, n, data):
    rng = np.random.default_rng(seed)
    # small integers create plenty of exact ties
    a_h = rng.integers(-2, 3, size=n).astype(float)
    a_v = rng.integers(-2, 3, size=n).astype(float)
    max_lag = data.draw(st.integers(0, n - 1))
    assert estimate_lag(a_h, a_v, max_lag).tau_hat == brute_force_lag(a_h, a_v, max_lag)


def test_fuse_equal_traces():
    a = np.random.default_rng(2).normal(size=20)
    np.testing.assert_array_equal(fuse_ascans(a, a, 0), a)


def test_fuse_zero_h():
    a = np.random.default_rng(3).normal(size=20)
    np.testing.assert_array_equal(fuse_ascans(np.zeros(20), a, 0), a / 2)


def test_fuse_realigns_impulse():
    a_h, a_v = np.zeros(30), np.zeros(30)
    a_h[6], a_v[10] = 2.0, 1.0
    out = fuse_ascans(a_h, a_v, 4)
    assert np.argmax(out) == 6 and out[6] == 1.5
    assert np.count_nonzero(out) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(-5, 5))
def test_fuse_linear(seed, tau):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(3, 16))
    alpha = rng.normal()
    lhs = fuse_ascans(a + alpha * b, c, tau)
    rhs = fuse_ascans(a, c, tau) + alpha * fuse_ascans(b, np.zeros(16), tau)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def make_pair(shift, seed=0, shape=(64, 5, 4)):
    rng = np.random.default_rng(seed)
    h = rng.normal(size=shape)
    v = np.stack([[delayed(h[:, x, y], shift) for y in range(shape[2])]
                  for x in range(shape[1])]).transpose(2, 0, 1)
    return Volume(h, polarization="H"), Volume(v, polarization="V")


def test_fuse_volumes_identical():
    v_h, _ = make_pair(0)
    fused, lags = fuse_volumes(v_h, v_h.with_data(v_h.data, polarization="V"))
    np.testing.assert_array_equal(fused.data, v_h.data)
    assert fused.polarization is Polarization.A and not lags.any()


def test_fuse_volumes_shift_three():
    v_h, v_v = make_pair(3)
    fused, lags = fuse_volumes(v_h, v_v)
    assert (lags == 3).all()
    np.testing.assert_allclose(fused.data[:-3], v_h.data[:-3], atol=1e-12)


def test_fuse_volumes_mismatch():
    v_h, _ = make_pair(0)
    other = Volume(np.zeros((64, 6, 4)))
    with pytest.raises(ShapeError):
        fuse_volumes(v_h, other)
    with pytest.raises(ShapeError):
        fuse_volumes(v_h, v_h.with_data(v_h.data, dx=1.0))


def test_fuse_volumes_commutes_with_trace_permutation():
    v_h, v_v = make_pair(2, seed=4)
    rng = np.random.default_rng(5)
    px, py = rng.permutation(5), rng.permutation(4)
    fused, _ = fuse_volumes(v_h, v_v)
    perm = lambda v: v.with_data(v.data[:, px][:, :, py])  # noqa: E731
    fused_p, _ = fuse_volumes(perm(v_h), perm(v_v))
    np.testing.assert_array_equal(fused.data[:, px][:, :, py], fused_p.data)
