import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from abelrecon.prox import HBranch, box_project, h_update, shrink, tau_coefficient

vecs = arrays(float, st.integers(1, 20), elements=st.floats(-1e3, 1e3))


def tau_by_bisection(D):
    f = lambda t: t ** 3 - t ** 2 - D
    lo, hi = 1.0, 2.0
    while f(hi) < 0:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if f(mid) < 0 else (lo, mid)
    return 0.5 * (lo + hi)


def test_shrink_examples():
    np.testing.assert_array_equal(shrink([3.0, -0.5, 1.0, -4.0], 1.0), [2.0, 0.0, 0.0, -3.0])
    assert np.all(shrink([1e300, -5.0], np.inf) == 0)


def test_shrink_rejects_negative():
    with pytest.raises(ValueError):
        shrink([1.0], -1.0)


def test_box_examples():
    np.testing.assert_array_equal(box_project([-1.0, 0.5, 2.0], 0.0, 1.0), [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(box_project([-1.0, 5.0], 0.0, np.inf), [0.0, 5.0])
    with pytest.raises(ValueError):
        box_project([0.0], 1.0, 0.0)


@given(vecs, st.floats(0, 100))
def test_shrink_is_contraction_towards_zero(x, mu):
    s = shrink(x, mu)
    assert np.all(np.abs(s) <= np.abs(x))
    assert np.all(s * x >= 0)
    assert np.all(np.abs(x - s) <= mu + 1e-12)


@given(vecs, vecs, st.floats(-10, 10), st.floats(0, 10))
def test_box_non_expansive(x, y, a, w):
    n = min(len(x), len(y))
    x, y = x[:n], y[:n]
    px, py = box_project(x, a, a + w), box_project(y, a, a + w)
    assert np.all((px >= a) & (px <= a + w))
    assert np.linalg.norm(px - py) <= np.linalg.norm(x - y) + 1e-9


def test_tau_example():
    assert tau_coefficient(2.0) == pytest.approx(tau_by_bisection(2.0), rel=1e-12)
    assert tau_coefficient(2.0) == pytest.approx(1.69562, abs=1e-5)


def test_tau_small_d():
    assert tau_coefficient(1e-15) == 1.0


@pytest.mark.parametrize("D", [0.0, -1.0, np.inf, np.nan])
def test_tau_domain(D):
    with pytest.raises(ValueError):
        tau_coefficient(D)


@given(st.floats(1e-12, 1e8))
def test_tau_solves_cubic(D):
    t = tau_coefficient(D)
    assert t >= 1.0
    assert abs(t ** 3 - t ** 2 - D) <= 1e-10 * max(1.0, D)


def test_h_update_cubic_branch():
    w = np.array([3.0, 4.0])
    res = h_update(w, 1.0, 250.0, np.random.default_rng(0))
    assert res.branch is HBranch.CUBIC_ROOT
    # D = 250 / 125 = 2
    np.testing.assert_allclose(res.h, tau_by_bisection(2.0) * w, rtol=1e-12)


def test_h_update_zero_gradient_keeps_w():
    w = np.array([1.0, -2.0])
    res = h_update(w, 0.5, 0.0, np.random.default_rng(0))
    assert res.tau == 1.0
    np.testing.assert_array_equal(res.h, w)


def test_h_update_fallback_norm():
    res = h_update(np.zeros(50), 1.0, 8.0, np.random.default_rng(3))
    assert res.branch is HBranch.RANDOM_FALLBACK
    assert np.linalg.norm(res.h) == pytest.approx(2.0, rel=1e-12)


def test_h_update_fallback_all_zero():
    res = h_update(np.zeros(4), 1.0, 0.0, np.random.default_rng(3))
    assert np.all(res.h == 0)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1))
def test_fallback_seeded(seed):
    a = h_update(np.zeros(10), 2.0, 3.0, np.random.default_rng(seed)).h
    b = h_update(np.zeros(10), 2.0, 3.0, np.random.default_rng(seed)).h
    assert np.array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.5 ** (1 / 3), rel=1e-12)


def _h_objective(h, w, rho2, gl1):
    return gl1 / np.linalg.norm(h) + 0.5 * rho2 * np.sum((w - h) ** 2)


@settings(max_examples=40)
@given(arrays(float, 3, elements=st.floats(-5, 5)).filter(lambda w: np.linalg.norm(w) > 1e-2),
       st.floats(0.1, 10), st.floats(0.01, 10))
def test_h_update_minimises_along_ray(w, rho2, gl1):
    h = h_update(w, rho2, gl1, np.random.default_rng(0)).h
    best = _h_objective(h, w, rho2, gl1)
    for s in (0.9, 0.99, 1.01, 1.1):
        assert best <= _h_objective(s * h, w, rho2, gl1) + 1e-9 * abs(best)
