import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvface.fusion import (
    FusionStats,
    MinMaxBounds,
    fit_fusion,
    fuse,
    fuse_raw,
    minmax_normalize,
    separation,
    weights_from_separation,
)


def uniform_stats(q):
    zeros = np.zeros(q)
    bounds = MinMaxBounds(zeros, np.ones(q))
    return FusionStats(bounds, bounds, zeros, zeros, zeros, zeros, np.full(q, 1.0 / q))


# --- min-max ----------------------------------------------------------------

def test_minmax_endpoints_and_midpoint():
    v = np.array([[2.0], [4.0], [6.0]])
    out = minmax_normalize(v, MinMaxBounds.fit(v))
    np.testing.assert_array_equal(out.ravel(), [0.0, 0.5, 1.0])


def test_minmax_constant_dimension():
    g = np.array([[1.0, 3.0], [2.0, 3.0]])
    out = minmax_normalize([1.5, 99.0], MinMaxBounds.fit(g))
    np.testing.assert_array_equal(out, [0.5, 0.5])


def test_minmax_clamps():
    b = MinMaxBounds.fit([[0.0, 0.0], [1.0, 2.0]])
    np.testing.assert_array_equal(minmax_normalize([-3.0, 5.0], b), [0.0, 1.0])


def test_minmax_dimension_mismatch():
    with pytest.raises(ValueError):
        minmax_normalize([1.0, 2.0, 3.0], MinMaxBounds.fit([[0.0, 0.0]]))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 5)),
              elements=st.floats(-1e6, 1e6, allow_nan=False)),
       st.floats(-1e7, 1e7, allow_nan=False))
def test_minmax_range(gallery, probe_value):
    b = MinMaxBounds.fit(gallery)
    out = minmax_normalize(np.full(gallery.shape[1], probe_value), b)
    assert np.all((out >= 0) & (out <= 1))
    assert np.all((minmax_normalize(gallery, b) >= 0) & (minmax_normalize(gallery, b) <= 1))


# --- separation and weights -------------------------------------------------

def test_separation_example():
    assert separation(0.5, 0.3, 0.1, 0.4) == pytest.approx(0.8, abs=1e-15)


def test_weights_example():
    np.testing.assert_array_equal(weights_from_separation([3.0, 1.0]), [0.75, 0.25])


def test_weights_uniform_fallback():
    np.testing.assert_array_equal(weights_from_separation([0.0, 0.0, 0.0, 0.0]), [0.25] * 4)


def test_identical_galleries_give_uniform_weights():
    g = np.random.default_rng(0).normal(size=(10, 4))
    stats = fit_fusion(g, g)
    np.testing.assert_array_equal(stats.weights, np.full(4, 0.25))


def test_weights_sum_to_one_on_random_galleries():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n, dp, dc = rng.integers(2, 30), rng.integers(1, 12), rng.integers(1, 12)
        stats = fit_fusion(rng.normal(size=(n, dp)) * rng.uniform(0.1, 5),
                           rng.normal(size=(n, dc)) + rng.uniform(-3, 3))
        assert stats.q == min(dp, dc)
        assert abs(stats.weights.sum() - 1.0) <= 1e-12
        assert np.all((stats.weights >= 0) & (stats.weights <= 1))
        assert np.all(stats.sigma_pca >= 0) and np.all(stats.sigma_cc >= 0)


def test_fit_fusion_statistics():
    P = np.array([[0.0, 10.0], [1.0, 20.0], [2.0, 40.0]])
    C = np.array([[5.0], [5.5], [7.0]])
    stats = fit_fusion(P, C)
    nP = np.array([0.0, 0.5, 1.0])
    nC = np.array([0.0, 0.25, 1.0])
    assert stats.mu_pca[0] == pytest.approx(nP.mean())
    assert stats.sigma_cc[0] == pytest.approx(nC.std())
    assert stats.weights.tolist() == [1.0]


def test_fit_fusion_errors():
    with pytest.raises(ValueError):
        fit_fusion(np.zeros((0, 2)), np.zeros((0, 2)))
    with pytest.raises(ValueError):
        fit_fusion(np.zeros((3, 2)), np.zeros((4, 2)))


def test_weights_permutation_equivariant():
    rng = np.random.default_rng(2)
    P, C = rng.normal(size=(15, 5)), rng.normal(size=(15, 5)) * 2 + 1
    perm = rng.permutation(5)
    a = fit_fusion(P, C)
    b = fit_fusion(P[:, perm], C[:, perm])
    np.testing.assert_allclose(b.weights, a.weights[perm], rtol=1e-12)


# --- fuse -------------------------------------------------------------------

def test_fuse_example():
    stats = FusionStats(MinMaxBounds(np.zeros(2), np.ones(2)), MinMaxBounds(np.zeros(2), np.ones(2)),
                        np.zeros(2), np.zeros(2), np.zeros(2), np.zeros(2), np.array([0.75, 0.25]))
    F = fuse(stats, [0.2, 0.0], [0.4, 0.0])
    assert F[0] == pytest.approx(0.225, abs=1e-16)


def test_fuse_uniform_identical_inputs():
    v = np.array([0.1, 0.7, 0.4])
    np.testing.assert_allclose(fuse(uniform_stats(3), v, v), v / 3, rtol=1e-15)


def test_fuse_zero_in_zero_out():
    assert not fuse(uniform_stats(4), np.zeros(4), np.zeros(4)).any()


def test_fuse_truncates_to_q_and_rejects_short():
    stats = uniform_stats(2)
    assert fuse(stats, np.ones(5), np.ones(3)).shape == (2,)
    with pytest.raises(ValueError):
        fuse(stats, np.ones(1), np.ones(3))


def test_fuse_linear():
    rng = np.random.default_rng(3)
    stats = fit_fusion(rng.normal(size=(12, 4)), rng.normal(size=(12, 4)))
    p1, c1, p2, c2 = rng.random((4, 4))
    lhs = fuse(stats, 0.3 * p1 + 0.6 * p2, 0.3 * c1 + 0.6 * c2)
    rhs = 0.3 * fuse(stats, p1, c1) + 0.6 * fuse(stats, p2, c2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-15)


def test_fused_values_in_unit_interval():
    rng = np.random.default_rng(4)
    stats = fit_fusion(rng.normal(size=(20, 6)), rng.normal(size=(20, 3)))
    F = fuse_raw(stats, rng.normal(size=(50, 6)) * 3, rng.normal(size=(50, 3)) * 3)
    assert F.shape == (50, 3)
    assert np.all((F >= 0) & (F <= 1))


def test_stats_roundtrip():
    rng = np.random.default_rng(5)
    stats = fit_fusion(rng.normal(size=(9, 4)), rng.normal(size=(9, 2)))
    back = FusionStats.loads(stats.dumps())
    assert back.dumps() == stats.dumps()
    np.testing.assert_array_equal(back.weights, stats.weights)
    np.testing.assert_array_equal(back.pca_bounds.hi, stats.pca_bounds.hi)
