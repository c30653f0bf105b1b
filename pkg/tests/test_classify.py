import math

import numpy as np
import pytest

from mvface.classify import (
    ConvergenceError,
    KernelSpec,
    KnnModel,
    SvmModel,
    dual_objective,
    kernel_eval,
    kernel_matrix,
    knn_decide,
    knn_score,
    median_heuristic,
    svm_decide,
    svm_scores,
    svm_train,
)


def project_box_hyperplane(z, y, C):
    """Euclidean projection onto {0 <= a <= C, y.a = 0}.

    The projection is clip(z - lam*y, 0, C) for the lam solving g(lam) = y.a = 0.
    g is piecewise linear and non-increasing with breakpoints where a component
    hits 0 or C, so the root is found exactly by interpolating between breakpoints.
    """
    lams = np.unique(np.concatenate([z / y, (z - C) / y]))
    a = np.clip(z[None, :] - lams[:, None] * y[None, :], 0.0, C)
    g = a @ y
    k = int(np.searchsorted(-g, 0.0))  # first breakpoint with g <= 0
    if k == 0:
        lam = lams[0]
    elif k == len(lams):
        lam = lams[-1]
    else:
        l0, l1, g0, g1 = lams[k - 1], lams[k], g[k - 1], g[k]
        lam = l0 + (l1 - l0) * g0 / (g0 - g1)
    return np.clip(z - lam * y, 0.0, C)


def qp_oracle(K, y, C, iters=4000):
    """Maximize the SVM dual by accelerated projected gradient."""
    Q = np.outer(y, y) * K
    step = 1.0 / max(np.linalg.eigvalsh(Q)[-1], 1e-12)
    a = np.zeros(len(y))
    prev, t = a.copy(), 1.0
    for _ in range(iters):
        t_next = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        v = a + ((t - 1) / t_next) * (a - prev)
        prev = a
        a = project_box_hyperplane(v + step * (1.0 - Q @ v), y, C)
        t = t_next
    return a


# --- kernels ----------------------------------------------------------------

def test_kernel_examples():
    rbf = KernelSpec("rbf", 0.7)
    x = np.array([0.3, -1.2, 2.0])
    assert kernel_eval(rbf, x, x) == 1.0
    y = x + np.array([math.sqrt(2) * 0.7, 0.0, 0.0])
    assert kernel_eval(rbf, x, y) == pytest.approx(math.exp(-1), rel=1e-12)
    assert kernel_eval(KernelSpec("linear"), [1, 2], [3, 4]) == 11


def test_kernel_matrix_matches_eval():
    rng = np.random.default_rng(0)
    X, Y = rng.normal(size=(4, 3)), rng.normal(size=(5, 3))
    for spec in (KernelSpec("linear"), KernelSpec("rbf", 1.3)):
        K = kernel_matrix(spec, X, Y)
        for i in range(4):
            for j in range(5):
                assert K[i, j] == pytest.approx(kernel_eval(spec, X[i], Y[j]), rel=1e-12, abs=1e-14)


def test_kernel_errors():
    with pytest.raises(ValueError):
        kernel_eval(KernelSpec("linear"), [1, 2], [1, 2, 3])
    with pytest.raises(ValueError):
        KernelSpec("rbf", 0.0)
    with pytest.raises(ValueError):
        KernelSpec("poly")


def test_median_heuristic():
    X = np.array([[0.0], [1.0], [3.0]])  # pairwise distances 1, 2, 3
    assert median_heuristic(X) == 2.0
    assert median_heuristic(np.zeros((3, 2))) == 1.0


# --- SVM --------------------------------------------------------------------

TWO_X = np.array([[-1.0], [1.0]])
TWO_Y = np.array([-1, 1])


def test_two_point_analytic():
    model = svm_train(TWO_X, TWO_Y, KernelSpec("linear"), C=10)
    np.testing.assert_allclose(model.alphas, [0.5, 0.5], atol=1e-3)
    np.testing.assert_allclose(model.linear_weights(), [1.0], atol=1e-3)
    assert abs(model.bias) <= 1e-3
    score, label = svm_decide(model, [0.0])
    assert score == pytest.approx(0.0, abs=1e-3)
    score, label = svm_decide(model, [3.0])
    assert score == pytest.approx(3.0, abs=1e-3) and label == 1


def test_zero_score_labels_positive():
    model = SvmModel(np.array([[1.0]]), np.array([1.0]), np.array([1.0]), 0.0, KernelSpec("linear"), 1.0)
    assert svm_decide(model, [0.0]) == (0.0, 1)


def test_duplicates_keep_decision_function():
    X = np.vstack([TWO_X, TWO_X])
    y = np.concatenate([TWO_Y, TWO_Y])
    a = svm_train(TWO_X, TWO_Y, KernelSpec("linear"))
    b = svm_train(X, y, KernelSpec("linear"))
    grid = np.linspace(-3, 3, 13)[:, None]
    np.testing.assert_allclose(svm_scores(a, grid), svm_scores(b, grid), atol=1e-9)


XOR_X = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
XOR_Y = np.array([1, 1, -1, -1])


def test_xor_rbf_solves():
    model = svm_train(XOR_X, XOR_Y, KernelSpec("rbf", 1.0), C=10)
    labels = [svm_decide(model, x)[1] for x in XOR_X]
    assert labels == XOR_Y.tolist()


def test_xor_linear_fails():
    model = svm_train(XOR_X, XOR_Y, KernelSpec("linear"), C=10)
    labels = np.array([svm_decide(model, x)[1] for x in XOR_X])
    assert np.any(labels != XOR_Y)


def _random_problem(rng, n, d=2):
    X = rng.normal(size=(n, d))
    y = np.where(rng.random(n) < 0.5, 1, -1)
    y[0], y[1] = 1, -1
    return X, y


def test_equality_constraint_always():
    rng = np.random.default_rng(1)
    for trial in range(30):
        X, y = _random_problem(rng, int(rng.integers(2, 40)), 3)
        kernel = KernelSpec("linear") if trial % 2 else KernelSpec("rbf", 1.0)
        model = svm_train(X, y, kernel, C=float(rng.choice([0.1, 1.0, 10.0])))
        assert abs(np.sum(model.alphas * model.labels)) <= 1e-8
        assert np.all((model.alphas > 0) & (model.alphas <= model.C))


def test_dual_objective_matches_qp_oracle():
    rng = np.random.default_rng(2)
    for trial in range(20):
        n = int(rng.integers(2, 7))
        X, y = _random_problem(rng, n)
        kernel = KernelSpec("rbf", 1.0) if trial % 2 else KernelSpec("linear")
        C = float(rng.choice([0.5, 1.0, 10.0]))
        K = kernel_matrix(kernel, X, X)
        model = svm_train(X, y, kernel, C=C)
        full = np.zeros(n)
        for a, sv in zip(model.alphas, model.support_vectors):
            full[np.flatnonzero(np.all(X == sv, axis=1))[0]] = a
        ours = dual_objective(full, y, K)
        ref_alpha = qp_oracle(K, y.astype(float), C)
        assert abs(ref_alpha @ y) < 1e-9 and np.all((ref_alpha >= 0) & (ref_alpha <= C))
        ref = dual_objective(ref_alpha, y, K)
        assert abs(ours - ref) <= 1e-3 * abs(ref)


def test_free_vectors_on_margin():
    rng = np.random.default_rng(3)
    tol = 1e-3
    for _ in range(10):
        X, y = _random_problem(rng, 25, 2)
        model = svm_train(X, y, KernelSpec("rbf", 1.0), C=5.0, tol=tol)
        free = (model.alphas > 1e-8) & (model.alphas < model.C - 1e-8)
        scores = svm_scores(model, model.support_vectors[free])
        np.testing.assert_allclose(np.abs(scores), 1.0, atol=tol)


def test_linear_collapse_matches_kernel_sum():
    rng = np.random.default_rng(4)
    X, y = _random_problem(rng, 30, 5)
    model = svm_train(X, y, KernelSpec("linear"), C=1.0)
    probes = rng.normal(size=(50, 5)) * 3
    np.testing.assert_allclose(svm_scores(model, probes, collapse=True),
                               svm_scores(model, probes, collapse=False), atol=1e-10, rtol=0)


def test_scaling_invariance_linear():
    rng = np.random.default_rng(5)
    X = np.vstack([rng.normal(size=(10, 2)) + 1.5, rng.normal(size=(10, 2)) - 1.5])
    y = np.repeat([1, -1], 10)
    s = 3.0
    a = svm_train(X, y, KernelSpec("linear"), C=2.0)
    b = svm_train(X * s, y, KernelSpec("linear"), C=2.0 / s**2)
    la = [svm_decide(a, x)[1] for x in X]
    lb = [svm_decide(b, x)[1] for x in X * s]
    assert la == lb


def test_svm_errors():
    with pytest.raises(ValueError, match="both classes"):
        svm_train(TWO_X, [1, 1])
    with pytest.raises(ValueError):
        svm_train(TWO_X, TWO_Y, C=0.0)
    model = svm_train(TWO_X, TWO_Y, KernelSpec("linear"))
    with pytest.raises(ValueError):
        svm_decide(model, [1.0, 2.0])


def test_iteration_budget_error():
    rng = np.random.default_rng(6)
    X, y = _random_problem(rng, 40, 2)
    with pytest.raises(ConvergenceError) as info:
        svm_train(X, y, KernelSpec("rbf", 0.5), C=100.0, max_iter=2)
    assert info.value.residual > 1e-3


def test_svm_roundtrip():
    rng = np.random.default_rng(7)
    X, y = _random_problem(rng, 20, 3)
    model = svm_train(X, y, KernelSpec("rbf", 0.9))
    back = SvmModel.loads(model.dumps())
    probes = rng.normal(size=(10, 3))
    np.testing.assert_array_equal(svm_scores(back, probes), svm_scores(model, probes))


def test_svm_deterministic():
    rng = np.random.default_rng(8)
    X, y = _random_problem(rng, 30, 3)
    assert svm_train(X, y).dumps() == svm_train(X, y).dumps()


# --- K-NN -------------------------------------------------------------------

def test_knn_identity_probe():
    g = np.array([[0.0, 0.0], [5.0, 5.0], [9.0, 0.0]])
    model = KnnModel(g, [1, -1, 1], k=1)
    assert knn_decide(model, [5.0, 5.0]) == -1


def test_knn_global_majority():
    g = np.random.default_rng(0).normal(size=(7, 2))
    model = KnnModel(g, [1, 1, -1, -1, -1, 1, -1], k=7)
    assert knn_decide(model, [100.0, 100.0]) == -1


def test_knn_distance_example():
    g = np.array([[1.0], [2.0], [3.0]])
    assert knn_decide(KnnModel(g, [1, -1, -1], k=3), [0.0]) == -1


def test_knn_tie_breaks():
    g = np.array([[1.0], [-2.0]])
    # one vote each; label 1 is closer
    assert knn_decide(KnnModel(g, [1, -1], k=2), [0.0]) == 1
    # equal votes and equal summed distance: lower label wins
    g = np.array([[1.0], [-1.0]])
    assert knn_decide(KnnModel(g, [1, -1], k=2), [0.0]) == -1


def test_knn_score_orders_by_votes_then_distance():
    g = np.array([[0.0], [1.0], [10.0]])
    model = KnnModel(g, [1, 1, -1], k=2)
    assert knn_score(model, [0.0]) > 0.99
    assert knn_score(model, [10.0]) < 0.01
    assert knn_score(model, [0.0]) > knn_score(model, [-0.5])  # same votes, farther neighbours


def test_knn_validation():
    with pytest.raises(ValueError):
        KnnModel(np.zeros((2, 2)), [1, -1], k=3)
    with pytest.raises(ValueError):
        KnnModel(np.zeros((0, 2)), [], k=1)


def test_knn_roundtrip():
    model = KnnModel(np.random.default_rng(1).normal(size=(5, 3)), [1, -1, 1, 1, -1], k=3)
    back = KnnModel.loads(model.dumps())
    np.testing.assert_array_equal(back.gallery, model.gallery)
    assert back.k == 3
