"""Binary verification classifiers: kernel SVM trained by SMO, and K-NN."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import serialize

KERNELS = ("linear", "rbf")


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (KKT gap {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and not self.sigma > 0:
            raise ValueError(f"rbf sigma must be positive, got {self.sigma}")


def kernel_matrix(spec: KernelSpec, X, Y) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"length mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if spec.kind == "linear":
        return X @ Y.T
    sq = (np.sum(X**2, axis=1)[:, None] + np.sum(Y**2, axis=1)[None, :] - 2.0 * (X @ Y.T))
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * spec.sigma**2))


def kernel_eval(spec: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if spec.kind == "linear":
        return float(x @ y)
    diff = x - y
    return math.exp(-float(diff @ diff) / (2.0 * spec.sigma**2))


def median_heuristic(X) -> float:
    """Median pairwise Euclidean distance (1.0 if every pair coincides)."""
    X = np.asarray(X, dtype=np.float64)
    sq = np.sum(X**2, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * (X @ X.T), 0.0)
    iu = np.triu_indices(X.shape[0], 1)
    med = float(np.median(np.sqrt(d2[iu]))) if iu[0].size else 0.0
    return med if med > 0 else 1.0


# ---------------------------------------------------------------------------
# SVM


@dataclass(frozen=True, eq=False)
class SvmModel:
    support_vectors: np.ndarray  # (n_sv, dim)
    alphas: np.ndarray  # (n_sv,), 0 < alpha <= C
    labels: np.ndarray  # (n_sv,), +-1
    bias: float
    kernel: KernelSpec
    C: float
    kkt_gap: float = 0.0

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def linear_weights(self) -> np.ndarray:
        """omega = sum_i y_i alpha_i x_i (linear kernel only)."""
        if self.kernel.kind != "linear":
            raise ValueError("weight vector only exists for the linear kernel")
        return self._omega

    @cached_property
    def _omega(self) -> np.ndarray:
        return (self.alphas * self.labels) @ self.support_vectors

    def dumps(self) -> str:
        return (serialize.dump_field("model", "svm")
                + serialize.dump_field("kernel", self.kernel.kind)
                + serialize.dump_field("sigma", float(self.kernel.sigma))
                + serialize.dump_field("C", float(self.C))
                + serialize.dump_field("b", float(self.bias))
                + serialize.dump_field("kkt_gap", float(self.kkt_gap))
                + serialize.dump_matrix("alphas", self.alphas)
                + serialize.dump_matrix("labels", self.labels.astype(np.float64))
                + serialize.dump_matrix("support_vectors", self.support_vectors))

    @classmethod
    def loads(cls, text: str) -> "SvmModel":
        mats, f = serialize.parse(text)
        req = serialize.require
        return cls(support_vectors=req(mats, "support_vectors"),
                   alphas=req(mats, "alphas").ravel(),
                   labels=req(mats, "labels").ravel(),
                   bias=float(req(f, "b", "field")),
                   kernel=KernelSpec(req(f, "kernel", "field"), float(req(f, "sigma", "field"))),
                   C=float(req(f, "C", "field")),
                   kkt_gap=float(f.get("kkt_gap", "0")))


def _check_labels(y: np.ndarray) -> None:
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be -1 or +1")
    if not (np.any(y == 1) and np.any(y == -1)):
        raise ValueError("training needs both classes")


def dual_objective(alphas, labels, K) -> float:
    """sum(alpha) - 1/2 alpha^T Q alpha with Q_ij = y_i y_j K_ij (to be maximized)."""
    a = np.asarray(alphas, dtype=np.float64)
    ya = a * np.asarray(labels, dtype=np.float64)
    return float(a.sum() - 0.5 * ya @ K @ ya)


def smo_solve(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3,
              max_iter: int = 100_000) -> tuple[np.ndarray, float, float]:
    """Solve the soft-margin dual on a precomputed kernel matrix.

    Each step updates the maximal-violating pair (first-order working-set
    selection); ties resolve to the lowest index. Returns (alphas, bias, gap).
    """
    n = y.shape[0]
    yf = y.astype(np.float64)
    Q = (yf[:, None] * yf[None, :]) * K
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 1/2 a^T Q a - e^T a
    diagK = np.diag(K)

    for _ in range(max_iter):
        up = np.where(yf > 0, alpha < C, alpha > 0)
        low = np.where(yf > 0, alpha > 0, alpha < C)
        score = -yf * grad
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        j = int(np.flatnonzero(low)[np.argmin(score[low])])
        gap = score[i] - score[j]
        if gap <= tol:
            break
        # move alpha_i by +y_i t and alpha_j by -y_j t; sum(y * alpha) stays fixed
        curv = max(diagK[i] + diagK[j] - 2.0 * K[i, j], 1e-12)
        t = gap / curv
        t = min(t, C - alpha[i] if yf[i] > 0 else alpha[i])
        t = min(t, alpha[j] if yf[j] > 0 else C - alpha[j])
        alpha[i] += yf[i] * t
        alpha[j] -= yf[j] * t
        alpha[i] = min(max(alpha[i], 0.0), C)
        alpha[j] = min(max(alpha[j], 0.0), C)
        grad += t * (yf[i] * Q[:, i] - yf[j] * Q[:, j])
    else:
        up = np.where(yf > 0, alpha < C, alpha > 0)
        low = np.where(yf > 0, alpha > 0, alpha < C)
        score = -yf * grad
        gap = float(score[up].max() - score[low].min())
        if gap > tol:
            raise ConvergenceError(f"SMO did not converge in {max_iter} pair updates", gap)

    # rho = y_i G_i averaged over free vectors, else midpoint of the feasible interval
    yg = yf * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(yg[free].mean())
    else:
        at_up = alpha >= C
        ub_mask = (at_up & (yf < 0)) | (~at_up & (yf > 0))
        lb_mask = (at_up & (yf > 0)) | (~at_up & (yf < 0))
        ub = yg[ub_mask].min() if ub_mask.any() else math.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -math.inf
        rho = 0.5 * (ub + lb) if math.isfinite(ub) and math.isfinite(lb) else (
            ub if math.isfinite(ub) else lb)
    return alpha, -rho + 0.0, float(gap)


def svm_train(samples, labels, kernel: KernelSpec | None = None, C: float = 10.0,
              tol: float = 1e-3, max_iter: int = 100_000) -> SvmModel:
    """Train a binary SVM; keeps only vectors with alpha > 0."""
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    y = np.asarray(labels).astype(np.int64)
    if y.shape != (X.shape[0],):
        raise ValueError("one label per sample is required")
    _check_labels(y)
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    kernel = kernel or KernelSpec("rbf", median_heuristic(X))
    K = kernel_matrix(kernel, X, X)
    alpha, bias, gap = smo_solve(K, y, C, tol, max_iter)
    keep = alpha > 0
    return SvmModel(support_vectors=X[keep].copy(), alphas=alpha[keep], labels=y[keep].astype(np.float64),
                    bias=bias, kernel=kernel, C=float(C), kkt_gap=gap)


def svm_scores(model: SvmModel, X, collapse: bool = True) -> np.ndarray:
    """sum_i alpha_i y_i K(x_i, x) + b for each row of X.

    With ``collapse`` a linear model scores as omega . x + b, whose cost does
    not depend on the number of support vectors.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.dim:
        raise ValueError(f"input length {X.shape[1]} does not match model dimension {model.dim}")
    if collapse and model.kernel.kind == "linear":
        return X @ model.linear_weights() + model.bias
    K = kernel_matrix(model.kernel, model.support_vectors, X)
    return (model.alphas * model.labels) @ K + model.bias


def svm_decide(model: SvmModel, x) -> tuple[float, int]:
    """Return (score, label); a score of exactly 0 is labeled +1."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("svm_decide takes a single vector")
    score = float(svm_scores(model, x)[0])
    return score, 1 if score >= 0 else -1


# ---------------------------------------------------------------------------
# K-NN


@dataclass(frozen=True, eq=False)
class KnnModel:
    gallery: np.ndarray
    labels: np.ndarray
    k: int = 5

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.gallery, dtype=np.float64))
        if g.shape[0] == 0:
            raise ValueError("K-NN gallery is empty")
        if not 1 <= self.k <= g.shape[0]:
            raise ValueError(f"k must lie in [1, {g.shape[0]}], got {self.k}")
        object.__setattr__(self, "gallery", g)
        object.__setattr__(self, "labels", np.asarray(self.labels).astype(np.int64))

    @property
    def dim(self) -> int:
        return self.gallery.shape[1]

    def dumps(self) -> str:
        return (serialize.dump_field("model", "knn")
                + serialize.dump_field("k", self.k)
                + serialize.dump_matrix("labels", self.labels.astype(np.float64))
                + serialize.dump_matrix("gallery", self.gallery))

    @classmethod
    def loads(cls, text: str) -> "KnnModel":
        mats, f = serialize.parse(text)
        return cls(gallery=serialize.require(mats, "gallery"),
                   labels=serialize.require(mats, "labels").ravel().astype(np.int64),
                   k=int(serialize.require(f, "k", "field")))


def _neighbours(model: KnnModel, x) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise ValueError(f"input length {x.shape} does not match gallery dimension {model.dim}")
    dist = np.sqrt(np.sum((model.gallery - x) ** 2, axis=1))
    order = np.argsort(dist, kind="stable")[:model.k]
    return model.labels[order], dist[order]


def knn_decide(model: KnnModel, x) -> int:
    """Majority label of the k nearest gallery points.

    Ties go to the label with the smaller summed distance, then the lower label.
    """
    labs, dist = _neighbours(model, x)
    best = None
    for lab in np.unique(labs):
        key = (-int(np.sum(labs == lab)), float(dist[labs == lab].sum()), int(lab))
        if best is None or key < best:
            best = key
    return best[2]


def knn_score(model: KnnModel, x) -> float:
    """Genuine-vote margin in [-1, 1] among the k neighbours, nudged by distance.

    The vote margin dominates; the distance term only orders probes with equal
    votes (closer genuine neighbours score higher).
    """
    labs, dist = _neighbours(model, x)
    votes = float(np.sum(labs == 1) - np.sum(labs != 1)) / model.k
    gen = dist[labs == 1]
    imp = dist[labs != 1]
    nudge = (imp.mean() if imp.size else 0.0) - (gen.mean() if gen.size else 0.0)
    return votes + 1e-3 * math.tanh(nudge)
