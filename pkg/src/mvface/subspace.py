"""Eigenface (PCA) and canonical covariate subspaces over Gabor faces."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import serialize


class SubspaceWarning(UserWarning):
    """Requested dimension clipped, or the data carries no usable variance."""


class NonConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (off-diagonal norm {residual:.3e})")
        self.residual = residual


class SingularCovarianceError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Symmetric eigensolver


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive."""
    if vectors.size == 0:
        return vectors
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eigen(matrix, max_sweeps: int = 100, tol: float = 1e-14):
    """Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues descending and
    eigenvectors as orthonormal columns, each signed so its largest-magnitude
    entry is positive.

    Raises:
      ValueError: input is not square or not symmetric within 1e-9.
      NonConvergenceError: off-diagonal mass still above tolerance after
        ``max_sweeps`` sweeps.
    """
    A = np.array(matrix, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.T)) > 1e-9 * scale:
        raise ValueError("matrix is not symmetric within 1e-9")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    norm = np.linalg.norm(A)

    def off(a):
        return math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))

    residual = off(A)
    sweeps = 0
    while residual > tol * norm:
        if sweeps == max_sweeps:
            raise NonConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps", residual)
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                diff = A[q, q] - A[p, p]
                if abs(apq) <= 1e-300 or abs(apq) < 1e-18 * abs(diff):
                    if apq != 0.0:
                        A[p, q] = A[q, p] = 0.0
                    continue
                theta = diff / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p, row_q = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
                v_p, v_q = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * v_p - s * v_q
                V[:, q] = s * v_p + c * v_q
        residual = off(A)

    values = np.diag(A).copy()
    order = np.argsort(-values, kind="stable")
    return values[order], _canonical_signs(V[:, order])


# ---------------------------------------------------------------------------
# PCA


def _as_matrix(faces) -> np.ndarray:
    try:
        X = np.asarray(faces, dtype=np.float64)
    except ValueError:
        raise ValueError("faces have inconsistent lengths") from None
    if X.ndim != 2:
        raise ValueError("faces must be a list of equal-length vectors")
    return X


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (m', d), orthonormal rows
    eigenvalues: np.ndarray  # (m',), descending
    n_train: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def dumps(self) -> str:
        return (serialize.dump_field("model", "pca")
                + serialize.dump_field("n_train", self.n_train)
                + serialize.dump_matrix("mean", self.mean)
                + serialize.dump_matrix("eigenvalues", self.eigenvalues)
                + serialize.dump_matrix("components", self.components.reshape(-1, self.dim)))

    @classmethod
    def loads(cls, text: str) -> "PcaModel":
        mats, fields = serialize.parse(text)
        mean = serialize.require(mats, "mean")[0]
        comps = serialize.require(mats, "components")
        return cls(mean=mean, components=comps,
                   eigenvalues=serialize.require(mats, "eigenvalues").ravel()[:comps.shape[0]],
                   n_train=int(serialize.require(fields, "n_train", "field")))


def _choose_count(eigenvalues: np.ndarray, request, cap: int, usable: int) -> int:
    if request is None:
        request = 0.95
    if isinstance(request, float):
        if not 0.0 < request <= 1.0:
            raise ValueError(f"variance fraction must lie in (0, 1], got {request}")
        total = eigenvalues.sum()
        if total <= 0:
            count = 1
        else:
            cum = np.cumsum(eigenvalues) / total
            count = int(np.searchsorted(cum, request - 1e-12) + 1)
    else:
        count = int(request)
        if count < 1:
            raise ValueError(f"component count must be >= 1, got {count}")
    if count > cap:
        warnings.warn(f"requested {count} components, clipped to m-1 = {cap}", SubspaceWarning,
                      stacklevel=3)
        count = cap
    if count > usable:
        warnings.warn(f"only {usable} components carry non-zero variance (requested {count})",
                      SubspaceWarning, stacklevel=3)
        count = usable
    return count


def pca_fit(faces, m_prime=None) -> PcaModel:
    """Fit eigenfaces via the m x m Gram matrix (snapshot method).

    Args:
      faces: m Gabor faces of equal length d.
      m_prime: component count (int), retained variance fraction (float in
        (0, 1]), or None for 95% of the variance. Always capped at m - 1.
    """
    X = _as_matrix(faces)
    m, d = X.shape
    if m < 2:
        raise ValueError(f"need at least 2 faces, got {m}")
    mean = X.mean(axis=0)
    eta = X - mean
    gram = (eta @ eta.T) / m
    values, vectors = sym_eigen(gram)
    values = np.where(values < 0, 0.0, values)
    floor = 1e-12 * max(values[0], 0.0)
    usable = int(np.sum(values > max(floor, 1e-300)))
    count = _choose_count(values, m_prime, m - 1, usable)
    vals = values[:count]
    comps = (eta.T @ vectors[:, :count]) / np.sqrt(m * vals) if count else np.zeros((d, 0))
    comps = _canonical_signs(comps).T
    return PcaModel(mean=mean, components=np.ascontiguousarray(comps), eigenvalues=vals, n_train=m)


def pca_project(model: PcaModel, face) -> np.ndarray:
    """Eigenface weights c_k . (G - mean); accepts one face or a stack of faces."""
    G = np.asarray(face, dtype=np.float64)
    if G.shape[-1] != model.dim:
        raise ValueError(f"face length {G.shape[-1]} does not match model dimension {model.dim}")
    return (G - model.mean) @ model.components.T


def pca_reconstruct(model: PcaModel, weights) -> np.ndarray:
    return model.mean + np.asarray(weights, dtype=np.float64) @ model.components


# ---------------------------------------------------------------------------
# Canonical covariates


@dataclass(frozen=True, eq=False)
class CcModel:
    classes: np.ndarray  # (C,) sorted class ids
    class_means: np.ndarray  # (C, d)
    grand_mean: np.ndarray  # (d,) mean of class means
    directions: np.ndarray  # (k, d), unit rows
    eigenvalues: np.ndarray  # (k,)
    ridge: float

    @property
    def dim(self) -> int:
        return self.grand_mean.shape[0]

    @property
    def n_directions(self) -> int:
        return self.directions.shape[0]

    def dumps(self) -> str:
        return (serialize.dump_field("model", "cc")
                + serialize.dump_field("ridge", float(self.ridge))
                + serialize.dump_matrix("classes", self.classes.astype(np.float64))
                + serialize.dump_matrix("class_means", self.class_means)
                + serialize.dump_matrix("grand_mean", self.grand_mean)
                + serialize.dump_matrix("eigenvalues", self.eigenvalues)
                + serialize.dump_matrix("directions", self.directions))

    @classmethod
    def loads(cls, text: str) -> "CcModel":
        mats, fields = serialize.parse(text)
        return cls(classes=serialize.require(mats, "classes").ravel().astype(np.int64),
                   class_means=serialize.require(mats, "class_means"),
                   grand_mean=serialize.require(mats, "grand_mean")[0],
                   directions=serialize.require(mats, "directions"),
                   eigenvalues=serialize.require(mats, "eigenvalues").ravel(),
                   ridge=float(serialize.require(fields, "ridge", "field")))


def scatter_matrices(X: np.ndarray, labels: np.ndarray):
    """Return (classes, class_means, grand_mean, between, within).

    ``between`` is the covariance of the class means (1/(C-1)); ``within`` is
    the pooled within-class covariance (1/(N-1)).
    """
    classes = np.unique(labels)
    C, N = len(classes), X.shape[0]
    means = np.stack([X[labels == c].mean(axis=0) for c in classes])
    grand = means.mean(axis=0)
    dm = means - grand
    between = dm.T @ dm / (C - 1)
    resid = X - means[np.searchsorted(classes, labels)]
    within = resid.T @ resid / (N - 1)
    return classes, means, grand, between, within


def cc_fit(faces, labels, k: int | None = None, ridge: float | None = None) -> CcModel:
    """Fit canonical directions: top eigenvectors of (within + ridge*I)^-1 between.

    Solved by whitening the regularized within-class covariance and running
    the symmetric eigensolver on the whitened between-class matrix. The
    default ridge is 1e-6 * trace(within) / dim.
    """
    X = _as_matrix(faces)
    y = np.asarray(labels)
    if y.shape != (X.shape[0],):
        raise ValueError("one label per face is required")
    classes = np.unique(y)
    C, N, d = len(classes), X.shape[0], X.shape[1]
    if C < 2:
        raise ValueError(f"canonical covariates need at least 2 classes, got {C}")
    if N < C + 1:
        raise ValueError(f"need at least C+1 = {C + 1} samples, got {N}")
    classes, means, grand, between, within = scatter_matrices(X, y)

    if ridge is None:
        ridge = 1e-6 * float(np.trace(within)) / d
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    w_vals, w_vecs = sym_eigen(within + ridge * np.eye(d))
    if w_vals[0] <= 0 or w_vals[-1] <= 1e-12 * w_vals[0]:
        raise SingularCovarianceError(
            f"regularized within-class covariance is singular (ridge={ridge:g}); use a larger ridge")
    whiten = w_vecs / np.sqrt(w_vals)
    b_vals, b_vecs = sym_eigen(whiten.T @ between @ whiten)

    cap = min(C - 1, d)
    if k is None:
        k = cap
    elif k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    elif k > cap:
        warnings.warn(f"requested {k} canonical directions, clipped to {cap}", SubspaceWarning,
                      stacklevel=2)
        k = cap
    b_vals = np.where(b_vals < 0, 0.0, b_vals)
    if b_vals[0] <= 1e-12:
        warnings.warn("class means coincide: no between-class variance", SubspaceWarning,
                      stacklevel=2)

    dirs = whiten @ b_vecs[:, :k]
    dirs = dirs / np.linalg.norm(dirs, axis=0)
    dirs = _canonical_signs(dirs).T
    return CcModel(classes=classes, class_means=means, grand_mean=grand,
                   directions=np.ascontiguousarray(dirs), eigenvalues=b_vals[:k], ridge=float(ridge))


def cc_project(model: CcModel, face) -> np.ndarray:
    """Coordinates ev_j . (face - grand mean); accepts one face or a stack."""
    G = np.asarray(face, dtype=np.float64)
    if G.shape[-1] != model.dim:
        raise ValueError(f"face length {G.shape[-1]} does not match model dimension {model.dim}")
    return (G - model.grand_mean) @ model.directions.T
