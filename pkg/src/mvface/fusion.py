"""Weighted-mean fusion of eigenface and canonical-covariate coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import serialize


@dataclass(frozen=True, eq=False)
class MinMaxBounds:
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, gallery) -> "MinMaxBounds":
        X = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
        if X.shape[0] == 0:
            raise ValueError("cannot fit bounds on an empty gallery")
        return cls(lo=X.min(axis=0), hi=X.max(axis=0))

    def __len__(self):
        return self.lo.shape[0]


def minmax_normalize(v, bounds: MinMaxBounds) -> np.ndarray:
    """Map each dimension to [0, 1] with training bounds.

    Out-of-range values are clamped; a dimension with max == min maps to 0.5.
    Works on one vector or a stack of vectors.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != len(bounds):
        raise ValueError(f"vector length {v.shape[-1]} does not match bounds ({len(bounds)})")
    span = bounds.hi - bounds.lo
    flat = span <= 0
    safe = np.where(flat, 1.0, span)
    with np.errstate(over="ignore"):  # huge ratios clamp to the same end
        out = np.clip((v - bounds.lo) / safe, 0.0, 1.0)
    return np.where(flat, 0.5, out)


def separation(mu_a, sigma_a, mu_b, sigma_b) -> np.ndarray:
    """Per-dimension separation |mu_a - mu_b| / sqrt(sigma_a^2 + sigma_b^2); 0 where both sigmas vanish."""
    num = np.abs(np.asarray(mu_a, dtype=np.float64) - np.asarray(mu_b, dtype=np.float64))
    den = np.sqrt(np.asarray(sigma_a, dtype=np.float64) ** 2 + np.asarray(sigma_b, dtype=np.float64) ** 2)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


def weights_from_separation(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    total = d.sum()
    if total <= 0:
        return np.full(d.shape, 1.0 / d.size)
    return d / total


@dataclass(frozen=True, eq=False)
class FusionStats:
    pca_bounds: MinMaxBounds
    cc_bounds: MinMaxBounds
    mu_pca: np.ndarray
    sigma_pca: np.ndarray
    mu_cc: np.ndarray
    sigma_cc: np.ndarray
    weights: np.ndarray

    @property
    def q(self) -> int:
        return self.weights.shape[0]

    def dumps(self) -> str:
        parts = [serialize.dump_field("model", "fusion")]
        for name in ("mu_pca", "sigma_pca", "mu_cc", "sigma_cc"):
            parts.append(serialize.dump_matrix(name, getattr(self, name)))
        parts.append(serialize.dump_matrix("pca_bounds", np.stack([self.pca_bounds.lo, self.pca_bounds.hi])))
        parts.append(serialize.dump_matrix("cc_bounds", np.stack([self.cc_bounds.lo, self.cc_bounds.hi])))
        parts.append(serialize.dump_matrix("weights", self.weights))
        return "".join(parts)

    @classmethod
    def loads(cls, text: str) -> "FusionStats":
        mats, _ = serialize.parse(text)
        vec = {k: serialize.require(mats, k)[0]
               for k in ("mu_pca", "sigma_pca", "mu_cc", "sigma_cc", "weights")}
        pb, cb = serialize.require(mats, "pca_bounds"), serialize.require(mats, "cc_bounds")
        return cls(pca_bounds=MinMaxBounds(pb[0], pb[1]), cc_bounds=MinMaxBounds(cb[0], cb[1]), **vec)


def fit_fusion(pca_feats, cc_feats) -> FusionStats:
    """Fit min-max bounds, per-dimension statistics and fusion weights on a gallery.

    The fused dimension is Q = min(pca dim, cc dim); statistics are taken over
    the first Q normalized coordinates of each representation.
    """
    P = np.atleast_2d(np.asarray(pca_feats, dtype=np.float64))
    C = np.atleast_2d(np.asarray(cc_feats, dtype=np.float64))
    if P.shape[0] == 0 or C.shape[0] == 0:
        raise ValueError("fusion needs a non-empty gallery")
    if P.shape[0] != C.shape[0]:
        raise ValueError("pca and cc galleries must describe the same faces")
    q = min(P.shape[1], C.shape[1])
    if q == 0:
        raise ValueError("fused dimension is zero")
    pb, cb = MinMaxBounds.fit(P), MinMaxBounds.fit(C)
    nP = minmax_normalize(P, pb)[:, :q]
    nC = minmax_normalize(C, cb)[:, :q]
    mu_p, mu_c = nP.mean(axis=0), nC.mean(axis=0)
    sd_p, sd_c = nP.std(axis=0), nC.std(axis=0)
    w = weights_from_separation(separation(mu_p, sd_p, mu_c, sd_c))
    return FusionStats(pca_bounds=pb, cc_bounds=cb, mu_pca=mu_p, sigma_pca=sd_p,
                       mu_cc=mu_c, sigma_cc=sd_c, weights=w)


def fuse(stats: FusionStats, pca_feat, cc_feat) -> np.ndarray:
    """F_i = w_i * (pca_i + cc_i) / 2 over the first Q already-normalized coordinates."""
    p = np.asarray(pca_feat, dtype=np.float64)
    c = np.asarray(cc_feat, dtype=np.float64)
    q = stats.q
    if p.shape[-1] < q or c.shape[-1] < q:
        raise ValueError(f"inputs must have at least Q = {q} coordinates")
    return stats.weights * (p[..., :q] + c[..., :q]) / 2.0


def fuse_raw(stats: FusionStats, pca_feat, cc_feat) -> np.ndarray:
    """Normalize raw projections with the fitted bounds, then fuse."""
    return fuse(stats, minmax_normalize(pca_feat, stats.pca_bounds),
                minmax_normalize(cc_feat, stats.cc_bounds))
