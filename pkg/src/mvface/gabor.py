"""Real-valued Gabor filter bank and Gabor-face feature extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage, signal

from .dataset_io import GrayImage

CARRIERS = ("radians", "cycles")
CONV_METHODS = ("direct", "fft", "separable", "auto")
MAX_SEPARABLE_RANK = 3
CONSTANT_BLOCK_VAR = 1e-12


@dataclass(frozen=True)
class GaborParams:
    """One filter of the bank.

    ``carrier="radians"`` evaluates the cosine as cos(f*P) with ``f`` in
    radians/pixel; ``"cycles"`` evaluates cos(2*pi*f*P) with ``f`` taken
    literally.
    """

    f: float
    theta: float
    sigma_x: float
    sigma_y: float
    support: int
    carrier: str = "radians"

    def __post_init__(self):
        if not self.f > 0:
            raise ValueError(f"frequency must be positive, got {self.f}")
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise ValueError("envelope widths must be positive")
        if self.support < 1:
            raise ValueError(f"support must be >= 1, got {self.support}")
        # theta = pi is admitted: the default grid ends at 8*pi/8 and the kernel
        # is pi-periodic in theta.
        if not 0.0 <= self.theta <= math.pi:
            raise ValueError(f"theta must lie in [0, pi], got {self.theta}")
        if self.carrier not in CARRIERS:
            raise ValueError(f"unknown carrier convention {self.carrier!r}")


def make_kernel(p: GaborParams) -> np.ndarray:
    """Sample the filter on integer offsets in [-support, support].

    Returned array is indexed ``[y + support, x + support]``. The kernel is
    pi-periodic in theta; theta is reduced mod pi (exactly, via fmod) so that
    theta = pi reproduces theta = 0 bit for bit.
    """
    r = np.arange(-p.support, p.support + 1, dtype=np.float64)
    y, x = np.meshgrid(r, r, indexing="ij")
    theta = math.fmod(p.theta, math.pi)
    s, c = math.sin(theta), math.cos(theta)
    P = x * s + y * c
    Q = x * c - y * s
    envelope = np.exp(-0.5 * (P**2 / p.sigma_x**2 + Q**2 / p.sigma_y**2))
    omega = p.f if p.carrier == "radians" else 2.0 * math.pi * p.f
    return envelope * np.cos(omega * P)


def sigma_inverse_frequency(f: float, scale: float = 1.0) -> tuple[float, float]:
    """Default envelope rule: sigma_x = sigma_y = scale * pi / f."""
    s = scale * math.pi / f
    return s, s


def support_three_sigma(sigma_x: float, sigma_y: float, image_side: int | None = None) -> int:
    """ceil(3 * max sigma), capped at half the image side (never below 1)."""
    support = math.ceil(3.0 * max(sigma_x, sigma_y))
    if image_side is not None:
        support = min(support, image_side // 2)
    return max(1, support)


def separable_factors(kernel: np.ndarray, rtol: float = 1e-13):
    """Split a kernel into at most MAX_SEPARABLE_RANK outer products ``col (x) row``.

    Returns a list of (column, row) pairs, or None when the numerical rank is
    higher. A Gabor kernel with an isotropic envelope has rank <= 2 since
    cos(a*x + b*y) = cos(a*x)cos(b*y) - sin(a*x)sin(b*y).
    """
    U, s, Vt = np.linalg.svd(np.asarray(kernel, dtype=np.float64))
    if s[0] == 0.0:
        return [(np.zeros(kernel.shape[0]), np.zeros(kernel.shape[1]))]
    rank = int(np.sum(s > rtol * s[0]))
    if rank > MAX_SEPARABLE_RANK:
        return None
    factors = [(U[:, i] * s[i], Vt[i].copy()) for i in range(rank)]
    for col, row in factors:
        col.setflags(write=False)
        row.setflags(write=False)
    return factors


@dataclass(frozen=True, eq=False)
class FilterBank:
    params: tuple[GaborParams, ...]
    kernels: tuple[np.ndarray, ...]
    factors: tuple = ()

    def __post_init__(self):
        if not self.factors:
            object.__setattr__(self, "factors", tuple(separable_factors(k) for k in self.kernels))

    def __len__(self):
        return len(self.kernels)

    def __iter__(self):
        return iter(zip(self.params, self.kernels))

    @classmethod
    def from_kernels(cls, kernels: Sequence[np.ndarray]) -> "FilterBank":
        """Bank of arbitrary odd-sized kernels (used for identity filters in tests)."""
        ks = []
        for k in kernels:
            k = np.array(k, dtype=np.float64)
            if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
                raise ValueError("kernels must be 2-D with odd sides")
            k.setflags(write=False)
            ks.append(k)
        return cls(params=(), kernels=tuple(ks))


def bank_grid(n_freq: int = 5, n_orient: int = 8) -> list[tuple[float, float]]:
    """(f, theta) pairs, frequency-major: f = pi/2**i (i=1..n_freq), theta = k*pi/n_orient (k=1..n_orient)."""
    return [(math.pi / 2**i, k * math.pi / n_orient)
            for i in range(1, n_freq + 1) for k in range(1, n_orient + 1)]


def build_bank(sigma_rule=sigma_inverse_frequency, support_rule=support_three_sigma,
               image_side: int | None = None, n_freq: int = 5, n_orient: int = 8,
               carrier: str = "radians") -> FilterBank:
    """Build the default 5 x 8 bank.

    Args:
      sigma_rule: ``f -> (sigma_x, sigma_y)``.
      support_rule: ``(sigma_x, sigma_y, image_side) -> support``.
      image_side: smaller image side, used to cap the kernel support.
    """
    params, kernels = [], []
    for f, theta in bank_grid(n_freq, n_orient):
        sx, sy = sigma_rule(f)
        p = GaborParams(f=f, theta=theta, sigma_x=sx, sigma_y=sy,
                        support=support_rule(sx, sy, image_side), carrier=carrier)
        k = make_kernel(p)
        k.setflags(write=False)
        params.append(p)
        kernels.append(k)
    return FilterBank(tuple(params), tuple(kernels))


def _as_array(img) -> np.ndarray:
    return img.pixels if isinstance(img, GrayImage) else np.asarray(img, dtype=np.float64)


def _convolve_separable(a: np.ndarray, factors) -> np.ndarray:
    out = np.zeros_like(a)
    for col, row in factors:
        tmp = ndimage.convolve1d(a, row, axis=1, mode="constant", cval=0.0)
        out += ndimage.convolve1d(tmp, col, axis=0, mode="constant", cval=0.0)
    return out


def convolve(img, kernel: np.ndarray, method: str = "auto", factors=None) -> np.ndarray:
    """'Same'-size 2-D convolution with zero padding outside the image.

    Methods: ``direct`` (spatial summation), ``fft``, ``separable`` (sum of
    row/column passes from a low-rank split of the kernel) and ``auto``
    (separable when the kernel has rank <= 3, otherwise scipy's choice
    between direct and FFT). All agree to floating-point rounding.
    """
    if method not in CONV_METHODS:
        raise ValueError(f"unknown convolution method {method!r}")
    a = _as_array(img)
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ValueError("kernel must be 2-D with odd sides")
    if method in ("separable", "auto"):
        if factors is None:
            factors = separable_factors(kernel)
        if factors is not None:
            return _convolve_separable(a, factors)
        if method == "separable":
            raise ValueError("kernel is not separable into a low-rank sum")
        method = signal.choose_conv_method(a, kernel, mode="same")
    return signal.convolve(a, kernel, mode="same", method=method)


def gabor_face_length(height: int, width: int, rho: int, n_filters: int = 40) -> int:
    return n_filters * math.ceil(height / rho) * math.ceil(width / rho)


def normalize_block(block: np.ndarray) -> np.ndarray:
    """Zero mean, unit (population) variance; constant blocks become zeros."""
    block = np.asarray(block, dtype=np.float64).ravel()
    centered = block - block.mean()
    var = np.mean(centered**2)
    if var < CONSTANT_BLOCK_VAR:
        return np.zeros_like(centered)
    return centered / math.sqrt(var)


def extract_gabor_face(img, bank: FilterBank, rho: int = 4, method: str = "auto") -> np.ndarray:
    """Flat Gabor feature vector laid out (filter, row, column).

    Each response map is sampled at (r*rho, c*rho) and normalized per filter.
    """
    if rho < 1:
        raise ValueError(f"downsample stride must be >= 1, got {rho}")
    a = _as_array(img)
    blocks = [normalize_block(convolve(a, k, method, f)[::rho, ::rho])
              for k, f in zip(bank.kernels, bank.factors)]
    return np.concatenate(blocks)
