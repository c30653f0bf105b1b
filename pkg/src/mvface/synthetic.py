"""Seeded synthetic "subjects" for desk-scale runs without a face database.

Each subject is a smooth random field; instances are shifted by up to
``max_shift`` pixels (edge-replicated) and perturbed by Gaussian noise.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataset_io import GrayImage, save_pgm


def base_pattern(rng: np.random.Generator, size: int, smoothness: float = 3.0) -> np.ndarray:
    field = ndimage.gaussian_filter(rng.normal(size=(size, size)), smoothness, mode="wrap")
    lo, hi = field.min(), field.max()
    return 0.1 + 0.8 * (field - lo) / (hi - lo)


def make_subjects(n_subjects: int = 10, n_instances: int = 12, size: int = 32,
                  noise: float = 0.05, max_shift: int = 2, seed: int = 0
                  ) -> list[tuple[GrayImage, int]]:
    """Return ``[(image, subject), ...]`` ordered by subject then instance."""
    rng = np.random.default_rng(seed)
    bases = [base_pattern(rng, size) for _ in range(n_subjects)]
    out = []
    for subject, base in enumerate(bases):
        for _ in range(n_instances):
            dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
            shifted = ndimage.shift(base, (int(dy), int(dx)), order=0, mode="nearest")
            noisy = np.clip(shifted + rng.normal(0.0, noise, size=base.shape), 0.0, 1.0)
            out.append((GrayImage.from_array(noisy), subject))
    return out


def write_dataset(root, samples: list[tuple[GrayImage, int]]) -> Path:
    """Write ``root/<subject:02d>/<index:03d>.pgm``; returns ``root``."""
    root = Path(root)
    counters: dict[int, int] = {}
    for img, subject in samples:
        sdir = root / f"{subject:02d}"
        sdir.mkdir(parents=True, exist_ok=True)
        idx = counters.get(subject, 0)
        counters[subject] = idx + 1
        save_pgm(sdir / f"{idx:03d}.pgm", img)
    return root
