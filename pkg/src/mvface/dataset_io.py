"""Grayscale PGM input, bilinear resizing and labeled split manifests."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPLITS = ("train", "eval", "test")


class PgmError(ValueError):
    """Base class for PGM parse failures. ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class PgmHeaderError(PgmError):
    pass


class PgmTruncatedError(PgmError):
    pass


class PgmMaxvalError(PgmError):
    pass


class ManifestError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Row-major grayscale image with intensities in [0, 1].

    ``pixels`` has shape ``(height, width)``; it is copied and made read-only.
    """

    width: int
    height: int
    pixels: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")
        arr = np.array(self.pixels, dtype=np.float64).reshape(self.height, self.width)
        if arr.size and (arr.min() < 0.0 or arr.max() > 1.0 or not np.all(np.isfinite(arr))):
            raise ValueError("intensities must lie in [0, 1]")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @classmethod
    def from_array(cls, arr) -> "GrayImage":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("expected a 2-D array")
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


# ---------------------------------------------------------------------------
# PGM


def _is_space(b: int) -> bool:
    return b in b" \t\r\n\v\f"


def _next_token(data: bytes, pos: int) -> tuple[bytes, int, int]:
    """Return (token, token_start, position after token), skipping whitespace and comments."""
    n = len(data)
    while pos < n:
        if _is_space(data[pos]):
            pos += 1
        elif data[pos] == ord("#"):
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    if pos >= n:
        raise PgmHeaderError("unexpected end of header", pos)
    start = pos
    while pos < n and not _is_space(data[pos]) and data[pos] != ord("#"):
        pos += 1
    return data[start:pos], start, pos


def _header_int(data: bytes, pos: int, what: str) -> tuple[int, int, int]:
    """Returns (value, token start, position after token)."""
    tok, start, pos = _next_token(data, pos)
    if not tok.isdigit():
        raise PgmHeaderError(f"expected integer {what}, got {tok[:16]!r}", start)
    return int(tok), start, pos


def decode_pgm(data: bytes) -> GrayImage:
    """Decode P5 (binary) or P2 (ASCII) PGM bytes with maxval <= 255."""
    if len(data) < 2 or data[:2] not in (b"P5", b"P2"):
        raise PgmHeaderError(f"bad magic {data[:2]!r}, expected P5 or P2", 0)
    binary = data[:2] == b"P5"
    pos = 2
    if pos < len(data) and not _is_space(data[pos]) and data[pos] != ord("#"):
        raise PgmHeaderError("magic number must be followed by whitespace", pos)
    width, _, pos = _header_int(data, pos, "width")
    height, _, pos = _header_int(data, pos, "height")
    maxval, maxval_at, pos = _header_int(data, pos, "maxval")
    if width == 0 or height == 0:
        raise PgmHeaderError(f"zero image dimension {width}x{height}", maxval_at)
    if not 0 < maxval <= 255:
        raise PgmMaxvalError(f"unsupported maxval {maxval}", maxval_at)
    count = width * height

    if binary:
        if pos >= len(data) or not _is_space(data[pos]):
            raise PgmTruncatedError("missing whitespace before pixel data", pos)
        pos += 1
        payload = data[pos:pos + count]
        if len(payload) < count:
            raise PgmTruncatedError(
                f"pixel data truncated: need {count} bytes, found {len(payload)}", pos + len(payload))
        raw = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
        bad = np.flatnonzero(raw > maxval)
        if bad.size:
            raise PgmMaxvalError(f"sample {raw[bad[0]]} exceeds maxval {maxval}", pos + int(bad[0]))
    else:
        values = []
        for _ in range(count):
            try:
                tok, start, pos = _next_token(data, pos)
            except PgmHeaderError as exc:
                raise PgmTruncatedError(
                    f"pixel data truncated: need {count} samples, found {len(values)}", exc.offset) from None
            if not tok.isdigit():
                raise PgmHeaderError(f"bad ASCII sample {tok[:16]!r}", start)
            v = int(tok)
            if v > maxval:
                raise PgmMaxvalError(f"sample {v} exceeds maxval {maxval}", start)
            values.append(v)
        raw = np.array(values, dtype=np.int64)

    pixels = raw.reshape(height, width) / float(maxval)
    return GrayImage(width=width, height=height, pixels=pixels)


def load_pgm(path) -> GrayImage:
    return decode_pgm(Path(path).read_bytes())


def encode_pgm(img: GrayImage, maxval: int = 255) -> bytes:
    """Encode as binary P5. Intensities are rounded to the nearest level."""
    if not 0 < maxval <= 255:
        raise ValueError(f"unsupported maxval {maxval}")
    levels = np.rint(img.pixels * maxval).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    return header + levels.tobytes()


def save_pgm(path, img: GrayImage, maxval: int = 255) -> None:
    Path(path).write_bytes(encode_pgm(img, maxval))


# ---------------------------------------------------------------------------
# Resizing


def resize_bilinear(img: GrayImage, w: int, h: int) -> GrayImage:
    """Bilinear resize with edge clamping (pixel-center alignment).

    Resizing to the image's own size returns identical pixels.
    """
    if w < 1 or h < 1:
        raise ValueError(f"target size must be at least 1x1, got {w}x{h}")
    if (w, h) == (img.width, img.height):
        return img
    src = img.pixels

    def axis(n_out, n_in):
        coord = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        coord = np.clip(coord, 0.0, n_in - 1)
        lo = np.floor(coord).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, coord - lo

    y0, y1, fy = axis(h, img.height)
    x0, x1, fx = axis(w, img.width)
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bottom = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    return GrayImage(width=w, height=h, pixels=np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Manifest


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    subject: int
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        seen = {}
        for e in self.entries:
            if e.split not in SPLITS:
                raise ManifestError(f"unknown split tag {e.split!r}")
            prev = seen.setdefault(e.path, e.split)
            if prev != e.split:
                raise ManifestError(f"{e.path} appears in both {prev} and {e.split}")
        train = self.subjects("train")
        for e in self.entries:
            if e.split != "train" and e.subject not in train:
                raise ManifestError(
                    f"subject {e.subject} appears in {e.split} but not in train ({e.path})")

    def split(self, tag: str) -> list[ManifestEntry]:
        if tag not in SPLITS:
            raise ManifestError(f"unknown split tag {tag!r}")
        return [e for e in self.entries if e.split == tag]

    def subjects(self, tag: str | None = None) -> list[int]:
        return sorted({e.subject for e in self.entries if tag is None or e.split == tag})

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p


def load_manifest(path) -> DatasetManifest:
    """Read a ``path,subject,split`` CSV. Relative paths resolve against the manifest's directory."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    entries = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["path", "subject", "split"]:
            raise ManifestError(f"{path}:1: header must be 'path,subject,split'")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ManifestError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            p, subj, split = (c.strip() for c in row)
            try:
                subject = int(subj)
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: subject {subj!r} is not an integer") from None
            if subject < 0:
                raise ManifestError(f"{path}:{lineno}: subject must be >= 0, got {subject}")
            if split not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: unknown split tag {split!r}")
            entries.append(ManifestEntry(p, subject, split))
    return DatasetManifest(tuple(entries), root=path.parent)


def format_manifest(entries: Iterable[ManifestEntry]) -> str:
    lines = ["path,subject,split"]
    for e in entries:
        if "," in e.path:
            raise ManifestError(f"path must not contain commas: {e.path}")
        lines.append(f"{e.path},{e.subject},{e.split}")
    return "\n".join(lines) + "\n"


def write_manifest(path, manifest: DatasetManifest) -> None:
    Path(path).write_text(format_manifest(manifest.entries), encoding="utf-8")


def split_counts(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """Per-subject train/eval/test counts: floor for train and eval, remainder to test.

    Each non-empty split keeps at least one image when ``n`` allows it.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ValueError("ratios must be three non-negative numbers")
    if not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    n_train = max(1, math.floor(ratios[0] * n + 1e-9))
    n_eval = math.floor(ratios[1] * n + 1e-9)
    if ratios[1] > 0 and n_eval == 0 and n - n_train >= 2:
        n_eval = 1
    n_eval = min(n_eval, n - n_train)
    return n_train, n_eval, n - n_train - n_eval


def make_split(dataset_dir, ratios=(0.6, 0.2, 0.2), seed: int = 0,
               relative_to=None) -> DatasetManifest:
    """Build a manifest from ``dataset_dir/<subject>/*.pgm`` with a seeded per-subject shuffle.

    Subject directories are numbered in sorted name order; directory names that
    are plain integers keep their own number. Paths are written relative to
    ``relative_to`` (default: ``dataset_dir``), normally the manifest's directory.
    """
    root = Path(dataset_dir)
    base = Path(relative_to) if relative_to is not None else root
    if not root.is_dir():
        raise ManifestError(f"not a directory: {root}")
    subject_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not subject_dirs:
        raise ManifestError(f"no subject directories under {root}")
    numeric = all(p.name.isdigit() for p in subject_dirs)
    rng = np.random.default_rng(seed)
    entries = []
    for idx, sdir in enumerate(subject_dirs):
        files = sorted(f for f in sdir.iterdir() if f.suffix.lower() == ".pgm")
        if not files:
            raise ManifestError(f"subject directory has no PGM files: {sdir}")
        for f in files:
            load_pgm(f)  # reject unreadable files before writing anything
        subject = int(sdir.name) if numeric else idx
        order = rng.permutation(len(files))
        n_train, n_eval, _ = split_counts(len(files), ratios)
        for rank, i in enumerate(order):
            tag = "train" if rank < n_train else "eval" if rank < n_train + n_eval else "test"
            rel = os.path.relpath(files[i].resolve(), base.resolve())
            entries.append(ManifestEntry(Path(rel).as_posix(), subject, tag))
    return DatasetManifest(tuple(entries), root=base)
