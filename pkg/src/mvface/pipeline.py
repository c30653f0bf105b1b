"""End-to-end fit / verify / evaluate and model-bundle persistence.

Data flow: image -> Gabor face -> eigenface coordinates -> canonical
coordinates (computed inside the eigenface subspace) -> min-max normalization
and weighted-mean fusion -> per-subject templates -> binary genuine/impostor
classifier on |probe features - claimed subject template|.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import serialize
from .classify import KernelSpec, KnnModel, SvmModel, knn_score, median_heuristic, svm_scores, svm_train
from .dataset_io import DatasetManifest, GrayImage, load_pgm, resize_bilinear
from .evaluation import RocCurve, ScoreSet, roc, select_threshold, summarize
from .fusion import FusionStats, fit_fusion, fuse_raw, minmax_normalize
from .gabor import FilterBank, build_bank, extract_gabor_face, sigma_inverse_frequency, support_three_sigma
from .subspace import CcModel, PcaModel, cc_fit, cc_project, pca_fit, pca_project

log = logging.getLogger(__name__)

BUNDLE_FILES = ("config", "pca", "cc", "fusion", "templates", "classifier")


class PipelineError(RuntimeError):
    """A component failure annotated with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


class BundleError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    image_size: int = 200
    n_freq: int = 5
    n_orient: int = 8
    sigma_scale: float = 1.0
    support_sigmas: float = 3.0
    support_cap: int | None = None
    carrier: str = "radians"
    stride: int = 4
    conv_method: str = "auto"
    pca_components: float | int = 0.95
    cc_components: int | None = None
    cc_ridge: float | None = None
    features: str = "fused"
    classifier: str = "svm"
    kernel: str = "rbf"
    svm_c: float = 10.0
    rbf_sigma: float | None = None
    svm_tol: float = 1e-3
    knn_k: int = 5
    impostor_ratio: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 1 or self.stride < 1:
            raise ValueError("image_size and stride must be >= 1")
        if self.features not in ("fused", "pca", "cc"):
            raise ValueError(f"features must be fused, pca or cc, got {self.features!r}")
        if self.classifier not in ("svm", "knn"):
            raise ValueError(f"classifier must be svm or knn, got {self.classifier!r}")
        if self.kernel not in ("rbf", "linear"):
            raise ValueError(f"kernel must be rbf or linear, got {self.kernel!r}")
        if self.support_cap is not None and self.support_cap < 1:
            raise ValueError("support_cap must be >= 1")
        if self.impostor_ratio < 1 or self.knn_k < 1:
            raise ValueError("impostor_ratio and knn_k must be >= 1")

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                text = "none"
            elif isinstance(v, float):
                text = serialize.fmt_float(v)
            else:
                text = str(v)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        known = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            if key not in known:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _coerce(key, value, lineno)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


_INT_KEYS = {"image_size", "n_freq", "n_orient", "stride", "knn_k", "impostor_ratio", "seed",
             "cc_components", "support_cap"}
_FLOAT_KEYS = {"sigma_scale", "support_sigmas", "svm_c", "rbf_sigma", "svm_tol", "cc_ridge"}


def _coerce(key: str, value: str, lineno: int):
    if value.lower() == "none":
        return None
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key == "pca_components":
            return float(value) if any(c in value for c in ".eE") else int(value)
    except ValueError:
        raise ValueError(f"config line {lineno}: bad value {value!r} for {key}") from None
    return value


# ---------------------------------------------------------------------------
# Feature extraction


@functools.lru_cache(maxsize=8)
def make_bank(cfg: PipelineConfig) -> FilterBank:
    """Bank for ``cfg``; kernel support is capped at ``support_cap`` or half the image side."""
    side = cfg.image_size if cfg.support_cap is None else 2 * cfg.support_cap
    return build_bank(
        sigma_rule=lambda f: sigma_inverse_frequency(f, cfg.sigma_scale),
        support_rule=lambda sx, sy, side: support_three_sigma(
            sx * cfg.support_sigmas / 3.0, sy * cfg.support_sigmas / 3.0, side),
        image_side=side, n_freq=cfg.n_freq, n_orient=cfg.n_orient, carrier=cfg.carrier)


def prepare_image(img: GrayImage, cfg: PipelineConfig) -> GrayImage:
    return resize_bilinear(img, cfg.image_size, cfg.image_size)


def gabor_faces(images: Sequence[GrayImage], cfg: PipelineConfig, bank: FilterBank | None = None) -> np.ndarray:
    bank = bank or make_bank(cfg)
    return np.stack([extract_gabor_face(prepare_image(im, cfg), bank, cfg.stride, cfg.conv_method)
                     for im in images])


# ---------------------------------------------------------------------------
# Bundle


@dataclass(frozen=True, eq=False)
class ModelBundle:
    config: PipelineConfig
    pca: PcaModel
    cc: CcModel
    fusion: FusionStats
    subjects: np.ndarray  # (S,) enrolled subject ids, ascending
    templates: np.ndarray  # (S, feature dim)
    classifier: SvmModel | KnnModel
    timings: dict = field(default_factory=dict, compare=False)

    def texts(self) -> dict[str, str]:
        return dict(self._texts)

    @functools.cached_property
    def _texts(self) -> dict[str, str]:
        tmpl = (serialize.dump_matrix("subjects", self.subjects.astype(np.float64))
                + serialize.dump_matrix("templates", self.templates))
        return {"config": self.config.to_text(), "pca": self.pca.dumps(), "cc": self.cc.dumps(),
                "fusion": self.fusion.dumps(), "templates": tmpl, "classifier": self.classifier.dumps()}

    def checksum(self) -> str:
        return self._digest

    @functools.cached_property
    def _digest(self) -> str:
        # hashing a large eigenface basis is slow in pure Python, so do it once
        return f"{_checksum(self._texts):016x}"

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in BUNDLE_FILES:
            (directory / name).write_text(self._texts[name], encoding="utf-8")
        (directory / "checksum").write_text(self.checksum() + "\n", encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory) -> "ModelBundle":
        directory = Path(directory)
        if not directory.is_dir():
            raise BundleError(f"bundle directory not found: {directory}")
        texts = {}
        for name in BUNDLE_FILES + ("checksum",):
            p = directory / name
            if not p.is_file():
                raise BundleError(f"bundle is missing {name!r}")
            texts[name] = p.read_text(encoding="utf-8")
        expected = texts.pop("checksum").strip()
        actual = f"{_checksum(texts):016x}"
        if expected != actual:
            raise BundleError(f"bundle checksum mismatch: file says {expected}, content hashes to {actual}")
        try:
            mats, _ = serialize.parse(texts["templates"])
            clf_kind = serialize.parse(texts["classifier"])[1].get("model")
            classifier = (SvmModel if clf_kind == "svm" else KnnModel).loads(texts["classifier"])
            return cls(config=PipelineConfig.from_text(texts["config"]),
                       pca=PcaModel.loads(texts["pca"]), cc=CcModel.loads(texts["cc"]),
                       fusion=FusionStats.loads(texts["fusion"]),
                       subjects=serialize.require(mats, "subjects").ravel().astype(np.int64),
                       templates=serialize.require(mats, "templates"),
                       classifier=classifier)
        except (ValueError, KeyError) as exc:
            raise BundleError(f"corrupt bundle: {exc}") from exc


FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def _checksum(texts: dict[str, str]) -> int:
    h = FNV_OFFSET
    for name in BUNDLE_FILES:
        h = fnv1a64(f"{name}\n".encode() + texts[name].encode("utf-8"), h)
    return h


# ---------------------------------------------------------------------------
# Features and pairs


def subspace_features(bundle_parts, G: np.ndarray, features: str) -> np.ndarray:
    """Classifier-facing face features from Gabor faces (one row per face)."""
    pca, cc, fusion = bundle_parts
    P = pca_project(pca, G)
    Cc = cc_project(cc, P)
    if features == "pca":
        return minmax_normalize(P, fusion.pca_bounds)
    if features == "cc":
        return minmax_normalize(Cc, fusion.cc_bounds)
    return fuse_raw(fusion, P, Cc)


def pair_features(probe_feats: np.ndarray, templates: np.ndarray) -> np.ndarray:
    """|probe - template| element-wise; broadcasts (n, 1, q) against (1, S, q)."""
    return np.abs(probe_feats - templates)


def _training_pairs(feats, subjects, uniq, templates, ratio, rng):
    counts = np.array([np.sum(subjects == s) for s in uniq])
    sums = templates * counts[:, None]
    gen, imp = [], []
    for i, (f, s) in enumerate(zip(feats, subjects)):
        si = int(np.searchsorted(uniq, s))
        own = (sums[si] - f) / (counts[si] - 1) if counts[si] > 1 else templates[si]
        gen.append(np.abs(f - own))
        for sj in range(len(uniq)):
            if sj != si:
                imp.append(np.abs(f - templates[sj]))
    gen, imp = np.array(gen), np.array(imp)
    limit = ratio * len(gen)
    if len(imp) > limit:
        imp = imp[np.sort(rng.choice(len(imp), size=limit, replace=False))]
    X = np.vstack([gen, imp])
    y = np.concatenate([np.ones(len(gen), dtype=np.int64), -np.ones(len(imp), dtype=np.int64)])
    return X, y


# ---------------------------------------------------------------------------
# Operations


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + (time.perf_counter() - t0) * 1000.0


def fit_images(images: Sequence[GrayImage], subjects: Sequence[int], cfg: PipelineConfig) -> ModelBundle:
    """Fit every stage on labeled training images."""
    subjects = np.asarray(subjects, dtype=np.int64)
    if len(images) != len(subjects):
        raise ValueError("one subject id per image is required")
    uniq = np.unique(subjects)
    timings: dict[str, float] = {}
    with _stage("gabor", timings):
        G = gabor_faces(images, cfg)
    with _stage("pca_fit", timings):
        pca = pca_fit(G, cfg.pca_components)
        P = pca_project(pca, G)
    with _stage("cc_fit", timings):
        cc = cc_fit(P, subjects, cfg.cc_components, cfg.cc_ridge)
        Cc = cc_project(cc, P)
    with _stage("fusion_fit", timings):
        fusion = fit_fusion(P, Cc)
        feats = subspace_features((pca, cc, fusion), G, cfg.features)
        templates = np.stack([feats[subjects == s].mean(axis=0) for s in uniq])
    with _stage("svm_train", timings):
        rng = np.random.default_rng(cfg.seed)
        X, y = _training_pairs(feats, subjects, uniq, templates, cfg.impostor_ratio, rng)
        if cfg.classifier == "knn":
            clf = KnnModel(X, y, min(cfg.knn_k, len(y)))
        else:
            if cfg.kernel == "linear":
                kernel = KernelSpec("linear")
            else:
                kernel = KernelSpec("rbf", cfg.rbf_sigma or median_heuristic(X))
            clf = svm_train(X, y, kernel, C=cfg.svm_c, tol=cfg.svm_tol)
    log.info("fit: %d images, %d subjects, m'=%d, k=%d, Q=%d", len(images), len(uniq),
             pca.n_components, cc.n_directions, fusion.q)
    return ModelBundle(config=cfg, pca=pca, cc=cc, fusion=fusion, subjects=uniq,
                       templates=templates, classifier=clf, timings=timings)


def load_split(manifest: DatasetManifest, split: str) -> tuple[list[GrayImage], np.ndarray]:
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"split {split!r} is empty")
    return [load_pgm(manifest.resolve(e)) for e in entries], np.array([e.subject for e in entries])


def fit(manifest: DatasetManifest, cfg: PipelineConfig) -> ModelBundle:
    if len(manifest.subjects("train")) < 2:
        raise PipelineError("cc_fit", ValueError("training split needs at least 2 subjects"))
    images, subjects = load_split(manifest, "train")
    return fit_images(images, subjects, cfg)


def probe_features(bundle: ModelBundle, images: Sequence[GrayImage]) -> np.ndarray:
    G = gabor_faces(images, bundle.config)
    return subspace_features((bundle.pca, bundle.cc, bundle.fusion), G, bundle.config.features)


def score_pairs(bundle: ModelBundle, pairs: np.ndarray) -> np.ndarray:
    if isinstance(bundle.classifier, KnnModel):
        return np.array([knn_score(bundle.classifier, x) for x in pairs])
    return svm_scores(bundle.classifier, pairs)


def score_matrix(bundle: ModelBundle, images: Sequence[GrayImage]) -> np.ndarray:
    """Scores of every image against every enrolled subject, shape (n_images, n_subjects)."""
    feats = probe_features(bundle, images)
    pairs = pair_features(feats[:, None, :], bundle.templates[None, :, :])
    n, s, q = pairs.shape
    return score_pairs(bundle, pairs.reshape(n * s, q)).reshape(n, s)


def verify(bundle: ModelBundle, probe: GrayImage, claimed_subject: int, threshold: float) -> tuple[float, bool]:
    """Score a probe against a claimed identity; accept when score >= threshold."""
    hits = np.flatnonzero(bundle.subjects == int(claimed_subject))
    if hits.size == 0:
        raise KeyError(f"subject {claimed_subject} is not enrolled")
    feats = probe_features(bundle, [probe])
    pair = pair_features(feats[0], bundle.templates[hits[0]])
    score = float(score_pairs(bundle, pair[None, :])[0])
    return score, score >= threshold


@dataclass(frozen=True, eq=False)
class Evaluation:
    scores: ScoreSet
    curve: RocCurve
    summary: dict


def trial_scores(bundle: ModelBundle, images: Sequence[GrayImage], subjects) -> ScoreSet:
    """Every image against its own subject (genuine) and every other subject (impostor)."""
    subjects = np.asarray(subjects)
    unknown = set(subjects.tolist()) - set(bundle.subjects.tolist())
    if unknown:
        raise KeyError(f"subjects not enrolled in the bundle: {sorted(unknown)}")
    S = score_matrix(bundle, images)
    genuine_mask = subjects[:, None] == bundle.subjects[None, :]
    return ScoreSet(genuine=S[genuine_mask], impostor=S[~genuine_mask])


def evaluate_images(bundle: ModelBundle, images, subjects, threshold: float | None = None,
                    policy: str = "eer") -> Evaluation:
    if len(images) == 0:
        raise ValueError("cannot evaluate an empty split")
    scores = trial_scores(bundle, images, subjects)
    curve = roc(scores)
    if threshold is None:
        threshold = select_threshold(curve, policy)
    return Evaluation(scores, curve, summarize(scores, threshold, curve))


def evaluate(bundle: ModelBundle, manifest: DatasetManifest, split: str = "test",
             threshold: float | None = None, policy: str = "eer") -> Evaluation:
    """Score a split; without a threshold, one is chosen from this split's own curve."""
    images, subjects = load_split(manifest, split)
    return evaluate_images(bundle, images, subjects, threshold, policy)


def calibrate_and_test(bundle: ModelBundle, manifest: DatasetManifest, policy: str = "eer") -> Evaluation:
    """Choose the threshold on the eval split, report error rates on the test split."""
    calib = evaluate(bundle, manifest, "eval", policy=policy)
    threshold = select_threshold(calib.curve, policy)
    return evaluate(bundle, manifest, "test", threshold=threshold)
