"""Verification error rates: FAR/FRR sweeps, EER, operating thresholds."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np


class UnreachableTargetError(ValueError):
    def __init__(self, message: str, achievable: float):
        super().__init__(message)
        self.achievable = achievable


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """Trial scores; higher means more likely genuine."""

    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "genuine", np.asarray(self.genuine, dtype=np.float64).ravel())
        object.__setattr__(self, "impostor", np.asarray(self.impostor, dtype=np.float64).ravel())


@dataclass(frozen=True, eq=False)
class RocCurve:
    thresholds: np.ndarray  # ascending, -inf first and +inf last
    far: np.ndarray
    frr: np.ndarray
    eer: float
    far_counts: tuple[int, ...]  # impostor scores >= t
    frr_counts: tuple[int, ...]  # genuine scores < t
    n_genuine: int
    n_impostor: int

    def to_csv(self) -> str:
        lines = ["threshold,far,frr"]
        for t, a, r in zip(self.thresholds, self.far, self.frr):
            lines.append(f"{_fmt(t)},{_fmt(a)},{_fmt(r)}")
        lines.append(f"# eer={_fmt(self.eer)}")
        return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(float(x), ".17g")


def error_counts(scores: ScoreSet, threshold: float) -> tuple[int, int]:
    """(impostors accepted, genuines rejected) at a threshold; accept when score >= t."""
    return (int(np.sum(scores.impostor >= threshold)), int(np.sum(scores.genuine < threshold)))


def error_rates(scores: ScoreSet, threshold: float) -> tuple[float, float]:
    fa, fr = error_counts(scores, threshold)
    return fa / scores.impostor.size, fr / scores.genuine.size


def roc(scores: ScoreSet) -> RocCurve:
    """Sweep every distinct score plus -inf/+inf.

    FAR(t) is the fraction of impostor scores >= t, FRR(t) the fraction of
    genuine scores < t. The EER is found where FAR - FRR changes sign and is
    linearly interpolated between the two bracketing sweep points, in exact
    rational arithmetic.
    """
    gen, imp = scores.genuine, scores.impostor
    if gen.size == 0 or imp.size == 0:
        raise ValueError("ROC needs non-empty genuine and impostor score lists")
    if not (np.all(np.isfinite(gen)) and np.all(np.isfinite(imp))):
        raise ValueError("scores must be finite")
    thresholds = np.concatenate([[-np.inf], np.unique(np.concatenate([gen, imp])), [np.inf]])
    imp_sorted, gen_sorted = np.sort(imp), np.sort(gen)
    fa = imp.size - np.searchsorted(imp_sorted, thresholds, side="left")
    fr = np.searchsorted(gen_sorted, thresholds, side="left")
    ng, ni = gen.size, imp.size
    eer = _eer(fa, fr, ni, ng)
    return RocCurve(thresholds=thresholds, far=fa / ni, frr=fr / ng, eer=float(eer),
                    far_counts=tuple(int(v) for v in fa), frr_counts=tuple(int(v) for v in fr),
                    n_genuine=ng, n_impostor=ni)


def _eer(fa, fr, ni: int, ng: int) -> Fraction:
    far = [Fraction(int(a), ni) for a in fa]
    frr = [Fraction(int(r), ng) for r in fr]
    for i in range(len(far)):
        diff = far[i] - frr[i]
        if diff == 0:
            return far[i]
        nxt = far[i + 1] - frr[i + 1]
        if diff > 0 > nxt:
            # point on the segment where FAR == FRR
            return (far[i + 1] * diff - far[i] * nxt) / (diff - nxt)
    raise AssertionError("FAR - FRR never changes sign")  # first point is (1, 0), last (0, 1)


def brute_force_min_hter(scores: ScoreSet) -> float:
    """min over sweep thresholds of max(FAR, FRR); an upper bound on the EER."""
    curve = roc(scores)
    return float(np.min(np.maximum(curve.far, curve.frr)))


def _interval_midpoint(curve: RocCurve, i: int) -> float:
    """Midpoint of (t_{i-1}, t_i], the threshold range that yields sweep point i."""
    t = curve.thresholds
    if i == 0 or not math.isfinite(t[i]):
        return float(t[i])
    if not math.isfinite(t[i - 1]):
        return float(t[i])
    return float(0.5 * (t[i - 1] + t[i]))


def parse_policy(policy: str) -> tuple[str, float | None]:
    """``eer``, ``far:<x>`` or ``frr:<x>`` -> (kind, target)."""
    policy = policy.strip().lower()
    if policy == "eer":
        return "eer", None
    kind, sep, value = policy.partition(":")
    if kind in ("far", "frr", "far_at", "frr_at") and sep:
        try:
            target = float(value)
        except ValueError:
            raise ValueError(f"bad threshold policy {policy!r}") from None
        if not 0.0 <= target <= 1.0:
            raise ValueError(f"policy target must lie in [0, 1], got {target}")
        return kind[:3], target
    raise ValueError(f"bad threshold policy {policy!r}; expected eer, far:<x> or frr:<x>")


def select_threshold(curve: RocCurve, policy: str = "eer") -> float:
    """Pick an operating threshold from a curve.

    Only finite sweep points are candidates. ``eer`` takes the point with the
    smallest max(FAR, FRR) (lowest threshold on ties); ``far:x`` takes the
    lowest threshold with FAR <= x; ``frr:x`` the highest threshold with
    FRR <= x. The returned value is the midpoint of the score interval that
    realises the chosen point, so a perfectly separated curve yields the
    midpoint of the gap between the classes.

    Raises:
      UnreachableTargetError: no finite point meets a far/frr target.
    """
    kind, target = parse_policy(policy)
    idx = np.arange(1, len(curve.thresholds) - 1)
    if kind == "eer":
        worst = np.maximum(np.array(curve.far_counts)[idx] * curve.n_genuine,
                           np.array(curve.frr_counts)[idx] * curve.n_impostor)
        i = int(idx[np.argmin(worst)])
    elif kind == "far":
        ok = idx[curve.far[idx] <= target]
        if ok.size == 0:
            best = float(curve.far[idx].min())
            raise UnreachableTargetError(
                f"FAR target {target:g} unreachable; best achievable FAR is {best:g}", best)
        i = int(ok[0])
    else:
        ok = idx[curve.frr[idx] <= target]
        if ok.size == 0:
            best = float(curve.frr[idx].min())
            raise UnreachableTargetError(
                f"FRR target {target:g} unreachable; best achievable FRR is {best:g}", best)
        i = int(ok[-1])
    return _interval_midpoint(curve, i)


def recognition_rate(genuine_accepts: int, impostor_rejects: int, total_trials: int) -> float:
    """Fraction of correct verification decisions."""
    if total_trials <= 0:
        raise ValueError("recognition rate needs at least one trial")
    correct = genuine_accepts + impostor_rejects
    if not 0 <= correct <= total_trials or genuine_accepts < 0 or impostor_rejects < 0:
        raise ValueError("inconsistent trial counts")
    return correct / total_trials


def summarize(scores: ScoreSet, threshold: float, curve: RocCurve | None = None) -> dict:
    """FAR, FRR, EER and recognition rate at a fixed threshold."""
    curve = curve or roc(scores)
    fa, fr = error_counts(scores, threshold)
    ng, ni = scores.genuine.size, scores.impostor.size
    return {
        "far": fa / ni,
        "frr": fr / ng,
        "eer": curve.eer,
        "recognition_rate": recognition_rate(ng - fr, ni - fa, ng + ni),
        "threshold": float(threshold),
        "genuine_trials": ng,
        "impostor_trials": ni,
    }
