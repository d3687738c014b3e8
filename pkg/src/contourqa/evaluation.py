"""Confusion metrics, rank AUC, Pearson correlation, and the
translation detection-limit experiment.

Positive class is low-quality everywhere: sensitivity reads as
error-catching power. Undefined ratios (zero denominators) are returned as
None, never NaN, so reports can leave cells empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import GenerationError, ValidationError
from .features import FeatureVector, extract_classical
from .ocsvm import HIGH, LOW, OcsvmModel, decision_raw
from .perturb import derive_seed, translate_mask
from .volume import DEFAULT_MARGIN, preprocess_slice

RATE_THRESHOLD = 0.90


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fn: int
    tn: int
    fp: int

    def __post_init__(self):
        if min(self.tp, self.fn, self.tn, self.fp) < 0:
            raise ValidationError("counts must be non-negative")
        if self.tp + self.fn + self.tn + self.fp < 1:
            raise ValidationError("at least one counted sample required")


@dataclass(frozen=True)
class EvalReport:
    counts: ConfusionCounts
    balanced_accuracy: Optional[float]
    f_score: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]
    auc: Optional[float]

    def __post_init__(self):
        for name in ("balanced_accuracy", "f_score", "sensitivity", "specificity", "auc"):
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 1.0):
                raise ValidationError(f"{name} must be in [0,1] or None, got {v}")


def _check_label_values(values, what: str):
    for v in values:
        if v not in (HIGH, LOW):
            raise ValidationError(f"{what} must be 'high' or 'low', got {v!r}")


def confusion(predictions: list, labels: list) -> ConfusionCounts:
    if len(predictions) != len(labels):
        raise ValidationError(
            f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels"
        )
    if not predictions:
        raise ValidationError("cannot build a confusion matrix from zero samples")
    _check_label_values(predictions, "predictions")
    _check_label_values(labels, "labels")
    tp = fn = tn = fp = 0
    for p, y in zip(predictions, labels):
        if y == LOW:
            if p == LOW:
                tp += 1
            else:
                fn += 1
        else:
            if p == HIGH:
                tn += 1
            else:
                fp += 1
    return ConfusionCounts(tp=tp, fn=fn, tn=tn, fp=fp)


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den > 0 else None


def auc_rank(scores, labels) -> Optional[float]:
    """Mann-Whitney AUC with tied scores counted one half.

    Scores must be oriented so larger means more likely low-quality.
    Returns None unless both classes are present.
    """
    scores = np.asarray(list(scores), dtype=np.float64)
    labels = list(labels)
    if scores.size != len(labels):
        raise ValidationError("scores and labels must have equal length")
    _check_label_values(labels, "labels")
    pos = np.array([y == LOW for y in labels], dtype=bool)
    n_pos = int(pos.sum())
    n_neg = int(len(labels) - n_pos)
    if n_pos == 0 or n_neg == 0:
        return None
    # average ranks, ties shared
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(scores.size, dtype=np.float64)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    r_pos = float(ranks[pos].sum())
    return (r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def report(c: ConfusionCounts, scores=None, labels=None) -> EvalReport:
    """Fill the five-figure report from counts plus optional scores for AUC."""
    sens = _ratio(c.tp, c.tp + c.fn)
    spec = _ratio(c.tn, c.tn + c.fp)
    ba = 0.5 * (sens + spec) if sens is not None and spec is not None else None
    f = _ratio(2 * c.tp, 2 * c.tp + c.fn + c.fp)
    auc = auc_rank(scores, labels) if scores is not None and labels is not None else None
    return EvalReport(
        counts=c,
        balanced_accuracy=ba,
        f_score=f,
        sensitivity=sens,
        specificity=spec,
        auc=auc,
    )


def pearson(xs, ys) -> float:
    x = np.asarray(list(xs), dtype=np.float64)
    y = np.asarray(list(ys), dtype=np.float64)
    if x.size != y.size:
        raise ValidationError("inputs must have equal length")
    if x.size < 2:
        raise ValidationError("need at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise ValidationError("inputs must be nonconstant")
    return float(dx @ dy) / (sx * sy)


@dataclass(frozen=True)
class DetectionSample:
    """A high-quality contour in its original slice frame.

    The full-frame image and mask are required because translation happens
    in original pixels; the crop is recomputed around the moved contour.
    """

    case_id: str
    organ: str
    slice_index: int
    image: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        img = np.asarray(self.image)
        m = np.asarray(self.mask)
        if img.ndim != 2 or m.shape != img.shape:
            raise ValidationError("image and mask must be matching 2-D arrays")
        if not m.any():
            raise ValidationError("mask must be nonempty")


@dataclass(frozen=True)
class DetectionParams:
    d_max: int
    repeats: int
    rate_threshold: float = RATE_THRESHOLD
    seed: int = 0
    margin: int = DEFAULT_MARGIN
    mixed: bool = False  # include unperturbed originals as negatives

    def __post_init__(self):
        if self.d_max < 1:
            raise ValidationError("d_max must be >= 1")
        if self.repeats < 1:
            raise ValidationError("repeats must be >= 1")
        if not (0.0 < self.rate_threshold <= 1.0):
            raise ValidationError("rate_threshold must be in (0, 1]")


@dataclass(frozen=True)
class DetectionLimitResult:
    organ: str
    limit: Optional[int]
    per_distance: tuple

    def __post_init__(self):
        dists = [d for d, _ in self.per_distance]
        if dists != list(range(1, len(dists) + 1)):
            raise ValidationError("per_distance must cover d = 1..d_max in order")


def _score_samples(model: OcsvmModel, vectors: list[FeatureVector]) -> np.ndarray:
    x = np.vstack([v.values for v in vectors])
    return decision_raw(model, x)


def detection_limit(
    model: OcsvmModel,
    samples: list[DetectionSample],
    params: DetectionParams,
    organ: str = "",
    extractor: Callable[..., FeatureVector] = extract_classical,
) -> DetectionLimitResult:
    """Smallest translation distance the model reliably flags.

    For each d = 1..d_max, every sample is translated `repeats` times in
    seeded random directions, re-cropped, re-featurized, and scored; the
    detection rate is the flagged fraction. The limit is the smallest d
    whose rate reaches the threshold, scanning all d without assuming
    monotonicity. Mixed mode averages in the keep rate on the originals.
    """
    if not samples:
        raise ValidationError("detection_limit needs at least one sample")
    organ = organ or samples[0].organ

    keep_rate = None
    if params.mixed:
        origs = [
            extractor(
                preprocess_slice(
                    s.image, s.mask, params.margin, s.case_id, s.organ, s.slice_index
                )
            )
            for s in samples
        ]
        keep_rate = float(np.mean(_score_samples(model, origs) >= 0.0))

    per_distance = []
    limit = None
    for d in range(1, params.d_max + 1):
        vectors = []
        failures = 0
        for s in samples:
            for k in range(params.repeats):
                seed_k = derive_seed(
                    params.seed, s.case_id, s.organ, s.slice_index, d, k
                )
                angle = np.random.default_rng(seed_k).uniform(0.0, 2.0 * math.pi)
                try:
                    moved = translate_mask(s.mask, float(d), angle)
                    crop = preprocess_slice(
                        s.image, moved, params.margin, s.case_id, s.organ, s.slice_index
                    )
                except GenerationError:
                    failures += 1
                    continue
                vectors.append(extractor(crop))
        if not vectors:
            raise GenerationError(
                f"all {failures} perturbations failed to generate at distance {d}"
            )
        flag_rate = float(np.mean(_score_samples(model, vectors) < 0.0))
        rate = 0.5 * (flag_rate + keep_rate) if params.mixed else flag_rate
        per_distance.append((d, rate))
        if limit is None and rate >= params.rate_threshold:
            limit = d
    return DetectionLimitResult(organ=organ, limit=limit, per_distance=tuple(per_distance))
