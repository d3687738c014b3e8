import math

import numpy as np
import pytest

from contourqa.errors import GenerationError, ValidationError
from contourqa.evaluation import (
    ConfusionCounts,
    DetectionLimitResult,
    DetectionParams,
    DetectionSample,
    auc_rank,
    confusion,
    detection_limit,
    pearson,
    report,
)
from contourqa.features import FeatureVector, StandardizationStats
from contourqa.ocsvm import KernelParams, OcsvmModel


def oracle_auc(scores, labels):
    """Pairwise Mann-Whitney count: ties worth one half."""
    pos = [s for s, y in zip(scores, labels) if y == "low"]
    neg = [s for s, y in zip(scores, labels) if y == "high"]
    if not pos or not neg:
        return None
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestConfusionAndReport:
    def _labels(self, tp, fn, tn, fp):
        preds = ["low"] * tp + ["high"] * fn + ["high"] * tn + ["low"] * fp
        labels = ["low"] * (tp + fn) + ["high"] * (tn + fp)
        return preds, labels

    def test_worked_example(self):
        preds, labels = self._labels(tp=9, fn=1, tn=8, fp=2)
        c = confusion(preds, labels)
        assert (c.tp, c.fn, c.tn, c.fp) == (9, 1, 8, 2)
        r = report(c)
        assert r.sensitivity == pytest.approx(0.9)
        assert r.specificity == pytest.approx(0.8)
        assert r.balanced_accuracy == pytest.approx(0.85)
        assert r.f_score == pytest.approx(18.0 / 21.0)

    def test_perfect_classifier(self):
        preds, labels = self._labels(tp=5, fn=0, tn=5, fp=0)
        r = report(confusion(preds, labels))
        assert r.sensitivity == 1.0
        assert r.specificity == 1.0
        assert r.balanced_accuracy == 1.0
        assert r.f_score == 1.0

    def test_missing_class_gives_none(self):
        preds, labels = self._labels(tp=0, fn=0, tn=5, fp=0)
        r = report(confusion(preds, labels))
        assert r.sensitivity is None
        assert r.balanced_accuracy is None
        assert r.f_score is None  # 0/0
        assert r.specificity == 1.0

    def test_zero_f_score_when_fp_present(self):
        preds, labels = self._labels(tp=0, fn=0, tn=3, fp=2)
        r = report(confusion(preds, labels))
        assert r.f_score == 0.0

    def test_bad_label_rejected(self):
        with pytest.raises(ValidationError):
            confusion(["low"], ["medium"])

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            confusion(["low"], ["low", "high"])

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            confusion([], [])

    def test_counts_validation(self):
        with pytest.raises(ValidationError):
            ConfusionCounts(tp=-1, fn=0, tn=1, fp=0)
        with pytest.raises(ValidationError):
            ConfusionCounts(tp=0, fn=0, tn=0, fp=0)


class TestAuc:
    def test_worked_example(self):
        scores = [0.9, 0.4, 0.6, 0.1]
        labels = ["low", "low", "high", "high"]
        assert auc_rank(scores, labels) == pytest.approx(0.75)

    def test_all_ties_is_half(self):
        assert auc_rank([0.5, 0.5, 0.5, 0.5],
                        ["low", "low", "high", "high"]) == pytest.approx(0.5)

    def test_perfect_separation(self):
        assert auc_rank([3.0, 2.0, 1.0, 0.0],
                        ["low", "low", "high", "high"]) == 1.0

    def test_single_class_is_none(self):
        assert auc_rank([1.0, 2.0], ["low", "low"]) is None
        assert auc_rank([1.0, 2.0], ["high", "high"]) is None

    def test_matches_pairwise_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(2, 40))
            # coarse grid forces plenty of exact ties
            scores = rng.integers(0, 6, size=n).astype(float)
            labels = ["low" if rng.random() < 0.5 else "high" for _ in range(n)]
            want = oracle_auc(scores, labels)
            got = auc_rank(scores, labels)
            if want is None:
                assert got is None
            else:
                assert got == pytest.approx(want, abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=30)
        labels = ["low" if rng.random() < 0.4 else "high" for _ in range(30)]
        base = auc_rank(scores, labels)
        assert auc_rank(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
        assert auc_rank(2.0 * scores + 7.0, labels) == pytest.approx(base, abs=1e-12)

    def test_duplication_invariance(self):
        scores = [0.9, 0.4, 0.6, 0.1]
        labels = ["low", "low", "high", "high"]
        base = auc_rank(scores, labels)
        assert auc_rank(scores * 3, labels * 3) == pytest.approx(base, abs=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            auc_rank([1.0], ["low", "high"])


class TestPearson:
    def test_perfect_positive(self):
        x = [1.0, 2.0, 3.0, 4.0]
        assert pearson(x, [2 * v + 1 for v in x]) == pytest.approx(1.0)

    def test_perfect_negative(self):
        x = [1.0, 2.0, 3.0, 4.0]
        assert pearson(x, [-v for v in x]) == pytest.approx(-1.0)

    def test_worked_example(self):
        assert pearson([1, 2, 3, 4], [2, 1, 4, 3]) == pytest.approx(0.6)

    def test_matches_numpy(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.normal(size=12)
            y = rng.normal(size=12)
            assert pearson(x, y) == pytest.approx(
                float(np.corrcoef(x, y)[0, 1]), abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValidationError):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
        with pytest.raises(ValidationError):
            pearson([1.0], [2.0])
        with pytest.raises(ValidationError):
            pearson([1.0, 2.0], [1.0])


def probe_extractor(crop):
    """Feature = top-left corner of the crop's source bounding box.

    Translating the contour moves the box by the same integer offset, so
    feature distance equals translation distance exactly.
    """
    prov = crop.provenance
    return FeatureVector(
        values=np.array([float(prov.bbox[2]), float(prov.bbox[0])]),
        schema_id="probe",
        case_id=prov.case_id,
        organ=prov.organ,
        slice_index=prov.slice_index,
    )


def probe_model(center_xy, rho):
    """Single-SV model: decision(z) = exp(-||z - center||^2) - rho."""
    return OcsvmModel(
        support_vectors=np.array([center_xy], dtype=float),
        alphas=np.array([1.0]),
        rho=rho,
        nu=0.5,
        kernel=KernelParams(gamma=1.0),
        standardization=StandardizationStats(mean=np.zeros(2), std=np.ones(2)),
        schema_id="probe",
        train_size=2,
    )


def _disk_sample(case="c1", organ="organ-a", idx=0, frame=120, radius=6):
    c = frame // 2
    yy, xx = np.mgrid[0:frame, 0:frame]
    mask = ((xx - c) ** 2 + (yy - c) ** 2 <= radius * radius).astype(np.uint8)
    image = np.zeros((frame, frame), dtype=np.uint8)
    return DetectionSample(case_id=case, organ=organ, slice_index=idx,
                           image=image, mask=mask)


def _probe_center(sample, margin=8):
    rows, cols = np.nonzero(sample.mask)
    return (float(cols.min() - margin), float(rows.min() - margin))


class TestDetectionLimit:
    def test_flags_any_shift_gives_limit_one(self):
        s = _disk_sample()
        model = probe_model(_probe_center(s), rho=0.5)
        params = DetectionParams(d_max=4, repeats=3, seed=0)
        res = detection_limit(model, [s], params, extractor=probe_extractor)
        assert res.limit == 1
        assert len(res.per_distance) == 4
        assert all(rate == 1.0 for _, rate in res.per_distance)
        assert res.organ == "organ-a"

    def test_never_flags_gives_none_with_full_trace(self):
        s = _disk_sample()
        model = probe_model(_probe_center(s), rho=-1.0)
        params = DetectionParams(d_max=5, repeats=2, seed=0)
        res = detection_limit(model, [s], params, extractor=probe_extractor)
        assert res.limit is None
        assert [d for d, _ in res.per_distance] == [1, 2, 3, 4, 5]
        assert all(rate == 0.0 for _, rate in res.per_distance)

    def test_mixed_mode_penalizes_always_flagging(self):
        s = _disk_sample()
        always_flags = probe_model(_probe_center(s), rho=2.0)
        params = DetectionParams(d_max=2, repeats=2, seed=0, mixed=True)
        res = detection_limit(always_flags, [s], params, extractor=probe_extractor)
        # flag rate 1.0 but keep rate 0.0: blended rate stays at 0.5
        assert res.limit is None
        assert all(rate == 0.5 for _, rate in res.per_distance)

    def test_mixed_mode_rewards_keeping_originals(self):
        s = _disk_sample()
        model = probe_model(_probe_center(s), rho=0.5)
        params = DetectionParams(d_max=2, repeats=2, seed=0, mixed=True)
        res = detection_limit(model, [s], params, extractor=probe_extractor)
        assert res.limit == 1
        assert all(rate == 1.0 for _, rate in res.per_distance)

    def test_deterministic(self):
        s = _disk_sample()
        model = probe_model(_probe_center(s), rho=0.5)
        params = DetectionParams(d_max=3, repeats=3, seed=7)
        a = detection_limit(model, [s], params, extractor=probe_extractor)
        b = detection_limit(model, [s], params, extractor=probe_extractor)
        assert a == b

    def test_all_failures_at_a_distance_raise(self):
        # single pixel in a 9x9 frame: distance 10 always leaves the grid
        image = np.zeros((9, 9), dtype=np.uint8)
        mask = np.zeros((9, 9), dtype=np.uint8)
        mask[4, 4] = 1
        s = DetectionSample(case_id="c", organ="o", slice_index=0,
                            image=image, mask=mask)
        model = probe_model((-8.0, -8.0), rho=-1.0)
        with pytest.raises(GenerationError):
            detection_limit(model, [s], DetectionParams(d_max=10, repeats=2, margin=8), extractor=probe_extractor)

    def test_needs_samples(self):
        model = probe_model((0.0, 0.0), rho=0.5)
        with pytest.raises(ValidationError):
            detection_limit(model, [], DetectionParams(d_max=1, repeats=1),
                            extractor=probe_extractor)

    def test_params_validation(self):
        with pytest.raises(ValidationError):
            DetectionParams(d_max=0, repeats=1)
        with pytest.raises(ValidationError):
            DetectionParams(d_max=1, repeats=0)
        with pytest.raises(ValidationError):
            DetectionParams(d_max=1, repeats=1, rate_threshold=0.0)

    def test_sample_validation(self):
        with pytest.raises(ValidationError):
            DetectionSample(case_id="c", organ="o", slice_index=0,
                            image=np.zeros((4, 4)), mask=np.zeros((4, 4)))
        with pytest.raises(ValidationError):
            DetectionSample(case_id="c", organ="o", slice_index=0,
                            image=np.zeros((4, 4)), mask=np.ones((3, 3)))

    def test_result_trace_must_be_contiguous(self):
        with pytest.raises(ValidationError):
            DetectionLimitResult(organ="o", limit=None,
                                 per_distance=((1, 0.0), (3, 0.0)))
