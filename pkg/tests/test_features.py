import math

import numpy as np
import pytest

from contourqa.errors import FormatError, ValidationError
from contourqa.features import (
    SCHEMAS,
    FeatureVector,
    StandardizationStats,
    extract_classical,
    fit_standardization,
    read_feature_file,
    standardize,
    write_feature_file,
)
from contourqa.volume import CROP_SIZE, SliceCrop


def _crop_with(mask: np.ndarray, pixels=None) -> SliceCrop:
    if pixels is None:
        pixels = np.zeros((CROP_SIZE, CROP_SIZE), dtype=np.uint8)
    return SliceCrop(pixels=pixels, mask=mask.astype(np.uint8))


def _disk_mask(radius, center=None):
    c = (CROP_SIZE - 1) / 2.0 if center is None else center
    cy, cx = (c, c) if np.isscalar(c) else c
    yy, xx = np.mgrid[0:CROP_SIZE, 0:CROP_SIZE]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius


def _toy_vec(values, label="unknown", schema="toy"):
    return FeatureVector(values=np.asarray(values, dtype=float), schema_id=schema,
                         case_id="c", organ="o", slice_index=0, label=label)


class TestExtractClassical:
    def test_schema_and_dimension(self):
        fv = extract_classical(_crop_with(_disk_mask(30)))
        assert fv.schema_id == "classical-v1"
        assert fv.dim == SCHEMAS["classical-v1"] == 24
        assert np.all(np.isfinite(fv.values))

    def test_area_of_square(self):
        mask = np.zeros((CROP_SIZE, CROP_SIZE), dtype=bool)
        mask[100:102, 100:102] = True
        fv = extract_classical(_crop_with(mask))
        assert fv.values[0] == 4.0

    def test_area_fraction_is_last(self):
        mask = np.zeros((CROP_SIZE, CROP_SIZE), dtype=bool)
        mask[100:102, 100:102] = True
        fv = extract_classical(_crop_with(mask))
        assert fv.values[23] == pytest.approx(4.0 / (CROP_SIZE * CROP_SIZE))

    def test_disk_circularity_near_one(self):
        fv = extract_classical(_crop_with(_disk_mask(40)))
        assert 0.9 <= fv.values[2] <= 1.1

    def test_centroid_offset_signs(self):
        fv = extract_classical(_crop_with(_disk_mask(20, center=(141.5, 91.5))))
        dx, dy = fv.values[3], fv.values[4]
        assert dx == pytest.approx(-20.0, abs=0.5)
        assert dy == pytest.approx(30.0, abs=0.5)

    def test_hu_moments_rotation_invariant(self):
        mask = np.zeros((CROP_SIZE, CROP_SIZE), dtype=bool)
        mask[90:130, 100:110] = True  # 40x10 bar
        rot = np.zeros_like(mask)
        rot[100:110, 90:130] = True  # same bar rotated 90 degrees
        hu_a = extract_classical(_crop_with(mask)).values[5:12]
        hu_b = extract_classical(_crop_with(rot)).values[5:12]
        assert np.allclose(hu_a, hu_b, atol=1e-6)

    def test_translation_moves_only_centroid_among_shape_block(self):
        mask = _disk_mask(15, center=(111.5, 111.5))
        moved = _disk_mask(15, center=(121.5, 101.5))
        a = extract_classical(_crop_with(mask)).values
        b = extract_classical(_crop_with(moved)).values
        assert a[0] == b[0]  # area
        assert a[1] == pytest.approx(b[1])  # perimeter
        assert np.allclose(a[5:12], b[5:12], atol=1e-9)  # Hu
        assert (a[3], a[4]) != (b[3], b[4])

    def test_intensity_features(self):
        pixels = np.zeros((CROP_SIZE, CROP_SIZE), dtype=np.uint8)
        pixels[:, :] = 10
        mask = _disk_mask(30)
        pixels[mask] = 200
        fv = extract_classical(_crop_with(mask, pixels))
        assert fv.values[12] == 200.0  # mean inside
        assert fv.values[13] == 0.0  # std inside
        assert fv.values[14] == 200.0 and fv.values[16] == 200.0  # percentiles

    def test_determinism(self):
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, size=(CROP_SIZE, CROP_SIZE)).astype(np.uint8)
        crop = _crop_with(_disk_mask(25), pixels)
        a = extract_classical(crop).values
        b = extract_classical(crop).values
        assert np.array_equal(a, b)


class TestStandardization:
    def test_hand_example(self):
        s = fit_standardization([_toy_vec([0.0, 2.0]), _toy_vec([2.0, 4.0])])
        assert np.allclose(s.mean, [1.0, 3.0])
        assert np.allclose(s.std, [math.sqrt(2.0), math.sqrt(2.0)])

    def test_constant_dimension_floored(self):
        s = fit_standardization([_toy_vec([5.0, 0.0]), _toy_vec([5.0, 1.0])])
        assert s.std[0] == 1e-8

    def test_needs_two_vectors(self):
        with pytest.raises(ValidationError):
            fit_standardization([_toy_vec([1.0])])

    def test_mixed_schema_rejected(self):
        with pytest.raises(ValidationError):
            fit_standardization([_toy_vec([1.0]), _toy_vec([2.0], schema="other")])

    def test_standardize_mean_is_zero(self):
        s = fit_standardization([_toy_vec([0.0, 2.0]), _toy_vec([2.0, 4.0])])
        z = standardize(_toy_vec([1.0, 3.0]), s)
        assert np.allclose(z.values, [0.0, 0.0])

    def test_standardized_set_has_unit_std(self):
        rng = np.random.default_rng(4)
        vecs = [_toy_vec(rng.normal(5, 3, size=6)) for _ in range(50)]
        s = fit_standardization(vecs)
        z = np.vstack([standardize(v, s).values for v in vecs])
        assert np.allclose(z.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(z.std(axis=0, ddof=1), 1.0, atol=1e-12)

    def test_invertible(self):
        s = fit_standardization([_toy_vec([0.0, 2.0]), _toy_vec([2.0, 4.0])])
        v = _toy_vec([7.0, -3.0])
        z = standardize(v, s)
        assert np.allclose(z.values * s.std + s.mean, v.values)

    def test_schema_mismatch_rejected(self):
        s = fit_standardization([_toy_vec([0.0]), _toy_vec([2.0])])
        with pytest.raises(ValidationError):
            standardize(_toy_vec([1.0], schema="other"), s)

    def test_stats_validation(self):
        with pytest.raises(ValidationError):
            StandardizationStats(mean=np.zeros(2), std=np.array([1.0, 0.0]))
        with pytest.raises(ValidationError):
            StandardizationStats(mean=np.zeros(2), std=np.ones(3))


class TestFeatureVectorInvariants:
    def test_nonfinite_rejected(self):
        with pytest.raises(ValidationError):
            _toy_vec([1.0, float("nan")])

    def test_known_schema_dimension_enforced(self):
        with pytest.raises(ValidationError):
            FeatureVector(values=np.zeros(23), schema_id="classical-v1",
                          case_id="c", organ="o", slice_index=0)

    def test_label_values(self):
        with pytest.raises(ValidationError):
            _toy_vec([1.0], label="medium")


class TestFeatureFile:
    def _vectors(self):
        return [
            _toy_vec([1.0, 2.5], label="high"),
            _toy_vec([0.1, -3.25], label="low"),
            _toy_vec([1e-17, 123456.789], label="unknown"),
        ]

    def test_round_trip(self, tmp_path):
        p = tmp_path / "f.csv"
        write_feature_file(self._vectors(), p)
        back = read_feature_file(p, strict_schema=False)
        for a, b in zip(self._vectors(), back):
            assert np.array_equal(a.values, b.values)
            assert (a.case_id, a.organ, a.slice_index, a.label) == (
                b.case_id, b.organ, b.slice_index, b.label)

    def test_header_layout(self, tmp_path):
        p = tmp_path / "f.csv"
        write_feature_file(self._vectors(), p)
        lines = p.read_text().splitlines()
        assert lines[0] == "toy,2"
        assert lines[1] == "case_id,organ,slice,label,f_0,f_1"

    def test_unknown_schema_strict(self, tmp_path):
        p = tmp_path / "f.csv"
        write_feature_file(self._vectors(), p)
        with pytest.raises(FormatError):
            read_feature_file(p)  # strict by default

    def test_wrong_row_width(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("classical-v1,24\ncase_id,organ,slice,label,f_0\nc,o,0,high,1.0\n")
        with pytest.raises(FormatError):
            read_feature_file(p)

    def test_nan_rejected(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("toy,2\ncase_id,organ,slice,label,f_0,f_1\nc,o,0,high,1.0,nan\n")
        with pytest.raises(FormatError):
            read_feature_file(p, strict_schema=False)

    def test_registry_dimension_enforced(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("classical-v1,23\ncase_id,organ,slice,label," +
                     ",".join(f"f_{i}" for i in range(23)) + "\n")
        with pytest.raises(FormatError):
            read_feature_file(p)

    def test_bad_label_rejected(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("toy,1\ncase_id,organ,slice,label,f_0\nc,o,0,meh,1.0\n")
        with pytest.raises(FormatError):
            read_feature_file(p, strict_schema=False)

    def test_sidecar_schema_accepted(self, tmp_path):
        rng = np.random.default_rng(1)
        vecs = [
            FeatureVector(values=rng.normal(size=2048), schema_id="resnet152-gap-v1",
                          case_id="c", organ="o", slice_index=i)
            for i in range(2)
        ]
        p = tmp_path / "deep.csv"
        write_feature_file(vecs, p)
        back = read_feature_file(p)
        assert len(back) == 2
        assert back[0].dim == 2048
