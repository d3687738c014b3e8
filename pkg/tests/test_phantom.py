import numpy as np
import pytest

from contourqa.errors import FormatError, ValidationError
from contourqa.metrics import dsc
from contourqa.phantom import (
    AgcError,
    OrganSpec,
    PhantomSpec,
    case_id_for,
    default_organs,
    generate_case,
    read_manifest,
    write_dataset,
)
from contourqa.volume import load_volume


def _connected_2d(mask2d: np.ndarray) -> bool:
    """Single 4-connected component (flood fill from any pixel)."""
    rows, cols = np.nonzero(mask2d)
    if rows.size == 0:
        return False
    seen = np.zeros_like(mask2d, dtype=bool)
    stack = [(int(rows[0]), int(cols[0]))]
    seen[rows[0], cols[0]] = True
    h, w = mask2d.shape
    while stack:
        r, c = stack.pop()
        for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and mask2d[rr, cc] and not seen[rr, cc]:
                seen[rr, cc] = True
                stack.append((rr, cc))
    return bool(np.array_equal(seen, mask2d.astype(bool)))


class TestSpecs:
    def test_default_organs_span_thirtyfold_area(self):
        organs = default_organs()
        areas = [o.semi_axis_a * o.semi_axis_b for o in organs]
        assert max(areas) / min(areas) > 25.0
        assert len({o.name for o in organs}) == 5

    def test_organ_validation(self):
        with pytest.raises(ValidationError):
            OrganSpec("x", 1.0, 5.0, 100.0)
        with pytest.raises(ValidationError):
            OrganSpec("x", 5.0, 5.0, 100.0, jitter_std=-1.0)

    def test_agc_error_validation(self):
        with pytest.raises(ValidationError):
            AgcError(clean_fraction=1.5)
        with pytest.raises(ValidationError):
            AgcError(translation_std=-0.1)

    def test_organ_too_big_for_cell(self):
        big = OrganSpec("huge", 80.0, 80.0, 100.0)
        with pytest.raises(ValidationError, match="fit"):
            PhantomSpec(organs=(big,), grid=(64, 64, 1))

    def test_duplicate_names_rejected(self):
        o = OrganSpec("same", 4.0, 4.0, 100.0)
        with pytest.raises(ValidationError, match="unique"):
            PhantomSpec(organs=(o, o), grid=(192, 192, 1))

    def test_grid_and_case_validation(self):
        with pytest.raises(ValidationError):
            PhantomSpec(grid=(8, 8, 1))
        with pytest.raises(ValidationError):
            PhantomSpec(cases=0)


class TestGenerateCase:
    def test_bit_identical_regeneration(self):
        spec = PhantomSpec(seed=42, cases=1)
        ct1, gt1, agc1 = generate_case(spec, 0)
        ct2, gt2, agc2 = generate_case(spec, 0)
        assert np.array_equal(ct1.voxels, ct2.voxels)
        for k in gt1:
            assert np.array_equal(gt1[k].voxels, gt2[k].voxels)
            assert np.array_equal(agc1[k].voxels, agc2[k].voxels)

    def test_cases_differ(self):
        spec = PhantomSpec(seed=42, cases=2)
        ct0, _, _ = generate_case(spec, 0)
        ct1, _, _ = generate_case(spec, 1)
        assert not np.array_equal(ct0.voxels, ct1.voxels)

    def test_clean_fraction_one_copies_gt(self):
        spec = PhantomSpec(seed=3, agc_error=AgcError(clean_fraction=1.0))
        _, gts, agcs = generate_case(spec, 0)
        for k in gts:
            assert np.array_equal(gts[k].voxels, agcs[k].voxels)

    def test_clean_fraction_zero_perturbs_most_organs(self):
        spec = PhantomSpec(
            seed=3,
            agc_error=AgcError(clean_fraction=0.0, translation_std=2.0, scale_std=0.05),
        )
        _, gts, agcs = generate_case(spec, 0)
        changed = sum(
            0 if np.array_equal(gts[k].voxels, agcs[k].voxels) else 1 for k in gts
        )
        assert changed >= 4

    def test_error_settings_do_not_move_gt(self):
        clean = PhantomSpec(seed=9, agc_error=AgcError(clean_fraction=1.0))
        dirty = PhantomSpec(
            seed=9, agc_error=AgcError(clean_fraction=0.0, translation_std=3.0)
        )
        _, gt_a, _ = generate_case(clean, 0)
        _, gt_b, _ = generate_case(dirty, 0)
        for k in gt_a:
            assert np.array_equal(gt_a[k].voxels, gt_b[k].voxels)

    def test_noiseless_contrast_separation(self):
        spec = PhantomSpec(seed=1, noise_std=0.0, background=60.0)
        ct, gts, _ = generate_case(spec, 0)
        grid = ct.grid
        inside_any = np.zeros(grid.shape, dtype=bool)
        for o in spec.organs:
            m = gts[o.name].grid.astype(bool)
            inside_any |= m
            assert np.all(grid[m] >= 60 + o.contrast - 1)
        assert np.all(grid[~inside_any] == 60)

    def test_organ_masks_connected_and_centered(self):
        spec = PhantomSpec(seed=5)
        _, gts, _ = generate_case(spec, 0)
        nz = spec.grid[2]
        for name, vol in gts.items():
            mid = vol.grid[nz // 2].astype(bool)
            assert mid.any()
            assert _connected_2d(mid)

    def test_slice_taper_shrinks_outer_slices(self):
        spec = PhantomSpec(seed=5, grid=(192, 192, 5))
        _, gts, _ = generate_case(spec, 0)
        g = gts["organ-e"].grid.astype(bool)
        counts = [int(g[z].sum()) for z in range(5)]
        assert counts[2] > counts[0]
        assert counts[2] > counts[4]

    def test_mean_dsc_decreases_with_translation_error(self):
        def mean_dsc(tstd, n=25):
            err = AgcError(clean_fraction=0.0, translation_std=tstd)
            spec = PhantomSpec(seed=11, cases=n, agc_error=err, grid=(192, 192, 1))
            vals = []
            for i in range(n):
                _, gts, agcs = generate_case(spec, i)
                vals.extend(dsc(gts[k], agcs[k]) for k in gts)
            return float(np.mean(vals))

        d_small = mean_dsc(0.5)
        d_big = mean_dsc(3.0)
        assert d_small > d_big
        assert d_small > 0.9

    def test_ct_dtype_and_spacing(self):
        ct, gts, _ = generate_case(PhantomSpec(seed=0), 0)
        assert ct.dtype == "i16"
        assert ct.spacing == (1.0, 1.0, 1.0)
        assert ct.dims == (192, 192, 3)
        for v in gts.values():
            assert v.dtype == "u8"
            assert set(np.unique(v.grid)) <= {0, 1}

    def test_negative_case_index_rejected(self):
        with pytest.raises(ValidationError):
            generate_case(PhantomSpec(), -1)


class TestDataset:
    def test_write_and_read_round_trip(self, tmp_path):
        spec = PhantomSpec(seed=7, cases=2)
        manifest = write_dataset(spec, tmp_path / "data")
        rows = read_manifest(manifest)
        assert len(rows) == 2 * 5
        assert rows[0]["case_id"] == case_id_for(0) == "case-000"
        seen = set()
        for row in rows:
            seen.add((row["case_id"], row["organ"]))
            base = manifest.parent
            gt = load_volume(base / row["gt_path"])
            agc = load_volume(base / row["agc_path"])
            ct = load_volume(base / row["ct_path"])
            assert gt.dims == agc.dims == ct.dims
            assert gt.grid.any()
        assert len(seen) == 10

    def test_files_match_regeneration(self, tmp_path):
        spec = PhantomSpec(seed=13, cases=1)
        manifest = write_dataset(spec, tmp_path / "d")
        _, gts, _ = generate_case(spec, 0)
        row = next(r for r in read_manifest(manifest) if r["organ"] == "organ-c")
        disk = load_volume(manifest.parent / row["gt_path"])
        assert np.array_equal(disk.grid, gts["organ-c"].grid)

    def test_manifest_missing_columns(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("case_id,organ\nc,o\n")
        with pytest.raises(FormatError):
            read_manifest(p)
