"""Synthetic CT-like dataset with elliptical organs and controllable
auto-contour error.

Every quantity is seeded and drawn in a fixed order, so a case regenerates
bit-identically from (seed, case_index). Organ sizes span roughly 1:30 in
area so size-dependent effects (detection limits) are observable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, GenerationError, ValidationError
from .perturb import derive_seed
from .volume import Volume, _round_half_away, save_volume, volume_from_grid


@dataclass(frozen=True)
class OrganSpec:
    name: str
    semi_axis_a: float  # x direction, px
    semi_axis_b: float  # y direction, px
    contrast: float
    jitter_std: float = 1.0

    def __post_init__(self):
        if min(self.semi_axis_a, self.semi_axis_b) < 2.0:
            raise ValidationError("semi-axes must be >= 2 px")
        if self.jitter_std < 0:
            raise ValidationError("jitter_std must be >= 0")


@dataclass(frozen=True)
class AgcError:
    clean_fraction: float = 0.3
    translation_std: float = 1.2
    scale_std: float = 0.03

    def __post_init__(self):
        if not (0.0 <= self.clean_fraction <= 1.0):
            raise ValidationError("clean_fraction must be in [0, 1]")
        if self.translation_std < 0 or self.scale_std < 0:
            raise ValidationError("error stds must be >= 0")


def default_organs() -> tuple[OrganSpec, ...]:
    """Five ellipses spanning about 1:30 in area."""
    return (
        OrganSpec("organ-a", 3.5, 3.0, 120.0, 0.8),
        OrganSpec("organ-b", 6.0, 5.0, 90.0, 1.0),
        OrganSpec("organ-c", 9.0, 7.5, 140.0, 1.2),
        OrganSpec("organ-d", 13.0, 11.0, 70.0, 1.5),
        OrganSpec("organ-e", 20.0, 16.0, 110.0, 1.8),
    )


@dataclass(frozen=True)
class PhantomSpec:
    organs: tuple = ()
    grid: tuple = (192, 192, 3)
    noise_std: float = 10.0
    background: float = 60.0
    cases: int = 1
    agc_error: AgcError = AgcError()
    seed: int = 0

    def __post_init__(self):
        organs = tuple(self.organs) if self.organs else default_organs()
        object.__setattr__(self, "organs", organs)
        nx, ny, nz = self.grid
        if min(nx, ny) < 16 or nz < 1:
            raise ValidationError(f"grid too small: {self.grid}")
        if self.cases < 1:
            raise ValidationError("cases must be >= 1")
        if self.noise_std < 0:
            raise ValidationError("noise_std must be >= 0")
        names = [o.name for o in organs]
        if len(set(names)) != len(names):
            raise ValidationError("organ names must be unique")
        _layout_centers(organs, nx, ny)  # validates fit


def _layout_centers(organs, nx: int, ny: int) -> list[tuple[float, float]]:
    """Place each organ in its own cell of a regular grid.

    Raises when a cell cannot hold its ellipse with jitter headroom, which
    covers both overlap and running off the grid.
    """
    n = len(organs)
    cols = int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / cols))
    centers = []
    for idx, organ in enumerate(organs):
        r, c = divmod(idx, cols)
        cx = (c + 0.5) * nx / cols
        cy = (r + 0.5) * ny / rows
        pad_x = organ.semi_axis_a * 1.1 + 3.0 * organ.jitter_std + 2.0
        pad_y = organ.semi_axis_b * 1.1 + 3.0 * organ.jitter_std + 2.0
        if pad_x > nx / (2.0 * cols) or pad_y > ny / (2.0 * rows):
            raise ValidationError(
                f"organ {organ.name!r} does not fit its layout cell on a "
                f"{nx}x{ny} grid; enlarge the grid or shrink the organ"
            )
        centers.append((cx, cy))
    return centers


def _slice_factors(nz: int) -> np.ndarray:
    # lens-like taper: outer slices slightly smaller than the middle
    if nz == 1:
        return np.ones(1)
    mid = (nz - 1) / 2.0
    return 1.0 - 0.08 * np.abs(np.arange(nz) - mid) / mid


def _rasterize(nx, ny, nz, cx, cy, a, b, factors) -> np.ndarray:
    yy, xx = np.mgrid[0:ny, 0:nx]
    out = np.zeros((nz, ny, nx), dtype=bool)
    for z in range(nz):
        az = a * factors[z]
        bz = b * factors[z]
        out[z] = ((xx - cx) / az) ** 2 + ((yy - cy) / bz) ** 2 <= 1.0
    return out


def generate_case(spec: PhantomSpec, case_index: int):
    """Return (ct Volume, gt masks by organ, agc masks by organ)."""
    if case_index < 0:
        raise ValidationError("case_index must be >= 0")
    nx, ny, nz = spec.grid
    centers = _layout_centers(spec.organs, nx, ny)
    factors = _slice_factors(nz)
    rng = np.random.default_rng(derive_seed(spec.seed, case_index))

    ct = np.full((nz, ny, nx), spec.background, dtype=np.float64)
    gt_masks = {}
    agc_masks = {}
    for organ, (cx0, cy0) in zip(spec.organs, centers):
        jit = rng.normal(0.0, 1.0, size=2) * organ.jitter_std
        cx = cx0 + jit[0]
        cy = cy0 + jit[1]
        # always draw so geometry stays aligned across error settings
        u_clean = rng.uniform()
        z_shift = rng.normal(0.0, 1.0, size=2)
        z_scale = rng.normal(0.0, 1.0)

        gt = _rasterize(nx, ny, nz, cx, cy, organ.semi_axis_a, organ.semi_axis_b, factors)
        if not gt.any():
            raise GenerationError(f"organ {organ.name!r} rasterized empty")
        ct[gt] += organ.contrast

        if u_clean < spec.agc_error.clean_fraction:
            agc = gt.copy()
        else:
            shift = z_shift * spec.agc_error.translation_std
            scale = 1.0 + z_scale * spec.agc_error.scale_std
            scale = max(scale, 0.2)
            agc = _rasterize(
                nx, ny, nz,
                cx + shift[0], cy + shift[1],
                organ.semi_axis_a * scale, organ.semi_axis_b * scale,
                factors,
            )
            if not agc.any():
                raise GenerationError(
                    f"AGC for organ {organ.name!r} left the grid entirely"
                )
        gt_masks[organ.name] = gt
        agc_masks[organ.name] = agc

    if spec.noise_std > 0:
        ct += rng.normal(0.0, spec.noise_std, size=ct.shape)
    ct = np.clip(_round_half_away(ct), -32768, 32767).astype(np.int16)

    spacing = (1.0, 1.0, 1.0)
    ct_vol = volume_from_grid(ct, spacing, "i16")
    gt_vols = {
        k: volume_from_grid(v.astype(np.uint8), spacing, "u8", mask=True)
        for k, v in gt_masks.items()
    }
    agc_vols = {
        k: volume_from_grid(v.astype(np.uint8), spacing, "u8", mask=True)
        for k, v in agc_masks.items()
    }
    return ct_vol, gt_vols, agc_vols


def case_id_for(case_index: int) -> str:
    return f"case-{case_index:03d}"


def write_dataset(spec: PhantomSpec, out_dir) -> Path:
    """Write all cases as QAV1 volumes plus a manifest CSV; returns its path.

    Manifest columns: case_id, organ, gt_path, agc_path, ct_path with paths
    relative to the manifest's directory.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for case_index in range(spec.cases):
        cid = case_id_for(case_index)
        ct, gts, agcs = generate_case(spec, case_index)
        ct_name = f"{cid}_ct.qav"
        save_volume(ct, out / ct_name)
        for organ in (o.name for o in spec.organs):
            gt_name = f"{cid}_{organ}_gt.qav"
            agc_name = f"{cid}_{organ}_agc.qav"
            save_volume(gts[organ], out / gt_name)
            save_volume(agcs[organ], out / agc_name)
            rows.append([cid, organ, gt_name, agc_name, ct_name])
    manifest = out / "manifest.csv"
    with open(manifest, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "organ", "gt_path", "agc_path", "ct_path"])
        w.writerows(rows)
    return manifest


def read_manifest(path) -> list[dict]:
    """Rows as dicts; paths stay relative to the manifest directory."""
    p = Path(path)
    with open(p, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"case_id", "organ", "gt_path", "agc_path"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise FormatError(
                f"{path}: manifest must have columns {sorted(required)}"
            )
        return list(reader)
