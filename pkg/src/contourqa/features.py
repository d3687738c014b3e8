"""Fixed-schema feature vectors from preprocessed slice crops.

The built-in extractor computes a 24-dimensional classical shape/intensity
schema ("classical-v1"). Externally computed features (e.g. a deep backbone
producing "resnet152-gap-v1", D=2048) enter through the same CSV wire
format and flow through standardization and training unchanged.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import FormatError, ValidationError
from .perturb import dilate, erode
from .volume import CROP_SIZE, SliceCrop

SCHEMAS = {
    "classical-v1": 24,
    "resnet152-gap-v1": 2048,
}

LABELS = ("high", "low", "unknown")

_BAND_RADIUS = 2


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema_id: str
    case_id: str
    organ: str
    slice_index: int
    label: str = "unknown"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(vals)):
            raise ValidationError("feature values must all be finite")
        expected = SCHEMAS.get(self.schema_id)
        if expected is not None and vals.size != expected:
            raise ValidationError(
                f"schema {self.schema_id!r} expects D={expected}, got {vals.size}"
            )
        if self.label not in LABELS:
            raise ValidationError(f"label must be one of {LABELS}, got {self.label!r}")
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class StandardizationStats:
    mean: np.ndarray
    std: np.ndarray
    schema_id: str = ""

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if mean.shape != std.shape:
            raise ValidationError("mean and std must have the same dimension")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
            raise ValidationError("standardization stats must be finite")
        if np.any(std < 1e-8):
            raise ValidationError("std components must be >= 1e-8")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return int(self.mean.size)


def _contours(mask_u8: np.ndarray):
    found = cv2.findContours(mask_u8, cv2.RETR_LIST, cv2.CHAIN_APPROX_NONE)
    # cv2 returns (contours, hierarchy) since 4.x
    return found[0]


def _perimeter(contours) -> float:
    total = 0.0
    for c in contours:
        pts = c.reshape(-1, 2)
        if len(pts) < 2:
            continue
        steps = np.diff(np.vstack([pts, pts[:1]]), axis=0)
        for dx, dy in steps:
            if dx == 0 and dy == 0:
                continue
            total += math.sqrt(2.0) if (dx != 0 and dy != 0) else 1.0
    return total


def extract_classical(crop: SliceCrop) -> FeatureVector:
    """24-dimensional "classical-v1" schema, in fixed order.

    area, perimeter, circularity, centroid offset (dx, dy), 7 Hu moments,
    masked intensity mean/std/p10/p50/p90, boundary-band gradient magnitude
    mean/std, radial signature mean/std/min/max, area fraction.
    """
    mask = crop.mask.astype(bool)
    mask_u8 = mask.astype(np.uint8)
    img = crop.pixels.astype(np.float64)

    area = float(mask.sum())
    contours = _contours(mask_u8)
    perimeter = _perimeter(contours)
    circularity = 4.0 * math.pi * area / (perimeter * perimeter) if perimeter > 0 else 0.0

    ys, xs = np.nonzero(mask)
    cx = float(xs.mean())
    cy = float(ys.mean())
    center = (CROP_SIZE - 1) / 2.0
    dx_off = cx - center
    dy_off = cy - center

    hu = cv2.HuMoments(cv2.moments(mask_u8, binaryImage=True)).reshape(-1)

    inside = img[mask]
    int_mean = float(inside.mean())
    int_std = float(inside.std())
    p10, p50, p90 = (float(v) for v in np.percentile(inside, (10, 50, 90)))

    band = dilate(mask, _BAND_RADIUS) & ~erode(mask, _BAND_RADIUS)
    gy, gx = np.gradient(img)
    grad_mag = np.hypot(gy, gx)
    band_vals = grad_mag[band]
    grad_mean = float(band_vals.mean())
    grad_std = float(band_vals.std())

    if len(contours) > 0:
        boundary = np.vstack([c.reshape(-1, 2) for c in contours]).astype(np.float64)
        radii = np.hypot(boundary[:, 0] - cx, boundary[:, 1] - cy)
    else:
        radii = np.zeros(1)
    rad_mean = float(radii.mean())
    rad_std = float(radii.std())
    rad_min = float(radii.min())
    rad_max = float(radii.max())

    frac = area / float(CROP_SIZE * CROP_SIZE)

    values = np.array(
        [area, perimeter, circularity, dx_off, dy_off]
        + [float(h) for h in hu]
        + [int_mean, int_std, p10, p50, p90]
        + [grad_mean, grad_std]
        + [rad_mean, rad_std, rad_min, rad_max]
        + [frac],
        dtype=np.float64,
    )
    prov = crop.provenance
    return FeatureVector(
        values=values,
        schema_id="classical-v1",
        case_id=prov.case_id if prov is not None else "",
        organ=prov.organ if prov is not None else "",
        slice_index=prov.slice_index if prov is not None else 0,
    )


def fit_standardization(vectors: list[FeatureVector]) -> StandardizationStats:
    """Per-dimension mean and sample std, std floored at 1e-8."""
    if len(vectors) < 2:
        raise ValidationError(f"need at least 2 vectors, got {len(vectors)}")
    schema = vectors[0].schema_id
    if any(v.schema_id != schema for v in vectors):
        raise ValidationError("all vectors must share one schema")
    x = np.vstack([v.values for v in vectors])
    mean = x.mean(axis=0)
    std = np.maximum(x.std(axis=0, ddof=1), 1e-8)
    return StandardizationStats(mean=mean, std=std, schema_id=schema)


def standardize(v: FeatureVector, s: StandardizationStats) -> FeatureVector:
    if s.schema_id and v.schema_id != s.schema_id:
        raise ValidationError(
            f"schema mismatch: vector {v.schema_id!r} vs stats {s.schema_id!r}"
        )
    if v.dim != s.dim:
        raise ValidationError(f"dimension mismatch: vector {v.dim} vs stats {s.dim}")
    return FeatureVector(
        values=(v.values - s.mean) / s.std,
        schema_id=v.schema_id,
        case_id=v.case_id,
        organ=v.organ,
        slice_index=v.slice_index,
        label=v.label,
    )


def standardize_raw(x: np.ndarray, s: StandardizationStats) -> np.ndarray:
    """Standardize a bare (n, D) array with the same stats."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != s.dim:
        raise ValidationError(f"dimension mismatch: {arr.shape[-1]} vs stats {s.dim}")
    return (arr - s.mean) / s.std


def write_feature_file(vectors: list[FeatureVector], path) -> None:
    if not vectors:
        raise ValidationError("cannot write an empty feature file")
    schema = vectors[0].schema_id
    dim = vectors[0].dim
    if any(v.schema_id != schema or v.dim != dim for v in vectors):
        raise ValidationError("all vectors must share one schema and dimension")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema, dim])
        w.writerow(["case_id", "organ", "slice", "label"] + [f"f_{i}" for i in range(dim)])
        for v in vectors:
            w.writerow(
                [v.case_id, v.organ, v.slice_index, v.label]
                + [repr(float(x)) for x in v.values]
            )


def read_feature_file(path, strict_schema: bool = True) -> list[FeatureVector]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise FormatError(f"{path}: missing feature file header lines")
    header = rows[0]
    if len(header) != 2:
        raise FormatError(f"{path}: line 1 must be 'schema_id,D'")
    schema = header[0]
    try:
        dim = int(header[1])
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer dimension {header[1]!r}") from exc
    if dim < 1:
        raise FormatError(f"{path}: dimension must be >= 1")
    known = SCHEMAS.get(schema)
    if known is None:
        if strict_schema:
            raise FormatError(f"{path}: unknown schema {schema!r}")
    elif known != dim:
        raise FormatError(
            f"{path}: schema {schema!r} requires D={known}, header says {dim}"
        )
    expected_cols = 4 + dim
    out = []
    for lineno, row in enumerate(rows[2:], start=3):
        if not row:
            continue
        if len(row) != expected_cols:
            raise FormatError(
                f"{path}:{lineno}: expected {expected_cols} columns, got {len(row)}"
            )
        case_id, organ, slice_str, lab = row[:4]
        if lab not in LABELS:
            raise FormatError(f"{path}:{lineno}: unknown label {lab!r}")
        try:
            slice_index = int(slice_str)
            values = np.array([float(x) for x in row[4:]], dtype=np.float64)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from exc
        if not np.all(np.isfinite(values)):
            raise FormatError(f"{path}:{lineno}: non-finite feature value")
        out.append(
            FeatureVector(
                values=values,
                schema_id=schema,
                case_id=case_id,
                organ=organ,
                slice_index=slice_index,
                label=lab,
            )
        )
    return out
