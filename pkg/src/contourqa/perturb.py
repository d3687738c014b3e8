"""Seeded contour perturbations: translation, enlargement, shrinkage.

Enlarge/shrink repeat a disk morphology step until the result crosses the
quality rule to low; translate applies a single displacement in a seeded
random direction. Every returned mask is guaranteed to label low.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import GenerationError, ValidationError
from .metrics import MetricTriple, slice_metrics
from .quality import LOW, QualityLabel, QualityThresholds, label
from .volume import _round_half_away

KINDS = ("translate", "enlarge", "shrink")

DEFAULT_DISK_RADIUS = 2
DEFAULT_MAX_ITERATIONS = 50


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of identifying parts.

    Parts are joined with an unprintable separator so ("ab","c") and
    ("a","bc") derive different seeds.
    """
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class PerturbationSpec:
    kind: str
    distance: float = 0.0
    disk_radius: int = DEFAULT_DISK_RADIUS
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.distance < 0:
            raise ValidationError("distance must be >= 0")
        if self.disk_radius < 1:
            raise ValidationError("disk_radius must be >= 1")
        if self.max_iterations < 1:
            raise ValidationError("max_iterations must be >= 1")


def _require_mask_2d(mask, name: str) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D array, got shape {m.shape}")
    if m.dtype != bool:
        vals = np.unique(m)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValidationError(f"{name} must be binary")
        m = m.astype(bool)
    return m


def disk_element(radius: int) -> np.ndarray:
    """Discrete disk {(dx,dy): dx^2+dy^2 <= r^2} as a (2r+1)^2 bool array."""
    if radius < 1:
        raise ValidationError("disk radius must be >= 1")
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (xx * xx + yy * yy) <= r * r


def translate_mask(mask, distance: float, angle: float) -> np.ndarray:
    """Shift a mask by an integer displacement derived from (distance, angle).

    Angle 0 points along +x (columns), pi/2 along +y (rows). Pixels shifted
    beyond the grid are discarded; an entirely off-grid result is an error.
    """
    m = _require_mask_2d(mask, "mask")
    if not m.any():
        raise ValidationError("mask must be nonempty")
    if distance < 0:
        raise ValidationError("distance must be >= 0")
    dx = int(_round_half_away(distance * math.cos(angle)))
    dy = int(_round_half_away(distance * math.sin(angle)))
    out = np.zeros_like(m)
    rows, cols = m.shape
    src_r = slice(max(0, -dy), min(rows, rows - dy))
    src_c = slice(max(0, -dx), min(cols, cols - dx))
    dst_r = slice(max(0, dy), min(rows, rows + dy))
    dst_c = slice(max(0, dx), min(cols, cols + dx))
    if src_r.start < src_r.stop and src_c.start < src_c.stop:
        out[dst_r, dst_c] = m[src_r, src_c]
    if not out.any():
        raise GenerationError(
            f"translation by ({dx}, {dy}) moved the entire mask off-grid"
        )
    return out


def dilate(mask, disk_radius: int = DEFAULT_DISK_RADIUS) -> np.ndarray:
    m = _require_mask_2d(mask, "mask")
    return ndimage.binary_dilation(m, structure=disk_element(disk_radius))


def erode(mask, disk_radius: int = DEFAULT_DISK_RADIUS) -> np.ndarray:
    # border_value=0: the disk must fit inside the mask, off-grid is background
    m = _require_mask_2d(mask, "mask")
    return ndimage.binary_erosion(m, structure=disk_element(disk_radius), border_value=0)


def generate_error(
    gt,
    agc,
    spec: PerturbationSpec,
    thresholds: QualityThresholds,
) -> tuple[np.ndarray, int, MetricTriple]:
    """Perturb a high-quality contour until it labels low.

    Returns the first low-quality mask, the number of operations applied,
    and its metrics against gt. Raises GenerationError when the kind cannot
    produce a low-quality contour (iteration cap, mask emptied or filled,
    translation landed still-high or fully off-grid).
    """
    gt_m = _require_mask_2d(gt, "gt")
    agc_m = _require_mask_2d(agc, "agc")
    if gt_m.shape != agc_m.shape:
        raise ValidationError(f"shape mismatch: gt {gt_m.shape} vs agc {agc_m.shape}")
    start = _label_pair(gt_m, agc_m, thresholds)
    if start.value == LOW:
        raise ValidationError("starting pair must label high quality")

    if spec.kind == "translate":
        rng = np.random.default_rng(spec.seed)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        out = translate_mask(agc_m, spec.distance, angle)
        triple = slice_metrics(gt_m, out)
        if label(triple, thresholds).value != LOW:
            raise GenerationError(
                f"translation by {spec.distance} px did not cross to low quality"
            )
        return out, 1, triple

    op = dilate if spec.kind == "enlarge" else erode
    cur = agc_m
    for iteration in range(1, spec.max_iterations + 1):
        cur = op(cur, spec.disk_radius)
        if not cur.any():
            raise GenerationError(
                f"mask emptied after {iteration} erosion(s) before reaching low quality"
            )
        triple = slice_metrics(gt_m, cur)
        if label(triple, thresholds).value == LOW:
            return cur, iteration, triple
        if cur.all():
            raise GenerationError(
                f"mask filled the grid after {iteration} dilation(s) "
                "before reaching low quality"
            )
    raise GenerationError(
        f"{spec.kind} did not reach low quality within {spec.max_iterations} iterations"
    )


def _label_pair(gt_m, agc_m, thresholds) -> QualityLabel:
    return label(slice_metrics(gt_m, agc_m), thresholds)
