"""Per-organ metric statistics and the high/low quality rule.

A contour is high quality when its DSC is not too far below the training
mean and its HD95/MSD not too far above. The strict variant (DSC above
mean+sigma, distances below mean-sigma) is kept behind
direction_mode="strict"; it marks the bulk of ordinary contours low and
suits screening for exceptional agreement, not routine QA.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .metrics import MetricTriple

HIGH = "high"
LOW = "low"

MODE_PREVALENCE = "prevalence-consistent"
MODE_STRICT = "strict"
_MODES = (MODE_PREVALENCE, MODE_STRICT)

_CHECKS = ("dsc", "hd95", "msd")


@dataclass(frozen=True)
class QualityThresholds:
    """Per-organ means and standard deviations of the three metrics."""

    organ: str
    mean_dsc: float
    sigma_dsc: float
    mean_hd95: float
    sigma_hd95: float
    mean_msd: float
    sigma_msd: float
    direction_mode: str = MODE_PREVALENCE

    def __post_init__(self):
        if self.direction_mode not in _MODES:
            raise ValidationError(
                f"direction_mode must be one of {_MODES}, got {self.direction_mode!r}"
            )
        for name in ("sigma_dsc", "sigma_hd95", "sigma_msd"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")


@dataclass(frozen=True)
class QualityLabel:
    """high/low verdict plus which checks a low-quality contour violated."""

    value: str
    failed_checks: tuple[str, ...] = ()

    def __post_init__(self):
        if self.value not in (HIGH, LOW):
            raise ValidationError(f"label must be {HIGH!r} or {LOW!r}")
        if any(c not in _CHECKS for c in self.failed_checks):
            raise ValidationError(f"failed_checks must be among {_CHECKS}")
        if (self.value == HIGH) != (len(self.failed_checks) == 0):
            raise ValidationError("label is high iff failed_checks is empty")

    @property
    def is_high(self) -> bool:
        return self.value == HIGH


def fit_thresholds(
    triples: list[MetricTriple],
    organ: str,
    direction_mode: str = MODE_PREVALENCE,
) -> QualityThresholds:
    """Arithmetic means and sample (n-1) standard deviations per metric."""
    if len(triples) < 2:
        raise ValidationError(
            f"need at least 2 samples to fit thresholds, got {len(triples)}"
        )
    dscs = np.array([t.dsc for t in triples], dtype=np.float64)
    hd95s = np.array([t.hd95 for t in triples], dtype=np.float64)
    msds = np.array([t.msd for t in triples], dtype=np.float64)
    return QualityThresholds(
        organ=organ,
        mean_dsc=float(dscs.mean()),
        sigma_dsc=float(dscs.std(ddof=1)),
        mean_hd95=float(hd95s.mean()),
        sigma_hd95=float(hd95s.std(ddof=1)),
        mean_msd=float(msds.mean()),
        sigma_msd=float(msds.std(ddof=1)),
        direction_mode=direction_mode,
    )


def label(m: MetricTriple, t: QualityThresholds) -> QualityLabel:
    """Apply the three-way quality rule; all checks must pass for high.

    Prevalence-consistent mode uses inclusive one-sigma bands (an
    exactly-average contour is high); strict mode uses the strict
    opposite-direction inequalities.
    """
    failed = []
    if t.direction_mode == MODE_PREVALENCE:
        if not m.dsc >= t.mean_dsc - t.sigma_dsc:
            failed.append("dsc")
        if not m.hd95 <= t.mean_hd95 + t.sigma_hd95:
            failed.append("hd95")
        if not m.msd <= t.mean_msd + t.sigma_msd:
            failed.append("msd")
    else:
        if not m.dsc > t.mean_dsc + t.sigma_dsc:
            failed.append("dsc")
        if not m.hd95 < t.mean_hd95 - t.sigma_hd95:
            failed.append("hd95")
        if not m.msd < t.mean_msd - t.sigma_msd:
            failed.append("msd")
    if failed:
        return QualityLabel(LOW, tuple(failed))
    return QualityLabel(HIGH)


def save_thresholds(thresholds: dict[str, QualityThresholds], path) -> None:
    """Write a JSON object keyed by organ with the six statistics."""
    obj = {}
    for organ, t in sorted(thresholds.items()):
        obj[organ] = {
            "mean_dsc": t.mean_dsc,
            "sigma_dsc": t.sigma_dsc,
            "mean_hd95": t.mean_hd95,
            "sigma_hd95": t.sigma_hd95,
            "mean_msd": t.mean_msd,
            "sigma_msd": t.sigma_msd,
            "direction_mode": t.direction_mode,
        }
    Path(path).write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def load_thresholds(path) -> dict[str, QualityThresholds]:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: expected a JSON object keyed by organ")
    out = {}
    for organ, d in obj.items():
        try:
            out[organ] = QualityThresholds(
                organ=organ,
                mean_dsc=float(d["mean_dsc"]),
                sigma_dsc=float(d["sigma_dsc"]),
                mean_hd95=float(d["mean_hd95"]),
                sigma_hd95=float(d["sigma_hd95"]),
                mean_msd=float(d["mean_msd"]),
                sigma_msd=float(d["sigma_msd"]),
                direction_mode=d.get("direction_mode", MODE_PREVALENCE),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed thresholds for {organ!r}: {exc}") from exc
    return out
