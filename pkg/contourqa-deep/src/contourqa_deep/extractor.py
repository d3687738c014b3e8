"""Export pooled deep features for contour crops.

Reads the same dataset manifest / labeled CSV / generated CSV trio the
primary `contourqa features` command consumes, runs each 224x224 crop
through the backbone, and writes the standard feature file with
schema "resnet152-gap-v1" (D=2048). Row order follows the input rows
regardless of batch size.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from contourqa import features, phantom, volume
from contourqa.errors import FormatError, ValidationError

from .backbone import (
    CHANNEL_MEAN,
    CHANNEL_STD,
    FEATURE_DIM,
    SEEDED_WEIGHTS,
    WeightsError,
    load_backbone,
)

SCHEMA_ID = "resnet152-gap-v1"
DEFAULT_BATCH = 16


@dataclass(frozen=True)
class SidecarConfig:
    manifest: str
    out: str
    labeled: Optional[str] = None
    generated: Optional[str] = None
    batch_size: int = DEFAULT_BATCH
    device: str = "cpu"
    weights: str = SEEDED_WEIGHTS
    window: tuple = volume.DEFAULT_WINDOW
    margin: int = volume.DEFAULT_MARGIN

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.margin < 0:
            raise ValidationError(f"margin must be >= 0, got {self.margin}")
        if len(tuple(self.window)) != 2:
            raise ValidationError("window must be (lo, hi)")


def _to_network_input(crop) -> np.ndarray:
    px = np.asarray(crop.pixels)
    if px.shape != (224, 224):
        raise ValidationError(f"crop must be 224x224, got {px.shape}")
    x = px.astype(np.float32) / 255.0
    stacked = np.stack([x, x, x])
    mean = np.asarray(CHANNEL_MEAN, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(CHANNEL_STD, dtype=np.float32).reshape(3, 1, 1)
    return (stacked - mean) / std


def extract_deep(crops, backbone=None, batch_size: int = DEFAULT_BATCH,
                 device: str = "cpu") -> list:
    """Pooled 2048-wide feature vectors for the crops, in input order."""
    crops = list(crops)
    if backbone is None:
        backbone = load_backbone(device=device)
    arrays = [_to_network_input(c) for c in crops]
    out = []
    with torch.inference_mode():
        for start in range(0, len(arrays), batch_size):
            chunk = arrays[start : start + batch_size]
            batch = torch.from_numpy(np.stack(chunk)).to(device)
            feats = backbone(batch).cpu().numpy().astype(np.float64)
            if feats.shape[1] != FEATURE_DIM:
                raise WeightsError(
                    f"backbone produced width {feats.shape[1]}, expected {FEATURE_DIM}"
                )
            for crop, row in zip(crops[start : start + batch_size], feats):
                prov = crop.provenance
                out.append(features.FeatureVector(
                    values=row,
                    schema_id=SCHEMA_ID,
                    case_id=prov.case_id if prov is not None else "",
                    organ=prov.organ if prov is not None else "",
                    slice_index=prov.slice_index if prov is not None else 0,
                ))
    return out


def _read_csv(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return rows


def _collect_work(cfg: SidecarConfig):
    """Mirror the primary features command: labeled rows then generated rows."""
    if not cfg.labeled:
        raise ValidationError("a labeled CSV is required to export features")
    manifest = Path(cfg.manifest)
    mrows = {(r["case_id"], r["organ"]): r for r in phantom.read_manifest(manifest)}
    base = manifest.parent

    ct_cache: dict[str, volume.Volume] = {}
    agc_cache: dict[tuple, volume.Volume] = {}

    def ct_for(cid, organ):
        if cid not in ct_cache:
            row = mrows[(cid, organ)]
            if not row.get("ct_path"):
                raise ValidationError(f"manifest row {cid}/{organ} has no ct_path")
            ct = volume.load_volume(base / row["ct_path"])
            ct_cache[cid] = volume.normalize_u8(ct, window=tuple(cfg.window))
        return ct_cache[cid]

    work = []
    for row in _read_csv(cfg.labeled):
        for col in ("case_id", "organ", "mode", "slice", "label"):
            if col not in row:
                raise FormatError(f"{cfg.labeled}: missing column {col!r}")
        if row["mode"] != "2d":
            continue
        key = (row["case_id"], row["organ"])
        if key not in mrows:
            raise ValidationError(f"labeled row {key} missing from manifest")
        if key not in agc_cache:
            agc_cache[key] = volume.load_volume(base / mrows[key]["agc_path"])
        img2 = ct_for(*key).slice2d(int(row["slice"]))
        mask2 = agc_cache[key].slice2d(int(row["slice"])).astype(bool)
        work.append((img2, mask2, key[0], key[1], int(row["slice"]), row["label"]))

    if cfg.generated:
        gbase = Path(cfg.generated).parent
        mask_cache: dict[str, volume.Volume] = {}
        for row in _read_csv(cfg.generated):
            for col in ("case_id", "organ", "slice", "mask_path", "label"):
                if col not in row:
                    raise FormatError(f"{cfg.generated}: missing column {col!r}")
            key = (row["case_id"], row["organ"])
            if key not in mrows:
                raise ValidationError(f"generated row {key} missing from manifest")
            if row["mask_path"] not in mask_cache:
                mask_cache[row["mask_path"]] = volume.load_volume(gbase / row["mask_path"])
            img2 = ct_for(*key).slice2d(int(row["slice"]))
            mask2 = mask_cache[row["mask_path"]].slice2d(0).astype(bool)
            work.append((img2, mask2, key[0], key[1], int(row["slice"]), row["label"]))
    return work


def run_export(cfg: SidecarConfig, backbone=None) -> int:
    """Extract deep features for every input row and write the feature file.

    Returns the number of rows written.
    """
    work = _collect_work(cfg)
    if not work:
        raise ValidationError("no 2d rows to extract features from")
    crops = [
        volume.preprocess_slice(img2, mask2, cfg.margin, cid, organ, z)
        for img2, mask2, cid, organ, z, _label in work
    ]
    if backbone is None:
        backbone = load_backbone(cfg.weights, cfg.device)
    raw = extract_deep(crops, backbone=backbone,
                       batch_size=cfg.batch_size, device=cfg.device)
    vectors = [
        features.FeatureVector(
            values=fv.values, schema_id=fv.schema_id,
            case_id=fv.case_id, organ=fv.organ, slice_index=fv.slice_index,
            label=item[5],
        )
        for fv, item in zip(raw, work)
    ]
    features.write_feature_file(vectors, cfg.out)
    return len(vectors)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="contourqa-deep",
        description="export ResNet-152 pooled features in the contourqa "
                    "feature file format",
    )
    p.add_argument("--manifest", required=True, help="dataset manifest CSV")
    p.add_argument("--labeled", required=True, help="labeled slice CSV")
    p.add_argument("--generated", default=None,
                   help="optional generated-contour manifest")
    p.add_argument("--out", required=True, help="feature file to write")
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH)
    p.add_argument("--device", default="cpu")
    p.add_argument("--weights", default=SEEDED_WEIGHTS,
                   help="weight set identifier or a state-dict path")
    p.add_argument("--window", type=float, nargs=2, default=None,
                   metavar=("LO", "HI"))
    p.add_argument("--margin", type=int, default=volume.DEFAULT_MARGIN)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = SidecarConfig(
        manifest=args.manifest,
        out=args.out,
        labeled=args.labeled,
        generated=args.generated,
        batch_size=args.batch_size,
        device=args.device,
        weights=args.weights,
        window=tuple(args.window) if args.window else volume.DEFAULT_WINDOW,
        margin=args.margin,
    )
    try:
        n = run_export(cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, WeightsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {n} feature rows to {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
