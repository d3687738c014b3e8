"""Command line front end: one subcommand per pipeline stage.

Stages exchange plain files (QAV1 volumes, CSV tables, JSON models) so any
intermediate artifact can be inspected or regenerated alone. All
randomness flows from --seed; reruns with the same inputs and seed are
byte-identical regardless of --threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation, features, metrics, ocsvm, perturb, phantom, quality, volume
from .errors import (
    ConvergenceError,
    FormatError,
    GenerationError,
    ValidationError,
)

PROG = "contourqa"


def _fmt(v) -> str:
    """Full-precision, round-trippable cell text; None becomes empty."""
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows) -> None:
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(c) for c in row])


def _read_csv(path) -> tuple[list[str], list[dict]]:
    import csv

    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FormatError(f"{path}: empty CSV")
        return list(reader.fieldnames), list(reader)


class _Parser(argparse.ArgumentParser):
    # usage problems are validation errors (exit 1), not IO errors
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _opt(args, config: dict, key: str, default=None):
    v = getattr(args, key, None)
    if v is not None:
        return v
    if key in config:
        return config[key]
    return default


def _req(args, config: dict, key: str):
    v = _opt(args, config, key)
    if v is None:
        raise ValidationError(f"--{key.replace('_', '-')} is required")
    return v


def _pmap(fn, items, threads: int):
    items = list(items)
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    workers = threads if threads > 0 else min(32, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _load_mask_pair(base: Path, row: dict):
    gt = volume.load_volume(base / row["gt_path"])
    agc = volume.load_volume(base / row["agc_path"])
    return gt, agc


def _norm_ct(base: Path, row: dict, window) -> volume.Volume:
    if not row.get("ct_path"):
        raise ValidationError(
            f"manifest row {row.get('case_id')}/{row.get('organ')} has no ct_path"
        )
    ct = volume.load_volume(base / row["ct_path"])
    return volume.normalize_u8(ct, window=tuple(window))


# ---------------------------------------------------------------- phantom


def _cmd_phantom(args, config, seed, threads) -> int:
    out = Path(_req(args, config, "out"))
    grid = _opt(args, config, "grid", (192, 192, 3))
    agc_error = phantom.AgcError(
        clean_fraction=float(_opt(args, config, "clean_fraction", 0.3)),
        translation_std=float(_opt(args, config, "translation_std", 1.2)),
        scale_std=float(_opt(args, config, "scale_std", 0.03)),
    )
    spec = phantom.PhantomSpec(
        grid=tuple(int(g) for g in grid),
        noise_std=float(_opt(args, config, "noise_std", 10.0)),
        cases=int(_req(args, config, "cases")),
        agc_error=agc_error,
        seed=seed,
    )
    manifest = phantom.write_dataset(spec, out)
    print(manifest)
    return 0


# ---------------------------------------------------------------- metrics


def _metric_rows_for(base, row, mode, percentile):
    gt, agc = _load_mask_pair(base, row)
    cid, organ = row["case_id"], row["organ"]
    out = []
    if mode == "3d":
        triple = metrics.volume_metrics(gt, agc, percentile=percentile)
        vol = int(np.count_nonzero(gt.voxels))
        out.append([cid, organ, "3d", -1, triple.dsc, triple.hd95, triple.msd, vol])
    else:
        nz = gt.dims[2]
        for z in range(nz):
            g2 = gt.slice2d(z).astype(bool)
            a2 = agc.slice2d(z).astype(bool)
            if not g2.any() or not a2.any():
                continue  # no contour on this slice, metrics undefined
            triple = metrics.slice_metrics(g2, a2, percentile=percentile)
            vol = int(np.count_nonzero(g2))
            out.append([cid, organ, "2d", z, triple.dsc, triple.hd95, triple.msd, vol])
    return out


def _cmd_metrics(args, config, seed, threads) -> int:
    manifest = Path(_req(args, config, "manifest"))
    out = _req(args, config, "out")
    mode = _opt(args, config, "mode", "2d")
    if mode not in ("2d", "3d"):
        raise ValidationError(f"mode must be 2d or 3d, got {mode!r}")
    percentile = float(_opt(args, config, "percentile", 95.0))
    rows = phantom.read_manifest(manifest)
    base = manifest.parent
    chunks = _pmap(lambda r: _metric_rows_for(base, r, mode, percentile), rows, threads)
    header = ["case_id", "organ", "mode", "slice", "dsc", "hd95", "msd", "volume_vox"]
    _write_csv(out, header, [row for chunk in chunks for row in chunk])
    return 0


# ---------------------------------------------------------------- label


def _triple_of(row) -> metrics.MetricTriple:
    return metrics.MetricTriple(
        dsc=float(row["dsc"]), hd95=float(row["hd95"]), msd=float(row["msd"])
    )


def _cmd_label(args, config, seed, threads) -> int:
    metrics_path = _req(args, config, "metrics")
    out = _req(args, config, "out")
    mode = _opt(args, config, "mode", quality.MODE_PREVALENCE)
    header, rows = _read_csv(metrics_path)
    for col in ("organ", "dsc", "hd95", "msd"):
        if col not in header:
            raise FormatError(f"{metrics_path}: missing column {col!r}")

    thresholds_in = _opt(args, config, "thresholds")
    if thresholds_in:
        thresholds = quality.load_thresholds(thresholds_in)
    else:
        by_organ: dict[str, list] = {}
        for row in rows:
            by_organ.setdefault(row["organ"], []).append(_triple_of(row))
        thresholds = {
            organ: quality.fit_thresholds(triples, organ, direction_mode=mode)
            for organ, triples in sorted(by_organ.items())
        }
    thresholds_out = _opt(args, config, "thresholds_out")
    if thresholds_out:
        quality.save_thresholds(thresholds, thresholds_out)

    inherit_map = None
    if _opt(args, config, "inherit_from"):
        ih, irows = _read_csv(_opt(args, config, "inherit_from"))
        for col in ("case_id", "organ", "label", "failed"):
            if col not in ih:
                raise FormatError("inherit-from file must be a labeled metrics CSV")
        inherit_map = {(r["case_id"], r["organ"]): (r["label"], r["failed"]) for r in irows}

    out_rows = []
    for row in rows:
        organ = row["organ"]
        if inherit_map is not None:
            key = (row["case_id"], organ)
            if key not in inherit_map:
                raise ValidationError(f"no inherited label for {key}")
            lab_value, failed = inherit_map[key]
        else:
            if organ not in thresholds:
                raise ValidationError(f"no thresholds for organ {organ!r}")
            lab = quality.label(_triple_of(row), thresholds[organ])
            lab_value, failed = lab.value, ";".join(lab.failed_checks)
        out_rows.append([row[c] for c in header] + [lab_value, failed])
    _write_csv(out, header + ["label", "failed"], out_rows)
    return 0


# ---------------------------------------------------------------- perturb


def _cmd_perturb(args, config, seed, threads) -> int:
    manifest = Path(_req(args, config, "manifest"))
    labeled_path = _req(args, config, "labeled")
    thresholds = quality.load_thresholds(_req(args, config, "thresholds"))
    out_dir = Path(_req(args, config, "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    kinds = [k for k in str(_opt(args, config, "kinds", "translate,enlarge,shrink")).split(",") if k]
    for k in kinds:
        if k not in perturb.KINDS:
            raise ValidationError(f"unknown perturbation kind {k!r}")
    distance = float(_opt(args, config, "distance", 8.0))
    disk_radius = int(_opt(args, config, "disk_radius", perturb.DEFAULT_DISK_RADIUS))
    max_iterations = int(_opt(args, config, "max_iterations", perturb.DEFAULT_MAX_ITERATIONS))

    mrows = {(r["case_id"], r["organ"]): r for r in phantom.read_manifest(manifest)}
    base = manifest.parent
    lheader, lrows = _read_csv(labeled_path)
    for col in ("case_id", "organ", "mode", "slice", "label"):
        if col not in lheader:
            raise FormatError(f"{labeled_path}: missing column {col!r}")

    pair_cache: dict[tuple, tuple] = {}
    work = []
    for row in lrows:
        if row["mode"] != "2d" or row["label"] != quality.HIGH:
            continue
        key = (row["case_id"], row["organ"])
        if key not in mrows:
            raise ValidationError(f"labeled row {key} missing from manifest")
        if key not in pair_cache:
            pair_cache[key] = _load_mask_pair(base, mrows[key])
        z = int(row["slice"])
        for kind in kinds:
            work.append((row["case_id"], row["organ"], z, kind))

    def _one(item):
        cid, organ, z, kind = item
        gt, agc = pair_cache[(cid, organ)]
        g2 = gt.slice2d(z).astype(bool)
        a2 = agc.slice2d(z).astype(bool)
        spec = perturb.PerturbationSpec(
            kind=kind,
            distance=distance,
            disk_radius=disk_radius,
            max_iterations=max_iterations,
            seed=perturb.derive_seed(seed, cid, organ, z, kind),
        )
        try:
            mask, iters, triple = perturb.generate_error(g2, a2, spec, thresholds[organ])
        except (GenerationError, ValidationError) as exc:
            return ("skip", cid, organ, z, kind, str(exc))
        name = f"{cid}_{organ}_z{z}_{kind}.qav"
        vol = volume.volume_from_grid(
            mask[None].astype(np.uint8), (1.0, 1.0, 1.0), "u8", mask=True
        )
        volume.save_volume(vol, out_dir / name)
        param = distance if kind == "translate" else disk_radius
        return ("ok", [cid, organ, z, kind, param, iters,
                       triple.dsc, triple.hd95, triple.msd, quality.LOW, name])

    results = _pmap(_one, work, threads)
    rows_out = [r[1] for r in results if r[0] == "ok"]
    skipped = [r for r in results if r[0] == "skip"]
    gen_manifest = out_dir / "generated.csv"
    _write_csv(
        gen_manifest,
        ["case_id", "organ", "slice", "kind", "param", "iterations",
         "dsc", "hd95", "msd", "label", "mask_path"],
        rows_out,
    )
    print(f"generated {len(rows_out)} low-quality contours, skipped {len(skipped)}")
    print(gen_manifest)
    return 0


# ---------------------------------------------------------------- features


def _cmd_features(args, config, seed, threads) -> int:
    manifest = Path(_req(args, config, "manifest"))
    labeled_path = _req(args, config, "labeled")
    out = _req(args, config, "out")
    window = _opt(args, config, "window", volume.DEFAULT_WINDOW)
    margin = int(_opt(args, config, "margin", volume.DEFAULT_MARGIN))

    mrows = {(r["case_id"], r["organ"]): r for r in phantom.read_manifest(manifest)}
    base = manifest.parent
    lheader, lrows = _read_csv(labeled_path)
    for col in ("case_id", "organ", "mode", "slice", "label"):
        if col not in lheader:
            raise FormatError(f"{labeled_path}: missing column {col!r}")

    ct_cache: dict[str, volume.Volume] = {}
    agc_cache: dict[tuple, volume.Volume] = {}

    def _ct_for(cid: str, organ: str) -> volume.Volume:
        if cid not in ct_cache:
            ct_cache[cid] = _norm_ct(base, mrows[(cid, organ)], window)
        return ct_cache[cid]

    work = []
    for row in lrows:
        if row["mode"] != "2d":
            continue
        key = (row["case_id"], row["organ"])
        if key not in mrows:
            raise ValidationError(f"labeled row {key} missing from manifest")
        if key not in agc_cache:
            agc_cache[key] = volume.load_volume(base / mrows[key]["agc_path"])
        _ct_for(*key)
        work.append(("labeled", row["case_id"], row["organ"], int(row["slice"]),
                     row["label"], None))

    gen_path = _opt(args, config, "generated")
    gen_cache: dict[str, volume.Volume] = {}
    if gen_path:
        gheader, grows = _read_csv(gen_path)
        gbase = Path(gen_path).parent
        for col in ("case_id", "organ", "slice", "mask_path", "label"):
            if col not in gheader:
                raise FormatError(f"{gen_path}: missing column {col!r}")
        for row in grows:
            key = (row["case_id"], row["organ"])
            if key not in mrows:
                raise ValidationError(f"generated row {key} missing from manifest")
            if row["mask_path"] not in gen_cache:
                gen_cache[row["mask_path"]] = volume.load_volume(gbase / row["mask_path"])
            _ct_for(*key)
            work.append(("generated", row["case_id"], row["organ"], int(row["slice"]),
                         row["label"], row["mask_path"]))

    def _one(item):
        source, cid, organ, z, lab, mask_path = item
        img2 = ct_cache[cid].slice2d(z)
        if source == "labeled":
            mask2 = agc_cache[(cid, organ)].slice2d(z).astype(bool)
        else:
            mask2 = gen_cache[mask_path].slice2d(0).astype(bool)
        crop = volume.preprocess_slice(img2, mask2, margin, cid, organ, z)
        fv = features.extract_classical(crop)
        return features.FeatureVector(
            values=fv.values, schema_id=fv.schema_id,
            case_id=cid, organ=organ, slice_index=z, label=lab,
        )

    vectors = _pmap(_one, work, threads)
    features.write_feature_file(vectors, out)
    return 0


# ---------------------------------------------------------------- train


def _floats_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v]


def _cmd_train(args, config, seed, threads) -> int:
    feats_path = _req(args, config, "features")
    out = _req(args, config, "out")
    vectors = features.read_feature_file(feats_path)
    organ = _opt(args, config, "organ")
    if organ:
        vectors = [v for v in vectors if v.organ == organ]
    train_set = [v for v in vectors if v.label == quality.HIGH]
    if len(train_set) < 2:
        raise ValidationError(
            f"need at least 2 high-quality vectors to train, got {len(train_set)}"
        )
    dim = train_set[0].dim
    tolerance = float(_opt(args, config, "tolerance", ocsvm.DEFAULT_TOLERANCE))

    if _opt(args, config, "calibrate", False):
        nus = _floats_list(_opt(args, config, "nus", list(ocsvm.DEFAULT_NUS)))
        gammas = _floats_list(_opt(args, config, "gammas", list(ocsvm.default_gamma_grid(dim))))
        cal = ocsvm.calibrate(
            train_set, nus, gammas,
            noise_count=int(_opt(args, config, "noise_count", ocsvm.DEFAULT_NOISE_COUNT)),
            noise_sigma=float(_opt(args, config, "noise_sigma", ocsvm.DEFAULT_NOISE_SIGMA)),
            seed=seed,
            tolerance=tolerance,
        )
        nu, gamma = cal.nu, cal.gamma
        cal_out = _opt(args, config, "calibration_out")
        if cal_out:
            Path(cal_out).write_text(
                json.dumps({"nu": nu, "gamma": gamma, "report": list(cal.report)}, indent=2)
                + "\n",
                encoding="utf-8",
            )
    else:
        nu = float(_opt(args, config, "nu", 0.1))
        gamma = float(_opt(args, config, "gamma", 1.0 / dim))

    cfg = ocsvm.TrainConfig(
        nu=nu, kernel=ocsvm.KernelParams(gamma=gamma), tolerance=tolerance, seed=seed
    )
    model = ocsvm.train(train_set, cfg)
    ocsvm.save_model(model, out)
    print(
        f"trained on {len(train_set)} high-quality vectors: "
        f"nu={nu} gamma={gamma} support_vectors={len(model.alphas)}"
    )
    return 0


# ---------------------------------------------------------------- predict


def _cmd_predict(args, config, seed, threads) -> int:
    feats_path = _req(args, config, "features")
    model = ocsvm.load_model(_req(args, config, "model"))
    out = _req(args, config, "out")
    aggregate = _opt(args, config, "aggregate")
    vectors = features.read_feature_file(feats_path)
    if not vectors:
        raise ValidationError("feature file has no rows")
    if vectors[0].schema_id != model.schema_id:
        raise ValidationError(
            f"feature schema {vectors[0].schema_id!r} does not match "
            f"model schema {model.schema_id!r}"
        )
    scores = ocsvm.decision_raw(model, np.vstack([v.values for v in vectors]))

    header = ["case_id", "organ", "slice", "label", "score", "pred"]
    if aggregate is None:
        rows = [
            [v.case_id, v.organ, v.slice_index, v.label, float(s),
             ocsvm.HIGH if s >= 0.0 else ocsvm.LOW]
            for v, s in zip(vectors, scores)
        ]
        _write_csv(out, header, rows)
        return 0

    mode = str(aggregate)
    frac = None
    if mode.startswith("fraction:"):
        frac = float(mode.split(":", 1)[1])
        if not (0.0 < frac <= 1.0):
            raise ValidationError("aggregate fraction must be in (0, 1]")
    elif mode not in ("mean", "any"):
        raise ValidationError(f"aggregate must be mean, any, or fraction:t, got {mode!r}")

    groups: dict[tuple, list] = {}
    for v, s in zip(vectors, scores):
        groups.setdefault((v.case_id, v.organ), []).append((v.label, float(s)))
    rows = []
    for (cid, organ), items in groups.items():
        labs = [l for l, _ in items]
        svals = np.array([s for _, s in items])
        if quality.LOW in labs:
            lab = quality.LOW
        elif all(l == quality.HIGH for l in labs):
            lab = quality.HIGH
        else:
            lab = "unknown"
        mean_score = float(svals.mean())
        if mode == "mean":
            pred = ocsvm.HIGH if mean_score >= 0.0 else ocsvm.LOW
        elif mode == "any":
            pred = ocsvm.LOW if (svals < 0.0).any() else ocsvm.HIGH
        else:
            pred = ocsvm.LOW if (svals < 0.0).mean() >= frac else ocsvm.HIGH
        rows.append([cid, organ, -1, lab, mean_score, pred])
    _write_csv(out, header, rows)
    return 0


# ---------------------------------------------------------------- evaluate


def _cmd_evaluate(args, config, seed, threads) -> int:
    pred_path = _req(args, config, "pred")
    out = _req(args, config, "out")
    header, rows = _read_csv(pred_path)
    for col in ("organ", "label", "score", "pred"):
        if col not in header:
            raise FormatError(f"{pred_path}: missing column {col!r}")
    by_organ: dict[str, list] = {}
    skipped = 0
    for row in rows:
        if row["label"] not in (quality.HIGH, quality.LOW):
            skipped += 1
            continue
        by_organ.setdefault(row["organ"], []).append(row)
    if not by_organ:
        raise ValidationError("no labeled rows to evaluate")
    if skipped:
        print(f"skipped {skipped} rows without a high/low label", file=sys.stderr)

    out_rows = []
    json_obj = {}
    for organ in sorted(by_organ):
        items = by_organ[organ]
        preds = [r["pred"] for r in items]
        labels = [r["label"] for r in items]
        # decision scores are inlier-positive; AUC wants low-positive
        scores = [-float(r["score"]) for r in items]
        c = evaluation.confusion(preds, labels)
        rep = evaluation.report(c, scores, labels)
        out_rows.append([
            organ, c.tp, c.fn, c.tn, c.fp,
            rep.balanced_accuracy, rep.f_score, rep.sensitivity,
            rep.specificity, rep.auc,
        ])
        json_obj[organ] = {
            "tp": c.tp, "fn": c.fn, "tn": c.tn, "fp": c.fp,
            "ba": rep.balanced_accuracy, "f": rep.f_score,
            "sens": rep.sensitivity, "spec": rep.specificity, "auc": rep.auc,
        }
    _write_csv(out, ["organ", "tp", "fn", "tn", "fp", "ba", "f", "sens", "spec", "auc"], out_rows)
    json_out = _opt(args, config, "json")
    if json_out:
        Path(json_out).write_text(json.dumps(json_obj, indent=2) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------- detect-limit


def _cmd_detect_limit(args, config, seed, threads) -> int:
    manifest = Path(_req(args, config, "manifest"))
    model = ocsvm.load_model(_req(args, config, "model"))
    out = _req(args, config, "out")
    window = _opt(args, config, "window", volume.DEFAULT_WINDOW)
    margin = int(_opt(args, config, "margin", volume.DEFAULT_MARGIN))
    contour = _opt(args, config, "contour", "gt")
    if contour not in ("gt", "agc"):
        raise ValidationError(f"contour must be gt or agc, got {contour!r}")
    organ_filter = _opt(args, config, "organ")
    d_max = int(_opt(args, config, "d_max", 20))
    repeats = int(_opt(args, config, "repeats", 3))
    rate_threshold = float(_opt(args, config, "rate_threshold", evaluation.RATE_THRESHOLD))
    mixed = bool(_opt(args, config, "mixed", False))

    high_keys = None
    labeled_path = _opt(args, config, "labeled")
    if labeled_path:
        lheader, lrows = _read_csv(labeled_path)
        high_keys = {
            (r["case_id"], r["organ"], int(r["slice"]))
            for r in lrows
            if r.get("mode") == "2d" and r.get("label") == quality.HIGH
        }

    base = manifest.parent
    samples: dict[str, list] = {}
    for row in phantom.read_manifest(manifest):
        organ = row["organ"]
        if organ_filter and organ != organ_filter:
            continue
        ct = _norm_ct(base, row, window)
        mask_vol = volume.load_volume(
            base / (row["gt_path"] if contour == "gt" else row["agc_path"])
        )
        for z in range(mask_vol.dims[2]):
            m2 = mask_vol.slice2d(z).astype(bool)
            if not m2.any():
                continue
            if high_keys is not None and (row["case_id"], organ, z) not in high_keys:
                continue
            samples.setdefault(organ, []).append(
                evaluation.DetectionSample(
                    case_id=row["case_id"], organ=organ, slice_index=z,
                    image=ct.slice2d(z), mask=m2,
                )
            )
    if not samples:
        raise ValidationError("no usable contours found for detection limit")

    rows_out = []
    for organ in sorted(samples):
        params = evaluation.DetectionParams(
            d_max=d_max, repeats=repeats, rate_threshold=rate_threshold,
            seed=perturb.derive_seed(seed, organ), margin=margin, mixed=mixed,
        )
        result = evaluation.detection_limit(model, samples[organ], params, organ=organ)
        for d, rate in result.per_distance:
            rows_out.append([organ, d, rate, result.limit])
    _write_csv(out, ["organ", "distance", "rate", "limit"], rows_out)
    return 0


# ---------------------------------------------------------------- correlate


def _cmd_correlate(args, config, seed, threads) -> int:
    trace_path = _req(args, config, "trace")
    metrics_path = _req(args, config, "metrics")
    out = _req(args, config, "out")
    theader, trows = _read_csv(trace_path)
    for col in ("organ", "limit"):
        if col not in theader:
            raise FormatError(f"{trace_path}: missing column {col!r}")
    limits: dict[str, float] = {}
    for row in trows:
        if row["organ"] in limits:
            continue
        if row["limit"] != "":
            limits[row["organ"]] = float(row["limit"])

    mheader, mrows = _read_csv(metrics_path)
    for col in ("organ", "volume_vox"):
        if col not in mheader:
            raise FormatError(f"{metrics_path}: missing column {col!r}")
    sizes: dict[str, list] = {}
    for row in mrows:
        sizes.setdefault(row["organ"], []).append(float(row["volume_vox"]))

    points = []
    for organ in sorted(limits):
        if organ not in sizes:
            raise ValidationError(f"metrics file has no rows for organ {organ!r}")
        points.append((organ, limits[organ], float(np.mean(sizes[organ]))))
    if len(points) < 2:
        raise ValidationError(
            f"need at least 2 organs with a detection limit, got {len(points)}"
        )
    r = evaluation.pearson([p[1] for p in points], [p[2] for p in points])
    _write_csv(out, ["organ", "limit", "size"], points)
    print(f"pearson r = {r!r}")
    json_out = _opt(args, config, "json")
    if json_out:
        Path(json_out).write_text(
            json.dumps(
                {
                    "pearson_r": r,
                    "points": [
                        {"organ": o, "limit": l, "size": s} for o, l, s in points
                    ],
                },
                indent=2,
            )
            + "\n",
            encoding="utf-8",
        )
    return 0


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog=PROG, description=__doc__)
    p.add_argument("--seed", type=int, default=None, help="master random seed (default 0)")
    p.add_argument("--config", default=None, help="JSON config file; flags override it")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads, 0 = auto (default 0); results do not depend on it")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND")

    def cmd(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(handler=fn)
        return sp

    sp = cmd("phantom", _cmd_phantom, "generate a synthetic dataset")
    sp.add_argument("--cases", type=int)
    sp.add_argument("--out")
    sp.add_argument("--grid", type=int, nargs=3, metavar=("NX", "NY", "NZ"))
    sp.add_argument("--noise-std", dest="noise_std", type=float)
    sp.add_argument("--clean-fraction", dest="clean_fraction", type=float)
    sp.add_argument("--translation-std", dest="translation_std", type=float)
    sp.add_argument("--scale-std", dest="scale_std", type=float)

    sp = cmd("metrics", _cmd_metrics, "geometric agreement metrics per contour pair")
    sp.add_argument("--manifest")
    sp.add_argument("--mode", choices=("2d", "3d"))
    sp.add_argument("--percentile", type=float)
    sp.add_argument("--out")

    sp = cmd("label", _cmd_label, "fit per-organ statistics and label quality")
    sp.add_argument("--metrics")
    sp.add_argument("--out")
    sp.add_argument("--mode", choices=(quality.MODE_PREVALENCE, quality.MODE_STRICT))
    sp.add_argument("--thresholds", help="apply existing thresholds instead of fitting")
    sp.add_argument("--thresholds-out", dest="thresholds_out")
    sp.add_argument("--inherit-from", dest="inherit_from",
                    help="labeled CSV whose (case_id, organ) labels override per-slice ones")

    sp = cmd("perturb", _cmd_perturb, "generate labeled low-quality contours")
    sp.add_argument("--manifest")
    sp.add_argument("--labeled")
    sp.add_argument("--thresholds")
    sp.add_argument("--out")
    sp.add_argument("--kinds")
    sp.add_argument("--distance", type=float)
    sp.add_argument("--disk-radius", dest="disk_radius", type=int)
    sp.add_argument("--max-iterations", dest="max_iterations", type=int)

    sp = cmd("features", _cmd_features, "extract feature vectors from crops")
    sp.add_argument("--manifest")
    sp.add_argument("--labeled")
    sp.add_argument("--generated", help="optional generated-contour manifest")
    sp.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--margin", type=int)
    sp.add_argument("--out")

    sp = cmd("train", _cmd_train, "train the one-class model on high-quality vectors")
    sp.add_argument("--features")
    sp.add_argument("--organ")
    sp.add_argument("--nu", type=float)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--tolerance", type=float)
    sp.add_argument("--calibrate", action="store_const", const=True, default=None)
    sp.add_argument("--nus")
    sp.add_argument("--gammas")
    sp.add_argument("--noise-count", dest="noise_count", type=int)
    sp.add_argument("--noise-sigma", dest="noise_sigma", type=float)
    sp.add_argument("--calibration-out", dest="calibration_out")
    sp.add_argument("--out")

    sp = cmd("predict", _cmd_predict, "score feature vectors with a trained model")
    sp.add_argument("--features")
    sp.add_argument("--model")
    sp.add_argument("--aggregate", help="organ-level rule: mean, any, or fraction:T")
    sp.add_argument("--out")

    sp = cmd("evaluate", _cmd_evaluate, "confusion metrics per organ")
    sp.add_argument("--pred")
    sp.add_argument("--out")
    sp.add_argument("--json")

    sp = cmd("detect-limit", _cmd_detect_limit, "translation detection-limit experiment")
    sp.add_argument("--manifest")
    sp.add_argument("--model")
    sp.add_argument("--labeled", help="restrict to slices labeled high in this CSV")
    sp.add_argument("--organ")
    sp.add_argument("--contour", choices=("gt", "agc"))
    sp.add_argument("--d-max", dest="d_max", type=int)
    sp.add_argument("--repeats", type=int)
    sp.add_argument("--rate-threshold", dest="rate_threshold", type=float)
    sp.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"))
    sp.add_argument("--margin", type=int)
    sp.add_argument("--mixed", action="store_const", const=True, default=None)
    sp.add_argument("--out")

    sp = cmd("correlate", _cmd_correlate, "detection limit vs organ size correlation")
    sp.add_argument("--trace")
    sp.add_argument("--metrics")
    sp.add_argument("--out")
    sp.add_argument("--json")

    return p


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        return int(code) if code is not None else 0
    if getattr(args, "handler", None) is None:
        parser.print_usage(sys.stderr)
        print(f"{PROG}: error: a subcommand is required", file=sys.stderr)
        return 1

    try:
        config = {}
        if args.config:
            try:
                config = json.loads(Path(args.config).read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{args.config}: not valid JSON: {exc}") from exc
            if not isinstance(config, dict):
                raise FormatError(f"{args.config}: config must be a JSON object")
        seed = int(_opt(args, config, "seed", 0))
        threads = int(_opt(args, config, "threads", 0))
        return args.handler(args, config, seed, threads)
    except ValidationError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, GenerationError) as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1
    except FormatError as exc:
        print(f"{PROG}: format error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"{PROG}: io error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
