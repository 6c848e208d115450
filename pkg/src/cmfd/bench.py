"""Benchmark harness: dataset scoring, reports, curves, and ablations.

A dataset is a directory with images/*.png and masks/<same-stem>.png (0/255);
an optional meta.json (written by the corpus generators) records each image's
attack and the true copy transforms, which the per-attack curves and the
match-correctness statistics consume. Reports come out three ways at once:
a CSV of per-image records, a JSON document with aggregates and the config
echo, and matplotlib curve figures, one per attack family.

Three ablations mirror the pipeline's design questions: `nn` compares
nearest-neighbor match strategies on correct-match counts, purity, and wall
clock; `phrase` compares word-level against phrase-level match purity; and
`fusion` scores the fused mask against its two single-evidence variants,
all three taken from the same run.
"""

import csv
import dataclasses
import json
import logging
import math
import multiprocessing
import os
import platform
import time

import numpy as np

from . import descriptor as desc_mod
from . import forge, imaging, matching
from . import keypoints as kp_mod
from . import pipeline as pipe_mod

logger = logging.getLogger(__name__)

PAIR_TOLERANCE = 6.0      # px, original frame: match endpoint agreement
STAGE_KEYS = ("preprocess", "detect", "describe", "match", "phrase",
              "localize", "total")


def load_dataset(dataset_dir, limit: int = None) -> list:
    """Collect (stem, image path, mask path, meta record) for a dataset dir.

    Images without a mask are skipped with a warning; an empty or missing
    images directory yields an empty list (the caller reports and moves on).
    """
    img_dir = os.path.join(dataset_dir, "images")
    mask_dir = os.path.join(dataset_dir, "masks")
    meta = {}
    meta_path = os.path.join(dataset_dir, "meta.json")
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            meta = json.load(fh).get("images", {})

    if not os.path.isdir(img_dir):
        logger.warning("no images directory under %s", dataset_dir)
        return []
    entries = []
    for name in sorted(os.listdir(img_dir)):
        stem, ext = os.path.splitext(name)
        if ext.lower() not in (".png", ".jpg", ".jpeg", ".bmp", ".tif",
                               ".tiff"):
            continue
        mask_path = None
        for mext in (".png", ext):
            cand = os.path.join(mask_dir, stem + mext)
            if os.path.exists(cand):
                mask_path = cand
                break
        if mask_path is None:
            logger.warning("skipping %s: no mask found", name)
            continue
        entries.append({"stem": stem,
                        "image": os.path.join(img_dir, name),
                        "mask": mask_path,
                        "meta": meta.get(stem, {})})
    if not entries:
        logger.warning("dataset %s contributed no scoreable images",
                       dataset_dir)
    return entries[:limit] if limit else entries


def _load_truth(path) -> np.ndarray:
    # benchmark masks may be grayscale; binarize at half intensity
    return imaging.load_image(path) >= 0.5


def _score_entry(entry, cfg, attack=None):
    """Run the pipeline on one dataset entry, optionally after an attack."""
    img = imaging.load_image(entry["image"])
    truth = _load_truth(entry["mask"])
    rec = {"image": entry["stem"],
           "attack": entry["meta"].get("attack", "none"),
           "value": entry["meta"].get("value"),
           "clean": bool(entry["meta"].get("clean", not truth.any()))}
    if attack is not None:
        kind, value = attack
        img = forge.apply_attack(img, kind, value)
        truth = forge.transform_truth(truth, kind, value)
        rec["attack"], rec["value"] = kind, value

    res = pipe_mod.run_pipeline(img, cfg)
    scores = pipe_mod.score_mask(res.mask, truth)
    rec.update(scores)
    rec["fp_area"] = float((res.mask & ~truth).sum() / truth.size)
    rec["n_keypoints"] = int(len(res.keypoints))
    rec["n_word_pairs"] = len(res.pairs_word)
    rec["n_phrase_pairs"] = len(res.pairs_phrase)
    rec["n_affines"] = len(res.affines)
    rec["noise_sigma"] = float(res.noise_sigma)
    for k in STAGE_KEYS:
        rec["t_" + k] = round(res.timings.get(k, 0.0), 4)
    return rec


def _worker(args):
    entry, cfg, attack = args
    return _score_entry(entry, cfg, attack)


def _mean(vals):
    vals = list(vals)
    return float(np.mean(vals)) if vals else 0.0


def _aggregate(records) -> dict:
    forged = [r for r in records if not r["clean"]]
    clean = [r for r in records if r["clean"]]
    agg = {
        "n_images": len(records),
        "n_forged": len(forged),
        "n_clean": len(clean),
        "mean_precision": _mean(r["precision"] for r in forged),
        "mean_recall": _mean(r["recall"] for r in forged),
        "mean_f1": _mean(r["f1"] for r in forged),
        "mean_total_seconds": _mean(r["t_total"] for r in records),
        "clean_max_fp_area": max((r["fp_area"] for r in clean), default=0.0),
    }
    return agg


def _attack_curves(records) -> list:
    """Mean scores per (attack, value) over forged records, sorted."""
    groups = {}
    for r in records:
        if r["clean"] or r["value"] is None:
            continue
        groups.setdefault((r["attack"], float(r["value"])), []).append(r)
    rows = []
    for (kind, value), rs in sorted(groups.items()):
        rows.append({"attack": kind, "value": value, "n": len(rs),
                     "mean_f1": _mean(r["f1"] for r in rs),
                     "mean_precision": _mean(r["precision"] for r in rs),
                     "mean_recall": _mean(r["recall"] for r in rs)})
    return rows


def _write_csv(path, rows, fields):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def _plot_curves(curves, out_dir):
    """One figure per attack family: value on x, mean scores on y."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    kinds = sorted({c["attack"] for c in curves})
    for kind in kinds:
        rows = sorted((c for c in curves if c["attack"] == kind),
                      key=lambda c: c["value"])
        xs = [c["value"] for c in rows]
        fig, ax = plt.subplots(figsize=(5.5, 3.6))
        for key, style in (("mean_f1", "o-"), ("mean_precision", "s--"),
                           ("mean_recall", "^--")):
            ax.plot(xs, [c[key] for c in rows], style,
                    label=key.replace("mean_", ""))
        ax.set_xlabel({"scale": "scale factor", "rotate": "rotation (deg)",
                       "awgn": "noise sigma", "jpeg": "JPEG quality",
                       }.get(kind, kind))
        ax.set_ylabel("pixel score")
        ax.set_ylim(0, 1.05)
        ax.set_title(f"localization under {kind}")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        path = os.path.join(out_dir, f"curve_{kind}.png")
        fig.savefig(path, dpi=110)
        plt.close(fig)
        paths.append(path)
    return paths


def _plot_overview(records, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    forged = [r for r in records if not r["clean"]]
    if not forged:
        return None
    kinds = sorted({r["attack"] for r in forged})
    means = [_mean(r["f1"] for r in forged if r["attack"] == k)
             for k in kinds]
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.bar(range(len(kinds)), means, color="#4878a8")
    ax.set_xticks(range(len(kinds)), kinds)
    ax.set_ylabel("mean pixel F1")
    ax.set_ylim(0, 1.05)
    ax.set_title("mean F1 by attack family")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    path = os.path.join(out_dir, "overview.png")
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def _versions() -> dict:
    import scipy

    from . import __version__
    return {"package": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


_RECORD_FIELDS = (
    ["image", "attack", "value", "clean", "precision", "recall", "f1",
     "fp_area", "n_keypoints", "n_word_pairs", "n_phrase_pairs", "n_affines",
     "noise_sigma"] + ["t_" + k for k in STAGE_KEYS])


def run_benchmark(dataset_dir, cfg=None, out_dir=None, attacks=None,
                  nn_strategy: str = None, workers: int = 1,
                  limit: int = None, free_params: bool = False) -> dict:
    """Score a dataset and emit CSV + JSON reports with curve figures.

    attacks: optional list of "kind=value" strings applied on the fly to
    every image (value may be a grammar expression such as "100:-10:20",
    giving one run per expanded value); parameters are held to the canonical
    grammar unless free_params. nn_strategy overrides the word-match
    strategy. workers > 1 distributes images over a process pool.
    """
    cfg = cfg or pipe_mod.PipelineConfig()
    if nn_strategy:
        if nn_strategy not in matching.STRATEGIES:
            raise ValueError(f"unknown nn strategy {nn_strategy!r}")
        cfg = dataclasses.replace(
            cfg, word_match=dataclasses.replace(cfg.word_match,
                                                strategy=nn_strategy))
    entries = load_dataset(dataset_dir, limit)

    jobs = []
    for kind, value in _expand_attack_args(attacks, free_params):
        jobs.extend((e, cfg, (kind, value) if kind else None)
                    for e in entries)

    t0 = time.perf_counter()
    if workers > 1 and len(jobs) > 1:
        with multiprocessing.Pool(workers) as pool:
            records = list(pool.imap_unordered(_worker, jobs))
    else:
        records = [_worker(j) for j in jobs]
    wall = time.perf_counter() - t0
    records.sort(key=lambda r: (r["image"], str(r["attack"]),
                                r["value"] if r["value"] is not None else 0))

    curves = _attack_curves(records)
    report = {"dataset": os.path.abspath(dataset_dir),
              "config": dataclasses.asdict(cfg),
              "versions": _versions(),
              "wall_seconds": round(wall, 3),
              "aggregates": _aggregate(records),
              "per_attack": curves,
              "records": records}

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "records.csv"), records,
                   _RECORD_FIELDS)
        _write_csv(os.path.join(out_dir, "curves.csv"), curves,
                   ["attack", "value", "n", "mean_f1", "mean_precision",
                    "mean_recall"])
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(report, fh, indent=1)
        figures = _plot_curves(curves, out_dir)
        overview = _plot_overview(records, out_dir)
        if overview:
            figures.append(overview)
        report["figures"] = figures
    return report


def _expand_attack_args(attacks, free_params: bool) -> list:
    """CLI attack specs to (kind, value) jobs; [(None, None)] when absent."""
    if not attacks:
        return [(None, None)]
    out = []
    for spec in attacks:
        kind, sep, expr = str(spec).partition("=")
        kind = kind.strip()
        if not sep or not expr.strip():
            raise ValueError(f"attack spec must be kind=value, got {spec!r}")
        if kind not in forge.ATTACK_KINDS:
            raise ValueError(
                f"unknown attack {kind!r}, expected one of {forge.ATTACK_KINDS}")
        for value in forge.expand_grammar(expr):
            if kind == "scale" and value > 3.0:
                value = value / 100.0  # grammar rows quote percentages
            if not free_params:
                forge.validate_attack(kind, value)
            out.append((kind, value))
    return out


# ---------------------------------------------------------------------------
# ground-truth correspondence for match statistics


def _copy_maps(meta_rec) -> list:
    """Forward (x, y) affine maps of each recorded copy, source first.

    Returns [(M, t, c_src_xy, radius), ...] with p_dst = M @ p_src + t.
    The leading entry is the identity on the source region itself.
    """
    maps = []
    for c in meta_rec.get("copies", []):
        sy, sx = c["src"]
        dy, dx = c["dst"]
        th = math.radians(c.get("rotation", 0.0))
        s = c.get("scale", 1.0)
        m = s * np.array([[math.cos(th), -math.sin(th)],
                          [math.sin(th), math.cos(th)]])
        src = np.array([sx, sy])
        t = np.array([dx, dy]) - m @ src
        maps.append((m, t, src, float(c["radius"])))
    return maps


def count_correct_pairs(pairs, kps, meta_rec,
                        tol: float = PAIR_TOLERANCE) -> int:
    """Pairs whose endpoints correspond under some recorded copy transform.

    A pair is correct when one endpoint, pulled back to the source region
    through instance i (the source itself or any copy), lands within the
    region and is carried onto the other endpoint by instance j. This walks
    every ordered instance pair, so copy-to-copy matches in multi-copy
    forgeries count as correct.
    """
    if not pairs:
        return 0
    maps = _copy_maps(meta_rec)
    if not maps:
        return 0
    radius = maps[0][3]
    c_src = maps[0][2]
    # instance 0 is the source region: identity map
    instances = [(np.eye(2), np.zeros(2))] + [(m, t) for m, t, _, _ in maps]
    inverses = [np.linalg.inv(m) for m, _ in instances]

    pa = np.array([[kps[p.a, 0], kps[p.a, 1]] for p in pairs])
    pb = np.array([[kps[p.b, 0], kps[p.b, 1]] for p in pairs])
    good = np.zeros(len(pairs), dtype=bool)
    for x, y in ((pa, pb), (pb, pa)):
        for i, (mi, ti) in enumerate(instances):
            back = (x - ti) @ inverses[i].T
            in_region = np.hypot(*(back - c_src).T) <= radius + tol
            for j, (mj, tj) in enumerate(instances):
                if i == j:
                    # mapping an instance onto itself certifies nothing
                    continue
                fwd = back @ mj.T + tj
                good |= in_region & (np.hypot(*(fwd - y).T) <= tol)
    return int(good.sum())


def _purity(n_correct: int, n_total: int) -> float:
    return n_correct / n_total if n_total else 0.0


# ---------------------------------------------------------------------------
# ablations


def ablate_nn(dataset_dir, cfg=None, out_dir=None, limit: int = None,
              strategies=("2nn", "g2nn", "rg2nn", "i2nn")) -> dict:
    """Compare match strategies on correct matches, purity, and wall clock.

    Detection and description run once per image; each strategy then matches
    the same features under its own timer. Correctness comes from the copy
    transforms in meta.json, so this needs a generated corpus (or any
    dataset with the same meta schema).
    """
    cfg = cfg or pipe_mod.PipelineConfig()
    entries = load_dataset(dataset_dir, limit)
    per_strategy = {s: {"correct": [], "pairs": [], "seconds": 0.0}
                    for s in strategies}
    rows = []
    for entry in entries:
        if not entry["meta"].get("copies"):
            continue
        img = imaging.load_image(entry["image"])
        h, w = img.shape
        factor = kp_mod.scale_factor(h, w, cfg.detector.normalization_target)
        frame = imaging.resize_bicubic(img, factor) if factor != 1.0 else img
        kps = kp_mod.detect_in_frame(frame, cfg.detector)
        if len(kps) == 0:
            continue
        moments, mags, valid = desc_mod.describe_batch(
            frame, kps[:, :3], cfg.descriptor)
        kps = kps[valid]
        moments = moments[valid]
        mags = mags[valid]
        kps_orig = kps.copy()
        kps_orig[:, :3] /= factor

        for strat in strategies:
            mcfg = dataclasses.replace(cfg.word_match, strategy=strat)
            t0 = time.perf_counter()
            pairs = matching.match_word_level(mags, kps[:, :2], mcfg, moments)
            dt = time.perf_counter() - t0
            correct = count_correct_pairs(pairs, kps_orig, entry["meta"])
            st = per_strategy[strat]
            st["correct"].append(correct)
            st["pairs"].append(len(pairs))
            st["seconds"] += dt
            rows.append({"image": entry["stem"], "strategy": strat,
                         "n_pairs": len(pairs), "n_correct": correct,
                         "purity": round(_purity(correct, len(pairs)), 4),
                         "seconds": round(dt, 4)})

    summary = {}
    for strat, st in per_strategy.items():
        summary[strat] = {
            "mean_correct": _mean(st["correct"]),
            "mean_pairs": _mean(st["pairs"]),
            "purity": _purity(sum(st["correct"]), sum(st["pairs"])),
            "wall_seconds": round(st["seconds"], 3),
        }
    report = {"ablation": "nn", "dataset": os.path.abspath(dataset_dir),
              "n_images": len({r["image"] for r in rows}),
              "strategies": summary, "records": rows}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "ablation_nn.csv"), rows,
                   ["image", "strategy", "n_pairs", "n_correct", "purity",
                    "seconds"])
        with open(os.path.join(out_dir, "ablation_nn.json"), "w") as fh:
            json.dump(report, fh, indent=1)
        _plot_nn(summary, out_dir)
    return report


def _plot_nn(summary, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = list(summary)
    fig, axes = plt.subplots(1, 3, figsize=(9.5, 3.2))
    for ax, key, title in zip(
            axes, ("mean_correct", "purity", "wall_seconds"),
            ("correct matches / image", "match purity", "wall clock (s)")):
        ax.bar(range(len(names)), [summary[n][key] for n in names],
               color="#4878a8")
        ax.set_xticks(range(len(names)), names)
        ax.set_title(title, fontsize=10)
        ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "ablation_nn.png"), dpi=110)
    plt.close(fig)


def ablate_phrase(dataset_dir, cfg=None, out_dir=None,
                  limit: int = None) -> dict:
    """Word-level vs phrase-level match purity, image by image.

    Runs the pipeline through the phrase stage only; purity again leans on
    the copy transforms recorded in meta.json.
    """
    cfg = cfg or pipe_mod.PipelineConfig()
    entries = load_dataset(dataset_dir, limit)
    rows = []
    for entry in entries:
        if not entry["meta"].get("copies"):
            continue
        img = imaging.load_image(entry["image"])
        res = pipe_mod.run_pipeline(img, cfg, stop_after="phrase")
        w_correct = count_correct_pairs(res.pairs_word, res.keypoints,
                                        entry["meta"])
        p_correct = count_correct_pairs(res.pairs_phrase, res.keypoints,
                                        entry["meta"])
        wp = _purity(w_correct, len(res.pairs_word))
        pp = _purity(p_correct, len(res.pairs_phrase))
        rows.append({"image": entry["stem"],
                     "n_word_pairs": len(res.pairs_word),
                     "word_purity": round(wp, 4),
                     "n_phrase_pairs": len(res.pairs_phrase),
                     "phrase_purity": round(pp, 4),
                     "improved": pp > wp})
    improved = [r for r in rows if r["improved"]]
    report = {"ablation": "phrase", "dataset": os.path.abspath(dataset_dir),
              "n_images": len(rows),
              "mean_word_purity": _mean(r["word_purity"] for r in rows),
              "mean_phrase_purity": _mean(r["phrase_purity"] for r in rows),
              "improved_fraction": _purity(len(improved), len(rows)),
              "records": rows}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv(os.path.join(out_dir, "ablation_phrase.csv"), rows,
                   ["image", "n_word_pairs", "word_purity", "n_phrase_pairs",
                    "phrase_purity", "improved"])
        with open(os.path.join(out_dir, "ablation_phrase.json"), "w") as fh:
            json.dump(report, fh, indent=1)
    return report


def ablate_fusion(dataset_dir, cfg=None, out_dir=None,
                  limit: int = None) -> dict:
    """Fused mask vs its single-evidence variants, from one run per image."""
    cfg = cfg or pipe_mod.PipelineConfig()
    entries = load_dataset(dataset_dir, limit)
    rows = []
    for entry in entries:
        truth = _load_truth(entry["mask"])
        if not truth.any():
            continue
        img = imaging.load_image(entry["image"])
        res = pipe_mod.run_pipeline(img, cfg)
        row = {"image": entry["stem"]}
        for name, mask in (("fused", res.mask), ("ssim", res.ssim_mask),
                           ("roi", res.roi_mask)):
            s = pipe_mod.score_mask(mask, truth)
            for k, v in s.items():
                row[f"{name}_{k}"] = round(v, 4)
        rows.append(row)
    report = {"ablation": "fusion", "dataset": os.path.abspath(dataset_dir),
              "n_images": len(rows), "records": rows}
    for name in ("fused", "ssim", "roi"):
        for k in ("precision", "recall", "f1"):
            report[f"mean_{name}_{k}"] = _mean(
                r[f"{name}_{k}"] for r in rows)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        fields = ["image"] + [f"{n}_{k}" for n in ("fused", "ssim", "roi")
                              for k in ("precision", "recall", "f1")]
        _write_csv(os.path.join(out_dir, "ablation_fusion.csv"), rows, fields)
        with open(os.path.join(out_dir, "ablation_fusion.json"), "w") as fh:
            json.dump(report, fh, indent=1)
        _plot_fusion(report, out_dir)
    return report


def _plot_fusion(report, out_dir):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = ("fused", "ssim", "roi")
    keys = ("precision", "recall", "f1")
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    width = 0.25
    for i, key in enumerate(keys):
        xs = [j + (i - 1) * width for j in range(len(names))]
        ax.bar(xs, [report[f"mean_{n}_{key}"] for n in names], width,
               label=key)
    ax.set_xticks(range(len(names)), names)
    ax.set_ylim(0, 1.05)
    ax.set_title("fusion vs single-evidence localization")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(os.path.join(out_dir, "ablation_fusion.png"), dpi=110)
    plt.close(fig)
