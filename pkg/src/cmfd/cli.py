"""Command-line front end: detect, bench, forge, corpus subcommands."""

import argparse
import json
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import forge as forge_mod
from . import imaging
from . import pipeline as pipe_mod


def _load_cfg(path):
    return pipe_mod.load_config(path) if path else pipe_mod.PipelineConfig()


def _write_pairs_csv(path, pairs, kps):
    lines = ["index_a,index_b,distance,xa,ya,xb,yb"]
    for p in pairs:
        a, b = kps[p.a], kps[p.b]
        lines.append(f"{p.a},{p.b},{p.distance:.6f},"
                     f"{a[0]:.2f},{a[1]:.2f},{b[0]:.2f},{b[1]:.2f}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_detect(args) -> int:
    cfg = _load_cfg(args.config)
    img = imaging.load_image(args.image)
    result = pipe_mod.run_pipeline(img, cfg)

    area = float(result.mask.mean())
    print(f"{args.image}: {result.mask.sum()} forged pixels "
          f"({100 * area:.2f}% of frame), "
          f"{len(result.pairs_phrase)} matched pairs, "
          f"{result.timings.get('total', 0):.2f}s")

    if args.out:
        imaging.save_mask(result.mask, args.out)
        print(f"mask -> {args.out}")
    if args.report:
        report = {
            "image": os.path.abspath(args.image),
            "shape": list(img.shape),
            "scale_factor": result.scale_factor,
            "noise_sigma": round(result.noise_sigma, 6),
            "n_keypoints": int(len(result.keypoints)),
            "n_pairs_word": len(result.pairs_word),
            "n_pairs_phrase": len(result.pairs_phrase),
            "n_clusters": len(result.affines),
            "mask_area_fraction": round(area, 6),
            "timings": {k: round(v, 4) for k, v in result.timings.items()},
            "versions": bench_mod._versions(),
        }
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=1)
        print(f"report -> {args.report}")
    if args.dump_debug:
        dbg = args.dump_debug
        os.makedirs(dbg, exist_ok=True)
        imaging.save_mask(result.mask, os.path.join(dbg, "mask_fused.png"))
        imaging.save_mask(result.ssim_mask, os.path.join(dbg, "mask_ssim.png"))
        imaging.save_mask(result.roi_mask, os.path.join(dbg, "mask_roi.png"))
        kps = result.keypoints
        with open(os.path.join(dbg, "keypoints.csv"), "w") as fh:
            fh.write("x,y,sigma,response\n")
            for row in kps:
                fh.write(f"{row[0]:.2f},{row[1]:.2f},{row[2]:.3f},{row[3]:.5f}\n")
        _write_pairs_csv(os.path.join(dbg, "pairs_word.csv"),
                         result.pairs_word, kps)
        _write_pairs_csv(os.path.join(dbg, "pairs_phrase.csv"),
                         result.pairs_phrase, kps)
        pipe_mod.save_config(cfg, os.path.join(dbg, "config.txt"))
        print(f"debug dump -> {dbg}")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_cfg(args.config)
    out_dir = args.out or "bench_out"
    if args.ablate:
        fn = {"nn": bench_mod.ablate_nn,
              "phrase": bench_mod.ablate_phrase,
              "fusion": bench_mod.ablate_fusion}[args.ablate]
        report = fn(args.dataset, cfg=cfg, out_dir=out_dir, limit=args.limit)
        print(json.dumps({k: v for k, v in report.items() if k != "records"},
                         indent=1))
        return 0
    report = bench_mod.run_benchmark(
        args.dataset, cfg=cfg, out_dir=out_dir, attacks=args.attack,
        nn_strategy=args.nn_strategy, workers=args.workers,
        limit=args.limit, free_params=args.free_params)
    agg = report["aggregates"]
    if agg["n_images"] == 0:
        print("no scored images")
        return 0
    print(f"{agg['n_images']} records -> {out_dir}")
    for key in ("mean_precision", "mean_recall", "mean_f1"):
        if key in agg:
            print(f"  {key}: {agg[key]:.4f}")
    if "clean_max_fp_area" in agg:
        print(f"  clean_max_fp_area: {agg['clean_max_fp_area']:.6f}")
    return 0


def _parse_region(text):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("expected x,y,w,h")
    return tuple(int(p) for p in parts)


def _parse_offset(text):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected dx,dy")
    return tuple(int(p) for p in parts)


def cmd_forge(args) -> int:
    img = imaging.load_image(args.image)
    forged, truth = forge_mod.make_forgery(
        img, args.region, args.offset, rotation=args.rotate, scale=args.scale)
    stem, _ = os.path.splitext(args.image)
    out = args.out or stem + "_forged.png"
    mask_out = args.mask or stem + "_forged_mask.png"
    imaging.save_image(forged, out)
    imaging.save_mask(truth, mask_out)
    print(f"forged image -> {out}")
    print(f"truth mask   -> {mask_out}")
    return 0


def cmd_corpus(args) -> int:
    doc = forge_mod.generate_corpus(args.out_dir, variant=args.variant,
                                    seed=args.seed)
    n = len(doc["images"])
    print(f"{n} images -> {args.out_dir} (variant={args.variant}, "
          f"seed={args.seed})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cmfd", description="copy-move forgery detection toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("detect", help="locate copy-move forgery in one image")
    d.add_argument("image")
    d.add_argument("--config", help="key-value config file")
    d.add_argument("--out", help="write the fused mask as a PNG")
    d.add_argument("--report", help="write a JSON run report")
    d.add_argument("--dump-debug", help="directory for intermediate outputs")
    d.set_defaults(fn=cmd_detect)

    b = sub.add_parser("bench", help="score a dataset directory")
    b.add_argument("dataset")
    b.add_argument("--attack", action="append", metavar="NAME=VALUE",
                   help="apply an attack before scoring; VALUE may be a "
                        "single number or a start:step:stop sweep, and the "
                        "flag repeats")
    b.add_argument("--nn-strategy", choices=("2nn", "g2nn", "rg2nn", "i2nn"))
    b.add_argument("--ablate", choices=("nn", "phrase", "fusion"))
    b.add_argument("--config", help="key-value config file")
    b.add_argument("--out", help="output directory (default bench_out)")
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--limit", type=int, help="score only the first N images")
    b.add_argument("--free-params", action="store_true",
                   help="allow attack values outside the standard grids")
    b.set_defaults(fn=cmd_bench)

    f = sub.add_parser("forge", help="build a copy-move forgery from an image")
    f.add_argument("image")
    f.add_argument("--region", required=True, type=_parse_region,
                   metavar="x,y,w,h")
    f.add_argument("--offset", required=True, type=_parse_offset,
                   metavar="dx,dy")
    f.add_argument("--rotate", type=float, default=0.0, metavar="D",
                   help="rotate the copied region by D degrees before pasting")
    f.add_argument("--scale", type=float, default=1.0, metavar="F",
                   help="rescale the copied region by F before pasting")
    f.add_argument("--out", help="output image path")
    f.add_argument("--mask", help="output truth mask path")
    f.set_defaults(fn=cmd_forge)

    c = sub.add_parser("corpus", help="generate a synthetic benchmark corpus")
    c.add_argument("out_dir")
    c.add_argument("--variant", choices=("standard", "multi"),
                   default="standard")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_corpus)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
