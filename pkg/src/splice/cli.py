"""Command-line surface: synth, segment, splice, mosaic, embed, index, search, eval.

Exit codes: 0 success, 1 usage error, 2 data/format error. All randomness
is controlled by --seed; identical inputs and seed give bit-identical
file outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import synth as synth_mod
from .barcode import build_archive as build_barcode_archive
from .barcode import load_archive, save_archive, search
from .embedding import ingest_external_features, write_features
from .errors import SpliceError
from .evaluation import accounting, compute_metrics, leave_one_out
from .mosaic import MosaicConfig, load_mosaics, save_mosaics
from .pipeline import (
    load_manifest,
    build_collage,
    build_mosaic,
    embed_patches,
    run_selection_pipeline,
)
from .pyramid import level_for_magnification, load_image
from .segmentation import segment_tissue
from .splice_core import SpliceConfig, load_collages, save_collages

USAGE_ERROR = 1
DATA_ERROR = 2


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _load_config_file(path: str | None) -> dict:
    """Key=value config file; '#' starts a comment."""
    if path is None:
        return {}
    cfg = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpliceError(f"config file {path}: bad line {line!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def _resolve(cli_value, config: dict, key: str, default, cast):
    """Precedence: CLI flag > config file > built-in default."""
    if cli_value is not None:
        return cli_value
    if key in config:
        return cast(config[key])
    return default


def _splice_config(args, config) -> SpliceConfig:
    return SpliceConfig(
        percentile_k=_resolve(args.percentile, config, "percentile", 30.0, float),
        patch_size=_resolve(args.patch_size, config, "patch_size", 32, int),
        magnification=_resolve(args.magnification, config, "magnification", 0.625, float),
        bins_per_channel=_resolve(args.bins, config, "bins_per_channel", 8, int),
    )


def _mosaic_config(args, config) -> MosaicConfig:
    return MosaicConfig(
        seed=_resolve(args.seed, config, "seed", 0, int),
        color_k=_resolve(args.color_k, config, "color_k", 9, int),
        select_fraction=_resolve(args.fraction, config, "fraction", 0.05, float),
    )


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--verbose", action="store_true", help="print the effective config")
    p.add_argument("--seed", type=int, default=None, help="PRNG seed")
    p.add_argument("--jobs", type=int, default=None, help="worker parallelism cap")


def _add_selection_flags(p: argparse.ArgumentParser):
    p.add_argument("--percentile", type=float, default=None, help="sequential-selection percentile k")
    p.add_argument("--patch-size", dest="patch_size", type=int, default=None)
    p.add_argument("--magnification", type=float, default=None, help="selection magnification")
    p.add_argument("--bins", type=int, default=None, help="histogram bins per channel")
    p.add_argument("--color-k", dest="color_k", type=int, default=None)
    p.add_argument("--fraction", type=float, default=None, help="per-cluster selection fraction")


def build_parser() -> _ArgumentParser:
    parser = _ArgumentParser(prog="splice", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    synth_sub = p.add_subparsers(dest="synth_command")
    g = synth_sub.add_parser("generate")
    g.add_argument("--out", required=True)
    g.add_argument("--per-class", dest="per_class", type=int, default=None)
    g.add_argument("--image-size", dest="image_size", type=int, default=None)
    _add_common(g)

    p = sub.add_parser("segment", help="dump tissue masks as PNGs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_selection_flags(p)
    _add_common(p)

    p = sub.add_parser("splice", help="build collages")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_selection_flags(p)
    _add_common(p)

    p = sub.add_parser("mosaic", help="build mosaics")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_selection_flags(p)
    _add_common(p)

    p = sub.add_parser("embed", help="compute or ingest patch features")
    p.add_argument("--method", choices=["histogram", "external"], required=True)
    p.add_argument("--manifest")
    p.add_argument("--selection", help="collage or mosaic JSON")
    p.add_argument("--features", help="external feature CSV (method=external)")
    p.add_argument("--embed-magnification", dest="embed_magnification", type=float, default=None)
    p.add_argument("--out", required=True)
    _add_selection_flags(p)
    _add_common(p)

    p = sub.add_parser("index", help="archive operations")
    index_sub = p.add_subparsers(dest="index_command")
    b = index_sub.add_parser("build")
    b.add_argument("--features", required=True)
    b.add_argument("--manifest", required=True)
    b.add_argument("--out", required=True)
    _add_common(b)

    p = sub.add_parser("search", help="query an archive")
    p.add_argument("--archive", required=True)
    p.add_argument("--query", required=True, help="wsi id of the query set")
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--exclude-self", action="store_true")
    _add_common(p)

    p = sub.add_parser("eval", help="evaluation protocols")
    eval_sub = p.add_subparsers(dest="eval_command")
    e = eval_sub.add_parser("loo")
    e.add_argument("--manifest", required=True)
    e.add_argument("--method", choices=["splice", "mosaic", "full"], default="splice")
    e.add_argument("--top", default="1,3,5", help="comma-separated top-n values")
    e.add_argument("--report", required=True, help="JSON report path (a .csv twin is written too)")
    e.add_argument("--fallback-top1", action="store_true",
                   help="fall back to the top-1 label instead of abstaining")
    e.add_argument("--embed-magnification", dest="embed_magnification", type=float, default=None)
    _add_selection_flags(e)
    _add_common(e)

    return parser


def _load_selection_patches(path: str) -> dict[str, list]:
    """Accept either collage or mosaic JSON and return patches per wsi."""
    data = json.loads(Path(path).read_text())
    if data and "pass_index" in (data[0]["entries"][0] if data[0]["entries"] else {}):
        return {c.wsi_id: c.patches for c in load_collages(path)}
    return {m.wsi_id: m.patches for m in load_mosaics(path)}


def _cmd_synth(args, config) -> int:
    seed = _resolve(args.seed, config, "seed", 0, int)
    per_class = _resolve(args.per_class, config, "per_class", 12, int)
    image_size = _resolve(args.image_size, config, "image_size", 1024, int)
    spec = synth_mod.default_spec(seed=seed, per_class=per_class, image_size=image_size)
    manifest = synth_mod.generate_corpus(spec, args.out)
    print(manifest)
    return 0


def _cmd_segment(args, config) -> int:
    scfg = _splice_config(args, config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in load_manifest(args.manifest):
        pyramid = load_image(entry.path, entry.base_magnification)
        _, factor = level_for_magnification(pyramid, scfg.magnification)
        mask = segment_tissue(pyramid, factor)
        Image.fromarray((mask.bits * np.uint8(255))).save(out_dir / f"{entry.id}_mask.png")
    return 0


def _cmd_splice(args, config) -> int:
    scfg = _splice_config(args, config)
    collages = []
    for entry in load_manifest(args.manifest):
        pyramid = load_image(entry.path, entry.base_magnification)
        pyramid.id = entry.id
        collages.append(build_collage(pyramid, scfg))
    save_collages(collages, args.out)
    return 0


def _cmd_mosaic(args, config) -> int:
    scfg = _splice_config(args, config)
    mcfg = _mosaic_config(args, config)
    mosaics = []
    for entry in load_manifest(args.manifest):
        pyramid = load_image(entry.path, entry.base_magnification)
        pyramid.id = entry.id
        mosaics.append(build_mosaic(pyramid, mcfg, scfg))
    save_mosaics(mosaics, args.out)
    return 0


def _cmd_embed(args, config) -> int:
    if args.method == "external":
        if not args.features:
            raise SpliceError("--features is required with --method external")
        features = ingest_external_features(args.features)
        write_features(features, args.out)
        return 0
    if not args.manifest or not args.selection:
        raise SpliceError("--manifest and --selection are required with --method histogram")
    patches_by_wsi = _load_selection_patches(args.selection)
    features = []
    for entry in load_manifest(args.manifest):
        if entry.id not in patches_by_wsi:
            continue
        pyramid = load_image(entry.path, entry.base_magnification)
        pyramid.id = entry.id
        features.extend(
            embed_patches(pyramid, patches_by_wsi[entry.id], args.embed_magnification)
        )
    write_features(features, args.out)
    return 0


def _cmd_index(args, config) -> int:
    features = ingest_external_features(args.features)
    labels = {e.id: e.label for e in load_manifest(args.manifest)}
    by_wsi: dict[str, list] = {}
    for fv in features:
        by_wsi.setdefault(fv.wsi_id, []).append(fv)
    unknown = set(by_wsi) - set(labels)
    if unknown:
        raise SpliceError(f"features reference ids missing from manifest: {sorted(unknown)}")
    archive = build_barcode_archive(by_wsi, labels)
    save_archive(archive, args.out)
    return 0


def _cmd_search(args, config) -> int:
    archive = load_archive(args.archive)
    query = archive.get(args.query)
    exclude = args.query if args.exclude_self else None
    for wsi_id, label, dist in search(archive, query, args.top, exclude_id=exclude):
        print(f"{wsi_id}\t{label}\t{dist:g}")
    return 0


def _cmd_eval(args, config) -> int:
    scfg = _splice_config(args, config)
    mcfg = _mosaic_config(args, config)
    jobs = _resolve(args.jobs, config, "jobs", os.cpu_count() or 1, int)
    n_values = sorted({int(v) for v in args.top.split(",")})
    manifest = load_manifest(args.manifest)
    result = run_selection_pipeline(
        manifest, args.method, scfg, mcfg,
        embed_magnification=args.embed_magnification, jobs=jobs,
    )
    loo = leave_one_out(result.archive, n_values, fallback_top1=args.fallback_top1)
    classes = {e.label for e in manifest}
    metrics = {n: compute_metrics(res, classes) for n, res in loo.items()}
    acct = accounting(result.archive, n_values)

    report = {
        "method": args.method,
        "config": scfg.to_dict() if args.method != "mosaic" else mcfg.to_dict(),
        "metrics": {str(n): m.to_dict() for n, m in metrics.items()},
        "accounting": acct.to_dict(),
        "tissue_patch_counts": result.tissue_counts,
    }
    report_path = Path(args.report)
    report_path.write_text(json.dumps(report, indent=2) + "\n")

    csv_path = report_path.with_suffix(".csv")
    counts = np.array(acct.patch_counts, dtype=np.float64)
    with open(csv_path, "w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["method", "n_patches", "patches_per_wsi_mean", "patches_per_wsi_std",
             "storage_kb", "time_sec", "top_n", "accuracy",
             "macro_precision", "macro_recall", "macro_f1"]
        )
        for n in n_values:
            m = metrics[n]
            writer.writerow([
                args.method, int(counts.sum()), f"{counts.mean():.3f}", f"{counts.std():.3f}",
                f"{sum(acct.storage_bytes) / 1024.0:.3f}", f"{acct.search_seconds:.4f}",
                n, f"{m.accuracy:.6f}", f"{m.macro_precision:.6f}",
                f"{m.macro_recall:.6f}", f"{m.macro_f1:.6f}",
            ])
    if args.verbose:
        for n in n_values:
            print(f"top-{n}: macro_f1={metrics[n].macro_f1:.4f} accuracy={metrics[n].accuracy:.4f}")
    return 0


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    dispatch = {
        "synth": _cmd_synth,
        "segment": _cmd_segment,
        "splice": _cmd_splice,
        "mosaic": _cmd_mosaic,
        "embed": _cmd_embed,
        "index": _cmd_index,
        "search": _cmd_search,
        "eval": _cmd_eval,
    }
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    if args.command == "synth" and args.synth_command != "generate":
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    if args.command == "index" and args.index_command != "build":
        parser.print_usage(sys.stderr)
        return USAGE_ERROR
    if args.command == "eval" and args.eval_command != "loo":
        parser.print_usage(sys.stderr)
        return USAGE_ERROR

    try:
        config = _load_config_file(getattr(args, "config", None))
        if getattr(args, "verbose", False):
            shown = {k: v for k, v in vars(args).items() if v is not None and k != "command"}
            print(f"effective options: {shown}", file=sys.stderr)
        return dispatch[args.command](args, config)
    except SpliceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
