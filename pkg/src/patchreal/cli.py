"""Command-line entry points.

Subcommands: index-build, train, enhance, benchmark, eval-kid,
match-report. Run ``patchreal <subcommand> --help`` for options.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from patchreal import benchmark as bench_mod
from patchreal import evaluation
from patchreal.data import DatasetSpec, load_paired_split
from patchreal.embedding import PatchEncoder
from patchreal.index import PatchIndex, build_index
from patchreal.training import TrainingConfig, train


def _add_device(parser):
    parser.add_argument("--device", default=None, help="cpu, cuda, ... (default: auto)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchreal",
        description="Hybrid patch-based photorealism enhancement toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index-build", help="embed real-image patches into an exact L2 index")
    p.add_argument("--real-dir", required=True, help="directory of real-world images")
    p.add_argument("--out", required=True, help="output index directory")
    p.add_argument("--resolution", type=int, default=512, help="preprocess size (square)")
    p.add_argument("--patch-size", type=int, default=196)
    p.add_argument("--backbone", choices=("pretrained", "random"), default="pretrained")
    p.add_argument("--backbone-seed", type=int, default=0, help="seed for --backbone random")
    _add_device(p)

    p = sub.add_parser("train", help="run the adversarial training loop")
    p.add_argument("--config", required=True, help="flat YAML mirroring TrainingConfig "
                   "plus synthetic_root/enhanced_root/split dataset keys")
    p.add_argument("--mode", choices=("hybrid", "enhanced-only"), default=None,
                   help="override the config file's mode")
    p.add_argument("--index", default=None, help="patch index directory (hybrid mode)")
    p.add_argument("--out", required=True, help="run directory")
    _add_device(p)

    p = sub.add_parser("enhance", help="feed-forward enhancement of a directory of images")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", choices=("pad", "strict"), default="pad",
                   help="handling of sizes not divisible by 8")
    _add_device(p)

    p = sub.add_parser("benchmark", help="latency/FPS/memory benchmark")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--res", default="1280x720,1920x1080",
                   help="comma-separated WxH resolutions")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--warmup", type=int, default=10)
    p.add_argument("--report", default=None, help="write the report table to this file")
    p.add_argument("--reference", action="store_true",
                   help="append published reference rows to the table")
    _add_device(p)

    p = sub.add_parser("eval-kid", help="kernel distance between two image directories")
    p.add_argument("--set-a", required=True)
    p.add_argument("--set-b", required=True)
    p.add_argument("--subset", type=int, default=100)
    p.add_argument("--subsets", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extractor", choices=("inception", "random"), default="inception")
    p.add_argument("--cache-dir", default=None, help="feature cache directory")
    _add_device(p)

    p = sub.add_parser("match-report", help="contact sheets of generated vs matched patches")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    _add_device(p)

    return parser


def _cmd_index_build(args) -> int:
    encoder = PatchEncoder(
        weights=args.backbone, seed=args.backbone_seed, device=args.device
    )
    spec = DatasetSpec(root=args.real_dir, kind="real")
    index = build_index(
        spec,
        encoder,
        resolution=(args.resolution, args.resolution),
        patch_size=args.patch_size,
        out=args.out,
    )
    print(
        f"indexed {len(index)} patches from {len(index) // 4} images "
        f"(dim={index.dim}, backbone={index.backbone_id}) -> {args.out}"
    )
    return 0


def _cmd_train(args) -> int:
    raw = yaml.safe_load(Path(args.config).read_text()) or {}
    synthetic_root = raw.pop("synthetic_root")
    enhanced_root = raw.pop("enhanced_root")
    split = raw.pop("split", "train")
    manifest = raw.pop("split_manifest", None)
    if args.mode is not None:
        raw["mode"] = args.mode
    config = TrainingConfig.from_mapping(raw)

    pairs = load_paired_split(
        DatasetSpec(root=synthetic_root, kind="synthetic"),
        DatasetSpec(root=enhanced_root, kind="enhanced"),
        split=split,
        resolution=(config.resolution, config.resolution),
        seed=config.seed,
        manifest=manifest,
        report_path=Path(args.out) / "pairing_report.txt",
    )
    print(pairs.report.summary())

    index = encoder = None
    if config.mode == "hybrid":
        if args.index is None:
            print("error: hybrid mode requires --index", file=sys.stderr)
            return 2
        index = PatchIndex.load(args.index)
        encoder = PatchEncoder.from_backbone_id(index.backbone_id, device=args.device)

    result = train(
        config, pairs, index=index, encoder=encoder,
        out_dir=args.out, device=args.device,
    )
    last = result.records[-1]
    print(
        f"finished {last.step} steps; final losses d={last.loss_d:.4f} "
        f"adv={last.loss_g_adv:.4f} l1={last.loss_g_l1:.4f}"
    )
    print(f"checkpoints: {[str(c) for c in result.checkpoints]}")
    return 0


def _cmd_enhance(args) -> int:
    from patchreal.inference import enhance

    written = enhance(
        args.ckpt, args.in_dir, args.out,
        resolution_policy=args.policy, device=args.device,
    )
    print(f"enhanced {len(written)} images -> {args.out}")
    return 0


def _cmd_benchmark(args) -> int:
    resolutions = bench_mod.parse_resolutions(args.res)
    reports = bench_mod.benchmark(
        args.ckpt, resolutions, runs=args.runs, warmup=args.warmup, device=args.device
    )
    table = bench_mod.format_report(reports, include_reference=args.reference)
    print(table)
    if args.report:
        Path(args.report).parent.mkdir(parents=True, exist_ok=True)
        Path(args.report).write_text(table + "\n")
        print(f"report written to {args.report}")
    return 0


def _cmd_eval_kid(args) -> int:
    extractor = evaluation.FeatureExtractor(kind=args.extractor, device=args.device)
    set_a = evaluation.features_from_directory(
        args.set_a, extractor, cache_dir=args.cache_dir
    )
    set_b = evaluation.features_from_directory(
        args.set_b, extractor, cache_dir=args.cache_dir
    )
    estimate = evaluation.compute_kid(
        set_a, set_b, subset_size=args.subset, n_subsets=args.subsets, seed=args.seed
    )
    print(f"set-a: {set_a.image_count} images, set-b: {set_b.image_count} images")
    print(f"extractor: {extractor.extractor_id}")
    print(estimate.summary())
    print("note: values are x100 (standard reporting convention)")
    return 0


def _cmd_match_report(args) -> int:
    index = PatchIndex.load(args.index)
    encoder = PatchEncoder.from_backbone_id(index.backbone_id, device=args.device)
    sheets = evaluation.match_report(
        args.ckpt, index, args.images, args.out, encoder,
        device=args.device or "cpu",
    )
    print(f"wrote {len(sheets)} contact sheets -> {args.out}")
    return 0


_COMMANDS = {
    "index-build": _cmd_index_build,
    "train": _cmd_train,
    "enhance": _cmd_enhance,
    "benchmark": _cmd_benchmark,
    "eval-kid": _cmd_eval_kid,
    "match-report": _cmd_match_report,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
