"""``skullrec`` command-line entry point.

Exit codes: 0 success, 1 data or runtime error, 2 usage error. Results
(paths, JSON) go to stdout; logs go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .checkpoint import VERSION as CHECKPOINT_VERSION
from .checkpoint import load_checkpoint
from .defects import GEOMETRY_FIELDS, KINDS, DatasetManifest, DefectSpec, build_pairs
from .formats import FORMATS, format_for_path, load_volume, save_volume
from .registration import DEFAULT_THRESHOLD, extract_implant
from .training import TrainConfig, evaluate, reconstruct, split_dataset, train
from .volume import binarize
from .voxel_ops import phantom

log = logging.getLogger("skullrec")


class UsageError(Exception):
    pass


def _dims(text: str) -> tuple[int, int, int]:
    try:
        dims = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y,Z integers, got {text!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected three positive integers, got {text!r}")
    return dims


def _counts(text: str) -> tuple[int, int, int]:
    try:
        counts = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected TRAIN,VAL,TEST integers, got {text!r}") from None
    if len(counts) != 3 or min(counts) < 0:
        raise argparse.ArgumentTypeError(f"expected three non-negative integers, got {text!r}")
    return counts


def _fmt(path, override: str | None) -> str:
    if override:
        return override
    try:
        return format_for_path(path)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _emit(obj) -> None:
    if isinstance(obj, (dict, list)):
        print(json.dumps(obj, indent=2, sort_keys=True))
    else:
        print(obj)


def cmd_convert(args) -> int:
    fmt_in = _fmt(args.input, args.format_in)
    fmt_out = _fmt(args.out, args.format)
    vol = load_volume(args.input, fmt_in)
    save_volume(args.out, vol, fmt_out)
    _emit(str(args.out))
    return 0


def cmd_phantom(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    out = Path(args.out)
    if args.count == 1 and out.suffix:
        fmt = _fmt(out, args.format)
        save_volume(out, phantom(args.seed, args.dims), fmt)
        _emit(str(out))
        return 0
    fmt = args.format or "nii.gz"
    rows = []
    for i in range(args.count):
        seed = args.seed + i
        path = out / f"phantom_{seed:05d}.{fmt}"
        save_volume(path, phantom(seed, args.dims), fmt)
        rows.append({"id": f"phantom_{seed:05d}", "complete": path.name})
    manifest = DatasetManifest(rows, out)
    manifest.save(out / "completes.json")
    _emit(str(out / "completes.json"))
    return 0


def _base_specs(text: str | None) -> tuple[dict, dict]:
    """Parse --spec into ({kind: DefectSpec}, {kind: geometry fields given explicitly})."""
    if not text:
        return {}, {}
    path = Path(text)
    raw = json.loads(path.read_text() if path.is_file() else text)
    if "kind" in raw:
        raw = {raw["kind"]: raw}
    unknown = set(raw) - set(KINDS)
    if unknown:
        raise UsageError(f"--spec has unknown defect kinds: {sorted(unknown)}")
    specs = {k: DefectSpec.from_json({**v, "kind": k}) for k, v in raw.items()}
    pinned = {k: tuple(f for f in GEOMETRY_FIELDS[k] if f in v) for k, v in raw.items()}
    return specs, pinned


def cmd_inject(args) -> int:
    try:
        specs, pinned = _base_specs(args.spec)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"bad --spec: {exc}") from None
    manifest_in = DatasetManifest.load(args.manifest_in)
    if args.split:
        manifest_in = DatasetManifest(
            split_dataset(manifest_in.entries, args.split, args.seed).entries, manifest_in.base_dir)
    out_path = Path(args.manifest_out)
    out_dir = Path(args.out_dir) if args.out_dir else out_path.parent
    manifest = build_pairs(manifest_in, out_dir, args.seed, args.kind, specs,
                           fmt=args.format or "nii.gz", manifest_dir=out_path.parent, pinned=pinned)
    manifest.save(out_path)
    skipped = sum(1 for e in manifest.entries if e.get("skipped"))
    log.info("wrote %d entries (%d skipped)", len(manifest.entries), skipped)
    _emit(str(out_path))
    return 0


def cmd_split(args) -> int:
    manifest_in = DatasetManifest.load(args.manifest_in)
    out = split_dataset(manifest_in.entries, args.counts, args.seed)
    DatasetManifest(out.entries).save(args.manifest_out)
    _emit(str(args.manifest_out))
    return 0


def cmd_train(args) -> int:
    cfg = TrainConfig.load(args.config)
    overrides = {}
    if args.manifest:
        overrides["manifest"] = str(Path(args.manifest).resolve())
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.checkpoint_dir:
        overrides["checkpoint_dir"] = str(Path(args.checkpoint_dir).resolve())
    if overrides:
        cfg = TrainConfig.from_json({**cfg.to_json(), **overrides})
    if not cfg.manifest:
        raise UsageError("no manifest given (config 'manifest' or --manifest)")
    manifest = DatasetManifest.load(cfg.manifest)
    ckpt = train(manifest, cfg, resume=args.resume, progress=sys.stderr)
    _emit({"checkpoint": str(Path(cfg.checkpoint_dir) / "last.skrc"), "epoch": ckpt.epoch, **ckpt.info})
    return 0


def cmd_evaluate(args) -> int:
    report = evaluate(load_checkpoint(args.ckpt), DatasetManifest.load(args.manifest), args.split)
    _emit(report)
    return 0


def cmd_reconstruct(args) -> int:
    fmt = _fmt(args.out, args.format)
    defective = binarize(load_volume(args.input))
    save_volume(args.out, reconstruct(load_checkpoint(args.ckpt), defective), fmt)
    _emit(str(args.out))
    return 0


def cmd_extract_implant(args) -> int:
    fmt = _fmt(args.out_implant, args.format)
    recon = binarize(load_volume(args.recon))
    defective = binarize(load_volume(args.defect))
    implant, result = extract_implant(recon, defective, args.threshold)
    save_volume(args.out_implant, implant, fmt)
    if args.out_transform:
        Path(args.out_transform).write_text(json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n")
    _emit({"implant": str(args.out_implant), "voxels": implant.count(), **result.to_json()})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="skullrec", description="Skull shape completion and implant extraction.")
    p.add_argument("--version", action="version",
                   version=f"skullrec {__version__} (checkpoint format {CHECKPOINT_VERSION})")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def fmt_opt(sp, flag="--format", dest="format"):
        sp.add_argument(flag, dest=dest, choices=FORMATS, help="override extension-based format detection")

    sp = sub.add_parser("convert", help="convert between NRRD and NIfTI")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    fmt_opt(sp)
    fmt_opt(sp, "--format-in", "format_in")
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("phantom", help="generate synthetic complete skulls")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--dims", type=_dims, required=True, help="X,Y,Z")
    sp.add_argument("--out", required=True, help="file (count 1) or directory")
    sp.add_argument("--count", type=int, default=1)
    fmt_opt(sp)
    sp.set_defaults(func=cmd_phantom)

    sp = sub.add_parser("inject", help="build defective/implant pairs from complete skulls")
    sp.add_argument("--manifest-in", required=True)
    sp.add_argument("--manifest-out", required=True)
    sp.add_argument("--kind", choices=KINDS + ("both",), required=True)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--spec", help="DefectSpec JSON (inline or file), or {kind: spec}; "
                    "geometry fields given here are used as-is, the rest are sampled")
    sp.add_argument("--split", type=_counts, help="TRAIN,VAL,TEST counts to assign before injecting")
    sp.add_argument("--out-dir", help="where volumes go (default: next to --manifest-out)")
    fmt_opt(sp)
    sp.set_defaults(func=cmd_inject)

    sp = sub.add_parser("split", help="assign train/val/test splits to a list of completes")
    sp.add_argument("--manifest-in", required=True)
    sp.add_argument("--manifest-out", required=True)
    sp.add_argument("--counts", type=_counts, required=True, help="TRAIN,VAL,TEST")
    sp.add_argument("--seed", type=int, required=True)
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("train", help="train the autoencoder")
    sp.add_argument("--config", required=True)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--manifest", help="override the config's manifest")
    sp.add_argument("--checkpoint-dir", help="override the config's checkpoint_dir")
    sp.add_argument("--epochs", type=int, help="override the config's epoch count")
    sp.add_argument("--workers", type=int, help="data-loading threads")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="Dice report on a manifest split")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("reconstruct", help="predict a complete skull from a defective one")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)
    fmt_opt(sp)
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("extract-implant", help="align reconstruction to the defective skull and subtract")
    sp.add_argument("--recon", required=True)
    sp.add_argument("--defect", required=True)
    sp.add_argument("--out-implant", required=True)
    sp.add_argument("--out-transform")
    sp.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD,
                    help="Dice needed to call the alignment converged")
    fmt_opt(sp)
    sp.set_defaults(func=cmd_extract_implant)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"skullrec {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
