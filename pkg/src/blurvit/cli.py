"""Command line interface.

Subcommands cover the full workflow: `prepare` blurs a folder dataset
into curriculum groups, `train` fits the model on a prepared directory,
`eval` scores a checkpoint on held-out images (never blurred), `compare`
tabulates evaluation reports, and `preview-blur` renders the blur levels
of a single image.

Exit codes: 0 success, 1 runtime failure, 2 usage error.  Relative
output paths are rooted at $BLURVIT_OUTPUT_ROOT when it is set.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import blur as _blur
from . import data as _data
from . import metrics as _metrics
from .checkpoint import ChecksumError, ConfigMismatchError, load_checkpoint
from .training import (FINAL_CHECKPOINT, TrainConfig, evaluate_model,
                       predict_proba, train)
from .vit import ViTConfig, n_parameters

OUTPUT_ROOT_ENV = "BLURVIT_OUTPUT_ROOT"

# canonical defaults for `train`; a config file may override any of
# them, explicit flags beat both
TRAIN_DEFAULTS = {
    "patch_size": 16,
    "latent_dim": 32,
    "heads": 4,
    "n_blocks": 4,
    "mlp_ratio": 4,
    "pos_mode": "sinusoidal",
    "precision": "float64",
    "epochs": 30,
    "batch_size": 16,
    "learning_rate": 3e-4,
    "optimizer": "adam",
    "curriculum_mode": "ordered",
    "seed": 0,
    "checkpoint_every": 0,
}


class CliError(Exception):
    """Raised for runtime failures that should exit with status 1."""


def _out_path(raw):
    root = os.environ.get(OUTPUT_ROOT_ENV)
    path = Path(raw)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def _claim_out_dir(path, force):
    path = _out_path(path)
    if path.exists():
        if not path.is_dir():
            raise CliError(f"{path} exists and is not a directory")
        if any(path.iterdir()) and not force:
            raise CliError(f"{path} is not empty; pass --force to write into it")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _claim_out_file(path, force):
    path = _out_path(path)
    if path.exists() and not force:
        raise CliError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _add_force(p):
    p.add_argument("--force", action="store_true",
                   help="allow writing into an existing, non-empty target")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="blurvit",
        description="Blur-curriculum training for a compact vision transformer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="blur a folder dataset into curriculum groups")
    p.add_argument("--data-root", required=True,
                   help="dataset root, one subdirectory per class (.png/.ppm)")
    p.add_argument("--out", required=True, help="output curriculum directory")
    p.add_argument("--levels", type=int, default=10, help="number of blur levels k")
    p.add_argument("--image-size", type=int, nargs=2, default=[32, 32],
                   metavar=("H", "W"), help="resize every sample to this size")
    p.add_argument("--seed", type=int, default=0, help="partition seed")
    _add_force(p)

    p = sub.add_parser("train", help="fit the model on a prepared curriculum")
    p.add_argument("--curriculum", required=True, help="directory made by prepare")
    p.add_argument("--out", required=True, help="run directory for checkpoints and logs")
    p.add_argument("--config", help="JSON file of defaults; flags still win")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--patch-size", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--n-blocks", type=int)
    p.add_argument("--mlp-ratio", type=int)
    p.add_argument("--pos-mode", choices=["sinusoidal", "learned"])
    p.add_argument("--precision", choices=["float64", "float32"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--optimizer", choices=["adam", "sgd"])
    p.add_argument("--curriculum-mode", choices=["ordered", "staged"])
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint-every", type=int,
                   help="save a snapshot every N epochs (0 = final only)")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch lines")
    _add_force(p)

    p = sub.add_parser("eval", help="score a checkpoint on a labelled folder")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-root", required=True,
                   help="held-out dataset root; images are never blurred")
    p.add_argument("--out", required=True, help="directory for report.json and ROC files")
    p.add_argument("--batch-size", type=int, default=64)
    _add_force(p)

    p = sub.add_parser("compare", help="tabulate evaluation reports side by side")
    p.add_argument("runs", nargs="+", metavar="NAME=REPORT",
                   help="named report.json paths; the last entry is the baseline")
    p.add_argument("--out", required=True, help="comparison JSON path")
    _add_force(p)

    p = sub.add_parser("preview-blur", help="render one image at every blur level")
    p.add_argument("--image", required=True, help="input .png or .ppm")
    p.add_argument("--levels", type=int, default=10)
    p.add_argument("--out", required=True, help="output PNG strip")
    _add_force(p)

    return parser


def _cmd_prepare(args):
    root = Path(args.data_root)
    dataset = _data.scan_folder(root)
    out_dir = _claim_out_dir(args.out, args.force)
    schedule = _blur.make_schedule(args.levels)
    part = _blur.partition(len(dataset.samples), args.levels, args.seed)
    manifest = _blur.write_curriculum(dataset, root, schedule, part, out_dir,
                                      tuple(args.image_size), args.seed)
    sizes = part.group_sizes()
    print(f"prepared {len(manifest['samples'])} samples into {args.levels} groups "
          f"under {out_dir}")
    print("group sizes (level 0 = sharpest): " + ", ".join(str(s) for s in sizes))
    return 0


def _merged_train_settings(args):
    """default < config file < explicit flag, with provenance per key."""
    settings = dict(TRAIN_DEFAULTS)
    provenance = {k: "default" for k in settings}
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}")
        unknown = sorted(set(loaded) - set(settings))
        if unknown:
            raise CliError(f"unknown config keys: {', '.join(unknown)}; "
                           f"valid keys: {', '.join(sorted(settings))}")
        for key, value in loaded.items():
            settings[key] = value
            provenance[key] = "config-file"
    for key in TRAIN_DEFAULTS:
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
            provenance[key] = "flag"
    return settings, provenance


def _cmd_train(args):
    settings, provenance = _merged_train_settings(args)
    dataset = _blur.load_curriculum(args.curriculum)
    manifest = _blur.read_curriculum_manifest(args.curriculum)
    model_config = ViTConfig(
        image_hw=tuple(manifest["image_size"]), channels=manifest["channels"],
        patch_size=settings["patch_size"], latent_dim=settings["latent_dim"],
        heads=settings["heads"], n_blocks=settings["n_blocks"],
        mlp_ratio=settings["mlp_ratio"], n_classes=len(manifest["classes"]),
        pos_mode=settings["pos_mode"], precision=settings["precision"])
    train_config = TrainConfig(
        epochs=settings["epochs"], batch_size=settings["batch_size"],
        learning_rate=settings["learning_rate"], optimizer=settings["optimizer"],
        curriculum_mode=settings["curriculum_mode"], seed=settings["seed"],
        checkpoint_every=settings["checkpoint_every"])
    out_dir = _claim_out_dir(args.out, args.force)
    meta = {"source_hash": manifest["source_hash"],
            "classes": manifest["classes"],
            "config_provenance": provenance}
    print(f"training on {len(dataset)} samples, {manifest['k']} blur groups, "
          f"{n_parameters(model_config)} parameters")
    result = train(dataset, model_config, train_config, out_dir=out_dir,
                   resume_from=args.resume, meta=meta, verbose=not args.quiet)
    last = result.history[-1]
    print(f"done: final epoch loss {last['mean_loss']:.4f}, "
          f"train accuracy {last['train_accuracy']:.3f}")
    print(f"checkpoint: {out_dir / FINAL_CHECKPOINT}")
    return 0


def _cmd_eval(args):
    ck = load_checkpoint(args.checkpoint)
    class_names = ck.meta.get("classes")
    if not class_names:
        class_names = [str(c) for c in range(ck.config.n_classes)]
    test = _data.scan_folder(Path(args.data_root))
    if list(test.classes) != list(class_names):
        raise CliError(f"test classes {list(test.classes)} do not match "
                       f"checkpoint classes {list(class_names)}")
    trained_on = ck.meta.get("source_hash")
    if trained_on and trained_on == test.content_hash:
        print("WARNING: evaluation data is byte-identical to the training data; "
              "these scores do not measure generalization", file=sys.stderr)
    out_dir = _claim_out_dir(args.out, args.force)
    h, w = ck.config.image_hw
    images = np.stack([
        _data.decode_and_resize(Path(args.data_root) / rel, h, w,
                                channels=ck.config.channels)
        for rel, _ in test.samples])
    labels = test.labels()
    report = evaluate_model(ck.params, ck.config, images, labels, class_names,
                            batch_size=args.batch_size)
    report["data_hash"] = test.content_hash
    _metrics.write_report(out_dir / "report.json", report)
    if ck.config.n_classes == 2 and (labels == 1).any() and (labels == 0).any():
        prob = predict_proba(ck.params, ck.config, images, batch_size=args.batch_size)
        fpr, tpr, thresholds = _metrics.roc_points(labels, prob[:, 1])
        _metrics.roc_csv(out_dir / "roc.csv", fpr, tpr, thresholds)
        _metrics.roc_svg(out_dir / "roc.svg", fpr, tpr)
    for key in _metrics.HEADLINE_METRICS:
        print(f"{key:<9} {report[key]:.4f}")
    if report["degenerate"]:
        for note in report["degenerate"]:
            print(f"note: {note}", file=sys.stderr)
    print(f"report: {out_dir / 'report.json'}")
    return 0


def _cmd_compare(args):
    named = []
    for entry in args.runs:
        name, sep, path = entry.partition("=")
        if not sep or not name or not path:
            raise CliError(f"expected NAME=REPORT, got {entry!r}")
        named.append((name, _metrics.read_report(path)))
    if len(named) < 2:
        raise CliError("compare needs at least two NAME=REPORT entries")
    comparison = _metrics.compare_reports(named)
    out = _claim_out_file(args.out, args.force)
    out.write_text(json.dumps(comparison, sort_keys=True, indent=1) + "\n")
    print(_metrics.format_compare_table(comparison))
    print(f"comparison: {out}")
    return 0


def _cmd_preview_blur(args):
    img = _data.decode_image(args.image)
    schedule = _blur.make_schedule(args.levels)
    strip = _blur.blur_strip(img, schedule)
    out = _claim_out_file(args.out, args.force)
    _data.save_png(out, strip)
    print(f"wrote {args.levels}-level strip to {out}")
    return 0


_COMMANDS = {
    "prepare": _cmd_prepare,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
    "preview-blur": _cmd_preview_blur,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (CliError, ChecksumError, ConfigMismatchError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
