"""Command-line front end.

Logs go to stderr; results go to files under the output directory, with
short machine-readable lines on stdout.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .errors import ConfigError, InputError, QuanvisionError
from .harness.config import ExperimentConfig, default_config, load_config, with_overrides
from .harness.data import _image_files, _read_image, _read_mask, generate_synthetic, write_corpus
from .harness.experiments import MODELS, prepare, run_stage1, run_stage2, train_one
from .harness.report import emit_report
from .imaging import (
    N_REGIONS,
    MaskLabeling,
    label_regions,
    load_categories,
    read_sidecar,
    save_annotation,
    split_image,
    stitch_predictions,
)
from .nn import evaluate, load_model, save_model, write_metrics
from .quanv import QuanvConfig, normalize_unit, quanvolve_batch, serialize_tensor

log = logging.getLogger("quanvision")


# ---- argument groups ----------------------------------------------------


def _add_config(p, stage_choice: bool = True):
    p.add_argument("--config", type=Path, help="experiment TOML file (default: the bundled config for the stage)")
    if stage_choice:
        p.add_argument("--stage", type=int, choices=(1, 2), default=1, help="bundled config to use without --config")


def _add_common(p):
    seeds = p.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int, help="single training seed (replaces the config's seed list)")
    seeds.add_argument("--seeds", type=int, nargs="+", help="list of training seeds")
    p.add_argument("--cache-dir", type=Path, help="quantum tensor cache directory")
    p.add_argument("--output-dir", type=Path, help="directory for results")
    p.add_argument("--dataset", type=Path, help="directory corpus instead of the synthetic generator")
    p.add_argument("--epochs", type=int, help="training epochs")


def _add_stage1(p):
    p.add_argument("--train-count", type=int, nargs="+", help="training-set size(s)")
    p.add_argument("--test-count", type=int, help="test-set size")


def _add_stage2(p):
    p.add_argument("--split", type=float, nargs="+", help="train fraction(s) of the image-level split, e.g. 0.5 0.4")
    p.add_argument("--threshold", type=float, help="mask fraction that makes a region positive")
    p.add_argument("--categories", type=Path, help="resolution category CSV (height,width,target,weight)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quanvision", description="Quanvolutional vs classical CNN crack detection experiments."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic crack corpus on disk")
    _add_config(p)
    p.add_argument("--count", type=int, required=True, help="images (stage 1) or images per resolution (stage 2)")
    p.add_argument("--output-dir", type=Path, required=True, help="corpus directory to create")
    p.add_argument("--seed", type=int, help="generator seed")

    p = sub.add_parser("quanvolve", help="quanvolve a directory of images into tensor files")
    _add_config(p)
    p.add_argument("images", type=Path, help="directory of images")
    p.add_argument("--output-dir", type=Path, required=True, help="directory for .qtns tensor files")
    p.add_argument("--cache-dir", type=Path, help="quantum tensor cache directory")
    p.add_argument("--patch-size", type=int, help="patch side; qubits = patch_size**2")
    p.add_argument("--layers", type=int, help="number of random layers")
    p.add_argument("--circuit-seed", type=int, help="seed of the random circuit")

    for name, text in (("train", "train one model on one setting"), ("evaluate", "evaluate a checkpoint")):
        p = sub.add_parser(name, help=text)
        _add_config(p)
        _add_common(p)
        _add_stage1(p)
        _add_stage2(p)
        p.add_argument("--setting", help="setting name such as n50 or split40-60 (default: the first)")
        if name == "train":
            p.add_argument("--model", choices=MODELS, default="qnn", help="front end to train")
        else:
            p.add_argument("checkpoint", type=Path, help="model checkpoint written by 'train'")

    p = sub.add_parser("stage1", help="run the stage-1 QNN vs CNN comparison")
    _add_config(p, stage_choice=False)
    _add_common(p)
    _add_stage1(p)

    p = sub.add_parser("stage2", help="run the stage-2 region-grid comparison with localization")
    _add_config(p, stage_choice=False)
    _add_common(p)
    _add_stage2(p)

    p = sub.add_parser("split", help="split an image into its 9 x 9 region grid")
    p.add_argument("image", type=Path, help="source image")
    p.add_argument("--output-dir", type=Path, required=True, help="directory for region PNGs and regions.csv")
    p.add_argument("--mask", type=Path, help="defect mask; labels regions when given")
    p.add_argument("--threshold", type=float, default=0.01, help="mask fraction that makes a region positive")
    p.add_argument("--categories", type=Path, help="resolution category CSV")

    p = sub.add_parser("stitch", help="draw region predictions onto an image")
    p.add_argument("image", type=Path, help="source image")
    p.add_argument("--predictions", type=Path, required=True, help="sidecar CSV with row,col,label,confidence")
    p.add_argument("--output", type=Path, required=True, help="annotated PNG to write")
    p.add_argument("--categories", type=Path, help="resolution category CSV")
    return parser


# ---- config resolution --------------------------------------------------


def _config(args, stage: int) -> ExperimentConfig:
    config = load_config(args.config) if args.config else default_config(stage)
    if config.stage != stage and args.command in ("stage1", "stage2"):
        raise ConfigError(f"'{args.command}' needs a stage-{stage} config, got stage {config.stage}")
    get = lambda name: getattr(args, name, None)  # noqa: E731
    if config.stage == 1 and any(get(k) is not None for k in ("split", "threshold", "categories")):
        raise ConfigError("--split, --threshold and --categories apply to stage 2 only")
    if config.stage == 2 and any(get(k) is not None for k in ("train_count", "test_count")):
        raise ConfigError("--train-count and --test-count apply to stage 1 only")
    seeds = [args.seed] if get("seed") is not None else get("seeds")
    train = replace(config.train, epochs=args.epochs) if get("epochs") is not None else None
    categories = load_categories(args.categories) if get("categories") is not None else None
    return with_overrides(
        config,
        seeds=seeds,
        cache_dir=get("cache_dir"),
        output_dir=get("output_dir"),
        dataset=get("dataset"),
        train=train,
        train_counts=get("train_count"),
        test_count=get("test_count"),
        splits=get("split"),
        positive_threshold=get("threshold"),
        categories=categories,
    )


def _setting(prepared, name):
    if name is None:
        return prepared.settings[0]
    for s in prepared.settings:
        if s.name == name:
            return s
    raise ConfigError(f"unknown setting {name!r}; available: {', '.join(s.name for s in prepared.settings)}")


# ---- commands -----------------------------------------------------------


def cmd_synth(args) -> int:
    config = load_config(args.config) if args.config else default_config(args.stage)
    spec = config.synthetic if args.seed is None else replace(config.synthetic, seed=args.seed)
    if args.count <= 0:
        raise ConfigError("--count must be positive")
    if config.stage == 1:
        samples = generate_synthetic(spec, args.count)
    else:
        samples = []
        for k, size in enumerate(config.resolutions):
            samples += generate_synthetic(replace(spec, image_size=size), args.count, start=k * args.count)
    write_corpus(samples, args.output_dir, config.stage)
    print(f"wrote {len(samples)} images to {args.output_dir}")
    return 0


def cmd_quanvolve(args) -> int:
    config = load_config(args.config) if args.config else default_config(args.stage)
    q = config.quanv
    q = QuanvConfig(
        args.patch_size if args.patch_size is not None else q.patch_size,
        None,
        args.layers if args.layers is not None else q.n_random_layers,
        args.circuit_seed if args.circuit_seed is not None else q.seed,
    )
    if not args.images.is_dir():
        raise InputError(f"image directory {args.images} does not exist")
    files = _image_files(args.images)
    if not files:
        raise InputError(f"no images in {args.images}")
    images = [normalize_unit(_read_image(f)) for f in files]
    cache = args.cache_dir if args.cache_dir is not None else config.resolved_cache_dir()
    tensors = quanvolve_batch(images, q, cache, [f.stem for f in files])
    args.output_dir.mkdir(parents=True, exist_ok=True)
    for f, t in zip(files, tensors):
        serialize_tensor(t, args.output_dir / f"{f.stem}.qtns")
    print(f"wrote {len(tensors)} tensors to {args.output_dir}")
    return 0


def cmd_train(args) -> int:
    config = _config(args, args.stage)
    setting = _setting(prepare(config), args.setting)
    seed = config.seeds[0]
    run, model = train_one(config, setting, args.model, seed)
    config.output_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = config.output_dir / f"{run.name}.qnnm"
    save_model(model, checkpoint)
    write_metrics(run.history, config.output_dir / f"{run.name}.csv")
    print(f"{checkpoint}")
    return 0


def cmd_evaluate(args) -> int:
    config = _config(args, args.stage)
    model = load_model(args.checkpoint)
    setting = _setting(prepare(config), args.setting)
    shape = tuple(model.spec.input_shape)
    kinds = [m for m, spec_input in zip(MODELS, (config.qnn_input, config.cnn_input)) if shape == spec_input]
    if not kinds:
        raise InputError(f"checkpoint input shape {shape} matches neither the QNN nor the CNN of this config")
    loss, acc = evaluate(model, setting.test[kinds[0]])
    config.output_dir.mkdir(parents=True, exist_ok=True)
    rows = [("model", "setting", "test_count", "test_loss", "test_acc"),
            (kinds[0], setting.name, setting.test_count, repr(loss), repr(acc))]
    with (config.output_dir / "evaluation.csv").open("w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    csv.writer(sys.stdout, lineterminator="\n").writerows(rows)
    return 0


def _cmd_stage(args, stage: int) -> int:
    config = _config(args, stage)
    report = run_stage1(config) if stage == 1 else run_stage2(config)
    paths = emit_report(report, config.output_dir)
    for setting in report.settings:
        print(
            f"{setting}: qnn {report.mean_accuracy('qnn', setting):.4f} cnn {report.mean_accuracy('cnn', setting):.4f}"
        )
    for claim, held in report.claims().items():
        print(f"claim {claim}: {'holds' if held else 'reversed'}")
    print(f"summary: {paths['summary']}")
    return 0


def cmd_split(args) -> int:
    categories = load_categories(args.categories) if args.categories else None
    image = normalize_unit(_read_image(args.image))
    grid = split_image(image, categories, args.image.stem)
    if args.mask is not None:
        grid = label_regions(grid, MaskLabeling(_read_mask(args.mask), args.threshold))
    out = args.output_dir
    out.mkdir(parents=True, exist_ok=True)
    with (out / "regions.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("row", "col", "label", "positive_fraction", "weight", "file"))
        for r in grid.regions:
            name = f"r{r.row}c{r.col}.png"
            Image.fromarray(np.round(np.clip(r.pixels, 0, 1) * 255).astype(np.uint8)).save(out / name)
            writer.writerow((r.row, r.col, r.label, repr(r.positive_fraction), repr(r.weight), name))
    print(f"{grid.resolution_category}: {len(grid.regions)} regions of {grid.region_size[0]}x{grid.region_size[1]}")
    return 0


def cmd_stitch(args) -> int:
    with_categories = load_categories(args.categories) if args.categories else None
    image = normalize_unit(_read_image(args.image))
    grid = split_image(image, with_categories, args.image.stem)
    records = sorted(read_sidecar(args.predictions), key=lambda r: (r.row, r.col))
    if [(r.row, r.col) for r in records] != [(g.row, g.col) for g in grid.regions]:
        raise InputError(f"{args.predictions}: need one record per region ({N_REGIONS}) covering the 9 x 9 grid")
    annotation = stitch_predictions(
        grid, np.array([r.label for r in records]), np.array([r.confidence for r in records])
    )
    args.output.parent.mkdir(parents=True, exist_ok=True)
    save_annotation(annotation, args.output)
    print(f"{args.output}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "quanvolve": cmd_quanvolve,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "stage1": lambda a: _cmd_stage(a, 1),
    "stage2": lambda a: _cmd_stage(a, 2),
    "split": cmd_split,
    "stitch": cmd_stitch,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except QuanvisionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
