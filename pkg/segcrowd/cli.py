"""
SegCrowd - Command Line Interface

Usage:
    segcrowd synth data/ --num-images 8 --count-min 5 --count-max 20 --dims 64x64
    segcrowd gen-gt data/manifest.json gt/
    segcrowd train data/manifest.json --out runs/demo --iterations 500 --lr 1e-4
    segcrowd eval runs/demo/checkpoints/final.scnw data/manifest.json
    segcrowd infer data/images/img_0000.pgm --checkpoint runs/demo/checkpoints/final.scnw
    segcrowd ablate data/manifest.json --preset seg
    segcrowd cv data/manifest.json --folds 5

Every subcommand accepts --config FILE, --set key=value (repeatable),
--seed and --log-dir. The resolved configuration is echoed to stderr as
YAML; stdout carries only results. Exit codes: 0 success, 1 error,
130 interrupted.
"""

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np
import yaml

from .ablation import PRESETS, ablation_run, preset_variants
from .config import SegCrowdConfig
from .data import SceneSynthesizer, load_manifest, write_dataset
from .errors import ConfigError, DomainError, SegCrowdError
from .evaluation import cross_validate, evaluate
from .formats import normalize_to_uint8, read_dmap, read_pgm, to_uint8, write_dmap, write_pgm
from .groundtruth import density_map, gaussian_kernel, segmentation_map
from .logging_utils import LogLevel, PipelineLogger
from .model import count_from_density, forward, load_model
from .trainer import Trainer
from .utils import env_seed
from .validation import AnnotationValidator


# ----------------------------------------------------------------------
# Argument parsing
# ----------------------------------------------------------------------

def _dims(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"dims must look like 64x64, got {text!r}") from None
    return h, w


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", type=Path, default=None, help="Configuration YAML file")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Dotted config override, e.g. train.learning_rate=1e-4 (repeatable)",
    )
    parser.add_argument("--seed", "-s", type=int, default=None, help="Global seed for every seeded component")
    parser.add_argument("--log-dir", type=Path, default=None, help="Write JSONL logs here")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segcrowd",
        description="SegCrowd - crowd counting with segmentation attention",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-gt", help="Write density and segmentation ground truth as DMAP files")
    p.add_argument("manifest", type=Path)
    p.add_argument("out_dir", type=Path)
    p.add_argument("--template-size", type=int, default=None)
    p.add_argument("--sigma", type=float, default=None)
    _add_common(p)

    p = sub.add_parser("synth", help="Render a synthetic dot-annotated dataset")
    p.add_argument("out_dir", type=Path)
    p.add_argument("--num-images", "-n", type=int, default=8)
    p.add_argument("--count-min", type=int, default=5)
    p.add_argument("--count-max", type=int, default=20)
    p.add_argument("--dims", type=_dims, default=(64, 64), help="HxW, e.g. 64x64")
    p.add_argument("--scenes", type=int, default=0, help="Assign images round-robin to scenes S1..Sn")
    p.add_argument("--split", choices=["train", "test"], default=None)
    _add_common(p)

    p = sub.add_parser("train", help="Train a model")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", "-o", type=Path, default=None, help="Run directory (output.base_dir)")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--no-cla", action="store_true", help="Disable the classification task")
    p.add_argument("--no-seg", action="store_true", help="Disable the segmentation task")
    p.add_argument("--no-intermediate", action="store_true", help="Disable intermediate supervision")
    p.add_argument("--no-augment", action="store_true", help="Train on the images as given")
    p.add_argument("--template-size", type=int, default=None)
    p.add_argument("--progress", action="store_true", help="Show a progress bar")
    _add_common(p)

    p = sub.add_parser("eval", help="Evaluate a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("manifest", type=Path)
    p.add_argument("--roi", dest="roi", action="store_true", default=None, help="Mask counts with each image's ROI")
    p.add_argument("--no-roi", dest="roi", action="store_false")
    p.add_argument("--out", "-o", type=Path, default=None, help="Report CSV path")
    _add_common(p)

    p = sub.add_parser("infer", help="Count one image and write its density map and visualization strip")
    p.add_argument("image", type=Path)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument(
        "--density-bypass", type=Path, default=None, metavar="DMAP",
        help="Use this density map instead of running a network",
    )
    p.add_argument("--out-dir", type=Path, default=Path("."))
    _add_common(p)

    p = sub.add_parser("ablate", help="Train and evaluate a preset of variants")
    p.add_argument("manifest", type=Path)
    p.add_argument("--preset", choices=PRESETS, required=True)
    p.add_argument("--test-manifest", type=Path, default=None, help="Evaluate here (training images otherwise)")
    p.add_argument("--template-sizes", type=int, nargs="+", default=None)
    p.add_argument("--class-counts", type=int, nargs="+", default=None)
    p.add_argument("--out", "-o", type=Path, default=None, help="Comparison table CSV path")
    _add_common(p)

    p = sub.add_parser("cv", help="k-fold cross-validated training and evaluation")
    p.add_argument("manifest", type=Path)
    p.add_argument("--folds", "-k", type=int, default=None)
    p.add_argument("--out", "-o", type=Path, default=None, help="Report CSV path")
    _add_common(p)
    return parser


# ----------------------------------------------------------------------
# Configuration
# ----------------------------------------------------------------------

def _parse_set(items: Sequence[str]) -> dict[str, str]:
    overrides = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError([f"--set expects KEY=VALUE, got {item!r}"])
        overrides[key.strip()] = value.strip()
    return overrides


def _flag_overrides(args: argparse.Namespace) -> dict[str, object]:
    """Dedicated flags of a subcommand as dotted config keys."""
    pairs = {
        "template_size": "groundtruth.template_size",
        "sigma": "groundtruth.sigma",
        "iterations": "train.iterations",
        "lr": "train.learning_rate",
        "batch_size": "train.batch_size",
        "out": "output.base_dir",
        "folds": "evaluation.folds",
        "roi": "evaluation.use_roi",
    }
    overrides: dict[str, object] = {}
    for attr, key in pairs.items():
        value = getattr(args, attr, None)
        if value is not None and not (attr == "out" and args.command != "train"):
            overrides[key] = value
    switches = {
        "no_cla": "train.cla_task",
        "no_seg": "train.seg_task",
        "no_intermediate": "train.intermediate_supervision",
        "no_augment": "augmentation.enabled",
    }
    for attr, key in switches.items():
        if getattr(args, attr, False):
            overrides[key] = False
    if getattr(args, "progress", False):
        overrides["train.progress_bar"] = True
    return overrides


def resolve_config(args: argparse.Namespace, base: Optional[SegCrowdConfig] = None) -> SegCrowdConfig:
    """
    defaults (or a checkpoint's config) < SEGCROWD_SEED < --config file
    < --set overrides < dedicated flags < --seed.
    """
    config = base.copy() if base is not None else SegCrowdConfig()
    seed = env_seed()
    if seed is not None:
        config.apply_global_seed(seed)
    if args.config is not None:
        if not args.config.exists():
            raise ConfigError([f"config file not found: {args.config}"])
        config.apply_file(args.config)
    config.apply_overrides(_parse_set(args.overrides))
    config.apply_overrides(_flag_overrides(args))
    if args.seed is not None:
        config.apply_global_seed(args.seed)
    return config.check()


def echo_config(config: SegCrowdConfig) -> None:
    print("# resolved configuration", file=sys.stderr)
    print(config.to_yaml(), file=sys.stderr, end="")


# ----------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------

def _validator(config: SegCrowdConfig, pipeline: PipelineLogger) -> AnnotationValidator:
    return AnnotationValidator(config.model.min_input_size, logger=pipeline.get_logger(AnnotationValidator.MODULE_NAME))


def cmd_gen_gt(args, config: SegCrowdConfig, pipeline: PipelineLogger) -> int:
    logger = pipeline.get_logger("GroundTruth")
    manifest = load_manifest(args.manifest, _validator(config, pipeline))
    gt = config.groundtruth
    kernel = gaussian_kernel(gt.kernel_size, gt.sigma)
    out_dir = args.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    mass = 0.0
    for img in manifest.images:
        dmap = density_map(img, kernel, gt.border_mode)
        smap = segmentation_map(img, gt.template_size)
        write_dmap(out_dir / f"{img.image_id}.den.dmap", dmap.grid)
        write_dmap(out_dir / f"{img.image_id}.seg.dmap", smap.grid)
        mass += dmap.total
        logger.log_output("ground truth", image_id=img.image_id, count=img.count, mass=dmap.total)
    print(f"images {len(manifest.images)}")
    print(f"annotations {manifest.total_count}")
    print(f"total density mass {mass:.6f}")
    return 0


def cmd_synth(args, config: SegCrowdConfig, pipeline: PipelineLogger) -> int:
    if args.count_min > args.count_max:
        raise DomainError(f"--count-min {args.count_min} exceeds --count-max {args.count_max}")
    synthesizer = SceneSynthesizer(logger=pipeline.get_logger(SceneSynthesizer.MODULE_NAME))
    images = synthesizer.render_many(
        seed=config.random_seed,
        num_images=args.num_images,
        count_range=(args.count_min, args.count_max),
        dims=args.dims,
        scenes=args.scenes,
    )
    write_dataset(images, args.out_dir, split=args.split)
    print(args.out_dir / "manifest.json")
    return 0


def cmd_train(args, config: SegCrowdConfig, pipeline: PipelineLogger) -> int:
    manifest = load_manifest(args.manifest, _validator(config, pipeline))
    config.output.create_directories()
    trainer = Trainer(config, pipeline_logger=pipeline)
    result = trainer.train(manifest.images, out_dir=config.output.checkpoints_dir)
    print(f"checkpoint {result.final_checkpoint}")
    print(f"loss_log {result.loss_csv}")
    print(f"final l_fin {result.loss_log[-1].l_fin:.6f}")
    return 0


def cmd_eval(args, config: SegCrowdConfig, pipeline: PipelineLogger) -> int:
    params, _, _ = load_model(args.checkpoint)
    manifest = load_manifest(args.manifest, _validator(config, pipeline))
    report = evaluate(
        params,
        manifest.images,
        config.evaluation,
        config.groundtruth,
        segmentation=config.train.seg_task,
        logger=pipeline.get_logger("Evaluator"),
    )
    out = args.out or config.output.reports_dir / "eval_report.csv"
    report.to_csv(out)
    print(report.format())
    print(f"report {out}")
    return 0


def visualization_strip(pixels: np.ndarray, seg: np.ndarray, density: np.ndarray) -> np.ndarray:
    """input | segmentation | density at map resolution, white separator columns."""
    h, w = density.shape
    panel = cv2.resize(np.asarray(pixels, dtype=np.float64), (w, h), interpolation=cv2.INTER_AREA)
    sep = np.full((h, 1), 255, dtype=np.uint8)
    return np.hstack([to_uint8(panel), sep, normalize_to_uint8(seg), sep, normalize_to_uint8(density)])


def cmd_infer(args, config: SegCrowdConfig, pipeline: PipelineLogger) -> int:
    logger = pipeline.get_logger("Inference")
    pixels = read_pgm(args.image)
    if args.density_bypass is not None:
        density = read_dmap(args.density_bypass)
        seg = (density > 0).astype(np.float64)
    elif args.checkpoint is not None:
        params, ckpt_config, _ = load_model(args.checkpoint)
        output = forward(params, pixels, segmentation=ckpt_config.train.seg_task)
        density = output.density_final.numpy()
        seg = output.seg_map.numpy()
    else:
        raise ConfigError(["infer needs --checkpoint or --density-bypass"])

    stem = args.image.stem
    dmap_path = write_dmap(args.out_dir / f"{stem}.density.dmap", density)
    strip_path = write_pgm(args.out_dir / f"{stem}.strip.pgm", visualization_strip(pixels, seg, density))
    count = count_from_density(density)
    logger.info("Inference complete", image=str(args.image), count=count, density=str(dmap_path), strip=str(strip_path))
    print(f"count: {count:.12f}")
    return 0


def cmd_ablate(args, config: SegCrowdConfig, pipeline: PipelineLogger) -> int:
    validator = _validator(config, pipeline)
    train_images = load_manifest(args.manifest, validator).images
    test_images = load_manifest(args.test_manifest, validator).images if args.test_manifest else train_images
    kwargs = {}
    if args.template_sizes:
        kwargs["template_sizes"] = args.template_sizes
    if args.class_counts:
        kwargs["class_counts"] = args.class_counts
    title, variants = preset_variants(args.preset, config, **kwargs)
    table = ablation_run(
        train_images, test_images, variants, config,
        title=title, logger=pipeline.get_logger("Ablation"),
    )
    out = args.out or config.output.reports_dir / f"ablation_{args.preset}.csv"
    table.to_csv(out)
    print(table.format())
    print(f"table {out}")
    return 0


def cmd_cv(args, config: SegCrowdConfig, pipeline: PipelineLogger) -> int:
    images = load_manifest(args.manifest, _validator(config, pipeline)).images
    report = cross_validate(images, config, logger=pipeline.get_logger("CrossValidation"))
    out = args.out or config.output.reports_dir / "cv_report.csv"
    report.to_csv(out)
    print(report.format())
    print(f"report {out}")
    return 0


COMMANDS = {
    "gen-gt": cmd_gen_gt,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "infer": cmd_infer,
    "ablate": cmd_ablate,
    "cv": cmd_cv,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    pipeline = PipelineLogger(
        log_dir=args.log_dir,
        console_output=True,
        level=LogLevel.DEBUG if args.verbose else LogLevel.INFO,
    )
    try:
        base = None
        if args.command == "eval":
            _, base, _ = load_model(args.checkpoint)
        config = resolve_config(args, base)
        echo_config(config)
        return COMMANDS[args.command](args, config, pipeline)
    except KeyboardInterrupt:
        print("\nInterrupted by user", file=sys.stderr)
        return 130
    except (SegCrowdError, OSError, ValueError, yaml.YAMLError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    finally:
        pipeline.write_summary()


if __name__ == "__main__":
    sys.exit(main())
