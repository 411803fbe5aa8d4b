"""
SegCrowd - Ablation Harness

Trains and evaluates one model per variant on the same data with the same
seeds, and collects the results into a comparison table.

Presets:
- seg:          with / without the segmentation task (and its attention add)
- cla:          with / without the count-classification task
- intermediate: with / without intermediate supervision
- template:     segmentation template sizes (odd sizes, default 5, 15, 25)
- classes:      number of count groups (default 3, 5, 7, 10, 15)
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

from .config import SegCrowdConfig
from .evaluation import evaluate
from .groundtruth import AnnotatedImage
from .logging_utils import RunLogger
from .trainer import Trainer
from .utils import write_csv


DEFAULT_TEMPLATE_SIZES = (5, 15, 25)
DEFAULT_CLASS_COUNTS = (3, 5, 7, 10, 15)
PRESETS = ("seg", "cla", "intermediate", "template", "classes")


@dataclass
class AblationVariant:
    name: str
    overrides: dict[str, Any] = field(default_factory=dict)

    def apply(self, base: SegCrowdConfig) -> SegCrowdConfig:
        return base.copy().apply_overrides(self.overrides).check()


@dataclass
class AblationRow:
    variant: str
    mae: float
    mse: float
    num_images: int
    skipped: int
    final_l_fin: float

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "mae": self.mae,
            "mse": self.mse,
            "num_images": self.num_images,
            "skipped": self.skipped,
            "final_l_fin": self.final_l_fin,
        }


@dataclass
class ComparisonTable:
    title: str
    rows: list[AblationRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"title": self.title, "rows": [r.to_dict() for r in self.rows]}

    def to_csv(self, path: Path) -> Path:
        header = ("variant", "mae", "mse", "num_images", "skipped", "final_l_fin")
        write_csv(path, header, ([r.variant, r.mae, r.mse, r.num_images, r.skipped, r.final_l_fin] for r in self.rows))
        return Path(path)

    def format(self) -> str:
        width = max([len("Variant")] + [len(r.variant) for r in self.rows]) + 2
        lines = [self.title, f"{'Variant':<{width}}{'MAE':>10}{'MSE':>10}"]
        for r in self.rows:
            lines.append(f"{r.variant:<{width}}{r.mae:>10.2f}{r.mse:>10.2f}")
        return "\n".join(lines)


def preset_variants(
    preset: str,
    base: Optional[SegCrowdConfig] = None,
    template_sizes: Sequence[int] = DEFAULT_TEMPLATE_SIZES,
    class_counts: Sequence[int] = DEFAULT_CLASS_COUNTS,
) -> tuple[str, list[AblationVariant]]:
    """Table title and variants of a named preset."""
    base = base or SegCrowdConfig()
    if preset == "seg":
        return "Segmentation task", [
            AblationVariant("Without Seg-task", {"train.seg_task": False}),
            AblationVariant("With Seg-task", {"train.seg_task": True}),
        ]
    if preset == "cla":
        return "Classification task", [
            AblationVariant("Without Cla-task", {"train.cla_task": False}),
            AblationVariant("With Cla-task", {"train.cla_task": True}),
        ]
    if preset == "intermediate":
        return "Intermediate supervision", [
            AblationVariant("Without intermediate supervision", {"train.intermediate_supervision": False}),
            AblationVariant("With intermediate supervision", {"train.intermediate_supervision": True}),
        ]
    if preset == "template":
        return "Template size", [
            AblationVariant(f"{s}x{s}", {"groundtruth.template_size": s}) for s in template_sizes
        ]
    if preset == "classes":
        hidden = base.model.fc_widths[0]
        return "Count groups", [
            AblationVariant(f"K={k}", {"groundtruth.num_classes": k, "model.fc_widths": [hidden, k]})
            for k in class_counts
        ]
    raise ValueError(f"unknown ablation preset {preset!r}; choose from {PRESETS}")


def ablation_run(
    train_images: Sequence[AnnotatedImage],
    test_images: Sequence[AnnotatedImage],
    variants: Sequence[AblationVariant],
    base: SegCrowdConfig,
    title: str = "Ablation",
    logger: Optional[RunLogger] = None,
    out_dir: Optional[Path] = None,
) -> ComparisonTable:
    """One trained-and-evaluated row per variant."""
    logger = logger or RunLogger("Ablation")
    table = ComparisonTable(title=title)
    for variant in variants:
        config = variant.apply(base)
        logger.info("Variant started", variant=variant.name, overrides=variant.overrides)
        variant_dir = Path(out_dir) / variant.name.replace(" ", "_") if out_dir is not None else None
        result = Trainer(config, logger=logger).train(train_images, out_dir=variant_dir)
        report = evaluate(
            result.params,
            test_images,
            config.evaluation,
            config.groundtruth,
            segmentation=config.train.seg_task,
            logger=logger,
        )
        row = AblationRow(
            variant=variant.name,
            mae=report.mae,
            mse=report.mse,
            num_images=len(report.rows),
            skipped=report.skip_count,
            final_l_fin=float(result.l_fin_series()[-1]),
        )
        table.rows.append(row)
        logger.info("Variant complete", **row.to_dict())
    return table
