"""
SegCrowd - Evaluation

Responsibilities:
- Count metrics: MAE and MSE (root of the mean squared residual)
- ROI masking of density grids at any resolution
- Full-image evaluation with per-image, per-scene and per-fold breakdowns
- k-fold splits and cross-validated training + evaluation
"""

import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from sklearn.metrics import mean_absolute_error, mean_squared_error
from sklearn.model_selection import KFold

from .config import EvaluationConfig, GroundTruthConfig, SegCrowdConfig
from .errors import EvaluationError, InputSizeError
from .groundtruth import AnnotatedImage, density_map, gaussian_kernel
from .logging_utils import RunLogger
from .model import ModelParams, count_from_density, forward
from .trainer import Trainer
from .utils import write_csv
from .validation import polygon_area


Pairs = Sequence[tuple[float, float]]


# ----------------------------------------------------------------------
# Metrics
# ----------------------------------------------------------------------

def _split_pairs(pairs: Pairs) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(list(pairs), dtype=np.float64)
    if arr.size == 0:
        raise EvaluationError("metrics need at least one (ground truth, estimate) pair")
    arr = arr.reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def mae(pairs: Pairs) -> float:
    """Mean absolute count error over (z, z_hat) pairs."""
    z, z_hat = _split_pairs(pairs)
    return float(mean_absolute_error(z, z_hat))


def mse(pairs: Pairs) -> float:
    """Root of the mean squared count error over (z, z_hat) pairs."""
    z, z_hat = _split_pairs(pairs)
    return math.sqrt(float(mean_squared_error(z, z_hat)))


# ----------------------------------------------------------------------
# ROI
# ----------------------------------------------------------------------

def _inside_centres(polygon: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Even-odd crossing test of every (row, col) centre against a (row, col) polygon."""
    inside = np.zeros((rows.size, cols.size), dtype=bool)
    r = rows[:, None]
    c = cols[None, :]
    for (r0, c0), (r1, c1) in zip(polygon, np.roll(polygon, -1, axis=0)):
        if r0 == r1:
            continue
        spans = (r0 > r) != (r1 > r)
        crossing = c0 + (r - r0) * (c1 - c0) / (r1 - r0)
        inside ^= spans & (c < crossing)
    return inside


def roi_mask(
    shape: tuple[int, int],
    polygon: np.ndarray,
    image_shape: Optional[tuple[int, int]] = None,
) -> np.ndarray:
    """
    Boolean mask of the cells of a grid whose centre lies inside a polygon.

    polygon holds (row, col) vertices in image coordinates. When the grid is
    a downsampled map of an image_shape image, each cell centre is mapped
    back to image coordinates, so the ground-truth grid and the prediction
    grid select the same region.
    """
    polygon = np.asarray(polygon, dtype=np.float64).reshape(-1, 2)
    if len(polygon) < 3 or polygon_area(polygon) <= 0.0:
        raise EvaluationError(f"degenerate ROI polygon with {len(polygon)} vertices and zero area")
    h, w = shape
    ih, iw = image_shape if image_shape is not None else (h, w)
    if image_shape is not None:
        if np.any(polygon < 0) or np.any(polygon[:, 0] > ih) or np.any(polygon[:, 1] > iw):
            raise EvaluationError(f"ROI polygon leaves the {ih}x{iw} image")
    rows = (np.arange(h) + 0.5) * (ih / h)
    cols = (np.arange(w) + 0.5) * (iw / w)
    return _inside_centres(polygon, rows, cols)


def apply_roi(
    grid: np.ndarray,
    polygon: np.ndarray,
    image_shape: Optional[tuple[int, int]] = None,
) -> np.ndarray:
    """Copy of grid with every cell outside the ROI set to zero."""
    grid = np.asarray(grid, dtype=np.float64)
    return np.where(roi_mask(grid.shape, polygon, image_shape), grid, 0.0)


# ----------------------------------------------------------------------
# Folds
# ----------------------------------------------------------------------

def kfold_split(
    items: Union[int, Sequence],
    k: int = 5,
    seed: int = 0,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold (train indices, test indices) pairs."""
    n = items if isinstance(items, int) else len(items)
    if k < 2:
        raise EvaluationError(f"kfold_split: k must be >= 2, got {k}")
    if k > n:
        raise EvaluationError(f"kfold_split: k = {k} exceeds the {n} items")
    folds = KFold(n_splits=k, shuffle=True, random_state=seed)
    return [(train, test) for train, test in folds.split(np.arange(n))]


# ----------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------

@dataclass
class ImageResult:
    image_id: str
    gt_count: float
    pred_count: float
    scene: Optional[str] = None
    fold: Optional[int] = None

    @property
    def abs_error(self) -> float:
        return abs(self.pred_count - self.gt_count)

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "scene": self.scene,
            "fold": self.fold,
            "gt_count": self.gt_count,
            "pred_count": self.pred_count,
            "abs_error": self.abs_error,
        }


@dataclass
class GroupMetrics:
    num_images: int
    mae: float
    mse: float

    def to_dict(self) -> dict:
        return {"num_images": self.num_images, "mae": self.mae, "mse": self.mse}


@dataclass
class EvalReport:
    """Per-image counts and the metrics derived from them."""
    rows: list[ImageResult] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    group_by_scene: bool = True

    @property
    def pairs(self) -> list[tuple[float, float]]:
        return [(r.gt_count, r.pred_count) for r in self.rows]

    @property
    def mae(self) -> float:
        return mae(self.pairs)

    @property
    def mse(self) -> float:
        return mse(self.pairs)

    @property
    def skip_count(self) -> int:
        return len(self.skipped)

    def _grouped(self, key) -> "OrderedDict[str, GroupMetrics]":
        groups: OrderedDict[str, list[ImageResult]] = OrderedDict()
        for row in sorted(self.rows, key=key):
            groups.setdefault(key(row), []).append(row)
        return OrderedDict(
            (name, GroupMetrics(len(rows), mae([(r.gt_count, r.pred_count) for r in rows]),
                                mse([(r.gt_count, r.pred_count) for r in rows])))
            for name, rows in groups.items()
        )

    @property
    def per_scene(self) -> "OrderedDict[str, GroupMetrics]":
        """Metrics per scene id; empty unless grouping is on and scene ids exist."""
        if not self.group_by_scene or all(r.scene is None for r in self.rows):
            return OrderedDict()
        return self._grouped(lambda r: r.scene if r.scene is not None else "all")

    @property
    def per_fold(self) -> "OrderedDict[int, GroupMetrics]":
        if all(r.fold is None for r in self.rows):
            return OrderedDict()
        return self._grouped(lambda r: r.fold if r.fold is not None else -1)

    @property
    def scene_average_mae(self) -> Optional[float]:
        scenes = self.per_scene
        if not scenes:
            return None
        return float(np.mean([m.mae for m in scenes.values()]))

    def merge(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(
            rows=self.rows + other.rows,
            skipped=self.skipped + other.skipped,
            group_by_scene=self.group_by_scene,
        )

    def to_dict(self) -> dict:
        return {
            "num_images": len(self.rows),
            "skipped": self.skip_count,
            "mae": self.mae if self.rows else None,
            "mse": self.mse if self.rows else None,
            "per_scene": {k: v.to_dict() for k, v in self.per_scene.items()},
            "per_fold": {str(k): v.to_dict() for k, v in self.per_fold.items()},
        }

    def to_csv(self, path: Path) -> Path:
        """Per-image rows followed by a summary footer."""
        header = ("image_id", "scene", "fold", "gt_count", "pred_count", "abs_error")
        body = [
            [r.image_id, r.scene or "", "" if r.fold is None else r.fold, r.gt_count, r.pred_count, r.abs_error]
            for r in self.rows
        ]
        footer = []
        if self.rows:
            footer.append(["MAE", "", "", "", "", self.mae])
            footer.append(["MSE", "", "", "", "", self.mse])
        for name, m in self.per_scene.items():
            footer.append([f"MAE[{name}]", name, "", "", "", m.mae])
        for fold, m in self.per_fold.items():
            footer.append([f"MAE[fold {fold}]", "", fold, "", "", m.mae])
        footer.append(["skipped", "", "", "", "", self.skip_count])
        write_csv(path, header, body + footer)
        return Path(path)

    def format(self) -> str:
        """Text table: one MAE column per scene plus their average, then totals."""
        lines = []
        scenes = self.per_scene
        if scenes:
            names = list(scenes) + ["Average"]
            values = [m.mae for m in scenes.values()] + [self.scene_average_mae]
            lines.append("     " + "".join(f"{n:>10}" for n in names))
            lines.append("MAE  " + "".join(f"{v:>10.2f}" for v in values))
        for fold, m in self.per_fold.items():
            lines.append(f"fold {fold}: MAE {m.mae:.4f}  MSE {m.mse:.4f}  ({m.num_images} images)")
        if self.rows:
            lines.append(f"MAE {self.mae:.4f}  MSE {self.mse:.4f}  ({len(self.rows)} images, {self.skip_count} skipped)")
        else:
            lines.append(f"no images evaluated ({self.skip_count} skipped)")
        return "\n".join(lines)


def ground_truth_count(
    img: AnnotatedImage,
    gt_cfg: GroundTruthConfig,
    use_roi: bool = True,
) -> float:
    """Annotation count, or the ROI-masked ground-truth density integral."""
    if not use_roi or img.roi is None:
        return float(img.count)
    kernel = gaussian_kernel(gt_cfg.kernel_size, gt_cfg.sigma)
    dmap = density_map(img, kernel, gt_cfg.border_mode)
    return count_from_density(apply_roi(dmap.grid, img.roi))


def evaluate(
    params: ModelParams,
    images: Sequence[AnnotatedImage],
    options: Optional[EvaluationConfig] = None,
    gt_cfg: Optional[GroundTruthConfig] = None,
    segmentation: bool = True,
    fold: Optional[int] = None,
    logger: Optional[RunLogger] = None,
) -> EvalReport:
    """
    Full-image inference on each image; counts integrate density_final.

    Images below the network minimum are skipped and reported.
    """
    options = options or EvaluationConfig()
    gt_cfg = gt_cfg or GroundTruthConfig()
    logger = logger or RunLogger("Evaluator")
    report = EvalReport(group_by_scene=options.group_by_scene)
    for img in images:
        try:
            density = forward(params, img.pixels, segmentation=segmentation).density_final.values
        except InputSizeError as e:
            report.skipped.append((img.image_id, e.message))
            logger.warning("Image skipped", image_id=img.image_id, reason=e.message)
            continue
        if options.use_roi and img.roi is not None:
            density = apply_roi(density, img.roi, image_shape=img.shape)
        report.rows.append(ImageResult(
            image_id=img.image_id,
            gt_count=ground_truth_count(img, gt_cfg, options.use_roi),
            pred_count=count_from_density(density),
            scene=img.scene,
            fold=fold,
        ))
    if report.rows:
        logger.info("Evaluation complete", **report.to_dict())
    else:
        logger.warning("No image could be evaluated", skipped=report.skip_count)
    return report


def cross_validate(
    images: Sequence[AnnotatedImage],
    config: SegCrowdConfig,
    k: Optional[int] = None,
    logger: Optional[RunLogger] = None,
    out_dir: Optional[Path] = None,
) -> EvalReport:
    """Train one model per fold and evaluate it on the held-out images."""
    k = k or config.evaluation.folds
    logger = logger or RunLogger("CrossValidation")
    report = EvalReport(group_by_scene=config.evaluation.group_by_scene)
    for index, (train_idx, test_idx) in enumerate(kfold_split(images, k, config.random_seed)):
        trainer = Trainer(config, logger=logger)
        fold_dir = Path(out_dir) / f"fold_{index}" if out_dir is not None else None
        result = trainer.train([images[i] for i in train_idx], out_dir=fold_dir)
        fold_report = evaluate(
            result.params,
            [images[i] for i in test_idx],
            config.evaluation,
            config.groundtruth,
            segmentation=config.train.seg_task,
            fold=index,
            logger=logger,
        )
        report = report.merge(fold_report)
        logger.info("Fold complete", fold=index, train=len(train_idx), test=len(test_idx))
    return report
