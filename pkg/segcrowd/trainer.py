"""
SegCrowd - Training Loop

Responsibilities:
- Turn annotated images into training samples: crop to the output stride,
  build density / segmentation targets at output resolution, assign the
  count group
- Run Adam over a seeded sample stream with the multi-task objective
- Write checkpoints at the configured cadence and the per-iteration loss log

Tracked metrics:
- Loss breakdown per iteration
- Wall time, first and last l_fin

Logging:
- Run configuration at start
- Running losses every log_every iterations
- Final training report
"""

import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from tqdm import tqdm

from .config import GroundTruthConfig, ModelConfig, SegCrowdConfig
from .data import augment_dataset
from .errors import DivergenceError, InputSizeError, NonFiniteError
from .groundtruth import (
    AnnotatedImage,
    CountBins,
    GaussianKernel,
    density_map,
    downsample_max,
    downsample_sum,
    gaussian_kernel,
    make_bins,
    quantize_count,
    segmentation_map,
)
from .logging_utils import PipelineLogger, RunLogger
from .losses import LOSS_COLUMNS, LossBreakdown, LossSwitches, LossTargets, total_loss
from .model import ModelParams, build, forward, save_model
from .optim import OptimizerState, adam_step
from .tensor import Tensor
from .utils import write_csv


LOSS_LOG_NAME = "loss_log.csv"
FINAL_CHECKPOINT = "final.scnw"


@dataclass
class TrainingSample:
    """Network input plus ground truth aligned to its output grid."""
    image_id: str
    image: Tensor
    targets: LossTargets
    count: int


def stride_crop(img: AnnotatedImage, stride: int) -> AnnotatedImage:
    """Crop H and W down to multiples of stride, dropping points that fall off."""
    h = (img.height // stride) * stride
    w = (img.width // stride) * stride
    if (h, w) == img.shape:
        return img
    keep = (img.points[:, 0] < h) & (img.points[:, 1] < w)
    return img.replace(
        pixels=img.pixels[:h, :w].copy(),
        points=img.points[keep],
        roi=None,
    )


def prepare_sample(
    img: AnnotatedImage,
    gt_cfg: GroundTruthConfig,
    model_cfg: ModelConfig,
    bins: CountBins,
    kernel: Optional[GaussianKernel] = None,
) -> TrainingSample:
    stride = model_cfg.output_stride
    cropped = stride_crop(img, stride)
    if min(cropped.shape) < model_cfg.min_input_size:
        raise InputSizeError(
            f"training image {img.image_id!r} ({img.height}x{img.width}) is below the "
            f"network minimum {model_cfg.min_input_size}"
        )
    kernel = kernel or gaussian_kernel(gt_cfg.kernel_size, gt_cfg.sigma)
    dmap = density_map(cropped, kernel, gt_cfg.border_mode)
    smap = segmentation_map(cropped, gt_cfg.template_size)
    return TrainingSample(
        image_id=img.image_id,
        image=cropped.to_tensor(),
        targets=LossTargets(
            density=downsample_sum(dmap, stride).grid,
            segmentation=downsample_max(smap, stride).grid,
            class_label=quantize_count(cropped.count, bins),
        ),
        count=cropped.count,
    )


@dataclass
class TrainingResult:
    """Outcome of one training run."""
    params: ModelParams
    bins: CountBins
    loss_log: list[LossBreakdown] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)
    loss_csv: Optional[Path] = None
    num_samples: int = 0
    wall_time_s: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.loss_log)

    @property
    def final_checkpoint(self) -> Optional[Path]:
        return self.checkpoints[-1] if self.checkpoints else None

    def l_fin_series(self) -> np.ndarray:
        return np.array([p.l_fin for p in self.loss_log])

    def to_dict(self) -> dict:
        series = self.l_fin_series()
        return {
            "iterations": self.iterations,
            "num_samples": self.num_samples,
            "num_parameters": self.params.num_parameters,
            "wall_time_s": self.wall_time_s,
            "first_l_fin": float(series[0]) if series.size else None,
            "last_l_fin": float(series[-1]) if series.size else None,
            "count_bins": self.bins.to_dict(),
            "checkpoints": [str(p) for p in self.checkpoints],
            "loss_csv": str(self.loss_csv) if self.loss_csv else None,
        }


class Trainer:
    """
    Multi-task trainer.

    One iteration draws batch_size samples from a seeded permutation stream,
    accumulates the gradient of their mean loss and takes one Adam step.
    """

    MODULE_NAME = "Trainer"

    def __init__(
        self,
        config: SegCrowdConfig,
        logger: Optional[RunLogger] = None,
        pipeline_logger: Optional[PipelineLogger] = None,
    ):
        config.check()
        self.config = config
        self._pipeline_logger = pipeline_logger
        if logger is None:
            logger = pipeline_logger.get_logger(self.MODULE_NAME) if pipeline_logger else RunLogger(self.MODULE_NAME)
        self.logger = logger
        tc = config.train
        self.switches = LossSwitches(
            cla_task=tc.cla_task,
            seg_task=tc.seg_task,
            intermediate_supervision=tc.intermediate_supervision,
            lambda1=tc.lambda1,
        )
        self.logger.log_init(
            iterations=tc.iterations,
            batch_size=tc.batch_size,
            learning_rate=tc.learning_rate,
            lambda1=tc.lambda1,
            cla_task=tc.cla_task,
            seg_task=tc.seg_task,
            intermediate_supervision=tc.intermediate_supervision,
            seed=tc.seed,
        )

    def build_samples(
        self,
        images: Sequence[AnnotatedImage],
        bins: Optional[CountBins] = None,
    ) -> tuple[list[TrainingSample], CountBins]:
        """
        Augment images and build their targets. Count bins, unless given,
        come from the counts of the augmented training samples.
        """
        if not images:
            raise ValueError("Trainer: no training images")
        cfg = self.config
        stride = cfg.model.output_stride
        augmented = augment_dataset(images, cfg.augmentation, min_size=cfg.model.min_input_size)
        cropped = [stride_crop(img, stride) for img in augmented]
        if bins is None:
            bins = make_bins([img.count for img in cropped], cfg.groundtruth.num_classes)
        kernel = gaussian_kernel(cfg.groundtruth.kernel_size, cfg.groundtruth.sigma)
        samples = [prepare_sample(img, cfg.groundtruth, cfg.model, bins, kernel) for img in cropped]
        self.logger.info(
            "Training samples prepared",
            source_images=len(images),
            samples=len(samples),
            count_bin_edges=list(bins.edges),
        )
        return samples, bins

    def train(
        self,
        images: Sequence[AnnotatedImage],
        params: Optional[ModelParams] = None,
        bins: Optional[CountBins] = None,
        out_dir: Optional[Path] = None,
    ) -> TrainingResult:
        """
        Train on images and return the trained parameters and loss log.

        Args:
            images: Training images (augmented per config.augmentation)
            params: Starting parameters (fresh build when None)
            bins: Count groups (derived from the samples when None)
            out_dir: Where checkpoints and the loss CSV go; nothing is
                written when None

        Raises:
            DivergenceError: a loss or gradient became non-finite
        """
        cfg = self.config
        tc = cfg.train
        self.logger.log_input("training images", images=len(images), counts=[img.count for img in images])
        samples, bins = self.build_samples(images, bins)
        params = params or build(cfg.model)
        state = OptimizerState.from_config(tc)
        rng = np.random.default_rng(tc.seed)
        result = TrainingResult(params=params, bins=bins, num_samples=len(samples))
        if out_dir is not None:
            out_dir = Path(out_dir)

        self.logger.info(
            "Training started",
            iterations=tc.iterations,
            samples=len(samples),
            parameters=params.num_parameters,
        )
        start = time.perf_counter()
        queue: list[int] = []
        scale = 1.0 / tc.batch_size

        for iteration in tqdm(
            range(1, tc.iterations + 1),
            desc="train",
            disable=not tc.progress_bar,
            file=sys.stderr,
        ):
            params.zero_grad()
            batch_parts = []
            try:
                for _ in range(tc.batch_size):
                    if not queue:
                        queue = rng.permutation(len(samples)).tolist()
                    sample = samples[queue.pop(0)]
                    output = forward(params, sample.image, segmentation=self.switches.seg_task)
                    loss, parts = total_loss(output, sample.targets, self.switches)
                    (loss * scale if tc.batch_size > 1 else loss).backward()
                    batch_parts.append(parts)
                adam_step(params, params.grads(), state)
            except NonFiniteError as e:
                self.logger.critical(
                    "Training diverged",
                    reason=e.message,
                    iteration=iteration,
                    suggested_fix="Lower train.learning_rate or check input scaling",
                )
                raise DivergenceError(iteration, e.message) from e

            parts = LossBreakdown.mean(batch_parts)
            result.loss_log.append(parts)

            if tc.log_every and iteration % tc.log_every == 0:
                self.logger.info("Training progress", iteration=iteration, **parts.to_dict())
            if out_dir is not None and tc.checkpoint_every and iteration % tc.checkpoint_every == 0:
                path = save_model(out_dir / f"iter_{iteration:06d}.scnw", params, cfg, bins, iteration)
                result.checkpoints.append(path)

        result.wall_time_s = time.perf_counter() - start
        if out_dir is not None:
            result.checkpoints.append(save_model(out_dir / FINAL_CHECKPOINT, params, cfg, bins, tc.iterations))
            result.loss_csv = write_loss_log(out_dir / LOSS_LOG_NAME, result.loss_log)

        self.logger.info("TRAINING COMPLETE", **result.to_dict())
        return result


def write_loss_log(path: Path, loss_log: Sequence[LossBreakdown]) -> Path:
    """CSV with header iteration,l_int,l_den,l_seg,l_cla,l_fin."""
    rows = ([i] + parts.row() for i, parts in enumerate(loss_log, start=1))
    write_csv(path, ("iteration",) + LOSS_COLUMNS, rows)
    return Path(path)
