"""
SegCrowd - Loss Functions

Four supervised terms and their weighted total:
- l_int: Euclidean loss on the intermediate density map
- l_den: Euclidean loss on the final density map
- l_seg: 1 - soft dice between the segmentation map and its binary target
- l_cla: cross-entropy of the count-group logits

    l_fin = l_den + l_int + l_seg + lambda1 * l_cla
"""

from dataclasses import dataclass, asdict
from typing import Sequence, Union

import numpy as np

from .errors import DomainError, ShapeError
from .tensor import Tensor, as_tensor, log_softmax


DICE_EPSILON = 1e-6
DEFAULT_LAMBDA1 = 0.01

ArrayLike = Union[Tensor, np.ndarray]
LOSS_COLUMNS = ("l_int", "l_den", "l_seg", "l_cla", "l_fin")


def l_euclidean(pred: ArrayLike, gt: ArrayLike) -> Tensor:
    """(1 / 2U) * sum((pred - gt)^2), U the number of ground-truth pixels."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    if pred.dims != gt.dims:
        raise ShapeError(f"l_euclidean: prediction dims {pred.dims} differ from ground truth {gt.dims}")
    return (pred - gt).square().sum() * (1.0 / (2.0 * gt.size))


def dice(pred: ArrayLike, gt: ArrayLike) -> Tensor:
    """Soft dice (2 sum(p g) + eps) / (sum p^2 + sum g^2 + eps)."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    if pred.dims != gt.dims:
        raise ShapeError(f"dice: prediction dims {pred.dims} differ from ground truth {gt.dims}")
    if gt.size and (gt.values.min() < 0.0 or gt.values.max() > 1.0):
        raise DomainError(
            f"dice: ground truth values must lie in [0, 1], got range "
            f"[{gt.values.min()}, {gt.values.max()}]"
        )
    overlap = (pred * gt).sum() * 2.0 + DICE_EPSILON
    norm = pred.square().sum() + gt.square().sum() + DICE_EPSILON
    return overlap / norm


def l_seg(pred: ArrayLike, gt: ArrayLike) -> Tensor:
    return 1.0 - dice(pred, gt)


def l_cla(logits: ArrayLike, target: Union[int, Sequence[int]]) -> Tensor:
    """
    Mean cross-entropy over M samples.

    Args:
        logits: (K,) for one sample or (M, K)
        target: 1-based class index, or one per sample
    """
    logits = as_tensor(logits)
    if logits.ndim not in (1, 2):
        raise ShapeError(f"l_cla: logits must be (K,) or (M, K), got dims {logits.dims}")
    k = logits.dims[-1]
    targets = np.atleast_1d(np.asarray(target))
    m = 1 if logits.ndim == 1 else logits.dims[0]
    if targets.size != m:
        raise ShapeError(f"l_cla: {targets.size} targets for {m} samples")
    if np.any(targets < 1) or np.any(targets > k) or np.any(targets != np.round(targets)):
        raise DomainError(f"l_cla: targets must be class indices in 1..{k}, got {targets.tolist()}")

    one_hot = np.zeros((m, k))
    one_hot[np.arange(m), targets.astype(np.intp) - 1] = 1.0
    if logits.ndim == 1:
        one_hot = one_hot[0]
    return -(log_softmax(logits) * Tensor(one_hot)).sum() * (1.0 / m)


def l_fin(l_den, l_int, l_seg, l_cla, lambda1: float = DEFAULT_LAMBDA1):
    """Weighted total; works on floats or scalar tensors alike."""
    return l_den + l_int + l_seg + lambda1 * l_cla


@dataclass
class LossTargets:
    """Ground truth aligned to the network output grid."""
    density: np.ndarray       # (H', W')
    segmentation: np.ndarray  # (H', W') binary
    class_label: int          # 1-based count group


@dataclass
class LossSwitches:
    cla_task: bool = True
    seg_task: bool = True
    intermediate_supervision: bool = True
    lambda1: float = DEFAULT_LAMBDA1


@dataclass
class LossBreakdown:
    """Scalar values of one evaluation of the objective."""
    l_int: float = 0.0
    l_den: float = 0.0
    l_seg: float = 0.0
    l_cla: float = 0.0
    l_fin: float = 0.0
    lambda1: float = DEFAULT_LAMBDA1

    def to_dict(self) -> dict:
        return asdict(self)

    def row(self) -> list[float]:
        return [getattr(self, c) for c in LOSS_COLUMNS]

    @classmethod
    def mean(cls, parts: Sequence["LossBreakdown"]) -> "LossBreakdown":
        if not parts:
            return cls()
        cols = {c: float(np.mean([getattr(p, c) for p in parts])) for c in LOSS_COLUMNS}
        return cls(lambda1=parts[0].lambda1, **cols)


def total_loss(output, targets: LossTargets, switches: LossSwitches) -> tuple[Tensor, LossBreakdown]:
    """
    Objective of one forward pass with disabled terms left out of the graph.

    Returns:
        (l_fin tensor ready for backward(), breakdown of every term)
    """
    parts = LossBreakdown(lambda1=switches.lambda1)
    den = l_euclidean(output.density_final, targets.density)
    parts.l_den = den.item()
    loss = den
    if switches.intermediate_supervision:
        inter = l_euclidean(output.density_intermediate, targets.density)
        parts.l_int = inter.item()
        loss = loss + inter
    if switches.seg_task:
        seg = l_seg(output.seg_map, targets.segmentation)
        parts.l_seg = seg.item()
        loss = loss + seg
    if switches.cla_task:
        cla = l_cla(output.class_logits, targets.class_label)
        parts.l_cla = cla.item()
        if switches.lambda1 != 0.0:
            loss = loss + switches.lambda1 * cla
    parts.l_fin = loss.item()
    return loss, parts
