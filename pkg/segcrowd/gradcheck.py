"""
SegCrowd - Finite-Difference Gradient Checks

Compares backward() gradients against central differences
(f(x+h) - f(x-h)) / 2h, perturbing tensor values in place.

Relative error per tensor is max|analytic - numeric| divided by the larger
of max|analytic| and max|numeric| over the checked entries; when both
gradients vanish the absolute difference is reported instead.

An entry whose forward and backward one-sided differences disagree sits
within h of a ReLU or max-pool kink. The central difference there averages
two slopes and matches neither, so such entries are counted as kinked and
left out of the comparison.
"""

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional

import numpy as np

from .tensor import Tensor


DEFAULT_STEP = 1e-5
KINK_TOLERANCE = 1e-3
_VANISHING = 1e-12


@dataclass
class GradCheckResult:
    """Per-tensor relative errors of one gradient check."""
    errors: dict[str, float] = field(default_factory=dict)
    checked_entries: dict[str, int] = field(default_factory=dict)
    kinked_entries: dict[str, int] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def total_checked(self) -> int:
        return sum(self.checked_entries.values())

    def passed(self, tolerance: float) -> bool:
        return self.max_error < tolerance

    def to_dict(self) -> dict:
        return {
            "max_error": self.max_error,
            "errors": dict(self.errors),
            "checked_entries": dict(self.checked_entries),
            "kinked_entries": dict(self.kinked_entries),
        }


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = float(np.max(np.abs(analytic - numeric), initial=0.0))
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
    if scale < _VANISHING:
        return diff
    return diff / scale


def _shifted_values(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    indices: list[tuple[int, ...]],
    step: float,
) -> tuple[np.ndarray, np.ndarray]:
    """f(x+h) and f(x-h) per entry, restoring each value afterwards."""
    values = tensor.values
    f_plus = np.empty(len(indices))
    f_minus = np.empty(len(indices))
    for k, idx in enumerate(indices):
        original = values[idx]
        values[idx] = original + step
        f_plus[k] = fn().item()
        values[idx] = original - step
        f_minus[k] = fn().item()
        values[idx] = original
    return f_plus, f_minus


def numerical_gradient(
    fn: Callable[[], Tensor],
    tensor: Tensor,
    indices: Optional[list[tuple[int, ...]]] = None,
    step: float = DEFAULT_STEP,
) -> np.ndarray:
    """
    Central-difference gradient of fn() w.r.t. tensor at the given entries
    (all entries when indices is None). Returns a flat array in index order.
    """
    if indices is None:
        indices = list(np.ndindex(*tensor.dims))
    f_plus, f_minus = _shifted_values(fn, tensor, indices, step)
    return (f_plus - f_minus) / (2.0 * step)


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Mapping[str, Tensor],
    step: float = DEFAULT_STEP,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckResult:
    """
    Check backward() of the scalar fn() against central differences for each
    named tensor.

    Args:
        fn: Rebuilds the graph from current tensor values, returns a scalar
        tensors: Tensors to check (must have requires_grad=True)
        step: Finite-difference step h
        max_entries: Check at most this many randomly chosen entries per tensor
        seed: Seed for entry sampling
    """
    rng = np.random.default_rng(seed)
    for t in tensors.values():
        t.zero_grad()
    loss = fn()
    f0 = loss.item()
    loss.backward()

    result = GradCheckResult()
    for name, t in tensors.items():
        all_indices = list(np.ndindex(*t.dims))
        if max_entries is not None and len(all_indices) > max_entries:
            picks = rng.choice(len(all_indices), size=max_entries, replace=False)
            indices = [all_indices[i] for i in sorted(picks)]
        else:
            indices = all_indices
        grad = t.grad if t.grad is not None else np.zeros(t.dims)
        analytic = np.array([grad[idx] for idx in indices])

        f_plus, f_minus = _shifted_values(fn, t, indices, step)
        numeric = (f_plus - f_minus) / (2.0 * step)
        forward = (f_plus - f0) / step
        backward = (f0 - f_minus) / step
        scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)))
        smooth = np.abs(forward - backward) <= KINK_TOLERANCE * max(scale, _VANISHING)

        diff = float(np.max(np.abs(analytic[smooth] - numeric[smooth]), initial=0.0))
        result.errors[name] = diff if scale < _VANISHING else diff / scale
        result.checked_entries[name] = int(smooth.sum())
        result.kinked_entries[name] = int((~smooth).sum())
    return result
