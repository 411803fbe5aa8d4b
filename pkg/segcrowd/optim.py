"""
SegCrowd - Adam Optimizer

    m <- beta1 m + (1 - beta1) g
    v <- beta2 v + (1 - beta2) g^2
    p <- p - lr * (m / (1 - beta1^t)) / (sqrt(v / (1 - beta2^t)) + epsilon)

Parameters are updated in place. Every gradient is checked before any
parameter moves, so a rejected step leaves parameters and moments untouched.
"""

from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .config import TrainConfig
from .errors import NonFiniteError, ShapeError
from .model import ModelParams
from .tensor import Tensor


@dataclass
class OptimizerState:
    lr: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_config(cls, cfg: TrainConfig) -> "OptimizerState":
        return cls(lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "step": self.step,
            "num_tensors": len(self.m),
        }


def adam_step(
    params: Union[ModelParams, Mapping[str, Tensor]],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
) -> OptimizerState:
    """
    One bias-corrected Adam update. Parameters missing from grads are
    treated as having a zero gradient.

    Raises:
        NonFiniteError: a gradient holds NaN/Inf (names the parameter)
        ShapeError: a gradient's dims differ from its parameter's
    """
    tensors = params.tensors if isinstance(params, ModelParams) else params
    unknown = [n for n in grads if n not in tensors]
    if unknown:
        raise ShapeError(f"adam_step: gradients for unknown parameters {unknown}")
    for name, g in grads.items():
        if np.shape(g) != tensors[name].dims:
            raise ShapeError(f"adam_step: gradient of {name} has dims {np.shape(g)}, parameter has {tensors[name].dims}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(
                f"adam_step: non-finite gradient for parameter {name}",
                suggested_fix="Lower the learning rate or check the loss inputs",
            )

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for name, tensor in tensors.items():
        g = np.asarray(grads[name], dtype=np.float64) if name in grads else np.zeros(tensor.dims)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(tensor.dims)
            v = np.zeros(tensor.dims)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name], state.v[name] = m, v
        m_hat = m / correction1
        v_hat = v / correction2
        tensor.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return state
