"""
SegCrowd - Network

Responsibilities:
- Build the parameter set for the multi-receptive-field backbone and the
  classification, segmentation and density heads
- Run the forward pass producing all four outputs from one input
- Integrate density maps into counts

Layout:
    image -> 4 parallel convs (kernels 3/5/7/9) -> concat
          -> trunk blocks (conv + relu + 2x2 max-pool) -> base features
          -> weight-tied dilated block applied shared_repeats times
          -> fused = base + every shared output
    fused -> SPP -> FC -> PReLU -> FC                  = class_logits
    fused -> conv + relu -> 1x1 conv -> sigmoid        = seg_map
    fused -> conv + relu -> 1x1 conv -> relu           = density_intermediate
    (seg_map + density_intermediate) -> conv + relu -> 1x1 conv -> relu
                                                       = density_final
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional, Union

import numpy as np

from .config import ModelConfig, SegCrowdConfig
from .errors import ConfigError, FormatError, InputSizeError, ShapeError
from .formats import read_checkpoint, read_sidecar, write_checkpoint
from .groundtruth import CountBins, DensityMap
from .tensor import (
    ConvSpec,
    Tensor,
    add_elementwise,
    concat,
    conv2d,
    fully_connected,
    max_pool2d,
    prelu,
    relu,
    reshape,
    sigmoid,
    spp,
    spp_output_length,
)


logger = logging.getLogger(__name__)


def conv_specs(config: ModelConfig) -> "OrderedDict[str, ConvSpec]":
    """Every convolution layer of the network, keyed by parameter prefix."""
    specs: OrderedDict[str, ConvSpec] = OrderedDict()
    for i, k in enumerate(config.branch_kernels):
        specs[f"branch{i}"] = ConvSpec.same(k, config.in_channels, config.branch_filters)
    channels = config.branch_filters * len(config.branch_kernels)
    for j, (filters, dilation) in enumerate(zip(config.trunk_filters, config.trunk_dilations)):
        specs[f"trunk{j}"] = ConvSpec.same(3, channels, filters, dilation)
        channels = filters
    specs["shared"] = ConvSpec.same(3, channels, channels, config.shared_dilation)
    specs["seg.conv"] = ConvSpec.same(3, channels, config.head_filters)
    specs["seg.out"] = ConvSpec.same(1, config.head_filters, 1)
    specs["den.conv"] = ConvSpec.same(3, channels, config.head_filters)
    specs["den.out"] = ConvSpec.same(1, config.head_filters, 1)
    specs["fuse.conv"] = ConvSpec.same(3, 1, config.head_filters)
    specs["fuse.out"] = ConvSpec.same(1, config.head_filters, 1)
    return specs


def param_dims(config: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Parameter name -> dims, in build order."""
    dims: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    specs = conv_specs(config)
    backbone = (
        [f"branch{i}" for i in range(len(config.branch_kernels))]
        + [f"trunk{j}" for j in range(config.pool_stages)]
        + ["shared"]
    )
    for prefix in backbone:
        dims[f"{prefix}.weight"] = specs[prefix].weight_dims
        dims[f"{prefix}.bias"] = (specs[prefix].out_channels,)

    hidden, classes = config.fc_widths
    spp_len = spp_output_length(config.feature_channels, config.spp_levels)
    dims["cls.fc1.weight"] = (hidden, spp_len)
    dims["cls.fc1.bias"] = (hidden,)
    dims["cls.prelu.slope"] = (hidden,)
    dims["cls.fc2.weight"] = (classes, hidden)
    dims["cls.fc2.bias"] = (classes,)

    for prefix in ("seg.conv", "seg.out", "den.conv", "den.out", "fuse.conv", "fuse.out"):
        dims[f"{prefix}.weight"] = specs[prefix].weight_dims
        dims[f"{prefix}.bias"] = (specs[prefix].out_channels,)
    return dims


@dataclass
class ModelParams:
    """Named learnable tensors of one network plus the config that shaped them."""
    config: ModelConfig
    tensors: "OrderedDict[str, Tensor]"

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def group(self, prefix: str) -> dict[str, Tensor]:
        """Tensors whose name starts with prefix (e.g. "seg." or "cls.")."""
        return {n: t for n, t in self.tensors.items() if n.startswith(prefix)}

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        """Accumulated gradients; parameters without one report zeros."""
        return {
            n: (t.grad if t.grad is not None else np.zeros(t.dims))
            for n, t in self.tensors.items()
        }

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: t.values.copy() for n, t in self.tensors.items()}

    def assign(self, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        """Overwrite values from a name -> array mapping covering every parameter."""
        missing = [n for n in self.tensors if n not in arrays]
        extra = [n for n in arrays if n not in self.tensors]
        if missing or extra:
            raise FormatError(
                f"parameter names do not match the model layout (missing {missing}, unexpected {extra})",
                suggested_fix="Load the checkpoint with the config it was trained with",
            )
        for name, t in self.tensors.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != t.dims:
                raise FormatError(f"parameter {name}: dims {arr.shape}, model expects {t.dims}")
            t.values[...] = arr
        return self


@dataclass
class ForwardOutput:
    class_logits: Tensor          # (K,)
    seg_map: Tensor               # (H', W') in (0, 1)
    density_intermediate: Tensor  # (H', W') >= 0
    density_final: Tensor         # (H', W') >= 0

    @property
    def count(self) -> float:
        return count_from_density(self.density_final)


def build(config: ModelConfig) -> ModelParams:
    """
    Initialize every parameter: Gaussian(0, init_std) weights, zero biases,
    PReLU slopes at prelu_init. Deterministic in config.seed.
    """
    issues = config.validate()
    if issues:
        raise ConfigError(issues, suggested_fix="Fix the model section of the config")
    rng = np.random.default_rng(config.seed)
    tensors: OrderedDict[str, Tensor] = OrderedDict()
    for name, dims in param_dims(config).items():
        if name.endswith(".bias"):
            values = np.zeros(dims)
        elif name.endswith(".slope"):
            values = np.full(dims, config.prelu_init)
        else:
            values = rng.normal(0.0, config.init_std, size=dims)
        tensors[name] = Tensor(values, requires_grad=True, name=name)
    params = ModelParams(config=config, tensors=tensors)
    logger.debug("built model with %d parameters in %d tensors", params.num_parameters, len(params))
    return params


def _as_image_tensor(image: Union[Tensor, np.ndarray], config: ModelConfig) -> Tensor:
    if not isinstance(image, Tensor):
        arr = np.asarray(image, dtype=np.float64)
        image = Tensor(arr[None] if arr.ndim == 2 else arr)
    if image.ndim != 3:
        raise ShapeError(f"forward: image must be (C,H,W) or (H,W), got dims {image.dims}")
    c, h, w = image.dims
    if c != config.in_channels:
        raise ShapeError(f"forward: channel axis has {c} channels, model expects {config.in_channels}")
    minimum = config.min_input_size
    if h < minimum or w < minimum:
        axis, extent = ("height", h) if h < minimum else ("width", w)
        raise InputSizeError(
            f"forward: image {axis} {extent} below minimum input size {minimum} "
            f"(output stride {config.output_stride} x largest SPP level {max(config.spp_levels)})",
            suggested_fix="Use larger images or fewer pooling stages / smaller SPP levels",
        )
    return image


def _conv(params: ModelParams, specs: Mapping[str, ConvSpec], prefix: str, x: Tensor) -> Tensor:
    return conv2d(x, specs[prefix], params[f"{prefix}.weight"], params[f"{prefix}.bias"])


def forward(
    params: ModelParams,
    image: Union[Tensor, np.ndarray],
    segmentation: bool = True,
) -> ForwardOutput:
    """
    One pass over a single image.

    Args:
        params: Network parameters
        image: (C, H, W) tensor or (H, W) grayscale array
        segmentation: When False the segmentation map is not added into the
            density pathway (the seg head is still evaluated)
    """
    config = params.config
    specs = conv_specs(config)
    x = _as_image_tensor(image, config)

    branches = [
        relu(_conv(params, specs, f"branch{i}", x)) for i in range(len(config.branch_kernels))
    ]
    feat = concat(branches, axis=0)
    for j in range(config.pool_stages):
        feat = max_pool2d(relu(_conv(params, specs, f"trunk{j}", feat)))

    fused = feat
    shared = feat
    for _ in range(config.shared_repeats):
        shared = relu(_conv(params, specs, "shared", shared))
        fused = add_elementwise(fused, shared)

    # Classification head
    pooled = spp(fused, config.spp_levels)
    hidden = fully_connected(pooled, params["cls.fc1.weight"], params["cls.fc1.bias"])
    hidden = prelu(hidden, params["cls.prelu.slope"])
    logits = fully_connected(hidden, params["cls.fc2.weight"], params["cls.fc2.bias"])

    # Segmentation head
    seg = relu(_conv(params, specs, "seg.conv", fused))
    seg = sigmoid(_conv(params, specs, "seg.out", seg))

    # Density head
    den = relu(_conv(params, specs, "den.conv", fused))
    den_int = relu(_conv(params, specs, "den.out", den))

    attended = add_elementwise(seg, den_int) if segmentation else den_int
    fin = relu(_conv(params, specs, "fuse.conv", attended))
    den_fin = relu(_conv(params, specs, "fuse.out", fin))

    h, w = den_fin.dims[1:]
    return ForwardOutput(
        class_logits=logits,
        seg_map=reshape(seg, (h, w)),
        density_intermediate=reshape(den_int, (h, w)),
        density_final=reshape(den_fin, (h, w)),
    )


def predict_density(params: ModelParams, pixels: np.ndarray, segmentation: bool = True) -> np.ndarray:
    """density_final of a grayscale image as a plain array (no graph kept)."""
    out = forward(params, np.asarray(pixels, dtype=np.float64), segmentation=segmentation)
    return out.density_final.numpy()


def count_from_density(density: Union[Tensor, DensityMap, np.ndarray]) -> float:
    """Crowd count as the integral (sum) of a density grid."""
    if isinstance(density, Tensor):
        return float(density.values.sum())
    if isinstance(density, DensityMap):
        return density.total
    return float(np.asarray(density, dtype=np.float64).sum())


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------

def save_model(
    path: Path,
    params: ModelParams,
    config: Optional[SegCrowdConfig] = None,
    bins: Optional[CountBins] = None,
    iteration: Optional[int] = None,
) -> Path:
    """SCNW weights plus a YAML sidecar with the resolved config and count bins."""
    metadata = None
    if config is not None:
        metadata = {"config": config.to_dict()}
        if bins is not None:
            metadata["count_bins"] = bins.to_dict()
        if iteration is not None:
            metadata["iteration"] = int(iteration)
    return write_checkpoint(path, params.snapshot(), metadata)


def load_model(path: Path) -> tuple[ModelParams, SegCrowdConfig, Optional[CountBins]]:
    """Rebuild the network recorded in a checkpoint's sidecar and load its weights."""
    meta = read_sidecar(path)
    config = SegCrowdConfig.from_dict(meta.get("config", {}))
    params = build(config.model).assign(read_checkpoint(path))
    bins = CountBins.from_dict(meta["count_bins"]) if "count_bins" in meta else None
    return params, config, bins
