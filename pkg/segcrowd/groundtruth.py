"""
SegCrowd - Ground Truth Generation

Responsibilities:
- Density maps: a normalized 15x15 Gaussian (sigma = 4) per head annotation
- Segmentation maps: a 15x15 ones template pasted (logical OR) per annotation
- Count quantization: equal-width count groups for the auxiliary classifier
- Resolution alignment of both maps to the network output grid

Pixel convention: an annotation at (row, col) sits on pixel
(floor(row), floor(col)).
"""

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .errors import AnnotationError, ShapeError
from .tensor import Tensor


DEFAULT_KERNEL_SIZE = 15
DEFAULT_SIGMA = 4.0
DEFAULT_TEMPLATE_SIZE = 15
DEFAULT_NUM_CLASSES = 5


@dataclass
class AnnotatedImage:
    """Grayscale pixel grid in [0, 1] plus head-center points (row, col)."""
    pixels: np.ndarray
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    image_id: str = ""
    scene: Optional[str] = None
    roi: Optional[np.ndarray] = None   # polygon vertices (row, col)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ShapeError(f"AnnotatedImage {self.image_id!r}: pixels must be H x W, got dims {self.pixels.shape}")
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        if self.roi is not None:
            self.roi = np.asarray(self.roi, dtype=np.float64).reshape(-1, 2)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    @property
    def count(self) -> int:
        return len(self.points)

    def out_of_bounds(self) -> np.ndarray:
        """Indices of points outside [0, H) x [0, W)."""
        r, c = self.points[:, 0], self.points[:, 1]
        bad = (r < 0) | (r >= self.height) | (c < 0) | (c >= self.width)
        return np.flatnonzero(bad)

    def require_in_bounds(self) -> None:
        bad = self.out_of_bounds()
        if bad.size:
            r, c = self.points[bad[0]]
            raise AnnotationError(
                f"image {self.image_id!r}: {bad.size} point(s) outside {self.height}x{self.width}, "
                f"first is ({r}, {c})",
                suggested_fix="Annotations are (row, col) in pixel units",
            )

    def pixel_points(self) -> np.ndarray:
        return np.floor(self.points).astype(np.intp)

    def to_tensor(self) -> Tensor:
        """(1, H, W) constant tensor for the network."""
        return Tensor(self.pixels[None], requires_grad=False)

    def replace(self, **changes) -> "AnnotatedImage":
        return replace(self, **changes)


@dataclass
class DensityMap:
    """Per-pixel density D(c); integrates to the annotation count."""
    grid: np.ndarray

    @property
    def total(self) -> float:
        return float(self.grid.sum())

    @property
    def shape(self) -> tuple[int, ...]:
        return self.grid.shape


@dataclass
class SegMap:
    """Binary head-region map."""
    grid: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.grid.shape

    @property
    def ones(self) -> int:
        return int(self.grid.sum())


@dataclass(frozen=True)
class GaussianKernel:
    window: np.ndarray
    sigma: float
    size: int


@dataclass(frozen=True)
class CountBins:
    """
    Equal-width count groups. Class i (1-based) holds counts in
    (edges[i-1], edges[i]]; counts beyond either end clamp to the end class.
    A degenerate table (all training counts equal) maps everything to class 1.
    """
    edges: tuple[float, ...]
    num_classes: int
    degenerate: bool = False

    def quantize(self, count: float) -> int:
        return quantize_count(count, self)

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "num_classes": self.num_classes, "degenerate": self.degenerate}

    @classmethod
    def from_dict(cls, data: dict) -> "CountBins":
        return cls(tuple(float(e) for e in data["edges"]), int(data["num_classes"]), bool(data.get("degenerate", False)))


# ----------------------------------------------------------------------
# Kernels
# ----------------------------------------------------------------------

def gaussian_kernel(size: int = DEFAULT_KERNEL_SIZE, sigma: float = DEFAULT_SIGMA) -> GaussianKernel:
    """Isotropic Gaussian window normalized to sum to exactly 1."""
    if size < 1 or size % 2 == 0:
        raise ShapeError(f"gaussian_kernel: size must be odd and positive, got {size}")
    if sigma <= 0:
        raise ValueError(f"gaussian_kernel: sigma must be > 0, got {sigma}")
    half = size // 2
    offsets = np.arange(-half, half + 1, dtype=np.float64)
    profile = np.exp(-(offsets ** 2) / (2.0 * sigma * sigma))
    window = np.outer(profile, profile)
    window /= window.sum()
    window.setflags(write=False)
    return GaussianKernel(window=window, sigma=float(sigma), size=size)


# ----------------------------------------------------------------------
# Maps
# ----------------------------------------------------------------------

def density_map(
    img: AnnotatedImage,
    kernel: Optional[GaussianKernel] = None,
    border_mode: str = "renormalize",
) -> DensityMap:
    """
    Sum of per-point Gaussian kernels.

    border_mode "renormalize" rescales a kernel clipped by the image border
    over its in-image support so every point contributes mass 1; "clip"
    keeps the truncated kernel as is.
    """
    if border_mode not in ("renormalize", "clip"):
        raise ValueError(f"density_map: unknown border_mode {border_mode!r}")
    img.require_in_bounds()
    kernel = kernel or gaussian_kernel()
    half = kernel.size // 2
    h, w = img.shape
    grid = np.zeros((h, w))
    for r, c in img.pixel_points():
        r0, r1 = max(0, r - half), min(h, r + half + 1)
        c0, c1 = max(0, c - half), min(w, c + half + 1)
        patch = kernel.window[r0 - (r - half):r1 - (r - half), c0 - (c - half):c1 - (c - half)]
        if border_mode == "renormalize" and patch.shape != kernel.window.shape:
            patch = patch / patch.sum()
        grid[r0:r1, c0:c1] += patch
    return DensityMap(grid)


def segmentation_map(img: AnnotatedImage, template_size: int = DEFAULT_TEMPLATE_SIZE) -> SegMap:
    """
    Binary map: 1 wherever a point lies within Chebyshev distance
    template_size // 2 of the pixel.
    """
    if template_size < 1 or template_size % 2 == 0:
        raise ShapeError(f"segmentation_map: template_size must be odd, got {template_size}")
    img.require_in_bounds()
    half = template_size // 2
    h, w = img.shape
    grid = np.zeros((h, w))
    for r, c in img.pixel_points():
        grid[max(0, r - half):r + half + 1, max(0, c - half):c + half + 1] = 1.0
    return SegMap(grid)


def _blocks(grid: np.ndarray, factor: int) -> np.ndarray:
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    h, w = grid.shape
    ph, pw = -h % factor, -w % factor
    padded = np.pad(grid, ((0, ph), (0, pw)))
    return padded.reshape((h + ph) // factor, factor, (w + pw) // factor, factor)


def downsample_sum(dmap: Union[DensityMap, np.ndarray], factor: int) -> DensityMap:
    """Block sums over factor x factor cells (zero padded); preserves total mass."""
    grid = dmap.grid if isinstance(dmap, DensityMap) else np.asarray(dmap, dtype=np.float64)
    return DensityMap(_blocks(grid, factor).sum(axis=(1, 3)))


def downsample_max(smap: Union[SegMap, np.ndarray], factor: int) -> SegMap:
    """Block maxima over factor x factor cells; keeps a binary map binary."""
    grid = smap.grid if isinstance(smap, SegMap) else np.asarray(smap, dtype=np.float64)
    return SegMap(_blocks(grid, factor).max(axis=(1, 3)))


# ----------------------------------------------------------------------
# Count quantization
# ----------------------------------------------------------------------

def make_bins(train_counts: Sequence[float], num_classes: int = DEFAULT_NUM_CLASSES) -> CountBins:
    """
    Equal-width groups over the training count range.

    Counts are integers, so the range [min, max] is split into num_classes
    intervals (e, e + width] starting at min - 1: counts 1..500 give
    1-100, 101-200, ..., 401-500.
    """
    counts = np.asarray(list(train_counts), dtype=np.float64)
    if counts.size == 0:
        raise ValueError("make_bins: no training counts given")
    if num_classes < 1:
        raise ValueError(f"make_bins: num_classes must be >= 1, got {num_classes}")
    lo, hi = float(counts.min()), float(counts.max())
    if lo == hi:
        return CountBins(edges=(lo - 1.0, hi), num_classes=num_classes, degenerate=True)
    edges = np.linspace(lo - 1.0, hi, num_classes + 1)
    return CountBins(edges=tuple(float(e) for e in edges), num_classes=num_classes)


def quantize_count(count: float, bins: CountBins) -> int:
    """1-based class of count; total via clamping at both ends."""
    if bins.degenerate:
        return 1
    interior = np.asarray(bins.edges[1:-1])
    return int(np.searchsorted(interior, count, side="left")) + 1
