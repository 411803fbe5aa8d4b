"""
SegCrowd - Tensor Core

Minimal reverse-mode automatic differentiation over 64-bit numpy grids,
providing exactly the operators the network and its losses need.

Conventions:
- Layout is channel-first: (C, H, W), with an optional leading batch axis
  for conv2d and max_pool2d.
- No broadcasting: binary operators take equal dims or a Python scalar.
- Every operator checks its output for NaN/Inf and raises NonFiniteError.
- backward() accumulates into leaf .grad; call zero_grad() on the leaves
  before reusing them in a new graph.
"""

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import GraphError, NonFiniteError, ShapeError


Scalar = Union[int, float]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """
    n-dimensional float64 value grid with an attached gradient record.
    """

    def __init__(
        self,
        values,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        arr = np.array(values, dtype=np.float64)
        _check_finite(arr, name or "tensor")
        self.values: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = "leaf"

    @classmethod
    def _from_op(
        cls,
        values: np.ndarray,
        parents: Sequence["Tensor"],
        backward: BackwardFn,
        op: str,
    ) -> "Tensor":
        _check_finite(values, op)
        out = cls.__new__(cls)
        out.values = values
        out.grad = None
        out.name = None
        out._op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def dims(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single value, tensor has dims {self.dims}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(dims={self.dims}, op={self._op}{label}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # Reverse pass
    # ------------------------------------------------------------------

    def backward(self) -> None:
        """
        Propagate dLoss/dLeaf from this scalar into every requires_grad leaf.
        """
        if self.values.size != 1:
            raise GraphError(
                f"backward() needs a scalar loss, got dims {self.dims}",
                suggested_fix="Reduce the output with sum() or a loss function first",
            )
        if not self.requires_grad:
            raise GraphError("backward() from a tensor that does not depend on any parameter")

        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.values)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    # ------------------------------------------------------------------
    # Arithmetic (equal dims or Python scalar)
    # ------------------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add_elementwise(self, other)
        c = float(other)
        return Tensor._from_op(self.values + c, (self,), lambda g: (g,), "add_scalar")

    __radd__ = __add__

    def __neg__(self):
        return Tensor._from_op(-self.values, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        if isinstance(other, Tensor):
            _require_same_dims(self, other, "sub")
            return Tensor._from_op(self.values - other.values, (self, other), lambda g: (g, -g), "sub")
        return self + (-float(other))

    def __rsub__(self, other):
        return (-self) + float(other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            _require_same_dims(self, other, "mul")
            a, b = self.values, other.values
            return Tensor._from_op(a * b, (self, other), lambda g: (g * b, g * a), "mul")
        c = float(other)
        return Tensor._from_op(self.values * c, (self,), lambda g: (g * c,), "mul_scalar")

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            _require_same_dims(self, other, "div")
            a, b = self.values, other.values
            if np.any(b == 0):
                raise NonFiniteError("div: division by zero")
            return Tensor._from_op(
                a / b, (self, other), lambda g: (g / b, -g * a / (b * b)), "div"
            )
        c = float(other)
        if c == 0:
            raise NonFiniteError("div: division by zero")
        return self * (1.0 / c)

    def __rtruediv__(self, other):
        c = float(other)
        a = self.values
        if np.any(a == 0):
            raise NonFiniteError("rdiv: division by zero")
        return Tensor._from_op(c / a, (self,), lambda g: (-g * c / (a * a),), "rdiv")

    def square(self) -> "Tensor":
        a = self.values
        return Tensor._from_op(a * a, (self,), lambda g: (2.0 * a * g,), "square")

    def sum(self) -> "Tensor":
        """Sum of all entries as a 0-d tensor."""
        shape = self.values.shape
        return Tensor._from_op(
            np.array(self.values.sum()), (self,), lambda g: (np.full(shape, float(g)),), "sum"
        )

    def reshape(self, *dims: int) -> "Tensor":
        return reshape(self, dims[0] if len(dims) == 1 and isinstance(dims[0], tuple) else dims)


def _check_finite(values: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(
            f"{where}: produced non-finite values",
            suggested_fix="Check inputs and learning rate; NaN/Inf is never propagated",
        )


def _require_same_dims(a: Tensor, b: Tensor, op: str) -> None:
    if a.dims != b.dims:
        for axis, (da, db) in enumerate(zip(a.dims, b.dims)):
            if da != db:
                raise ShapeError(f"{op}: dims differ on axis {axis} ({da} vs {db}); {a.dims} vs {b.dims}")
        raise ShapeError(f"{op}: rank differs ({a.ndim} vs {b.ndim}); {a.dims} vs {b.dims}")


def _topological_order(root: Tensor) -> list[Tensor]:
    """Post-order over the graph (parents before children), iterative."""
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(value) -> Tensor:
    """Wrap arrays as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value, requires_grad=False)


# ======================================================================
# Structural ops
# ======================================================================

def add_elementwise(a: Tensor, b: Tensor) -> Tensor:
    """c[i] = a[i] + b[i]; each addend receives the upstream gradient."""
    _require_same_dims(a, b, "add_elementwise")
    return Tensor._from_op(a.values + b.values, (a, b), lambda g: (g, g), "add")


def reshape(x: Tensor, dims: Sequence[int]) -> Tensor:
    dims = tuple(int(d) for d in dims)
    src = x.dims
    try:
        out = x.values.reshape(dims)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {src} as {dims}") from None
    return Tensor._from_op(out, (x,), lambda g: (g.reshape(src),), "reshape")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along an existing axis (channel axis by default)."""
    if not tensors:
        raise ShapeError("concat: no tensors given")
    ref = tensors[0].dims
    for t in tensors[1:]:
        if t.ndim != len(ref):
            raise ShapeError(f"concat: rank differs ({len(ref)} vs {t.ndim})")
        for ax, (d0, d1) in enumerate(zip(ref, t.dims)):
            if ax != axis % len(ref) and d0 != d1:
                raise ShapeError(f"concat: dims differ on axis {ax} ({d0} vs {d1})")
    sizes = [t.dims[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.values for t in tensors], axis=axis)

    def backward(g):
        return np.split(g, splits, axis=axis)

    return Tensor._from_op(out, tuple(tensors), backward, "concat")


# ======================================================================
# Convolution
# ======================================================================

@dataclass(frozen=True)
class ConvSpec:
    """Conv(kernel size)-(number of filters)-(dilation rate), zero padding."""
    kernel_h: int
    kernel_w: int
    in_channels: int
    out_channels: int
    dilation: int = 1
    stride: int = 1
    padding: int = 0

    @classmethod
    def same(cls, kernel: int, in_channels: int, out_channels: int, dilation: int = 1) -> "ConvSpec":
        """Odd square kernel with padding that preserves spatial size."""
        if kernel % 2 == 0:
            raise ShapeError(f"same-padding needs an odd kernel, got {kernel}")
        return cls(kernel, kernel, in_channels, out_channels, dilation, 1, dilation * (kernel - 1) // 2)

    @property
    def weight_dims(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)

    def output_extent(self, extent: int, axis: str = "height") -> int:
        kernel = self.kernel_h if axis == "height" else self.kernel_w
        if self.dilation < 1 or self.stride < 1 or self.padding < 0:
            raise ShapeError(
                f"conv2d: dilation and stride must be >= 1 and padding >= 0, got "
                f"dilation={self.dilation} stride={self.stride} padding={self.padding}"
            )
        span = extent + 2 * self.padding - self.dilation * (kernel - 1) - 1
        out = span // self.stride + 1 if span >= 0 else 0
        if out < 1:
            raise ShapeError(
                f"conv2d: {axis} {extent} too small for kernel {kernel} with dilation "
                f"{self.dilation} and padding {self.padding}"
            )
        return out


def conv2d(x: Tensor, spec: ConvSpec, weight: Tensor, bias: Tensor) -> Tensor:
    """
    2-D cross-correlation with dilation, stride and zero padding.

    x is (C, H, W) or (N, C, H, W); weight is (out, in, kh, kw); bias is (out,).
    """
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d: input must be (C,H,W) or (N,C,H,W), got dims {x.dims}")
    xv = x.values if batched else x.values[None]
    n, c, h, w = xv.shape
    if c != spec.in_channels:
        raise ShapeError(f"conv2d: channel axis has {c} channels, spec expects {spec.in_channels}")
    if weight.dims != spec.weight_dims:
        for name, got, want in zip(("out_channels", "in_channels", "kernel_h", "kernel_w"), weight.dims, spec.weight_dims):
            if got != want:
                raise ShapeError(f"conv2d: weight {name} axis is {got}, spec expects {want}")
        raise ShapeError(f"conv2d: weight dims {weight.dims}, spec expects {spec.weight_dims}")
    if bias.dims != (spec.out_channels,):
        raise ShapeError(f"conv2d: bias dims {bias.dims}, expected ({spec.out_channels},)")

    ho = spec.output_extent(h, "height")
    wo = spec.output_extent(w, "width")
    p, d, s = spec.padding, spec.dilation, spec.stride
    kh, kw = spec.kernel_h, spec.kernel_w

    xp = np.pad(xv, ((0, 0), (0, 0), (p, p), (p, p)))
    eff_h, eff_w = d * (kh - 1) + 1, d * (kw - 1) + 1
    # windows[n, c, i, j, u, v] = xp[n, c, i*s + u*d, j*s + v*d]
    windows = sliding_window_view(xp, (eff_h, eff_w), axis=(2, 3))[:, :, ::s, ::s, ::d, ::d]
    windows = windows[:, :, :ho, :wo]
    wv, bv = weight.values, bias.values

    out = np.tensordot(windows, wv, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
    out = out.transpose(0, 3, 1, 2) + bv[None, :, None, None]
    if not batched:
        out = out[0]

    def backward(g):
        gb = g if batched else g[None]
        dw = np.tensordot(gb, windows, axes=([0, 2, 3], [0, 2, 3]))
        db = gb.sum(axis=(0, 2, 3))
        dcols = np.tensordot(gb, wv, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                r0, c0 = i * d, j * d
                dxp[:, :, r0:r0 + s * (ho - 1) + 1:s, c0:c0 + s * (wo - 1) + 1:s] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        dx = dxp[:, :, p:p + h, p:p + w]
        if not batched:
            dx = dx[0]
        return dx, dw, db

    return Tensor._from_op(out, (x, weight, bias), backward, "conv2d")


# ======================================================================
# Pooling
# ======================================================================

def max_pool2d(x: Tensor) -> Tensor:
    """
    2x2 max-pool with stride 2 over the last two axes.

    Odd trailing rows/columns are dropped. The gradient goes to the first
    maximal cell of each window in row-major scan order.
    """
    if x.ndim < 2:
        raise ShapeError(f"max_pool2d: needs spatial axes, got dims {x.dims}")
    h, w = x.dims[-2:]
    if h < 2:
        raise ShapeError(f"max_pool2d: height is {h}, needs >= 2")
    if w < 2:
        raise ShapeError(f"max_pool2d: width is {w}, needs >= 2")
    h2, w2 = h // 2, w // 2
    lead = x.dims[:-2]
    xc = x.values[..., :2 * h2, :2 * w2]
    blocks = np.swapaxes(xc.reshape(lead + (h2, 2, w2, 2)), -3, -2).reshape(lead + (h2, w2, 4))
    idx = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    full_shape = x.dims

    def backward(g):
        gw = np.zeros(lead + (h2, w2, 4))
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        gx = np.swapaxes(gw.reshape(lead + (h2, w2, 2, 2)), -3, -2).reshape(lead + (2 * h2, 2 * w2))
        dx = np.zeros(full_shape)
        dx[..., :2 * h2, :2 * w2] = gx
        return (dx,)

    return Tensor._from_op(out, (x,), backward, "max_pool2d")


def spp_cell_bounds(extent: int, level: int) -> list[tuple[int, int]]:
    """Cell i of an n-way split spans [floor(i*E/n), floor((i+1)*E/n))."""
    return [((i * extent) // level, ((i + 1) * extent) // level) for i in range(level)]


def spp(x: Tensor, levels: Sequence[int]) -> Tensor:
    """
    Spatial pyramid max-pooling of a (C, H, W) map.

    Output is a flat vector of length C * sum(n^2): for each level, the
    (C, n, n) grid of cell maxima in row-major order.
    """
    if x.ndim != 3:
        raise ShapeError(f"spp: input must be (C,H,W), got dims {x.dims}")
    c, h, w = x.dims
    for n in levels:
        if n < 1:
            raise ShapeError(f"spp: level must be >= 1, got {n}")
        if n > h or n > w:
            axis = "height" if n > h else "width"
            raise ShapeError(f"spp: level {n} exceeds {axis} {h if n > h else w}")

    xv = x.values
    pieces = []
    # argmax positions for backward: (channel, row, col) of each output entry
    rows_all, cols_all = [], []
    for n in levels:
        row_bounds = spp_cell_bounds(h, n)
        col_bounds = spp_cell_bounds(w, n)
        level_vals = np.empty((c, n, n))
        level_rows = np.empty((c, n, n), dtype=np.intp)
        level_cols = np.empty((c, n, n), dtype=np.intp)
        for i, (r0, r1) in enumerate(row_bounds):
            for j, (c0, c1) in enumerate(col_bounds):
                cell = xv[:, r0:r1, c0:c1].reshape(c, -1)
                am = np.argmax(cell, axis=1)
                level_vals[:, i, j] = cell[np.arange(c), am]
                cw = c1 - c0
                level_rows[:, i, j] = r0 + am // cw
                level_cols[:, i, j] = c0 + am % cw
        pieces.append(level_vals.reshape(-1))
        rows_all.append(level_rows.reshape(-1))
        cols_all.append(level_cols.reshape(-1))

    out = np.concatenate(pieces)
    chans = np.concatenate([np.repeat(np.arange(c), n * n) for n in levels])
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)

    def backward(g):
        dx = np.zeros((c, h, w))
        np.add.at(dx, (chans, rows, cols), g)
        return (dx,)

    return Tensor._from_op(out, (x,), backward, "spp")


def spp_output_length(channels: int, levels: Iterable[int]) -> int:
    return channels * sum(n * n for n in levels)


# ======================================================================
# Dense
# ======================================================================

def fully_connected(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map weight @ x + bias for a flat input."""
    if x.ndim != 1:
        raise ShapeError(f"fully_connected: input must be flat, got dims {x.dims}")
    if weight.ndim != 2:
        raise ShapeError(f"fully_connected: weight must be (out, in), got dims {weight.dims}")
    n_out, n_in = weight.dims
    if x.dims[0] != n_in:
        raise ShapeError(f"fully_connected: input length {x.dims[0]} does not match weight in-axis {n_in}")
    if bias.dims != (n_out,):
        raise ShapeError(f"fully_connected: bias dims {bias.dims}, expected ({n_out},)")
    xv, wv = x.values, weight.values
    out = wv @ xv + bias.values

    def backward(g):
        return wv.T @ g, np.outer(g, xv), g

    return Tensor._from_op(out, (x, weight, bias), backward, "fully_connected")


# ======================================================================
# Activations
# ======================================================================

def relu(x: Tensor) -> Tensor:
    xv = x.values
    mask = xv > 0
    return Tensor._from_op(np.where(mask, xv, 0.0), (x,), lambda g: (g * mask,), "relu")


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """
    Parametric ReLU: x for x > 0, slope * x otherwise.

    slope has one entry shared by all channels, or one entry per channel
    (axis 0 of x).
    """
    if slope.ndim != 1 or slope.dims[0] not in (1, x.dims[0] if x.ndim else 1):
        raise ShapeError(
            f"prelu: slope dims {slope.dims} must be (1,) or (channels,) = ({x.dims[0] if x.ndim else 1},)"
        )
    xv = x.values
    shared = slope.dims[0] == 1
    a = slope.values[0] if shared else slope.values.reshape((-1,) + (1,) * (x.ndim - 1))
    pos = xv > 0
    out = np.where(pos, xv, a * xv)

    def backward(g):
        dx = g * np.where(pos, 1.0, a)
        da_full = np.where(pos, 0.0, g * xv)
        if shared:
            da = np.array([da_full.sum()])
        else:
            da = da_full.reshape(slope.dims[0], -1).sum(axis=1)
        return dx, da

    return Tensor._from_op(out, (x, slope), backward, "prelu")


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.values))
    return Tensor._from_op(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last (class) axis."""
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(s, (x,), backward, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    """Numerically stable log-softmax over the last axis (max subtraction)."""
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=-1, keepdims=True),)

    return Tensor._from_op(out, (x,), backward, "log_softmax")
