"""Dense rank-4 tensors with reverse-mode automatic differentiation.

Every layer the saliency models need (convolution, the pooling family,
bilinear upsampling, pointwise activations) is implemented here as a free
function that records its inputs and a vector-Jacobian product on the
output tensor.  ``backward`` walks the recorded lineage once, in reverse
topological order, and accumulates gradients into leaf tensors that were
created with ``requires_grad=True``.

Two precision modes exist: 64-bit (for gradient checking) and 32-bit (for
training speed).  The mode is a process-wide default applied when tensors
are created; see ``set_default_dtype`` / ``default_dtype``.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterator, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

_DEFAULT_DTYPE = np.dtype(np.float32)
_GRAD_ENABLED = True

UPSAMPLE_FACTORS = (1, 2, 4, 8, 16)


def set_default_dtype(dtype) -> None:
    """Set the dtype new tensors are created with (float32 or float64)."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"default dtype must be float32 or float64, got {dt}")
    _DEFAULT_DTYPE = dt


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


@contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the default tensor dtype."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable lineage recording, e.g. for inference or benchmarking."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """A dense numeric array with an optional gradient and autograd lineage.

    ``data`` is always a contiguous float32 or float64 ndarray.  ``grad``
    stays ``None`` until ``backward`` reaches this tensor as a leaf; it then
    accumulates across backward calls until cleared.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        dt = np.dtype(dtype) if dtype is not None else _DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dt)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._vjp: Optional[Callable] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"


def _tracing(parents: Sequence[Tensor]) -> bool:
    if not _GRAD_ENABLED:
        return False
    return any(p.requires_grad or p._vjp is not None for p in parents)


def _op_output(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap an op result, recording lineage only when a parent needs it."""
    out = Tensor.__new__(Tensor)
    out.data = np.ascontiguousarray(data)
    out.grad = None
    out.requires_grad = False
    if _tracing(parents):
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    return out


def _check_rank4(t: Tensor, role: str) -> None:
    if t.data.ndim != 4:
        raise ShapeError(f"{role} must be rank-4 (batch, channels, height, width), "
                         f"got rank {t.data.ndim} with shape {t.shape}")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``x`` with ``weight`` (out_c, in_c, k, k).

    Output spatial size is floor((H + 2*padding - k) / stride) + 1.  The
    backward pass fills gradients for the input, the weight, and the bias.
    """
    _check_rank4(x, "conv2d input")
    _check_rank4(weight, "conv2d weight")
    n, c, h, w = x.shape
    out_c, in_c, kh, kw = weight.shape
    if in_c != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {in_c}")
    if stride < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ShapeError(f"conv2d: padding must be >= 0, got {padding}")
    if bias is not None and bias.data.shape != (out_c,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {out_c} output channels")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit input {h}x{w} with padding {padding}")

    if padding:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, weight.data, axes=((1, 4, 5), (1, 2, 3)))  # (n, oh, ow, out_c)
    out = np.moveaxis(out, 3, 1)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def vjp(g: np.ndarray):
        d_weight = np.tensordot(g, windows, axes=((0, 2, 3), (0, 2, 3)))
        d_cols = np.tensordot(g, weight.data, axes=((1,), (0,)))  # (n, oh, ow, c, kh, kw)
        d_cols = np.moveaxis(d_cols, 3, 1)  # (n, c, oh, ow, kh, kw)
        d_xp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                d_xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += d_cols[..., i, j]
        d_x = d_xp[:, :, padding:padding + h, padding:padding + w] if padding else d_xp
        if bias is not None:
            return d_x, d_weight, g.sum(axis=(0, 2, 3))
        return d_x, d_weight

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _op_output(out, parents, vjp)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def avg_pool2d(x: Tensor, rate: int) -> Tensor:
    """Mean over non-overlapping rate x rate blocks; rate must divide H and W."""
    _check_rank4(x, "avg_pool2d input")
    if rate < 1:
        raise ShapeError(f"avg_pool2d: rate must be >= 1, got {rate}")
    n, c, h, w = x.shape
    if h % rate or w % rate:
        raise ShapeError(f"avg_pool2d: rate {rate} does not divide spatial size {h}x{w}")
    if rate == 1:
        return x
    oh, ow = h // rate, w // rate
    blocks = x.data.reshape(n, c, oh, rate, ow, rate)
    out = blocks.mean(axis=(3, 5))

    def vjp(g: np.ndarray):
        spread = np.broadcast_to(g[:, :, :, None, :, None] / (rate * rate),
                                 (n, c, oh, rate, ow, rate))
        return (spread.reshape(n, c, h, w),)

    return _op_output(out, (x,), vjp)


def _adaptive_bins(in_size: int, out_size: int) -> list:
    """Bin i covers input indices [floor(i*in/out), ceil((i+1)*in/out))."""
    bins = []
    for i in range(out_size):
        lo = (i * in_size) // out_size
        hi = ((i + 1) * in_size + out_size - 1) // out_size
        bins.append((lo, hi))
    return bins


def adaptive_avg_pool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Average pooling onto an out_h x out_w grid with floor/ceil bin edges.

    Bins may overlap by one row/column when the sizes do not divide evenly;
    the backward pass spreads each output gradient by 1/bin-area.
    """
    _check_rank4(x, "adaptive_avg_pool2d input")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"adaptive_avg_pool2d: output size must be >= 1, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    if out_h > h or out_w > w:
        raise ShapeError(f"adaptive_avg_pool2d: output {out_h}x{out_w} exceeds input {h}x{w}")
    rows = _adaptive_bins(h, out_h)
    cols = _adaptive_bins(w, out_w)
    out = np.empty((n, c, out_h, out_w), dtype=x.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def vjp(g: np.ndarray):
        dx = np.zeros_like(x.data)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                area = (r1 - r0) * (c1 - c0)
                dx[:, :, r0:r1, c0:c1] += g[:, :, i:i + 1, j:j + 1] / area
        return (dx,)

    return _op_output(out, (x,), vjp)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel spatial mean, returned as a 1x1 map."""
    _check_rank4(x, "global_avg_pool input")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def vjp(g: np.ndarray):
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return _op_output(out, (x,), vjp)


def max_pool2d(x: Tensor, rate: int = 2) -> Tensor:
    """Max over rate x rate blocks; gradient goes to the first max in row-major order."""
    _check_rank4(x, "max_pool2d input")
    if rate < 1:
        raise ShapeError(f"max_pool2d: rate must be >= 1, got {rate}")
    n, c, h, w = x.shape
    if h % rate or w % rate:
        raise ShapeError(f"max_pool2d: rate {rate} does not divide spatial size {h}x{w}")
    if rate == 1:
        return x
    oh, ow = h // rate, w // rate
    blocks = x.data.reshape(n, c, oh, rate, ow, rate).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(n, c, oh, ow, rate * rate)
    arg = np.argmax(flat, axis=4)
    out = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]

    def vjp(g: np.ndarray):
        d_flat = np.zeros_like(flat)
        np.put_along_axis(d_flat, arg[..., None], g[..., None], axis=4)
        d_blocks = d_flat.reshape(n, c, oh, ow, rate, rate).transpose(0, 1, 2, 4, 3, 5)
        return (d_blocks.reshape(n, c, h, w),)

    return _op_output(out, (x,), vjp)


# ---------------------------------------------------------------------------
# bilinear resampling
# ---------------------------------------------------------------------------

def _resample_axis(in_size: int, out_size: int, dtype):
    """Source indices and fractions for one axis, half-pixel-centre convention.

    Source coordinate of output index d is (d + 0.5) * in/out - 0.5, clamped
    to the valid range.  Interpolation is written as lo + frac * (hi - lo) so
    constant inputs are reproduced exactly.
    """
    dst = np.arange(out_size, dtype=np.float64)
    src = np.clip((dst + 0.5) * (in_size / out_size) - 0.5, 0.0, in_size - 1.0)
    lo = np.minimum(src.astype(np.intp), in_size - 1)
    frac = (src - lo).astype(dtype)
    hi = np.minimum(lo + 1, in_size - 1)
    return lo, hi, frac


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resize to an arbitrary spatial size (half-pixel centres, edge clamp)."""
    _check_rank4(x, "resize_bilinear input")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize_bilinear: output size must be >= 1, got {out_h}x{out_w}")
    n, c, h, w = x.shape
    if out_h == h and out_w == w:
        return x
    r0, r1, fy = _resample_axis(h, out_h, x.dtype)
    c0, c1, fx = _resample_axis(w, out_w, x.dtype)
    fy_col = fy[:, None]

    rows_lo = x.data[:, :, r0, :]
    rows_hi = x.data[:, :, r1, :]
    tmp = rows_lo + fy_col * (rows_hi - rows_lo)  # (n, c, out_h, w)
    left = tmp[:, :, :, c0]
    right = tmp[:, :, :, c1]
    out = left + fx * (right - left)

    def vjp(g: np.ndarray):
        d_tmp = np.zeros((n, c, out_h, w), dtype=g.dtype)
        np.add.at(d_tmp, (Ellipsis, c0), g * (1.0 - fx))
        np.add.at(d_tmp, (Ellipsis, c1), g * fx)
        dx = np.zeros_like(x.data)
        np.add.at(dx, (slice(None), slice(None), r0), d_tmp * (1.0 - fy_col))
        np.add.at(dx, (slice(None), slice(None), r1), d_tmp * fy_col)
        return (dx,)

    return _op_output(out, (x,), vjp)


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Upsample both spatial dims by an integer factor from {1, 2, 4, 8, 16}."""
    if factor not in UPSAMPLE_FACTORS:
        raise ShapeError(f"upsample_bilinear: factor {factor} not in {UPSAMPLE_FACTORS}")
    if factor == 1:
        return x
    _check_rank4(x, "upsample_bilinear input")
    _, _, h, w = x.shape
    return resize_bilinear(x, h * factor, w * factor)


def pad_replicate2d(x: Tensor, pad_bottom: int, pad_right: int) -> Tensor:
    """Extend the bottom/right edges by repeating the border row/column.

    Gradients of the padded cells fold back onto the border cells they were
    copied from.  Zero padding returns the input unchanged.
    """
    _check_rank4(x, "pad_replicate2d input")
    if pad_bottom < 0 or pad_right < 0:
        raise ShapeError(f"pad_replicate2d: padding must be >= 0, got ({pad_bottom}, {pad_right})")
    if pad_bottom == 0 and pad_right == 0:
        return x
    n, c, h, w = x.shape
    out = np.pad(x.data, ((0, 0), (0, 0), (0, pad_bottom), (0, pad_right)), mode="edge")

    def vjp(g: np.ndarray):
        dx = g[:, :, :h, :w].copy()
        if pad_bottom:
            dx[:, :, h - 1, :] += g[:, :, h:, :w].sum(axis=2)
        if pad_right:
            dx[:, :, :, w - 1] += g[:, :, :h, w:].sum(axis=3)
        if pad_bottom and pad_right:
            dx[:, :, h - 1, w - 1] += g[:, :, h:, w:].sum(axis=(2, 3))
        return (dx,)

    return _op_output(out, (x,), vjp)


def crop2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Keep the top-left out_h x out_w window; backward zero-fills the rest."""
    _check_rank4(x, "crop2d input")
    n, c, h, w = x.shape
    if not 1 <= out_h <= h or not 1 <= out_w <= w:
        raise ShapeError(f"crop2d: window {out_h}x{out_w} does not fit input {h}x{w}")
    if out_h == h and out_w == w:
        return x
    out = x.data[:, :, :out_h, :out_w]

    def vjp(g: np.ndarray):
        dx = np.zeros_like(x.data)
        dx[:, :, :out_h, :out_w] = g
        return (dx,)

    return _op_output(out, (x,), vjp)


# ---------------------------------------------------------------------------
# pointwise and structural ops
# ---------------------------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0)
    mask = x.data > 0

    def vjp(g: np.ndarray):
        return (g * mask,)

    return _op_output(out, (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid_stable(x.data)

    def vjp(g: np.ndarray):
        return (g * y * (1.0 - y),)

    return _op_output(y, (x,), vjp)


def _sigmoid_stable(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    out = a.data + b.data

    def vjp(g: np.ndarray):
        return g, g

    return _op_output(out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    out = a.data * b.data

    def vjp(g: np.ndarray):
        return g * b.data, g * a.data

    return _op_output(out, (a, b), vjp)


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the channel axis; batch and spatial dims must agree."""
    if not inputs:
        raise ShapeError("concat_channels: need at least one input")
    for t in inputs:
        _check_rank4(t, "concat_channels input")
    first = inputs[0]
    for t in inputs[1:]:
        if (t.shape[0],) + t.shape[2:] != (first.shape[0],) + first.shape[2:]:
            raise ShapeError(f"concat_channels: shape {t.shape} is incompatible with {first.shape}")
    out = np.concatenate([t.data for t in inputs], axis=1)
    widths = [t.shape[1] for t in inputs]
    edges = np.cumsum([0] + widths)

    def vjp(g: np.ndarray):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(inputs)))

    return _op_output(out, tuple(inputs), vjp)


def reduce_sum(x: Tensor) -> Tensor:
    """Sum every element into a 1x1x1x1 scalar tensor."""
    out = np.asarray(x.data.sum(), dtype=x.dtype).reshape(1, 1, 1, 1)

    def vjp(g: np.ndarray):
        return (np.broadcast_to(g.reshape(()), x.shape).astype(x.dtype, copy=True),)

    return _op_output(out, (x,), vjp)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss into every requires_grad leaf.

    Each lineage node is visited exactly once.  Leaf gradients accumulate
    across calls: running backward twice on the same graph doubles them.
    """
    if loss.data.shape != (1, 1, 1, 1):
        raise ShapeError(f"backward: loss must have shape (1, 1, 1, 1), got {loss.shape}")
    if loss._vjp is None:
        raise ShapeError("backward: loss has no lineage to propagate through")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    flow: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = flow.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is not None:
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None:
                    continue
                held = flow.get(id(parent))
                flow[id(parent)] = pg if held is None else held + pg
        elif node.requires_grad:
            node.grad = g.astype(node.dtype, copy=True) if node.grad is None else node.grad + g
