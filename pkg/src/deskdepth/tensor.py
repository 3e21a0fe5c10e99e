"""Dense float64 tensors with reverse-mode automatic differentiation.

Every value in the pipeline (images, features, depths, losses) is a
:class:`Tensor`.  Operations record their parents and a backward closure; the
creation order of nodes is a valid topological order, so :func:`backward`
simply replays reachable nodes in reverse creation order.

Broadcasting is deliberately narrower than numpy's: operands must have the same
rank (or one of them is a scalar) and every dimension must either match or be
1 on one side.  Rank promotion is rejected because it is the usual source of
silent ``(N,)`` vs ``(N, 1)`` bugs in loss code.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NonFiniteError",
    "tensor",
    "no_grad",
    "debug_mode",
    "is_debug",
    "backward",
    "elementwise",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "absolute",
    "exp",
    "log",
    "sqrt",
    "min2",
    "activation",
    "elu",
    "sigmoid",
    "relu",
    "reduce",
    "sum",
    "mean",
    "concat_channels",
    "concat",
    "slice_channels",
    "reshape",
    "matmul",
    "conv2d",
    "pad_reflect",
    "avg_pool",
    "resize",
    "upsample_nearest2x",
    "grid_sample_bilinear",
    "identity_grid",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NonFiniteError(FloatingPointError):
    """Raised in debug mode when an op produces NaN/Inf or divides by zero."""


_counter = itertools.count()
_grad_enabled = True
_debug = False


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def debug_mode(enabled: bool = True):
    """Check every op output for NaN/Inf and reject division by exact zero."""
    global _debug
    prev = _debug
    _debug = enabled
    try:
        yield
    finally:
        _debug = prev


def is_debug() -> bool:
    return _debug


class Tensor:
    """An N-D float64 array that may participate in the differentiation graph.

    Leaves created with ``requires_grad=True`` accumulate gradients in
    :attr:`grad` across :func:`backward` calls until :meth:`zero_grad`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "_id", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.op = "leaf"
        self._id = next(_counter)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __abs__(self):
        return absolute(self)

    def __getitem__(self, index):
        return _getitem(self, index)

    def sum(self, axes=None, keepdims: bool = False) -> Tensor:
        return reduce("sum", self, axes, keepdims)

    def mean(self, axes=None, keepdims: bool = False) -> Tensor:
        return reduce("mean", self, axes, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if _debug and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Populate ``.grad`` of every trainable leaf reachable from ``loss``."""
    if grad is None:
        if loss.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.data)
    if not loss.requires_grad:
        return

    nodes: dict[int, Tensor] = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node._id in nodes:
            continue
        nodes[node._id] = node
        stack.extend(p for p in node._parents if p.requires_grad and p._id not in nodes)

    grads: dict[int, np.ndarray] = {loss._id: np.asarray(grad, dtype=np.float64)}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent._id in grads:
                grads[parent._id] = grads[parent._id] + pg
            else:
                grads[parent._id] = pg


# ---------------------------------------------------------------------------
# elementwise


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if a == ():
        return b
    if b == ():
        return a
    if len(a) != len(b):
        raise ShapeError(f"rank mismatch {a} vs {b} (implicit rank promotion is not allowed)")
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeError(f"shapes {a} and {b} are not broadcast-compatible")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if len(shape) == 0:
        return np.asarray(g.sum())
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True).reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data

    def bw(g):
        return (
            _unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(g * ad, bd.shape) if b.requires_grad else None,
        )

    return _make(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    ad, bd = a.data, b.data
    if _debug and np.any(bd == 0):
        raise NonFiniteError("division by exact zero")
    out = ad / bd

    def bw(g):
        return (
            _unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None,
        )

    return _make(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def min2(a, b) -> Tensor:
    """Elementwise minimum; the gradient goes to the argmin, ties to ``a``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        _broadcast_shape(a.shape, b.shape)
    pick_a = a.data <= b.data
    out = np.where(pick_a, a.data, b.data)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(np.where(pick_a, g, 0.0), sa), _unbroadcast(np.where(pick_a, 0.0, g), sb)

    return _make(out, (a, b), bw, "min2")


_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "min2": min2}
_UNARY = {"abs": absolute, "exp": exp, "log": log, "neg": neg, "sqrt": sqrt}


def elementwise(op: str, a, b=None) -> Tensor:
    if op in _BINARY:
        if b is None:
            raise ValueError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ValueError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------------------
# activations


def elu(x) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    neg_part = np.expm1(np.minimum(x.data, 0.0))
    out = np.where(pos, x.data, neg_part)
    return _make(out, (x,), lambda g: (np.where(pos, g, g * (neg_part + 1.0)),), "elu")


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x) -> Tensor:
    x = _as_tensor(x)
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (np.where(pos, g, 0.0),), "relu")


_ACT = {"elu": elu, "sigmoid": sigmoid, "relu": relu}


def activation(op: str, x) -> Tensor:
    try:
        return _ACT[op](x)
    except KeyError:
        raise ValueError(f"unknown activation {op!r}") from None


# ---------------------------------------------------------------------------
# reductions and shape plumbing


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None or axes == "all":
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


def reduce(op: str, x, axes=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    ax = _norm_axes(axes, x.ndim)
    count = int(np.prod([x.shape[a] for a in ax])) if ax else 1
    if count == 0 or x.size == 0:
        raise ShapeError("empty reduction")
    if op == "sum":
        out = x.data.sum(axis=ax, keepdims=keepdims)
        scale = 1.0
    elif op == "mean":
        out = x.data.mean(axis=ax, keepdims=keepdims)
        scale = 1.0 / count
    else:
        raise ValueError(f"unknown reduction {op!r}")
    in_shape = x.shape
    kept = tuple(1 if i in ax else s for i, s in enumerate(in_shape))

    def bw(g):
        g = np.reshape(g, kept)
        return (np.broadcast_to(g * scale, in_shape).copy(),)

    return _make(np.asarray(out), (x,), bw, op)


def sum(x, axes=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return reduce("sum", x, axes, keepdims)


def mean(x, axes=None, keepdims: bool = False) -> Tensor:
    return reduce("mean", x, axes, keepdims)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, t.shape)) if i != axis):
            raise ShapeError(f"cannot concatenate {ref} and {t.shape} along axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        sl = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[axis] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return out

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def concat_channels(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 4 or b.ndim != 4 or a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"concat_channels needs equal batch/spatial dims, got {a.shape} and {b.shape}")
    return concat([a, b], axis=1)


def _getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]
    shape = x.shape

    def bw(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _make(np.array(out), (x,), bw, "slice")


def slice_channels(x, start: int, stop: int) -> Tensor:
    return _getitem(_as_tensor(x), (slice(None), slice(start, stop)))


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    in_shape = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(in_shape),), "reshape")


def matmul(a, b) -> Tensor:
    """Matrix product of two rank-2 tensors."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


# ---------------------------------------------------------------------------
# convolution and pooling


def conv2d(x, kernel, bias=None, stride: int = 1, pad: int = 0) -> Tensor:
    """Zero-padded 2D cross-correlation, NCHW input, (outC, inC, kH, kW) kernel."""
    x, kernel = _as_tensor(x), _as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and kernel, got {x.shape}, {kernel.shape}")
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel.shape
    if c != ic:
        raise ShapeError(f"conv2d channel mismatch: input has {c}, kernel expects {ic}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d output size {ho}x{wo} < 1")

    # channels-last im2col: columns ordered (kh, kw, c) so every copy moves contiguous channel runs
    xn = np.zeros((n, h + 2 * pad, w + 2 * pad, c))
    xn[:, pad : pad + h, pad : pad + w, :] = x.data.transpose(0, 2, 3, 1)
    if kh == 1 and kw == 1:
        cols = np.ascontiguousarray(xn[:, : stride * ho : stride, : stride * wo : stride, :]).reshape(-1, c)
    else:
        cols = np.empty((n, ho, wo, kh, kw, c))
        for i in range(kh):
            for j in range(kw):
                cols[:, :, :, i, j, :] = xn[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :]
        cols = cols.reshape(-1, kh * kw * c)
    wmat = kernel.data.transpose(0, 2, 3, 1).reshape(oc, -1)
    out = cols @ wmat.T
    if bias is not None:
        bias = _as_tensor(bias)
        out += bias.data
    out = out.reshape(n, ho, wo, oc).transpose(0, 3, 1, 2)
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, oc)
        gk = None
        if kernel.requires_grad:
            gk = np.ascontiguousarray((g2.T @ cols).reshape(oc, kh, kw, c).transpose(0, 3, 1, 2))
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, kh, kw, c)
            gxn = np.zeros(xn.shape)
            for i in range(kh):
                for j in range(kw):
                    gxn[:, i : i + stride * ho : stride, j : j + stride * wo : stride, :] += dcols[:, :, :, i, j, :]
            gx = np.ascontiguousarray(gxn[:, pad : pad + h, pad : pad + w, :].transpose(0, 3, 1, 2))
        if bias is None:
            return gx, gk
        return gx, gk, g2.sum(axis=0)

    return _make(np.ascontiguousarray(out), parents, bw, "conv2d")


def pad_reflect(x, p: int) -> Tensor:
    x = _as_tensor(x)
    h, w = x.shape[2], x.shape[3]
    if p >= h or p >= w:
        raise ShapeError(f"reflect pad {p} too large for {h}x{w}")
    out = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
    return _make(out, (x,), lambda g: (_reflect_fold(g, p, h, w),), "pad_reflect")


def _reflect_fold(g: np.ndarray, p: int, h: int, w: int) -> np.ndarray:
    """Adjoint of reflect padding: accumulate padded-border gradients onto their sources."""
    g = g.copy()
    for k in range(p):
        # left column k mirrors interior column 2p-k; right column mirrors symmetrically
        g[:, :, :, 2 * p - k] += g[:, :, :, k]
        g[:, :, :, w - 1 + p - (p - k)] += g[:, :, :, w + 2 * p - 1 - k]
    g = g[:, :, :, p : p + w]
    for k in range(p):
        g[:, :, 2 * p - k, :] += g[:, :, k, :]
        g[:, :, h - 1 + p - (p - k), :] += g[:, :, h + 2 * p - 1 - k, :]
    return g[:, :, p : p + h, :]


def avg_pool(x, k: int = 3) -> Tensor:
    """Stride-1, unpadded k x k box average."""
    x = _as_tensor(x)
    n, c, h, w = x.shape
    ho, wo = h - k + 1, w - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"avg_pool window {k} larger than input {h}x{w}")
    xd = x.data
    # separable box sum keeps the cost linear in k
    rows = xd[:, :, 0:ho, :].copy()
    for i in range(1, k):
        rows += xd[:, :, i : i + ho, :]
    out = rows[:, :, :, 0:wo].copy()
    for j in range(1, k):
        out += rows[:, :, :, j : j + wo]
    out /= k * k
    in_shape = x.shape

    def bw(g):
        g = g / (k * k)
        gr = np.zeros((n, c, ho, w))
        for j in range(k):
            gr[:, :, :, j : j + wo] += g
        gx = np.zeros(in_shape)
        for i in range(k):
            gx[:, :, i : i + ho, :] += gr
        return (gx,)

    return _make(out, (x,), bw, "avg_pool")


# ---------------------------------------------------------------------------
# resampling


def _interp_matrix(src: int, dst: int, mode: str) -> np.ndarray:
    """Row i holds the weights that produce output sample i from the input samples."""
    m = np.zeros((dst, src))
    if mode == "nearest":
        idx = np.minimum(np.floor((np.arange(dst) + 0.5) * src / dst).astype(int), src - 1)
        m[np.arange(dst), idx] = 1.0
        return m
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")
    pos = (np.arange(dst) + 0.5) * src / dst - 0.5
    pos = np.clip(pos, 0.0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    return m


def resize(x, new_h: int, new_w: int, mode: str = "bilinear") -> Tensor:
    """Resize NCHW spatial dims with the align-corners-false pixel convention."""
    x = _as_tensor(x)
    if new_h < 1 or new_w < 1:
        raise ShapeError(f"resize target {new_h}x{new_w} must be positive")
    h, w = x.shape[2], x.shape[3]
    if (h, w) == (new_h, new_w):
        return _make(x.data.copy(), (x,), lambda g: (g,), "resize")
    a = _interp_matrix(h, new_h, mode)
    b = _interp_matrix(w, new_w, mode)
    out = np.matmul(np.matmul(a, x.data), b.T)
    return _make(out, (x,), lambda g: (np.matmul(np.matmul(a.T, g), b),), "resize")


def upsample_nearest2x(x) -> Tensor:
    x = _as_tensor(x)
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape
    return _make(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),), "upsample2x")


def identity_grid(n: int, h: int, w: int) -> np.ndarray:
    """Absolute pixel coordinates (x, y) of every pixel center, shape (n, 2, h, w)."""
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return np.broadcast_to(np.stack([xs, ys])[None], (n, 2, h, w)).copy()


def grid_sample_bilinear(source, grid) -> Tensor:
    """Bilinearly sample ``source`` (N,C,H,W) at absolute pixel coords ``grid`` (N,2,Ho,Wo).

    Coordinates are clamped to the image border; the gradient with respect to a
    clamped coordinate is zero.
    """
    source, grid = _as_tensor(source), _as_tensor(grid)
    n, c, h, w = source.shape
    if grid.ndim != 4 or grid.shape[0] != n or grid.shape[1] != 2:
        raise ShapeError(f"grid must be (N,2,H,W) matching batch {n}, got {grid.shape}")
    ho, wo = grid.shape[2], grid.shape[3]
    gx, gy = grid.data[:, 0], grid.data[:, 1]
    x = np.clip(gx, 0.0, w - 1)
    y = np.clip(gy, 0.0, h - 1)
    x0 = np.floor(x)
    y0 = np.floor(y)
    wx = x - x0
    wy = y - y0
    x0i = x0.astype(np.int64)
    y0i = y0.astype(np.int64)
    x1i = np.minimum(x0i + 1, w - 1)
    y1i = np.minimum(y0i + 1, h - 1)

    flat = source.data.reshape(n, c, h * w)
    i00 = (y0i * w + x0i).reshape(n, 1, -1)
    i01 = (y0i * w + x1i).reshape(n, 1, -1)
    i10 = (y1i * w + x0i).reshape(n, 1, -1)
    i11 = (y1i * w + x1i).reshape(n, 1, -1)
    v00 = np.take_along_axis(flat, np.broadcast_to(i00, (n, c, i00.shape[2])), axis=2)
    v01 = np.take_along_axis(flat, np.broadcast_to(i01, (n, c, i00.shape[2])), axis=2)
    v10 = np.take_along_axis(flat, np.broadcast_to(i10, (n, c, i00.shape[2])), axis=2)
    v11 = np.take_along_axis(flat, np.broadcast_to(i11, (n, c, i00.shape[2])), axis=2)
    wxf = wx.reshape(n, 1, -1)
    wyf = wy.reshape(n, 1, -1)
    w00 = (1.0 - wxf) * (1.0 - wyf)
    w01 = wxf * (1.0 - wyf)
    w10 = (1.0 - wxf) * wyf
    w11 = wxf * wyf
    out = (v00 * w00 + v01 * w01 + v10 * w10 + v11 * w11).reshape(n, c, ho, wo)

    def bw(g):
        gf = g.reshape(n, c, -1)
        gsrc = None
        if source.requires_grad:
            base = (np.arange(n * c) * (h * w)).reshape(n, c, 1)
            total = np.zeros(n * c * h * w)
            for idx, wt in ((i00, w00), (i01, w01), (i10, w10), (i11, w11)):
                total += np.bincount((idx + base).ravel(), weights=(gf * wt).ravel(), minlength=n * c * h * w)
            gsrc = total.reshape(n, c, h, w)
        ggrid = None
        if grid.requires_grad:
            dx = ((v01 - v00) * (1.0 - wyf) + (v11 - v10) * wyf) * gf
            dy = ((v10 - v00) * (1.0 - wxf) + (v11 - v01) * wxf) * gf
            dx = dx.sum(axis=1).reshape(n, ho, wo)
            dy = dy.sum(axis=1).reshape(n, ho, wo)
            dx = np.where((gx >= 0.0) & (gx <= w - 1), dx, 0.0)
            dy = np.where((gy >= 0.0) & (gy <= h - 1), dy, 0.0)
            ggrid = np.stack([dx, dy], axis=1)
        return gsrc, ggrid

    return _make(out, (source, grid), bw, "grid_sample")


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad and t.is_leaf]
