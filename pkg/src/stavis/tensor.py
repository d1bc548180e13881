"""Float64 tensors with reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad`` set records its
inputs and a backward rule on the output. :class:`Tape` recovers the
topological order from a scalar loss and replays the rules in reverse.

Layout conventions: data is C-ordered (row-major) float64. Convolution and
pooling inputs are channel-first, ``(N, C, *spatial)`` when batched or
``(C, *spatial)`` otherwise.
"""

from __future__ import annotations

import contextlib
import string
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from stavis.errors import NumericError, ShapeError

_GRAD_ENABLED = True
_DEBUG = False
_BRANCHES: list[bytes] | None = None


def set_debug(enabled: bool) -> None:
    """Turn on finiteness checks after every recorded operation."""
    global _DEBUG
    _DEBUG = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (inference)."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


@contextlib.contextmanager
def record_branches():
    """Collect the branch taken by every piecewise op (ReLU and clip masks,
    max-pool winners) evaluated inside the block, in evaluation order."""
    global _BRANCHES
    previous, _BRANCHES = _BRANCHES, []
    try:
        yield _BRANCHES
    finally:
        _BRANCHES = previous


def _branch(pattern: np.ndarray) -> None:
    if _BRANCHES is not None:
        _BRANCHES.append(pattern.tobytes())


class Tensor:
    __array_priority__ = 100.0
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.op = "leaf"
        if _DEBUG:
            _check_finite(self.data, "leaf")

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

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else _raise_item(self)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # arithmetic -----------------------------------------------------------
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

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def _raise_item(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by {op}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], rule: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = rule
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    if _DEBUG:
        _check_finite(data, op)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# tape


class Tape:
    """Topologically ordered record of the operations leading to a tensor.

    ``entries`` lists every tensor that participates in differentiation,
    inputs before outputs; leaves (parameters, inputs) are included.
    """

    def __init__(self, entries: list[Tensor]):
        self.entries = entries

    @classmethod
    def record(cls, root: Tensor) -> Tape:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.entries)

    def leaves(self) -> list[Tensor]:
        return [t for t in self.entries if t.is_leaf]


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss was not recorded: no input requires grad")
    tape = tape if tape is not None else Tape.record(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.entries):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), rule, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), rule, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def rule(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _make(a.data * b.data, (a, b), rule, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def rule(g):
        return (
            _unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None,
        )

    return _make(out, (a, b), rule, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    exponent = float(exponent)

    def rule(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return _make(a.data**exponent, (a,), rule, "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    _branch(mask)
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    _branch(np.sign(a.data - lo) + 3 * np.sign(a.data - hi))
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


def activation(a, kind: str) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(a)
    if kind == "relu":
        return relu(a)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def _norm_axis(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.asarray(out), (a,), rule, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) / float(count)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _make(out, (a,), lambda g: (g.transpose(inverse),), "transpose")


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))
    return _make(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "broadcast")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = np.array(a.data[index], dtype=np.float64)
    basic = _is_basic_index(index)

    def rule(g):
        full = np.zeros(a.shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), rule, "getitem")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def rule(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(ts))
        )

    return _make(out, ts, rule, "concat")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in ts]
    return concat(expanded, axis=axis)


def einsum(subscripts: str, *operands) -> Tensor:
    """Differentiable ``np.einsum`` with explicit output (``'ij,j->i'`` form).

    Repeated indices inside one operand (diagonals) and ellipses are not
    supported.
    """
    ts = tuple(as_tensor(o) for o in operands)
    spec = subscripts.replace(" ", "")
    if "->" not in spec or "." in spec:
        raise ValueError("einsum needs an explicit output and no ellipsis")
    lhs, out_idx = spec.split("->")
    ins = lhs.split(",")
    if len(ins) != len(ts):
        raise ShapeError(f"einsum expects {len(ins)} operands, got {len(ts)}")
    for sub_, t in zip(ins, ts):
        if len(set(sub_)) != len(sub_):
            raise ValueError(f"repeated index in operand {sub_!r}")
        if len(sub_) != t.ndim:
            raise ShapeError(f"operand {sub_!r} does not match shape {t.shape}")
    out = np.einsum(spec, *(t.data for t in ts), optimize=True)

    def rule(g):
        grads = []
        for i, t in enumerate(ts):
            if not t.requires_grad:
                grads.append(None)
                continue
            others = [ins[j] for j in range(len(ts)) if j != i]
            other_data = [ts[j].data for j in range(len(ts)) if j != i]
            available = set(out_idx).union(*others)
            kept = "".join(c for c in ins[i] if c in available)
            expr = ",".join([out_idx] + others) + "->" + kept
            gi = np.einsum(expr, g, *other_data, optimize=True)
            if kept != ins[i]:
                expand = [ax for ax, c in enumerate(ins[i]) if c not in available]
                gi = np.broadcast_to(np.expand_dims(gi, expand), t.shape)
            grads.append(gi)
        return tuple(grads)

    return _make(np.asarray(out, dtype=np.float64), ts, rule, "einsum")


def affine(x, weight, bias=None, axis: int | None = None) -> Tensor:
    """``weight @ x + bias`` along the feature axis, broadcast over the rest.

    The feature axis defaults to 0 for vectors and 1 otherwise (channel-first).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if weight.ndim != 2:
        raise ShapeError(f"affine weight must be 2-D, got {weight.shape}")
    if axis is None:
        axis = 0 if x.ndim == 1 else 1
    axis %= x.ndim
    if weight.shape[1] != x.shape[axis]:
        raise ShapeError(
            f"affine weight expects {weight.shape[1]} input features, got {x.shape[axis]}"
        )
    letters = string.ascii_lowercase[: x.ndim]
    src = letters[:axis] + "z" + letters[axis + 1:]
    dst = letters[:axis] + "y" + letters[axis + 1:]
    out = einsum(f"yz,{src}->{dst}", weight, x)
    if bias is None:
        return out
    bias = as_tensor(bias)
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"affine bias must have shape ({weight.shape[0]},), got {bias.shape}")
    view = [1] * x.ndim
    view[axis] = weight.shape[0]
    return out + reshape(bias, view)


def l2norm(a, axis: int, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; the gradient at a zero vector is zero."""
    a = as_tensor(a)
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    safe = np.where(n > 0, n, 1.0)
    out = n if keepdims else np.squeeze(n, axis=axis)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.where(n > 0, g * a.data / safe, 0.0),)

    return _make(np.ascontiguousarray(out), (a,), rule, "l2norm")


def spatial_softmax(a) -> Tensor:
    """Softmax over the last two axes, computed with max subtraction."""
    a = as_tensor(a)
    axes = (-2, -1)
    shifted = a.data - a.data.max(axis=axes, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axes, keepdims=True)

    def rule(g):
        return (out * (g - (g * out).sum(axis=axes, keepdims=True)),)

    return _make(out, (a,), rule, "spatial_softmax")


# ---------------------------------------------------------------------------
# convolution, pooling, resampling


def _tuple(v, n: int) -> tuple[int, ...]:
    if isinstance(v, (int, np.integer)):
        return (int(v),) * n
    v = tuple(int(x) for x in v)
    if len(v) != n:
        raise ShapeError(f"expected {n} values, got {v}")
    return v


def conv_output_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def conv(x, kernel, bias=None, stride=1, padding=0, rank: int | None = None) -> Tensor:
    """Direct cross-correlation over ``rank`` trailing axes (1, 2 or 3).

    ``x`` is ``(N, C, *spatial)`` or ``(C, *spatial)``; ``kernel`` is
    ``(C_out, C, *k)``. Output size per axis is ``floor((n + 2p - k)/s) + 1``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    rank = kernel.ndim - 2 if rank is None else rank
    if rank not in (1, 2, 3) or kernel.ndim != rank + 2:
        raise ShapeError(f"kernel shape {kernel.shape} does not fit rank {rank}")
    batched = x.ndim == rank + 2
    if not batched and x.ndim != rank + 1:
        raise ShapeError(f"input shape {x.shape} does not fit rank {rank}")
    stride, padding = _tuple(stride, rank), _tuple(padding, rank)
    xd = x.data if batched else x.data[None]
    if xd.shape[1] != kernel.shape[1]:
        raise ShapeError(f"input has {xd.shape[1]} channels, kernel expects {kernel.shape[1]}")
    ksize = kernel.shape[2:]
    out_sp = tuple(
        conv_output_size(n, k, s, p) for n, k, s, p in zip(xd.shape[2:], ksize, stride, padding)
    )
    if any(o <= 0 for o in out_sp):
        raise ShapeError(f"convolution of {xd.shape[2:]} with kernel {ksize} gives empty output")
    if any(padding):
        xd = np.pad(xd, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
    xcl = np.moveaxis(xd, 1, -1)
    w = kernel.data
    n_out = w.shape[0]

    def window(off):
        return (slice(None),) + tuple(
            slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(off, stride, out_sp)
        )

    offsets = list(np.ndindex(*ksize))
    acc = np.zeros((xd.shape[0],) + out_sp + (n_out,))
    for off in offsets:
        acc += xcl[window(off)] @ w[(slice(None), slice(None)) + off].T
    out = np.ascontiguousarray(np.moveaxis(acc, -1, 1))
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (n_out,):
            raise ShapeError(f"bias must have shape ({n_out},), got {bias.shape}")
        out += bias.data.reshape((1, n_out) + (1,) * rank)
    if not batched:
        out = out[0]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def rule(g):
        g = g if batched else g[None]
        gcl = np.moveaxis(g, 1, -1)
        g2 = gcl.reshape(-1, n_out)
        gx = np.zeros(xcl.shape) if x.requires_grad else None
        gw = np.zeros(w.shape) if kernel.requires_grad else None
        for off in offsets:
            sl = window(off)
            widx = (slice(None), slice(None)) + off
            if gw is not None:
                gw[widx] = g2.T @ xcl[sl].reshape(-1, w.shape[1])
            if gx is not None:
                gx[sl] += gcl @ w[widx]
        if gx is not None:
            gx = np.moveaxis(gx, -1, 1)
            crop = (slice(None), slice(None)) + tuple(
                slice(p, gx.shape[2 + i] - p) for i, p in enumerate(padding)
            )
            gx = np.ascontiguousarray(gx[crop])
            if not batched:
                gx = gx[0]
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0,) + tuple(range(2, 2 + rank))),)
        return grads

    return _make(out, parents, rule, f"conv{rank}d")


def pool(x, mode: str, window, stride=None, axes: Iterable[int] | None = None) -> Tensor:
    """Average or max pooling over ``axes`` (default: the trailing ``len(window)`` axes).

    No padding. Max pooling routes the gradient to the first maximum in each window.
    """
    x = as_tensor(x)
    if mode not in ("avg", "max"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    window = (int(window),) if isinstance(window, (int, np.integer)) else tuple(int(w) for w in window)
    stride = window if stride is None else _tuple(stride, len(window))
    axes = tuple(range(x.ndim - len(window), x.ndim)) if axes is None else tuple(a % x.ndim for a in axes)
    if len(axes) != len(window):
        raise ShapeError("pool axes and window lengths differ")
    for ax, w in zip(axes, window):
        if w < 1 or w > x.shape[ax]:
            raise ShapeError(f"pool window {w} exceeds axis {ax} of length {x.shape[ax]}")
    out_len = {ax: (x.shape[ax] - w) // s + 1 for ax, w, s in zip(axes, window, stride)}

    def window_slice(off):
        sl = [slice(None)] * x.ndim
        for ax, o, s in zip(axes, off, stride):
            sl[ax] = slice(o, o + s * (out_len[ax] - 1) + 1, s)
        return tuple(sl)

    offsets = list(np.ndindex(*window))
    count = float(len(offsets))
    xd = x.data
    if mode == "avg":
        out = np.zeros(tuple(out_len.get(ax, n) for ax, n in enumerate(x.shape)))
        for off in offsets:
            out += xd[window_slice(off)]
        out /= count

        def rule(g):
            gx = np.zeros(x.shape)
            share = g / count
            for off in offsets:
                gx[window_slice(off)] += share
            return (gx,)

        return _make(out, (x,), rule, "avgpool")

    out = xd[window_slice(offsets[0])].copy()
    arg = np.zeros(out.shape, dtype=np.int64)
    for i, off in enumerate(offsets[1:], start=1):
        patch = xd[window_slice(off)]
        better = patch > out
        out = np.where(better, patch, out)
        arg[better] = i
    _branch(arg)

    def rule(g):
        gx = np.zeros(x.shape)
        for i, off in enumerate(offsets):
            gx[window_slice(off)] += np.where(arg == i, g, 0.0)
        return (gx,)

    return _make(out, (x,), rule, "maxpool")


def _interp_plan(n_in: int, n_out: int):
    if n_out == 1:
        src = np.zeros(1)
    else:
        src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    matrix = np.zeros((n_out, n_in))
    np.add.at(matrix, (np.arange(n_out), i0), 1.0 - frac)
    np.add.at(matrix, (np.arange(n_out), i1), frac)
    return i0, i1, frac, matrix


def upsample2d(x, target_h: int, target_w: int) -> Tensor:
    """Bilinear interpolation of the last two axes with aligned corners."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError("upsample2d needs at least two axes")
    h, w = x.shape[-2:]
    if target_h < h or target_w < w:
        raise ShapeError(f"cannot upsample {h}x{w} to smaller {target_h}x{target_w}")
    r0, r1, rf, rmat = _interp_plan(h, target_h)
    c0, c1, cf, cmat = _interp_plan(w, target_w)
    d = x.data
    rows = d[..., r0, :] + rf[:, None] * (d[..., r1, :] - d[..., r0, :])
    out = rows[..., c0] + cf * (rows[..., c1] - rows[..., c0])

    def rule(g):
        return (np.einsum("...HW,Hh,Ww->...hw", g, rmat, cmat, optimize=True),)

    return _make(np.ascontiguousarray(out), (x,), rule, "upsample2d")
