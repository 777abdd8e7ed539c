"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op computes its forward value with numpy and, when a tape is active
and at least one input requires a gradient, appends a node holding the
inputs and a backward closure. ``Tape.backward`` walks the nodes in reverse
insertion order, which is always a valid reverse topological order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels

_tapes: list["Tape"] = []
_grad_enabled = [True]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._op: str | None = None  # producing op; None for leaves
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
        return self._op is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # operator sugar
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, p): return power(self, p)
    def __matmul__(self, o): return matmul(self, o)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)
    def transpose(self, *axes): return transpose(self, axes or None)
    def swapaxes(self, a, b): return swapaxes(self, a, b)


def _scalar_error(t: Tensor):
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


@dataclass
class Node:
    op: str
    parents: tuple[Tensor, ...]
    out: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]

    @property
    def parent_ids(self) -> tuple[int, ...]:
        return tuple(id(p) for p in self.parents)


class Tape:
    """Records differentiable ops executed while it is the innermost active tape."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        _tapes.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tapes.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf that requires grad with dloss/dleaf.

    Leaf gradients accumulate into whatever is already stored in ``.grad``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        if not loss.requires_grad:
            raise ValueError("backward: loss was not recorded on a tape and requires no grad "
                             "(was it computed outside the Tape context?)")
        _accumulate(loss, seed)
        return
    pending: dict[int, np.ndarray] = {id(loss): seed}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                _accumulate(parent, pg)
            else:
                key = id(parent)
                prev = pending.get(key)
                pending[key] = pg if prev is None else prev + pg


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.float64).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


class no_grad:
    """Context manager that stops ops from being recorded on any tape."""

    def __enter__(self):
        _grad_enabled.append(False)

    def __exit__(self, *exc):
        _grad_enabled.pop()


def _active_tape() -> Tape | None:
    if not _grad_enabled[-1] or not _tapes:
        return None
    return _tapes[-1]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], op: str, bw) -> Tensor:
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        node = Node(op, parents, out, bw)
        out._op = op  # no back-reference to the node, so graphs free by refcount
        tape.nodes.append(node)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b), "add",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b), "sub",
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), "mul", bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), "div", bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), "neg", lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data ** p, (a,), "pow", lambda g: (g * p * a.data ** (p - 1),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), "square", lambda g: (2.0 * g * a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), "sqrt", lambda g: (0.5 * g / out,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), "exp", lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), "log", lambda g: (g / a.data,))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), "abs", lambda g: (g * np.sign(a.data),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _make(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a) -> Tensor:
    """tanh-approximated GELU (smooth everywhere, which keeps finite differences honest)."""
    a = as_tensor(a)
    x = a.data
    x2 = x * x
    u = _GELU_C * x * (1.0 + 0.044715 * x2)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return _make(out, (a,), "gelu", bw)


def snake(x, alpha) -> Tensor:
    """x + sin^2(alpha * x) / alpha, one alpha per channel.

    Channels sit on axis -2 ([C, T] or [B, C, T]); a 1-D input takes a
    single-element alpha.
    """
    x, alpha = as_tensor(x), as_tensor(alpha)
    if np.any(alpha.data <= 0):
        raise ValueError("snake: alpha must be strictly positive")
    x3 = x.data.reshape((1, 1, -1) if x.ndim == 1 else (-1,) + x.shape[-2:])
    if alpha.ndim != 1 or alpha.shape[0] != x3.shape[1]:
        raise ValueError(f"snake: alpha has shape {alpha.shape}, expected ({x3.shape[1]},) "
                         f"matching the channel axis of input {x.shape}")
    out, s2, sq = _kernels.snake_forward(np.ascontiguousarray(x3), alpha.data)

    def bw(g):
        gx, ga = _kernels.snake_backward(np.ascontiguousarray(g).reshape(x3.shape), x3,
                                         alpha.data, s2, sq, alpha.requires_grad)
        return (gx.reshape(x.shape) if x.requires_grad else None,
                ga if alpha.requires_grad else None)

    return _make(out.reshape(x.shape), (x, alpha), "snake", bw)


# reductions

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), "sum", bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size // max(out.size, 1)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return _make(out, (a,), "mean", bw)


def abs_mean(a) -> Tensor:
    """Mean absolute value over all entries (the L1 reduction used by the losses)."""
    a = as_tensor(a)
    n = a.data.size
    return _make(np.array(np.abs(a.data).sum() / n), (a,), "abs_mean",
                 lambda g: (g * np.sign(a.data) / n,))


def sq_mean(a) -> Tensor:
    """Mean squared value over all entries."""
    a = as_tensor(a)
    n = a.data.size
    return _make(np.array((a.data * a.data).sum() / n), (a,), "sq_mean",
                 lambda g: (g * 2.0 * a.data / n,))


# shape ops

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is not None and len(axes) == 1 and isinstance(axes[0], (tuple, list)):
        axes = tuple(axes[0])
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), "transpose", lambda g: (np.transpose(g, inv),))


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return _make(np.swapaxes(a.data, i, j), (a,), "swapaxes", lambda g: (np.swapaxes(g, i, j),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]

    def bw(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(np.array(out), (a,), "getitem", bw)


def pad_last(a, left: int, right: int) -> Tensor:
    """Zero-pad (or, for negative amounts, crop) the last axis."""
    a = as_tensor(a)
    n = a.shape[-1]
    width = [(0, 0)] * (a.ndim - 1) + [(max(left, 0), max(right, 0))]
    out = np.pad(a.data, width)
    lo, hi = max(-left, 0), out.shape[-1] - max(-right, 0)
    out = out[..., lo:hi]

    def bw(g):
        ga = np.zeros(a.shape)
        src_lo = max(left, 0)
        dst_lo = max(-left, 0)
        m = min(n - dst_lo - max(-right, 0), g.shape[-1] - src_lo)
        ga[..., dst_lo:dst_lo + m] = g[..., src_lo:src_lo + m]
        return (ga,)

    return _make(np.ascontiguousarray(out), (a,), "pad", bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(ts)))

    return _make(out, ts, "concat", bw)


def take_rows(table, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table; output shape is idx.shape + (table.shape[1],)."""
    table = as_tensor(table)
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(table.data[idx], (table,), "take_rows", bw)


def straight_through(x, value: np.ndarray) -> Tensor:
    """Forward returns ``value`` exactly; backward passes the gradient to ``x`` unchanged."""
    x = as_tensor(x)
    value = np.asarray(value, dtype=np.float64)
    if value.shape != x.shape:
        raise ValueError(f"straight_through: value shape {value.shape} != input shape {x.shape}")
    return _make(value.copy(), (x,), "straight_through", lambda g: (g,))


def frame(a, size: int, hop: int) -> Tensor:
    """Slide a window of ``size`` samples with step ``hop`` over the last axis."""
    a = as_tensor(a)
    n = a.shape[-1]
    if n < size:
        raise ValueError(f"frame: signal length {n} is shorter than frame size {size}")
    nf = (n - size) // hop + 1
    out = sliding_window_view(a.data, size, axis=-1)[..., ::hop, :][..., :nf, :]

    def bw(g):
        ga = np.zeros(a.shape)
        if size % hop == 0:
            span = nf * hop
            for c in range(size // hop):
                seg = g[..., :, c * hop:(c + 1) * hop].reshape(g.shape[:-2] + (span,))
                ga[..., c * hop:c * hop + span] += seg
        else:
            for f in range(nf):
                ga[..., f * hop:f * hop + size] += g[..., f, :]
        return (ga,)

    return _make(np.ascontiguousarray(out), (a,), "frame", bw)


# linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands with ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ ({a.shape[-1]} vs {b.shape[-2]}) "
                         f"for shapes {a.shape} @ {b.shape}")

    def bw(g):
        ga = None
        if a.requires_grad:
            ga = _unbroadcast(_mm(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = None
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                # shared weight: fold batch dims into one GEMM instead of summing per-batch products
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(_mm(a.data, b.data), (a, b), "matmul", bw)


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if b.ndim == 2 and a.ndim > 2:
        return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[-1],))
    return a @ b


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), "softmax", bw)


def layer_norm(a, weight=None, bias=None, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply an optional affine map."""
    a = as_tensor(a)
    n = a.shape[-1]
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    w = None if weight is None else as_tensor(weight)
    b = None if bias is None else as_tensor(bias)
    for p, label in ((w, "weight"), (b, "bias")):
        if p is not None and p.shape != (n,):
            raise ValueError(f"layer_norm: {label} shape {p.shape} != ({n},)")
    out = xhat
    if w is not None:
        out = out * w.data
    if b is not None:
        out = out + b.data
    parents = tuple(t for t in (a, w, b) if t is not None)

    def bw(g):
        gxhat = g * w.data if w is not None else g
        ga = inv / n * (n * gxhat - gxhat.sum(-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(-1, keepdims=True))
        grads = [ga]
        if w is not None:
            grads.append((g * xhat).reshape(-1, n).sum(0))
        if b is not None:
            grads.append(g.reshape(-1, n).sum(0))
        return grads

    return _make(out, parents, "layer_norm", bw)


def _as_batched(x: Tensor, op: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x.data[None], True
    if x.ndim == 3:
        return x.data, False
    raise ValueError(f"{op}: input must be [C, T] or [B, C, T], got shape {x.shape}")


def conv1d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of [C_in, T] (or [B, C_in, T]) with weight [C_out, C_in, k]."""
    x, weight = as_tensor(x), as_tensor(weight)
    xb, squeeze = _as_batched(x, "conv1d")
    if weight.ndim != 3:
        raise ValueError(f"conv1d: weight must be [C_out, C_in, k], got shape {weight.shape}")
    cout, cin, k = weight.shape
    bsz, c, t = xb.shape
    if c != cin:
        raise ValueError(f"conv1d: input channels C_in={c} do not match weight C_in={cin}")
    if k < 1 or stride < 1 or padding < 0:
        raise ValueError(f"conv1d: need k >= 1, stride >= 1, padding >= 0 (k={k}, stride={stride}, padding={padding})")
    if t + 2 * padding < k:
        raise ValueError(f"conv1d: time length T={t} with padding {padding} is shorter than kernel k={k}")
    b = None if bias is None else as_tensor(bias)
    if b is not None and b.shape != (cout,):
        raise ValueError(f"conv1d: bias shape {b.shape} != C_out ({cout},)")
    tout = (t + 2 * padding - k) // stride + 1
    xp = np.pad(xb, ((0, 0), (0, 0), (padding, padding))) if padding else xb
    cols = _kernels.im2col(xp, k, stride, tout).reshape(bsz, tout, cin * k)
    wmat = weight.data.reshape(cout, cin * k)
    out = cols @ wmat.T
    if b is not None:
        out += b.data
    out = out.transpose(0, 2, 1)
    out = out[0] if squeeze else out
    parents = (x, weight) if b is None else (x, weight, b)

    def bw(g):
        gb3 = g[None] if squeeze else g
        gt = np.ascontiguousarray(gb3.transpose(0, 2, 1))
        grads = [None, None]
        if x.requires_grad:
            gcols = (gt @ wmat).reshape(bsz, tout, cin, k)
            gx = _kernels.col2im(gcols, stride, t + 2 * padding)[:, :, padding:padding + t]
            grads[0] = gx[0] if squeeze else gx
        if weight.requires_grad:
            grads[1] = np.tensordot(gt, cols, axes=([0, 1], [0, 1])).reshape(weight.shape)
        if b is not None:
            grads.append(gb3.sum(axis=(0, 2)))
        return grads

    return _make(np.ascontiguousarray(out), parents, "conv1d", bw)


def conv_transpose1d(x, weight, bias=None, stride: int = 1, padding: int = 0,
                     output_padding: int = 0) -> Tensor:
    """Transposed convolution (adjoint of conv1d) with weight [C_in, C_out, k].

    Output length is (T - 1) * stride - 2 * padding + k + output_padding.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    xb, squeeze = _as_batched(x, "conv_transpose1d")
    if weight.ndim != 3:
        raise ValueError(f"conv_transpose1d: weight must be [C_in, C_out, k], got shape {weight.shape}")
    cin, cout, k = weight.shape
    bsz, c, t = xb.shape
    if c != cin:
        raise ValueError(f"conv_transpose1d: input channels C_in={c} do not match weight C_in={cin}")
    if k < 1 or stride < 1 or padding < 0 or output_padding < 0:
        raise ValueError("conv_transpose1d: need k >= 1, stride >= 1, padding >= 0")
    full = (t - 1) * stride + k + output_padding
    tout = full - 2 * padding
    if tout < 1:
        raise ValueError(f"conv_transpose1d: padding {padding} leaves no output for T={t}, k={k}")
    b = None if bias is None else as_tensor(bias)
    if b is not None and b.shape != (cout,):
        raise ValueError(f"conv_transpose1d: bias shape {b.shape} != C_out ({cout},)")
    wmat = weight.data.reshape(cin, cout * k)
    xt = np.ascontiguousarray(xb.transpose(0, 2, 1))
    contrib = (xt @ wmat).reshape(bsz, t, cout, k)
    out = _kernels.col2im(contrib, stride, full)[:, :, padding:padding + tout]
    if b is not None:
        out = out + b.data[:, None]
    out = out[0] if squeeze else out
    parents = (x, weight) if b is None else (x, weight, b)

    def bw(g):
        gb3 = g[None] if squeeze else g
        gfull = np.zeros((bsz, cout, full))
        gfull[:, :, padding:padding + tout] = gb3
        gc = _kernels.im2col(gfull, k, stride, t).reshape(bsz, t, cout * k)
        grads = [None, None]
        if x.requires_grad:
            gx = (gc @ wmat.T).transpose(0, 2, 1)
            grads[0] = gx[0] if squeeze else gx
        if weight.requires_grad:
            grads[1] = np.tensordot(xt, gc, axes=([0, 1], [0, 1])).reshape(weight.shape)
        if b is not None:
            grads.append(gb3.sum(axis=(0, 2)))
        return grads

    return _make(np.ascontiguousarray(out), parents, "conv_transpose1d", bw)


# finite-difference checking

@dataclass
class GradCheckResult:
    max_rel_error: float
    tol: float
    worst: tuple[int, int] | None = None

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __float__(self) -> float:
        return self.max_rel_error


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor] | Tensor,
               eps: float = 1e-5, tol: float = 1e-4) -> GradCheckResult:
    """Compare tape gradients of scalar ``f(*inputs)`` with central differences.

    Relative error per entry is |analytic - fd| / max(|analytic|, |fd|, 1e-8);
    the maximum over every entry of every input that requires grad is returned.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"grad_check: eps={eps} outside [1e-7, 1e-3]")
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    checked = [t for t in inputs if t.requires_grad]
    for t in checked:
        t.grad = None
    with Tape() as tape:
        loss = f(*inputs)
    tape.backward(loss)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in checked]

    worst, where = 0.0, None
    with no_grad():
        for ti, t in enumerate(checked):
            flat = t.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = float(np.asarray(f(*inputs).data).reshape(-1)[0])
                flat[i] = orig - eps
                fm = float(np.asarray(f(*inputs).data).reshape(-1)[0])
                flat[i] = orig
                fd = (fp - fm) / (2 * eps)
                a = analytic[ti].reshape(-1)[i]
                err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
                if err > worst:
                    worst, where = err, (ti, i)
    return GradCheckResult(worst, tol, where)
