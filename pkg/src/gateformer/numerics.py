"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Everything runs in 64-bit floats: the models here are desk-scale, and
determinism plus tight finite-difference agreement matter more than speed.
Gradients are recorded define-by-run on an explicit :class:`Tape`:

    with Tape() as tape:
        y = matmul(w, x)
        loss = vsum(y * y)
    backward(tape, loss)        # w.grad now holds dloss/dw

A tape is single-threaded; independent samples may each run their own tape
concurrently. ``backward`` walks the tape once, in reverse recording order,
so gradient accumulation order is deterministic and runs are bit-reproducible
for a fixed seed. Repeated ``backward`` calls without ``zero_grad`` add
another full dloss/dtensor into ``.grad``.

Op outputs may share storage with their inputs (reshape, transpose); treat
tensor ``.data`` as read-only once it has entered an op. Gradient arrays are
only ever replaced, never mutated in place, so aliasing between them is safe.

A thread-local FLOP counter (:func:`count_flops`) can be armed around any
forward pass; every op then reports its cost as multiply-adds x2 plus fixed
per-element constants for the transcendental ops (see ``_FLOPS_PER_ELEM``).
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "constant",
    "backward",
    "matmul",
    "softmax",
    "conv1d",
    "LSTMParams",
    "lstm_last",
    "cosine",
    "relu",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "sqrt",
    "clamp_min",
    "vsum",
    "mean",
    "dot",
    "logsumexp",
    "layer_norm",
    "gather_rows",
    "concat_rows",
    "narrow",
    "reshape",
    "transpose",
    "transpose2d",
    "count_flops",
    "FlopCounter",
]

_STATE = threading.local()

# Fixed per-element costs for non-multiply-add work; the analytic cost model
# in the efficiency module uses the same table.
_FLOPS_PER_ELEM = {
    "elementwise": 1,
    "transcendental": 4,  # exp, log, sqrt, sigmoid, tanh
    "softmax": 5,
    "layer_norm": 7,
}


def _tape() -> "Tape | None":
    return getattr(_STATE, "tape", None)


def _counter() -> "FlopCounter | None":
    return getattr(_STATE, "flops", None)


def _count(n: int) -> None:
    c = getattr(_STATE, "flops", None)
    if c is not None:
        c.flops += n


class FlopCounter:
    """Accumulates the FLOP cost of every op executed while armed."""

    __slots__ = ("flops",)

    def __init__(self) -> None:
        self.flops = 0


class count_flops:
    """Context manager arming a thread-local multiply-add counter."""

    def __enter__(self) -> FlopCounter:
        self._prev = getattr(_STATE, "flops", None)
        c = FlopCounter()
        _STATE.flops = c
        return c

    def __exit__(self, *exc) -> None:
        _STATE.flops = self._prev


class Tensor:
    """A shaped float64 array with an optional gradient slot.

    ``grad`` is populated by :func:`backward` for every tensor that had
    ``requires_grad`` when the tape recorded it. Tensors are value-like:
    ops never mutate ``data`` (the optimizer, which owns the parameters,
    is the one exception).
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        self.data = data
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; all dispatch to the module-level ops
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    arr = np.asarray(data, dtype=np.float64)
    return Tensor(arr, requires_grad=requires_grad)


def constant(data) -> Tensor:
    return tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return tensor(x)


class _Node:
    __slots__ = ("out", "inputs", "bwd")

    def __init__(self, out: Tensor, inputs: tuple, bwd: Callable):
        self.out = out
        self.inputs = inputs
        self.bwd = bwd


class Tape:
    """Ordered record of ops; inputs of every node precede it."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        self._prev = getattr(_STATE, "tape", None)
        _STATE.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _STATE.tape = self._prev

    def __len__(self) -> int:
        return len(self.nodes)


def _make(data: np.ndarray, inputs: tuple, bwd: Callable) -> Tensor:
    """Build an op output, recording it if a tape is active and needed."""
    tape = _tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape.nodes.append(_Node(out, inputs, bwd))
        return out
    return Tensor(data, requires_grad=False)


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate dloss/dt into ``t.grad`` for every recorded tensor.

    ``loss`` must be a scalar produced on ``tape``. Adjoints are assembled
    in a side table and only ever replaced (never mutated in place), so a
    returned gradient may safely alias op output storage.
    """
    if loss.data.ndim != 0:
        raise ValueError(
            f"backward expects a scalar loss, got shape {loss.data.shape}"
        )
    adj: dict[Tensor, np.ndarray] = {loss: np.ones((), dtype=np.float64)}
    for node in reversed(tape.nodes):
        g = adj.pop(node.out, None)
        if g is None:
            continue
        if node.out.requires_grad:
            node.out.grad = g if node.out.grad is None else node.out.grad + g
        for t, gi in zip(node.inputs, node.bwd(g)):
            if gi is None or not t.requires_grad:
                continue
            prev = adj.get(t)
            adj[t] = gi if prev is None else prev + gi
    for t, g in adj.items():
        t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data
    _count(data.size)
    return _make(
        data, (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data
    _count(data.size)
    return _make(
        data, (a, b),
        lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    _count(data.size)
    return _make(
        data, (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data / b.data
    _count(data.size)
    return _make(
        data, (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def relu(x) -> Tensor:
    x = _as_tensor(x)
    data = np.maximum(x.data, 0.0)
    _count(data.size)
    return _make(data, (x,), lambda g: (g * (x.data > 0.0),))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    data = 1.0 / (1.0 + np.exp(-x.data))
    _count(_FLOPS_PER_ELEM["transcendental"] * data.size)
    return _make(data, (x,), lambda g: (g * data * (1.0 - data),))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    data = np.tanh(x.data)
    _count(_FLOPS_PER_ELEM["transcendental"] * data.size)
    return _make(data, (x,), lambda g: (g * (1.0 - data * data),))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    data = np.exp(x.data)
    _count(_FLOPS_PER_ELEM["transcendental"] * data.size)
    return _make(data, (x,), lambda g: (g * data,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    data = np.log(x.data)
    _count(_FLOPS_PER_ELEM["transcendental"] * data.size)
    return _make(data, (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = _as_tensor(x)
    data = np.sqrt(x.data)
    _count(_FLOPS_PER_ELEM["transcendental"] * data.size)
    return _make(data, (x,), lambda g: (g / (2.0 * data),))


def clamp_min(x, lo: float) -> Tensor:
    x = _as_tensor(x)
    data = np.maximum(x.data, lo)
    _count(data.size)
    return _make(data, (x,), lambda g: (g * (x.data > lo),))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def vsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)
    _count(x.data.size)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk, x.data.shape),)

    return _make(data, (x,), bwd)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    data = x.data.mean(axis=axis, keepdims=keepdims)
    _count(x.data.size)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, x.data.shape),)
        gk = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gk / n, x.data.shape),)

    return _make(data, (x,), bwd)


def dot(a, b) -> Tensor:
    """Inner product of two vectors; returns a scalar tensor."""
    return matmul(a, b)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix/vector product with numpy matmul semantics.

    Supported operand ranks: 1-D/2-D in any combination, stacked (>=3-D)
    against a shared 2-D or 1-D right operand, and equal-leading-shape
    stacked batches on both sides.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0:
        raise ValueError(f"matmul needs array operands, got {ad.shape} @ {bd.shape}")
    contract = ad.shape[-1]
    if bd.ndim >= 2:
        if bd.shape[-2] != contract:
            raise ValueError(f"matmul dimension mismatch: {ad.shape} @ {bd.shape}")
    elif bd.shape[0] != contract:
        raise ValueError(f"matmul dimension mismatch: {ad.shape} @ {bd.shape}")

    if ad.ndim <= 2 and bd.ndim <= 2:
        data = ad @ bd
        _count(2 * data.size * contract if data.ndim else 2 * contract)
        if ad.ndim == 2 and bd.ndim == 2:
            bwd = lambda g: (g @ bd.T, ad.T @ g)
        elif ad.ndim == 1 and bd.ndim == 2:
            bwd = lambda g: (bd @ g, np.outer(ad, g))
        elif ad.ndim == 2 and bd.ndim == 1:
            bwd = lambda g: (np.outer(g, bd), ad.T @ g)
        else:  # vector dot
            bwd = lambda g: (g * bd, g * ad)
        return _make(data, (a, b), bwd)

    if ad.ndim >= 3 and bd.ndim == 1:
        # (..., n, k) @ (k,) -> (..., n)
        data = ad @ bd
        _count(2 * data.size * contract)
        lead = tuple(range(ad.ndim - 1))
        bwd = lambda g: (g[..., None] * bd, (g[..., None] * ad).sum(axis=lead))
        return _make(data, (a, b), bwd)

    if ad.ndim >= 3 and bd.ndim == 2:
        # (..., n, k) @ (k, m) -> (..., n, m)
        data = ad @ bd
        _count(2 * data.size * contract)
        axes = tuple(range(ad.ndim - 1))
        bwd = lambda g: (g @ bd.T, np.tensordot(ad, g, axes=(axes, axes)))
        return _make(data, (a, b), bwd)

    if ad.ndim == bd.ndim and ad.shape[:-2] == bd.shape[:-2]:
        # stacked batch on both sides
        data = ad @ bd
        _count(2 * data.size * contract)
        bwd = lambda g: (g @ bd.swapaxes(-1, -2), ad.swapaxes(-1, -2) @ g)
        return _make(data, (a, b), bwd)

    raise ValueError(f"unsupported matmul operand shapes: {ad.shape} @ {bd.shape}")


def softmax(x, axis: int = -1) -> Tensor:
    """Probabilities along ``axis``; max-subtracted for stability."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)
    _count(_FLOPS_PER_ELEM["softmax"] * data.size)

    def bwd(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return ((g - inner) * data,)

    return _make(data, (x,), bwd)


def logsumexp(x, axis: int | None = None) -> Tensor:
    """Stable log(sum(exp(x))); over the whole vector or along ``axis``."""
    x = _as_tensor(x)
    if axis is None:
        if x.data.ndim != 1:
            raise ValueError(f"logsumexp expects a vector, got shape {x.data.shape}")
        m = x.data.max()
        e = np.exp(x.data - m)
        s = e.sum()
        data = np.asarray(m + np.log(s))
        _count(_FLOPS_PER_ELEM["softmax"] * x.data.size)
        return _make(data, (x,), lambda g: (g * (e / s),))
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    data = (m + np.log(s)).squeeze(axis)
    _count(_FLOPS_PER_ELEM["softmax"] * x.data.size)

    def bwd(g):
        return (np.expand_dims(g, axis) * (e / s),)

    return _make(data, (x,), bwd)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization over the last axis, with affine params."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data
    _count(_FLOPS_PER_ELEM["layer_norm"] * data.size)

    def bwd(g):
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = (dxhat - m1 - xhat * m2) * inv
        axes = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        return (dx, dgamma, dbeta)

    return _make(data, (x, gamma, beta), bwd)


def conv1d(x, filters, bias, window: int) -> Tensor:
    """Width-(2w+1) 1-D convolution over a (L, d) sequence, stride 1.

    Zero-pads ``window`` positions on each side so the output keeps length L.
    Row j of the output is ``filters @ concat(x[j-w : j+w]) + bias``, with no
    activation: callers apply their own nonlinearity. A stacked (B, L, d)
    input convolves each sequence independently.
    """
    x, filters, bias = _as_tensor(x), _as_tensor(filters), _as_tensor(bias)
    if x.data.ndim not in (2, 3):
        raise ValueError(f"conv1d expects (L, d) or (B, L, d) input, got {x.data.shape}")
    batched = x.data.ndim == 3
    xd = x.data if batched else x.data[None]
    B, L, d = xd.shape
    w = int(window)
    if w < 1:
        raise ValueError(f"conv1d window must be >= 1, got {w}")
    span = 2 * w + 1
    nf = filters.data.shape[0]
    if filters.data.shape != (nf, span * d):
        raise ValueError(
            f"conv1d filters shape {filters.data.shape} incompatible with "
            f"window {w} and input {x.data.shape}"
        )
    if bias.data.shape != (nf,):
        raise ValueError(f"conv1d bias shape {bias.data.shape}, expected ({nf},)")

    padded = np.zeros((B, L + 2 * w, d))
    padded[:, w:w + L] = xd
    # windows[., j] = [x[j-w], ..., x[j+w]] flattened, matching the filter layout
    windows = np.concatenate([padded[:, i:i + L] for i in range(span)], axis=2)
    out = windows @ filters.data.T + bias.data
    data = out if batched else out[0]
    _count(2 * B * L * nf * span * d + B * L * nf)

    def bwd(g):
        g3 = g if batched else g[None]
        gwin = g3 @ filters.data
        gpad = np.zeros_like(padded)
        for i in range(span):
            gpad[:, i:i + L] += gwin[:, :, i * d:(i + 1) * d]
        gx = gpad[:, w:w + L]
        gf = np.tensordot(g3, windows, axes=([0, 1], [0, 1]))
        gb = g3.sum(axis=(0, 1))
        return (gx if batched else gx[0], gf, gb)

    return _make(data, (x, filters, bias), bwd)


class LSTMParams:
    """Single-layer LSTM weights; gate order along rows is i, f, g, o."""

    def __init__(self, w_ih: Tensor, w_hh: Tensor, bias: Tensor):
        four_g, hidden = w_hh.data.shape
        if four_g != 4 * hidden:
            raise ValueError(f"w_hh shape {w_hh.data.shape} is not (4g, g)")
        if w_ih.data.shape[0] != four_g or bias.data.shape != (four_g,):
            raise ValueError("LSTM parameter shapes are inconsistent")
        self.w_ih = w_ih
        self.w_hh = w_hh
        self.bias = bias

    @property
    def hidden(self) -> int:
        return self.w_hh.data.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w_ih.data.shape[1]

    def tensors(self) -> tuple:
        return (self.w_ih, self.w_hh, self.bias)


def lstm_last(seq, params: LSTMParams) -> Tensor:
    """Last hidden state of a standard LSTM run over the rows of (N, in).

    A stacked (B, N, in) input runs B independent chains of the same length
    and returns (B, g).
    """
    seq = _as_tensor(seq)
    if seq.data.ndim not in (2, 3) or seq.data.shape[-2] < 1:
        raise ValueError(
            f"lstm_last expects a non-empty (N, in) or (B, N, in) sequence, "
            f"got {seq.data.shape}"
        )
    batched = seq.data.ndim == 3
    n_steps = seq.data.shape[-2]
    g = params.hidden
    if batched:
        B = seq.data.shape[0]
        h = constant(np.zeros((B, g)))
        c = constant(np.zeros((B, g)))
        w_ih_t = transpose2d(params.w_ih)
        w_hh_t = transpose2d(params.w_hh)
        for t in range(n_steps):
            x_t = reshape(narrow(seq, 1, t, 1), (B, params.input_dim))
            z = add(add(matmul(x_t, w_ih_t), matmul(h, w_hh_t)), params.bias)
            i_g = sigmoid(narrow(z, 1, 0, g))
            f_g = sigmoid(narrow(z, 1, g, g))
            c_hat = tanh(narrow(z, 1, 2 * g, g))
            o_g = sigmoid(narrow(z, 1, 3 * g, g))
            c = add(mul(f_g, c), mul(i_g, c_hat))
            h = mul(o_g, tanh(c))
        return h
    h = constant(np.zeros(g))
    c = constant(np.zeros(g))
    for t in range(n_steps):
        x_t = reshape(narrow(seq, 0, t, 1), (params.input_dim,))
        z = add(add(matmul(params.w_ih, x_t), matmul(params.w_hh, h)), params.bias)
        i_g = sigmoid(narrow(z, 0, 0, g))
        f_g = sigmoid(narrow(z, 0, g, g))
        c_hat = tanh(narrow(z, 0, 2 * g, g))
        o_g = sigmoid(narrow(z, 0, 3 * g, g))
        c = add(mul(f_g, c), mul(i_g, c_hat))
        h = mul(o_g, tanh(c))
    return h


def cosine(a, b, eps: float = 1e-12) -> Tensor:
    """Cosine similarity of two vectors; norms are clamped at ``eps``."""
    a, b = _as_tensor(a), _as_tensor(b)
    num = dot(a, b)
    na = sqrt(clamp_min(dot(a, a), eps * eps))
    nb = sqrt(clamp_min(dot(b, b), eps * eps))
    return div(num, mul(na, nb))


# ---------------------------------------------------------------------------
# indexing / shaping
# ---------------------------------------------------------------------------

def gather_rows(x, indices) -> Tensor:
    """Select leading-axis entries of x (any index shape); backward
    scatter-adds duplicate picks into the same source row."""
    x = _as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    data = x.data[idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _make(data, (x,), bwd)


def concat_rows(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for i in range(len(parts)):
            sl[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return _make(data, tuple(parts), bwd)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    x = _as_tensor(x)
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    data = x.data[sl].copy()

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        return (gx,)

    return _make(data, (x,), bwd)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    data = x.data.reshape(shape)
    return _make(data, (x,), lambda g: (g.reshape(x.data.shape),))


def transpose2d(x) -> Tensor:
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ValueError(f"transpose2d expects a matrix, got shape {x.data.shape}")
    return _make(x.data.T, (x,), lambda g: (g.T,))


def transpose(x, axes: tuple) -> Tensor:
    """General axis permutation; backward applies the inverse permutation."""
    x = _as_tensor(x)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))
