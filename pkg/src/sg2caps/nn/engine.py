"""Dense float64 tensors with a reverse-mode gradient tape.

Every differentiable op builds its output with :func:`_node`, handing over
the parents and a closure mapping the output gradient to parent gradients.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_GRAD = True
_RELU_MARGIN: list[float] | None = None


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    """Run ops without recording the tape."""
    global _GRAD
    prev, _GRAD = _GRAD, False
    try:
        yield
    finally:
        _GRAD = prev


@contextlib.contextmanager
def track_relu_margin():
    """Collect min |pre-activation| over every relu evaluated inside the block.

    Yields a one-element list updated in place; used by gradient checks to
    stay clear of the kink.
    """
    global _RELU_MARGIN
    prev = _RELU_MARGIN
    box = [np.inf]
    _RELU_MARGIN = box
    try:
        yield box
    finally:
        _RELU_MARGIN = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self, grad=None) -> None:
        backward(self, grad)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Parameter(Tensor):
    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op}: non-finite value in output of shape {data.shape}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if _GRAD and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def backward(loss: Tensor, grad=None) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if grad is None:
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar or an explicit grad, got {loss.shape}")
        grad = np.ones_like(loss.data)
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=np.float64)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._backward is None:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# elementwise ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node("mul", a.data * b.data, (a, b), bw)


def relu(x: Tensor) -> Tensor:
    if _RELU_MARGIN is not None and x.data.size:
        _RELU_MARGIN[0] = min(_RELU_MARGIN[0], float(np.abs(x.data).min()))
    mask = x.data > 0

    def bw(g):
        return (g * mask,)

    return _node("relu", x.data * mask, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - y * y),)

    return _node("tanh", y, (x,), bw)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)

    def bw(g):
        return (g * y * (1.0 - y),)

    return _node("sigmoid", y, (x,), bw)


# reductions and reshaping ---------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _node("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def mean(xs: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of equally shaped tensors."""
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("mean of an empty list")
    shape = xs[0].shape
    for x in xs[1:]:
        if x.shape != shape:
            raise ShapeError(f"mean: incompatible shapes {shape} and {x.shape}")
    k = len(xs)
    acc = xs[0].data.copy()
    for x in xs[1:]:
        acc = acc + x.data

    def bw(g):
        return tuple(g / k for _ in xs)

    return _node("mean", acc / k, xs, bw)


def reshape(x: Tensor, shape) -> Tensor:
    def bw(g):
        return (g.reshape(x.shape),)

    return _node("reshape", x.data.reshape(shape), (x,), bw)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    try:
        data = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError("concat: incompatible shapes "
                         + " and ".join(str(x.shape) for x in xs)) from None
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node("concat", data, xs, bw)


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(Ellipsis))) or p is None for p in parts)


def getitem(x: Tensor, idx) -> Tensor:
    basic = _is_basic(idx)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _node("getitem", np.array(x.data[idx]), (x,), bw)


def embedding_lookup(table: Tensor, index) -> Tensor:
    """Rows of ``table`` selected by an integer array of any shape."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: index out of range for table {table.shape}")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, index, g)
        return (full,)

    return _node("embedding_lookup", table.data[index], (table,), bw)


def segment_sum(x: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``x`` into ``num_segments`` buckets, in row order."""
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if len(segment_ids) != x.shape[0]:
        raise ShapeError(f"segment_sum: {len(segment_ids)} ids for rows of {x.shape}")
    out = np.zeros((num_segments,) + x.shape[1:])
    np.add.at(out, segment_ids, x.data)

    def bw(g):
        return (g[segment_ids],)

    return _node("segment_sum", out, (x,), bw)


# dense layers ---------------------------------------------------------------

def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W.T + b`` over the last axis of ``x``; W has shape (out, in)."""
    x = as_tensor(x)
    if W.data.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"linear: input shape {x.shape} does not match weight shape {W.shape}")
    if b is not None and b.shape != (W.shape[0],):
        raise ShapeError(f"linear: bias shape {b.shape} does not match weight shape {W.shape}")
    y = x.data @ W.data.T
    if b is not None:
        y = y + b.data

    def bw(g):
        g2 = g.reshape(-1, W.shape[0])
        x2 = x.data.reshape(-1, W.shape[1])
        gx = g @ W.data
        gW = g2.T @ x2
        if b is None:
            return gx, gW
        return gx, gW, g2.sum(axis=0)

    parents = (x, W) if b is None else (x, W, b)
    return _node("linear", y, parents, bw)


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, Wx: Tensor, Wh: Tensor, b: Tensor):
    """One LSTM step, gate layout (input, forget, cell, output).

    Returns ``(h_new, c_new)``.
    """
    H = h.shape[-1]
    if Wx.shape != (4 * H, x.shape[-1]) or Wh.shape != (4 * H, H) or b.shape != (4 * H,):
        raise ShapeError(f"lstm_cell: input {x.shape}, hidden {h.shape} do not match "
                         f"weights {Wx.shape}, {Wh.shape}, {b.shape}")
    if c.shape != h.shape:
        raise ShapeError(f"lstm_cell: cell shape {c.shape} != hidden shape {h.shape}")
    z = x.data @ Wx.data.T + h.data @ Wh.data.T + b.data
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    gg = np.tanh(z[..., 2 * H:3 * H])
    o = _sigmoid(z[..., 3 * H:])
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    def bw(grad):
        gh, gc = grad[..., :H], grad[..., H:]
        gc = gc + gh * o * (1.0 - tc * tc)
        dz = np.concatenate([
            gc * gg * i * (1.0 - i),
            gc * c.data * f * (1.0 - f),
            gc * i * (1.0 - gg * gg),
            gh * tc * o * (1.0 - o),
        ], axis=-1)
        dz2 = dz.reshape(-1, 4 * H)
        return (dz @ Wx.data, dz @ Wh.data, gc * f,
                dz2.T @ x.data.reshape(-1, x.shape[-1]),
                dz2.T @ h.data.reshape(-1, H),
                dz2.sum(axis=0))

    hc = _node("lstm_cell", np.concatenate([h_new, c_new], axis=-1), (x, h, c, Wx, Wh, b), bw)
    return hc[..., :H], hc[..., H:]


# normalizations and losses --------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node("softmax", y, (x,), bw)


def masked_softmax(x: Tensor, mask, axis: int = -1) -> Tensor:
    """Softmax restricted to positions where ``mask`` is true; others get 0."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"masked_softmax: mask shape {mask.shape} != input shape {x.shape}")
    if not mask.any(axis=axis).all():
        raise ShapeError("masked_softmax: a row has no unmasked entry")
    big = np.where(mask, x.data, -np.inf).max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(np.where(mask, x.data - big, 0.0)), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _node("masked_softmax", y, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse

    def bw(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _node("log_softmax", y, (x,), bw)


def cross_entropy(logits: Tensor, target, weights=None) -> Tensor:
    """Summed negative log-likelihood of integer targets under softmax(logits).

    ``logits`` is (C,) with a scalar target, or (N, C) with N targets and
    optional per-row weights (e.g. a padding mask).
    """
    target = np.asarray(target, dtype=np.int64)
    single = logits.data.ndim == 1
    L = logits.data[None] if single else logits.data
    t = target.reshape(-1)
    if L.ndim != 2 or len(t) != L.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {target.shape}")
    if t.size and (t.min() < 0 or t.max() >= L.shape[1]):
        raise ShapeError(f"cross_entropy: target out of range for {L.shape[1]} classes")
    w = np.ones(len(t)) if weights is None else np.asarray(weights, dtype=np.float64)
    z = L - L.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(len(t))
    nll = lse - z[rows, t]
    loss = np.asarray((w * nll).sum())

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[rows, t] -= 1.0
        gl = g * w[:, None] * p
        return (gl[0] if single else gl,)

    return _node("cross_entropy", loss, (logits,), bw)
