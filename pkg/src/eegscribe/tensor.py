"""Dense float64 tensors with reverse-mode automatic differentiation.

Covers exactly the primitives the networks here need: matmul (batched),
broadcast add/sub/mul/div, exp, gelu, elu_plus_one, softmax over the last
axis, layer normalization (affine applied by callers via mul/add), mean and
sum over an axis, concatenate, reshape/transpose, embedding lookup, and
masked cross-entropy. Forward evaluation is plain numpy, so identical
inputs give bit-identical outputs.

Gradients accumulate additively when a tensor is used more than once.
Graphs are recorded only when some input requires gradients; inference
paths build no graph.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeError

_EPS_LN = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def _as_array(x) -> np.ndarray:
    # note: ascontiguousarray would promote 0-d arrays to shape (1,)
    return np.asarray(x, dtype=np.float64, order="C")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` back down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 ndarray plus optional gradient and backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def backward(self):
        """Reverse-mode sweep from a scalar loss to every requiring leaf."""
        if self.data.size != 1:
            raise ShapeError("backward", self.data.shape, "scalar")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # free closures so the graph can be collected
        for node in topo:
            node._backward = None
            node._parents = ()


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


# -- elementwise with broadcasting -------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError("add", a.shape, b.shape) from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError("sub", a.shape, b.shape) from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape) from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError("div", a.shape, b.shape) from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting; operands must be >= 2-D."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward)


# -- elementwise nonlinearities ----------------------------------------------

def exp(a) -> Tensor:
    a = _wrap(a)
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data)

    return _make(data, (a,), backward)


def elu_plus_one(a) -> Tensor:
    """elu(x) + 1: the strictly positive feature map used by linear attention."""
    a = _wrap(a)
    neg = np.exp(np.minimum(a.data, 0.0))
    data = np.where(a.data > 0.0, a.data + 1.0, neg)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * np.where(a.data > 0.0, 1.0, neg))

    return _make(data, (a,), backward)


def gelu(a) -> Tensor:
    """tanh-approximation GELU; derivative taken from the same closed form."""
    a = _wrap(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * (x2 * x)))
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        if a.requires_grad:
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
            da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            a._accumulate(g * da)

    return _make(data, (a,), backward)


def softmax(a) -> Tensor:
    """Softmax over the last axis with max-subtraction for stability."""
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * data).sum(axis=-1, keepdims=True)
            a._accumulate(data * (g - dot))

    return _make(data, (a,), backward)


def layer_norm(a, eps: float = _EPS_LN) -> Tensor:
    """Normalize over the last axis; affine scale/shift are separate ops."""
    a = _wrap(a)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    data = xc * inv

    def backward(g):
        if a.requires_grad:
            gm = g.mean(axis=-1, keepdims=True)
            gx = (g * data).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (g - gm - data * gx))

    return _make(data, (a,), backward)


# -- reductions / reshapes ----------------------------------------------------

def mean(a, axis: int) -> Tensor:
    a = _wrap(a)
    data = a.data.mean(axis=axis)
    n = a.data.shape[axis]

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return _make(data, (a,), backward)


def sum_axis(a, axis: int) -> Tensor:
    a = _wrap(a)
    data = a.data.sum(axis=axis)
    n = a.data.shape[axis]

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.repeat(np.expand_dims(g, axis), n, axis=axis))

    return _make(data, (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g):
        offset = 0
        for t, n in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + n)
                t._accumulate(g[tuple(idx)])
            offset += n

    return _make(data, tuple(tensors), backward)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = _wrap(a)
    axes = tuple(axes)
    data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inverse))

    return _make(data, (a,), backward)


# -- lookup / loss -------------------------------------------------------------

def select0(a, index: int) -> Tensor:
    """Row `index` along axis 0; the graph-preserving inverse of stacking."""
    a = _wrap(a)
    data = a.data[index]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] = g
            a._accumulate(full)

    return _make(data, (a,), backward)


def embedding(table, ids) -> Tensor:
    """Row lookup: table is (V, D), ids any integer shape; output ids.shape + (D,)."""
    table = _wrap(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError("embedding", table.shape, ids.shape)
    data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
            table._accumulate(gt)

    return _make(data, (table,), backward)


def cross_entropy(logits, targets, mask) -> Tensor:
    """Masked next-token NLL.

    logits: (S, V) or (B, S, V); targets: matching integer shape; mask: same
    shape as targets, truthy where the position is supervised. Reduction is
    mean-over-masked-positions per sequence, then mean over sequences, which
    makes micro-batch accumulation exactly reproduce the batched step.
    """
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.int64)
    mask_arr = np.asarray(mask, dtype=bool)
    squeeze = logits.ndim == 2
    x = logits.data[None] if squeeze else logits.data
    t = targets[None] if squeeze else targets
    m = mask_arr[None] if squeeze else mask_arr
    if x.shape[:-1] != t.shape or t.shape != m.shape:
        raise ShapeError("cross_entropy", logits.shape, targets.shape, mask_arr.shape)
    counts = m.sum(axis=-1)
    if np.any(counts == 0):
        raise ShapeError("cross_entropy", "empty mask in some sequence", m.shape)

    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    tok_nll = lse - np.take_along_axis(shifted, t[..., None], axis=-1)[..., 0]
    per_seq = (tok_nll * m).sum(axis=-1) / counts
    data = np.asarray(per_seq.mean())

    def backward(g):
        if logits.requires_grad:
            p = np.exp(shifted - lse[..., None])
            onehot = np.zeros_like(p)
            np.put_along_axis(onehot, t[..., None], 1.0, axis=-1)
            w = (m / counts[..., None]) / m.shape[0]
            grad = (p - onehot) * w[..., None] * g
            logits._accumulate(grad[0] if squeeze else grad)

    return _make(data, (logits,), backward)


# -- parameter helpers ----------------------------------------------------------

def parameter(rng: np.random.Generator, shape, scale: float | None = None, name: str | None = None) -> Tensor:
    """Gaussian-initialized trainable tensor; default scale 1/sqrt(fan_in)."""
    if scale is None:
        fan_in = shape[0] if len(shape) > 1 else max(shape[0], 1)
        scale = 1.0 / math.sqrt(fan_in)
    t = Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True, name=name)
    return t


def zeros_parameter(shape, name: str | None = None) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


def ones_parameter(shape, name: str | None = None) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, name=name)
