"""Small module system over the autodiff tensors.

Modules register parameters in insertion order so checkpoints and hashes
are stable. Norm affine terms are applied explicitly (mul/add) on top of
the normalize-only layer_norm primitive, which keeps scale-only and full
affine variants as plain parameter choices.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._children: dict[str, "Module"] = {}

    def param(self, name: str, tensor: Tensor) -> Tensor:
        tensor.name = name
        self._params[name] = tensor
        return tensor

    def child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, p in self._params.items():
            out[f"{prefix}{name}"] = p
        for name, child in self._children.items():
            out.update(child.parameters(prefix=f"{prefix}{name}."))
        return out

    def parameter_count(self) -> int:
        return sum(int(p.data.size) for p in self.parameters().values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint missing parameters: {sorted(missing)[:5]} ...")
        for name, p in params.items():
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def freeze(self) -> None:
        for p in self.parameters().values():
            p.requires_grad = False


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.weight = self.param("weight", T.parameter(rng, (d_in, d_out)))
        self.bias = self.param("bias", T.zeros_parameter((d_out,))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = T.matmul(x, self.weight)
        if self.bias is not None:
            out = T.add(out, self.bias)
        return out


class LayerNorm(Module):
    """Affine LayerNorm (gamma + beta)."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = self.param("gamma", T.ones_parameter((dim,)))
        self.beta = self.param("beta", T.zeros_parameter((dim,)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.mul(T.layer_norm(x, self.eps), self.gamma), self.beta)


class ScaleNorm(Module):
    """Scale-only (bias-free) LayerNorm used by the temporal encoder."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = self.param("gamma", T.ones_parameter((dim,)))

    def __call__(self, x: Tensor) -> Tensor:
        return T.mul(T.layer_norm(x, self.eps), self.gamma)


class FeedForward(Module):
    def __init__(self, rng, dim: int, mult: int):
        super().__init__()
        self.up = self.child("up", Linear(rng, dim, mult * dim))
        self.down = self.child("down", Linear(rng, mult * dim, dim))

    def __call__(self, x: Tensor, dropout: "Dropout | None" = None) -> Tensor:
        h = T.gelu(self.up(x))
        if dropout is not None:
            h = dropout(h)
        return self.down(h)


class Dropout:
    """Inverted dropout driven by an explicit generator; None rng = identity."""

    def __init__(self, rate: float, rng: np.random.Generator | None):
        self.rate = rate
        self.rng = rng

    def __call__(self, x: Tensor) -> Tensor:
        if self.rng is None or self.rate <= 0.0:
            return x
        keep = 1.0 - self.rate
        mask = (self.rng.random(x.shape) < keep).astype(np.float64) / keep
        return T.mul(x, Tensor(mask))


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., S, D) -> (..., H, S, D/H)."""
    *lead, s, d = x.shape
    x = T.reshape(x, (*lead, s, heads, d // heads))
    axes = tuple(range(len(lead))) + (x.ndim - 2, x.ndim - 3, x.ndim - 1)
    return T.transpose(x, axes)


def merge_heads(x: Tensor) -> Tensor:
    """(..., H, S, Dh) -> (..., S, H*Dh)."""
    *lead, h, s, dh = x.shape
    axes = tuple(range(len(lead))) + (x.ndim - 2, x.ndim - 3, x.ndim - 1)
    return T.reshape(T.transpose(x, axes), (*lead, s, h * dh))


def sinusoidal_positions(n: int, dim: int) -> np.ndarray:
    """Fixed sin/cos position table, (n, dim)."""
    pos = np.arange(n)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table


def _swap_last(x: Tensor) -> Tensor:
    axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    return T.transpose(x, axes)


def softmax_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Per-head softmax attention over the second-to-last axis; batched or not."""
    dh = q.shape[-1]
    scores = T.mul(T.matmul(q, _swap_last(k)), Tensor(1.0 / math.sqrt(dh)))
    if mask is not None:
        scores = T.add(scores, Tensor(mask))
    return T.matmul(T.softmax(scores), v)


def linear_attention(q: Tensor, k: Tensor, v: Tensor, eps: float = 1e-6) -> Tensor:
    """Kernelized attention, O(S) in sequence length.

    q: (..., L, Dh), k/v: (..., S, Dh). Feature map elu(x)+1 keeps everything
    positive; the denominator is bounded below by eps.
    """
    fq = T.elu_plus_one(q)
    fk = T.elu_plus_one(k)
    kv = T.matmul(_swap_last(fk), v)  # (..., Dh, Dh)
    ksum = T.reshape(T.sum_axis(fk, axis=fk.ndim - 2), fk.shape[:-2] + (fk.shape[-1], 1))
    denom = T.add(T.matmul(fq, ksum), Tensor(eps))  # (..., L, 1)
    return T.div(T.matmul(fq, kv), denom)


class MultiHeadProjection(Module):
    """The four q/k/v/out linear maps shared by both attention flavors."""

    def __init__(self, rng, dim: int, heads: int):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"heads {heads} must divide width {dim}")
        self.heads = heads
        self.q = self.child("q", Linear(rng, dim, dim))
        self.k = self.child("k", Linear(rng, dim, dim))
        self.v = self.child("v", Linear(rng, dim, dim))
        self.out = self.child("out", Linear(rng, dim, dim))

    def project(self, queries: Tensor, context: Tensor):
        q = split_heads(self.q(queries), self.heads)
        k = split_heads(self.k(context), self.heads)
        v = split_heads(self.v(context), self.heads)
        return q, k, v
