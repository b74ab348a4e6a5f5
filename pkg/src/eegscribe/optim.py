"""AdamW with decoupled weight decay and the warmup-then-linear-decay schedule."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class AdamW:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.99), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = {k: p for k, p in params.items() if p.requires_grad}
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m, v = self.m[k], self.v[k]
            # in-place moment updates; the step runs on ~1e6 doubles
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            update = m / bc1
            update /= np.sqrt(v / bc2) + self.eps
            if self.weight_decay:
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * update


def warmup_linear_lr(step: int, total_steps: int, peak_lr: float, warmup_ratio: float) -> float:
    """lr(0) = 0, lr(end of warmup) = peak, then linear decay to 0 at the end."""
    if total_steps <= 0:
        return peak_lr
    warmup = max(1, int(round(warmup_ratio * total_steps)))
    if step < warmup:
        return peak_lr * step / warmup
    if total_steps == warmup:
        return peak_lr
    frac = (step - warmup) / (total_steps - warmup)
    return peak_lr * max(0.0, 1.0 - frac)
