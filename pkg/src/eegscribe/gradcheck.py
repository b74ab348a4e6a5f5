"""Central-difference verification of every autodiff primitive.

`grad_check(op_id, shapes, eps)` builds seeded random inputs, reduces the op
output to a scalar through a fixed random weighting, and compares analytic
gradients against central differences coordinate by coordinate. Reported
error is max |analytic - numeric| / max(1, |numeric|).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T

# op id -> (builder(rng) -> (tensor inputs, extra kwargs), callable)
_MAX_RETRIES = 5


def _rand(rng, shape, lo=-2.0, hi=2.0):
    return rng.uniform(lo, hi, size=shape)


def _op_registry():
    reg = {}

    def register(name, make_inputs, apply_op):
        reg[name] = (make_inputs, apply_op)

    register(
        "matmul",
        lambda rng, shapes: [(_rand(rng, shapes[0])), (_rand(rng, shapes[1]))],
        lambda xs: T.matmul(xs[0], xs[1]),
    )
    register("add", lambda rng, shapes: [_rand(rng, s) for s in shapes], lambda xs: T.add(xs[0], xs[1]))
    register("sub", lambda rng, shapes: [_rand(rng, s) for s in shapes], lambda xs: T.sub(xs[0], xs[1]))
    register("mul", lambda rng, shapes: [_rand(rng, s) for s in shapes], lambda xs: T.mul(xs[0], xs[1]))
    register(
        "div",
        lambda rng, shapes: [_rand(rng, shapes[0]), rng.uniform(0.5, 2.0, size=shapes[1]) * np.where(rng.random(shapes[1]) < 0.5, -1.0, 1.0)],
        lambda xs: T.div(xs[0], xs[1]),
    )
    register("exp", lambda rng, shapes: [_rand(rng, shapes[0], -1.5, 1.5)], lambda xs: T.exp(xs[0]))
    register("gelu", lambda rng, shapes: [_rand(rng, shapes[0])], lambda xs: T.gelu(xs[0]))
    register("elu_plus_one", lambda rng, shapes: [_rand(rng, shapes[0])], lambda xs: T.elu_plus_one(xs[0]))
    register("softmax", lambda rng, shapes: [_rand(rng, shapes[0])], lambda xs: T.softmax(xs[0]))
    register("layer_norm", lambda rng, shapes: [_rand(rng, shapes[0])], lambda xs: T.layer_norm(xs[0]))
    register("mean", lambda rng, shapes: [_rand(rng, shapes[0])], lambda xs: T.mean(xs[0], axis=0))
    register("sum", lambda rng, shapes: [_rand(rng, shapes[0])], lambda xs: T.sum_axis(xs[0], axis=0))
    register(
        "concat",
        lambda rng, shapes: [_rand(rng, s) for s in shapes],
        lambda xs: T.concat(xs, axis=0),
    )
    register("reshape", lambda rng, shapes: [_rand(rng, shapes[0])], lambda xs: T.reshape(xs[0], (-1,)))
    register(
        "transpose",
        lambda rng, shapes: [_rand(rng, shapes[0])],
        lambda xs: T.transpose(xs[0], tuple(reversed(range(len(xs[0].shape))))),
    )
    return reg


_REGISTRY = _op_registry()

# embedding and cross_entropy take integer side inputs, so they get dedicated
# builders keyed off the differentiable input only.


def _check_embedding(rng, eps):
    table = T.Tensor(_rand(rng, (7, 4)), requires_grad=True)
    ids = rng.integers(0, 7, size=(3, 5))
    w = _rand(rng, (3, 5, 4))

    def forward(tab_data):
        t = T.Tensor(tab_data, requires_grad=True)
        out = T.embedding(t, ids)
        loss = T.sum_axis(T.reshape(T.mul(out, T.Tensor(w)), (-1,)), axis=0)
        return loss, t

    loss, t = forward(table.data)
    loss.backward()
    analytic = t.grad.copy()
    numeric = _central_difference(lambda d: forward(d)[0].data.item(), table.data, eps)
    return _max_rel_error(analytic, numeric)


def _check_cross_entropy(rng, eps):
    logits0 = _rand(rng, (2, 4, 6))
    targets = rng.integers(0, 6, size=(2, 4))
    mask = rng.random((2, 4)) < 0.7
    mask[:, 0] = True  # keep every sequence non-empty

    def forward(data):
        lg = T.Tensor(data, requires_grad=True)
        return T.cross_entropy(lg, targets, mask), lg

    loss, lg = forward(logits0)
    loss.backward()
    analytic = lg.grad.copy()
    numeric = _central_difference(lambda d: forward(d)[0].data.item(), logits0, eps)
    return _max_rel_error(analytic, numeric)


def _central_difference(f, x0: np.ndarray, eps: float) -> np.ndarray:
    out = np.zeros_like(x0)
    flat = x0.reshape(-1)
    g = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x0)
        flat[i] = orig - eps
        fm = f(x0)
        flat[i] = orig
        g[i] = (fp - fm) / (2 * eps)
    return out


def _max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.abs(analytic - numeric)
    scale = np.maximum(1.0, np.abs(numeric))
    return float((diff / scale).max()) if diff.size else 0.0


_DEFAULT_SHAPES = {
    "matmul": [(3, 4), (4, 2)],
    "add": [(3, 4), (4,)],
    "sub": [(3, 4), (3, 4)],
    "mul": [(2, 3, 4), (4,)],
    "div": [(3, 4), (3, 1)],
    "exp": [(3, 4)],
    "gelu": [(3, 4)],
    "elu_plus_one": [(3, 4)],
    "softmax": [(3, 5)],
    "layer_norm": [(3, 6)],
    "mean": [(4, 3)],
    "sum": [(4, 3)],
    "concat": [(2, 3), (4, 3)],
    "reshape": [(3, 4)],
    "transpose": [(2, 3, 4)],
}

PRIMITIVES = tuple(list(_DEFAULT_SHAPES) + ["embedding", "cross_entropy"])


def grad_check(op: str, input_shapes=None, eps: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError(f"eps {eps} outside [1e-7, 1e-3]")
    rng = np.random.default_rng(seed)
    if op == "embedding":
        return _check_embedding(rng, eps)
    if op == "cross_entropy":
        return _check_cross_entropy(rng, eps)
    if op not in _REGISTRY:
        raise KeyError(f"unknown primitive {op!r}")
    make_inputs, apply_op = _REGISTRY[op]
    shapes = input_shapes or _DEFAULT_SHAPES[op]

    for attempt in range(_MAX_RETRIES + 1):
        arrays = make_inputs(rng, shapes)
        # jitter on retry in case a sample landed on a kink
        if attempt > 0:
            arrays = [a + rng.normal(0, 0.01, size=np.shape(a)) for a in arrays]
        probe = apply_op([T.Tensor(a) for a in arrays])
        out_weight = np.random.default_rng(seed + 1).uniform(-1, 1, size=probe.shape)

        def forward(datas):
            ts = [T.Tensor(d, requires_grad=True) for d in datas]
            out = apply_op(ts)
            loss = T.sum_axis(T.reshape(T.mul(out, T.Tensor(out_weight)), (-1,)), axis=0)
            return loss, ts

        loss, ts = forward(arrays)
        loss.backward()
        analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in ts]

        worst = 0.0
        ok = True
        for i, arr in enumerate(arrays):
            def f_scalar(_data, idx=i):
                datas = [a if j != idx else _data for j, a in enumerate(arrays)]
                return forward(datas)[0].data.item()

            numeric = _central_difference(f_scalar, np.asarray(arrays[i], dtype=np.float64), eps)
            err = _max_rel_error(analytic[i], numeric)
            if not np.isfinite(err):
                ok = False
                break
            worst = max(worst, err)
        if ok:
            return worst
    raise RuntimeError(f"grad_check for {op} kept hitting non-finite comparisons")
