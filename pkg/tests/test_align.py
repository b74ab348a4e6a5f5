import numpy as np
import pytest

from eegscribe import tensor as T
from eegscribe.align import (
    ProjectorConfig, SCAProjector, SCCProjector, build_projector,
)
from eegscribe.errors import ContextOverflowError, EegScribeError
from eegscribe.nn import linear_attention
from eegscribe.tensor import Tensor

PAPER_COUNTS = {"perceiver": 1219040, "scc": 1378440, "sca": 1486240}
FUSION_SPECIALS_AT_PAPER_DIMS = 3 * 2560  # EEG_START, EEG_END, SESSION_SEP


def quadratic_kernel_attention(q, k, v, eps=1e-6):
    """Explicit O(N^2) oracle: rows of phi(q) phi(k)^T normalized, times v."""
    phi = lambda x: np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))
    fq, fk = phi(q), phi(k)
    out = np.empty((q.shape[0], q.shape[1], v.shape[2]))
    for h in range(q.shape[0]):
        weights = fq[h] @ fk[h].T  # (L, S), all positive
        weights = weights / (weights.sum(axis=1, keepdims=True) + eps)
        out[h] = weights @ v[h]
    return out


class TestLinearAttention:
    def test_single_key_returns_value(self):
        rng = np.random.default_rng(0)
        q = rng.normal(0, 1, (2, 3, 4))
        k = rng.normal(0, 1, (2, 1, 4))
        v = rng.normal(0, 1, (2, 1, 4))
        out = linear_attention(Tensor(q), Tensor(k), Tensor(v))
        expected = np.broadcast_to(v, (2, 3, 4))
        # the epsilon floor on the denominator leaves a ~1e-7 relative offset
        np.testing.assert_allclose(out.data, expected, rtol=1e-5, atol=1e-6)

    def test_uniform_keys_give_constant_rows(self):
        rng = np.random.default_rng(1)
        q = rng.normal(0, 1, (1, 5, 4))
        k = np.broadcast_to(rng.normal(0, 1, (1, 1, 4)), (1, 6, 4)).copy()
        v = rng.normal(0, 1, (1, 6, 4))
        out = linear_attention(Tensor(q), Tensor(k), Tensor(v)).data
        np.testing.assert_allclose(out, np.broadcast_to(v.mean(axis=1, keepdims=True),
                                                        out.shape), rtol=1e-5, atol=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_streaming_matches_quadratic_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 65))
        lq = int(rng.integers(1, 65))
        h, dh = 4, 8
        q = rng.normal(0, 1, (h, lq, dh))
        k = rng.normal(0, 1, (h, n, dh))
        v = rng.normal(0, 1, (h, n, dh))
        fast = linear_attention(Tensor(q), Tensor(k), Tensor(v)).data
        slow = quadratic_kernel_attention(q, k, v)
        np.testing.assert_allclose(fast, slow, atol=1e-10)

    def test_differentiable(self):
        rng = np.random.default_rng(3)
        q = Tensor(rng.normal(0, 1, (1, 4, 6)), requires_grad=True)
        k = Tensor(rng.normal(0, 1, (1, 5, 6)), requires_grad=True)
        v = Tensor(rng.normal(0, 1, (1, 5, 6)), requires_grad=True)
        out = linear_attention(q, k, v)
        T.sum_axis(T.reshape(out, (-1,)), axis=0).backward()
        for t in (q, k, v):
            assert t.grad is not None and np.isfinite(t.grad).all()


class TestShapes:
    def test_linear_identity_count(self):
        p = build_projector(ProjectorConfig.desk("linear"))
        out = p(np.zeros((7, 200)))
        assert out.shape == (7, 64)

    def test_linear_zero_input_replicates_bias(self):
        p = build_projector(ProjectorConfig.desk("linear"), seed=1)
        p.head.bias.data = np.arange(64.0)
        out = p(np.zeros((5, 200)))
        np.testing.assert_allclose(out.data, np.tile(np.arange(64.0), (5, 1)))

    def test_linear_empty_input(self):
        p = build_projector(ProjectorConfig.desk("linear"))
        assert p(np.zeros((0, 200))).shape == (0, 64)

    @pytest.mark.parametrize("n", [257, 300, 720])
    def test_fixed_output_counts(self, n):
        rng = np.random.default_rng(n)
        tokens = rng.normal(0, 1, (n, 200))
        for variant in ("perceiver", "scc"):
            cfg = ProjectorConfig.desk(variant, query_count=256)
            out = build_projector(cfg)(tokens, [0])
            assert out.shape == (256, 64), variant

    def test_perceiver_single_token_input(self):
        cfg = ProjectorConfig.desk("perceiver", query_count=16)
        out = build_projector(cfg)(np.random.default_rng(0).normal(0, 1, (1, 200)))
        assert out.shape == (16, 64)

    def test_sca_adds_one_separator_per_session(self):
        p = build_projector(ProjectorConfig.desk("sca"))
        tokens = np.random.default_rng(0).normal(0, 1, (30, 200))
        assert p(tokens, [0]).shape[0] == 31
        assert p(tokens, [0, 10, 20]).shape[0] == 33

    def test_scc_requires_more_tokens_than_queries(self):
        cfg = ProjectorConfig.desk("scc", query_count=16)
        p = build_projector(cfg)
        with pytest.raises(EegScribeError) as err:
            p(np.zeros((10, 200)), [0])
        assert "16" in str(err.value) and "11" in str(err.value)

    def test_context_overflow(self):
        cfg = ProjectorConfig.desk("sca")
        cfg.max_positions = 16
        p = build_projector(cfg)
        with pytest.raises(ContextOverflowError):
            p(np.zeros((20, 200)), [0])

    def test_zero_depth_sca_is_local(self):
        cfg = ProjectorConfig.desk("sca")
        cfg.depth = 0
        p = build_projector(cfg, seed=2)
        rng = np.random.default_rng(4)
        tokens = rng.normal(0, 1, (6, 200))
        base = p(tokens, [0]).data
        perturbed = tokens.copy()
        perturbed[3] += rng.normal(0, 1, 200)  # constant shifts die in the norm
        out = p(perturbed, [0]).data
        # with no attention layers, changing token 3 only moves output row 4
        # (row 0 is the session separator)
        changed = np.abs(out - base).sum(axis=1) > 1e-9
        assert changed.tolist() == [False, False, False, False, True, False, False]


class TestParameterCounts:
    @pytest.mark.parametrize("variant", ["perceiver", "scc", "sca"])
    def test_paper_dims_match_published_totals(self, variant):
        p = build_projector(ProjectorConfig.paper_dims(variant))
        total = p.parameter_count() + FUSION_SPECIALS_AT_PAPER_DIMS
        assert total == PAPER_COUNTS[variant]

    def test_linear_paper_dims(self):
        p = build_projector(ProjectorConfig.paper_dims("linear"))
        assert p.parameter_count() == 200 * 2560 + 2560  # 514,560
        # published figure adds the three fusion specials: 514,560 + 7,680
        assert p.parameter_count() + FUSION_SPECIALS_AT_PAPER_DIMS == 522240

    def test_heads_must_divide_width(self):
        with pytest.raises(EegScribeError):
            ProjectorConfig(variant="sca", d_eeg=200, heads=7)


class TestGradientFlow:
    @pytest.mark.parametrize("variant", ["linear", "perceiver", "scc", "sca"])
    def test_every_parameter_receives_gradient(self, variant):
        rng = np.random.default_rng(9)
        cfg = ProjectorConfig.desk(variant)
        p = build_projector(cfg, seed=3)
        tokens = rng.normal(0, 1, (24, 200))
        out = p(tokens, [0])
        weights = Tensor(rng.normal(0, 1, out.shape))
        T.sum_axis(T.reshape(T.mul(out, weights), (-1,)), axis=0).backward()
        dead = [name for name, t in p.parameters().items()
                if t.grad is None or not np.any(t.grad != 0.0)]
        assert not dead, f"{variant}: dead parameters {dead}"


class TestDeterminism:
    @pytest.mark.parametrize("variant", ["linear", "perceiver", "scc", "sca"])
    def test_same_seed_same_output(self, variant):
        rng = np.random.default_rng(11)
        tokens = rng.normal(0, 1, (20, 200))
        a = build_projector(ProjectorConfig.desk(variant), seed=5)(tokens, [0]).data
        b = build_projector(ProjectorConfig.desk(variant), seed=5)(tokens, [0]).data
        assert a.tobytes() == b.tobytes()
