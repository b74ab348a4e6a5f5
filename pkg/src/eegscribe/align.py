"""Alignment of epoch-token sequences into the decoder embedding space.

Four projector variants:
  linear    per-token affine map (ablation baseline)
  perceiver learnable queries cross-attending the raw token sequence
  sca       session separators + sinusoidal positions + linear-attention
            transformer over the full sequence, then a linear head
  scc       the same temporal encoding followed by query compression to a
            fixed token count

The temporal path uses bias-free (scale-only) normalization and norm-free
linear-attention layers; perceiver blocks use standard pre-LN residual
wiring with affine norms.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import ContextOverflowError, EegScribeError, ShapeError
from .nn import (
    Dropout,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadProjection,
    ScaleNorm,
    linear_attention,
    merge_heads,
    sinusoidal_positions,
    softmax_attention,
)
from .tensor import Tensor

VARIANTS = ("linear", "perceiver", "scc", "sca")


@dataclass
class ProjectorConfig:
    variant: str = "sca"
    d_eeg: int = 200
    d_llm: int = 64
    heads: int = 8
    depth: int = 2              # temporal linear-attention layers (sca; scc uses 1)
    query_count: int = 16       # latent tokens for perceiver/scc
    perceiver_layers: int = 2   # cross-attn+FF blocks in the perceiver baseline
    dropout: float = 0.1        # perceiver only
    max_positions: int = 2048
    ff_mult_temporal: int = 4
    ff_mult_perceiver: int = 2

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise EegScribeError(f"unknown projector variant {self.variant!r}")
        if self.d_eeg % self.heads != 0:
            raise EegScribeError(f"heads {self.heads} must divide width {self.d_eeg}")

    @classmethod
    def desk(cls, variant: str, d_llm: int = 64, query_count: int = 16) -> "ProjectorConfig":
        cfg = cls(variant=variant, d_llm=d_llm, query_count=query_count)
        return replace(cfg, depth=1 if variant == "scc" else cfg.depth)

    @classmethod
    def paper_dims(cls, variant: str) -> "ProjectorConfig":
        """200 -> 2560 with 256 queries; used only for parameter-count checks."""
        cfg = cls(variant=variant, d_llm=2560, query_count=256)
        return replace(cfg, depth=1 if variant == "scc" else cfg.depth)


class TemporalLayer(Module):
    """Residual linear-attention + x4 feed-forward, no internal norms."""

    def __init__(self, rng, dim: int, heads: int, ff_mult: int):
        super().__init__()
        self.attn = self.child("attn", MultiHeadProjection(rng, dim, heads))
        self.ff = self.child("ff", FeedForward(rng, dim, ff_mult))
        # norm-free residual stack: damp the branch outputs at init
        self.attn.out.weight.data *= 0.5
        self.ff.down.weight.data *= 0.5

    def __call__(self, x: Tensor) -> Tensor:
        q, k, v = self.attn.project(x, x)
        x = T.add(x, self.attn.out(merge_heads(linear_attention(q, k, v))))
        return T.add(x, self.ff(x))


class TemporalEncoder(Module):
    """Separator insertion, fixed positions, linear-attention stack, scale norm."""

    POSITION_SCALE = 0.1  # epoch tokens are sub-unit scale; match them

    def __init__(self, rng, dim: int, heads: int, depth: int, ff_mult: int, max_positions: int):
        super().__init__()
        self.max_positions = max_positions
        self.separator = self.param("separator", T.parameter(rng, (1, dim), scale=0.02))
        self.layers = [
            self.child(f"layer{i}", TemporalLayer(rng, dim, heads, ff_mult))
            for i in range(depth)
        ]
        self.norm = self.child("norm", ScaleNorm(dim))
        # buffer, not trained
        self.positions = self.POSITION_SCALE * sinusoidal_positions(max_positions, dim)

    def augment(self, tokens: np.ndarray, session_boundaries: list[int]) -> Tensor:
        """Prepend one separator per session segment.

        tokens: (N, dim) or batched (B, N, dim) with shared boundaries;
        output gains one row per session.
        """
        n = tokens.shape[-2]
        batched = tokens.ndim == 3
        boundaries = sorted(set(session_boundaries or [0]))
        if boundaries[0] != 0:
            boundaries = [0] + boundaries
        if any(b >= n for b in boundaries[1:]) or n == 0:
            raise EegScribeError(
                f"session boundaries {boundaries} invalid for {n} tokens"
            )
        n_aug = n + len(boundaries)
        if n_aug > self.max_positions:
            raise ContextOverflowError(
                f"sequence of {n_aug} tokens (incl. separators) exceeds "
                f"position budget {self.max_positions}"
            )
        sep = self.separator
        if batched:
            sep = T.add(sep, Tensor(np.zeros((tokens.shape[0], 1, 1))))
        pieces = []
        ends = boundaries[1:] + [n]
        for start, end in zip(boundaries, ends):
            pieces.append(sep)
            pieces.append(Tensor(tokens[..., start:end, :]))
        x = T.concat(pieces, axis=tokens.ndim - 2)
        return T.add(x, Tensor(self.positions[:n_aug]))

    def __call__(self, tokens: np.ndarray, session_boundaries: list[int]) -> Tensor:
        x = self.augment(tokens, session_boundaries)
        for layer in self.layers:
            x = layer(x)
        return self.norm(x)


class PerceiverBlock(Module):
    """Pre-LN cross-attention and x2 feed-forward over latent queries."""

    def __init__(self, rng, dim: int, heads: int, ff_mult: int):
        super().__init__()
        self.ln_latents = self.child("ln_latents", LayerNorm(dim))
        self.ln_context = self.child("ln_context", LayerNorm(dim))
        self.attn = self.child("attn", MultiHeadProjection(rng, dim, heads))
        self.ln_ff = self.child("ln_ff", LayerNorm(dim))
        self.ff = self.child("ff", FeedForward(rng, dim, ff_mult))

    def __call__(self, latents: Tensor, context: Tensor, dropout: Dropout) -> Tensor:
        q, k, v = self.attn.project(self.ln_latents(latents), self.ln_context(context))
        attended = self.attn.out(merge_heads(softmax_attention(q, k, v)))
        latents = T.add(latents, dropout(attended))
        return T.add(latents, dropout(self.ff(self.ln_ff(latents), dropout=dropout)))


class Projector(Module):
    """Base: __call__(tokens, session_boundaries) -> (N', d_llm) tensor."""

    variant = "base"

    def __init__(self, config: ProjectorConfig):
        super().__init__()
        self.config = config
        self.dropout_rng: np.random.Generator | None = None  # set during training only

    def __call__(self, tokens: np.ndarray, session_boundaries: list[int] | None = None) -> Tensor:
        raise NotImplementedError

    def _check_input(self, tokens: np.ndarray) -> np.ndarray:
        """Accepts (N, d_eeg) or a batch (B, N, d_eeg) sharing boundaries."""
        tokens = np.asarray(tokens, dtype=np.float64)
        if tokens.ndim not in (2, 3) or tokens.shape[-1] != self.config.d_eeg:
            raise ShapeError(f"{self.variant}_forward", tokens.shape, (None, self.config.d_eeg))
        return tokens


class LinearProjector(Projector):
    variant = "linear"

    def __init__(self, config: ProjectorConfig, seed: int = 0):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        self.head = self.child("head", Linear(rng, config.d_eeg, config.d_llm))

    def __call__(self, tokens, session_boundaries=None) -> Tensor:
        tokens = self._check_input(tokens)
        if tokens.shape[-2] == 0:
            return Tensor(np.zeros(tokens.shape[:-2] + (0, self.config.d_llm)))
        return self.head(Tensor(tokens))


class PerceiverProjector(Projector):
    variant = "perceiver"

    def __init__(self, config: ProjectorConfig, seed: int = 0):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        d = config.d_eeg
        self.queries = self.param("queries", T.parameter(rng, (config.query_count, d), scale=0.02))
        self.blocks = [
            self.child(f"block{i}", PerceiverBlock(rng, d, config.heads, config.ff_mult_perceiver))
            for i in range(config.perceiver_layers)
        ]
        self.norm = self.child("norm", LayerNorm(d))
        self.head = self.child("head", Linear(rng, d, config.d_llm))

    def __call__(self, tokens, session_boundaries=None) -> Tensor:
        tokens = self._check_input(tokens)
        if tokens.shape[-2] < 1:
            raise ShapeError("perceiver_forward", tokens.shape, "(>=1, d_eeg)")
        context = Tensor(tokens)
        drop = Dropout(self.config.dropout, self.dropout_rng)
        latents = self.queries
        for block in self.blocks:
            latents = block(latents, context, drop)
        return self.head(self.norm(latents))


class SCAProjector(Projector):
    variant = "sca"

    def __init__(self, config: ProjectorConfig, seed: int = 0):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        self.encoder = self.child(
            "encoder",
            TemporalEncoder(rng, config.d_eeg, config.heads, config.depth,
                            config.ff_mult_temporal, config.max_positions),
        )
        self.head = self.child("head", Linear(rng, config.d_eeg, config.d_llm))

    def __call__(self, tokens, session_boundaries=None) -> Tensor:
        tokens = self._check_input(tokens)
        return self.head(self.encoder(tokens, session_boundaries or [0]))


class SCCProjector(Projector):
    variant = "scc"

    def __init__(self, config: ProjectorConfig, seed: int = 0):
        super().__init__(config)
        rng = np.random.default_rng(seed)
        d = config.d_eeg
        depth = config.depth if config.depth else 1
        self.queries = self.param("queries", T.parameter(rng, (config.query_count, d), scale=0.02))
        self.encoder = self.child(
            "encoder",
            TemporalEncoder(rng, d, config.heads, depth,
                            config.ff_mult_temporal, config.max_positions),
        )
        self.block = self.child(
            "block", PerceiverBlock(rng, d, config.heads, config.ff_mult_perceiver)
        )
        self.gain = self.child("gain", ScaleNorm(d))
        self.head = self.child("head", Linear(rng, d, config.d_llm))

    def __call__(self, tokens, session_boundaries=None) -> Tensor:
        tokens = self._check_input(tokens)
        boundaries = session_boundaries or [0]
        n_aug = tokens.shape[-2] + len(set(boundaries) | {0})
        if self.config.query_count >= n_aug:
            raise EegScribeError(
                f"scc needs query count < sequence length, got "
                f"L={self.config.query_count} vs N'={n_aug}"
            )
        context = self.encoder(tokens, boundaries)
        latents = self.block(self.queries, context, Dropout(0.0, None))
        return self.head(self.gain(latents))


def build_projector(config: ProjectorConfig, seed: int = 0) -> Projector:
    cls = {
        "linear": LinearProjector,
        "perceiver": PerceiverProjector,
        "sca": SCAProjector,
        "scc": SCCProjector,
    }[config.variant]
    return cls(config, seed=seed)


@dataclass
class AlignedEmbedding:
    tokens: Tensor          # (N', d_llm)
    projector_id: str
    session_boundaries: list[int]


def align(projector: Projector, tokens: np.ndarray, session_boundaries=None) -> AlignedEmbedding:
    out = projector(tokens, session_boundaries)
    return AlignedEmbedding(out, projector.variant, list(session_boundaries or [0]))
