"""Toy causal language model standing in for a frozen LLM backbone.

Two pre-LN causal self-attention blocks over word embeddings with rotary
position encoding and a weight-tied output head. Rotary positions make the
model translation-invariant, which matters here twice over: fused inputs
shift the text rightward behind a signal prefix, and the in-context recall
needed for prefix conditioning forms much more readily with relative
positions. Pre-trained on report text alone, then frozen; the alignment
stage steers it through input embeddings only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContextOverflowError, TrainingError
from .nn import FeedForward, LayerNorm, Module, MultiHeadProjection, softmax_attention
from .optim import AdamW
from .tensor import Tensor
from .text import Vocab

_NEG = -1e30


@dataclass
class DecoderConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    heads: int = 4
    ff_mult: int = 4
    max_positions: int = 512


class Rotary:
    """Rotary position encoding applied to per-head queries and keys."""

    def __init__(self, head_dim: int, max_positions: int, base: float = 10000.0):
        if head_dim % 2 != 0:
            raise ValueError(f"rotary head dim must be even, got {head_dim}")
        freqs = base ** (-np.arange(0, head_dim, 2) / head_dim)
        angles = np.outer(np.arange(max_positions), freqs)  # (P, dh/2)
        self.cos = np.repeat(np.cos(angles), 2, axis=1)  # (P, dh)
        self.sin = np.repeat(np.sin(angles), 2, axis=1)
        # pair swap (x0,x1)->(-x1,x0) as a constant matrix, so the rotation is
        # expressible with existing primitives
        m = np.zeros((head_dim, head_dim))
        for i in range(0, head_dim, 2):
            m[i + 1, i] = -1.0
            m[i, i + 1] = 1.0
        self.swap = m

    def __call__(self, x: Tensor, offset: int = 0) -> Tensor:
        """x: (..., S, dh) with positions offset..offset+S-1."""
        s = x.shape[-2]
        cos = Tensor(self.cos[offset : offset + s])
        sin = Tensor(self.sin[offset : offset + s])
        return T.add(T.mul(x, cos), T.mul(T.matmul(x, Tensor(self.swap)), sin))


class DecoderBlock(Module):
    def __init__(self, rng, cfg: DecoderConfig, rotary: Rotary):
        super().__init__()
        self.heads = cfg.heads
        self.rotary = rotary
        self.ln1 = self.child("ln1", LayerNorm(cfg.d_model))
        self.attn = self.child("attn", MultiHeadProjection(rng, cfg.d_model, cfg.heads))
        self.ln2 = self.child("ln2", LayerNorm(cfg.d_model))
        self.ff = self.child("ff", FeedForward(rng, cfg.d_model, cfg.ff_mult))

    def __call__(self, x: Tensor, mask: np.ndarray, position_offset: int) -> Tensor:
        h = self.ln1(x)
        q, k, v = self._project_batched(h)
        q = self.rotary(q, position_offset)
        k = self.rotary(k, position_offset)
        att = softmax_attention(q, k, v, mask=mask)
        x = T.add(x, self._merge_batched(att, x.shape))
        return T.add(x, self.ff(self.ln2(x)))

    def _project_batched(self, h: Tensor):
        b, s, d = h.shape
        dh = d // self.heads

        def shape(t: Tensor) -> Tensor:
            return T.transpose(T.reshape(t, (b, s, self.heads, dh)), (0, 2, 1, 3))

        return shape(self.attn.q(h)), shape(self.attn.k(h)), shape(self.attn.v(h))

    def _merge_batched(self, att: Tensor, out_shape) -> Tensor:
        b, s, d = out_shape
        merged = T.reshape(T.transpose(att, (0, 2, 1, 3)), (b, s, d))
        return self.attn.out(merged)


class ToyDecoder(Module):
    def __init__(self, cfg: DecoderConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.tok_emb = self.param(
            "tok_emb", T.parameter(rng, (cfg.vocab_size, cfg.d_model), scale=0.05)
        )
        rotary = Rotary(cfg.d_model // cfg.heads, cfg.max_positions)
        self.blocks = [
            self.child(f"block{i}", DecoderBlock(rng, cfg, rotary))
            for i in range(cfg.n_layers)
        ]
        self.ln_f = self.child("ln_f", LayerNorm(cfg.d_model))

    def embed(self, ids) -> Tensor:
        return T.embedding(self.tok_emb, np.asarray(ids, dtype=np.int64))

    def __call__(self, embeds: Tensor, pad_mask: np.ndarray | None = None,
                 position_offset: int = 0) -> Tensor:
        """embeds: (B, S, D) -> logits (B, S, V). pad_mask True where real."""
        b, s, d = embeds.shape
        if s + position_offset > self.cfg.max_positions:
            raise ContextOverflowError(
                f"sequence length {s} (offset {position_offset}) exceeds decoder "
                f"context {self.cfg.max_positions}"
            )
        x = embeds
        causal = np.triu(np.full((s, s), _NEG), k=1)
        mask = causal[None, None, :, :]
        if pad_mask is not None:
            key_pad = np.where(pad_mask[:, None, None, :], 0.0, _NEG)
            mask = mask + key_pad
        for block in self.blocks:
            x = block(x, mask, position_offset)
        h = self.ln_f(x)
        return T.matmul(h, T.transpose(self.tok_emb, (1, 0)))  # tied head


def pretrain_decoder(
    texts: list[str],
    vocab: Vocab,
    cfg: DecoderConfig,
    seed: int = 0,
    epochs: int = 30,
    batch_size: int = 16,
    lr: float = 1e-3,
    offset_jitter: int = 96,
    copy_fraction: float = 0.5,
) -> ToyDecoder:
    """Language-model warm-up on report text alone; caller freezes afterwards.

    Two augmentations stand in for what large-scale pretraining gives a real
    backbone: sequences are trained at random position offsets (so the model
    survives being shifted rightward behind a signal prefix), and a fraction
    of sequences are repeat-after-me pairs built from randomly recombined
    corpus sentences, which grows the induction-style recall heads that
    prefix conditioning later relies on. Recombination matters: repeating
    whole reports lets a small model memorize them instead of learning to
    copy, and the skill then fails on unseen content.
    """
    decoder = ToyDecoder(cfg, seed=seed)
    rng = np.random.default_rng(seed + 101)
    base = [vocab.encode(t) for t in texts]
    sentence_pool = sorted({s.strip() for t in texts for s in t.split(".") if s.strip()})
    pool_ids = [vocab.encode(s + " .") for s in sentence_pool]
    opt = AdamW(decoder.parameters(), lr=lr, betas=(0.9, 0.99), weight_decay=0.0)
    n = len(base)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = []
            for i in order[start : start + batch_size]:
                if pool_ids and rng.random() < copy_fraction:
                    k = int(rng.integers(1, min(5, len(pool_ids)) + 1))
                    picks = rng.choice(len(pool_ids), size=k, replace=False)
                    toks = [t for j in picks for t in pool_ids[j]]
                    seq = [vocab.bos_id] + toks + [vocab.eos_id] + toks + [vocab.eos_id]
                else:
                    toks = base[i]
                    seq = [vocab.bos_id] + toks + [vocab.eos_id]
                batch.append(seq[: cfg.max_positions])
            s_max = max(len(seq) for seq in batch)
            max_off = max(0, min(offset_jitter, cfg.max_positions - s_max))
            offset = int(rng.integers(0, max_off + 1))
            ids = np.full((len(batch), s_max), vocab.pad_id, dtype=np.int64)
            mask = np.zeros((len(batch), s_max), dtype=bool)
            for row, seq in enumerate(batch):
                ids[row, : len(seq)] = seq
                mask[row, : len(seq) - 1] = True  # predict positions 1..len-1
            targets = np.full_like(ids, 0)
            targets[:, :-1] = ids[:, 1:]
            embeds = decoder.embed(ids)
            logits = decoder(embeds, pad_mask=ids != vocab.pad_id, position_offset=offset)
            loss = T.cross_entropy(logits, targets, mask)
            if not np.isfinite(loss.data):
                raise TrainingError("non-finite loss during decoder warm-up")
            opt.zero_grad()
            loss.backward()
            opt.step()
    return decoder
