"""Prompt fusion, alignment-only training, and autoregressive generation.

The fused layout is [EEG_START; projected EEG rows; EEG_END; prompt tokens;
target tokens]; supervision covers target positions plus end-of-text. Only
the projector and the three fusion special embeddings receive updates; the
encoder and decoder are frozen and hash-checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .align import Projector
from .checkpoint import hash_arrays
from .decoder import ToyDecoder
from .eeg_tokens import ToyEncoder
from .errors import ContextOverflowError, EegScribeError, TrainingError
from .nn import Module
from .optim import AdamW, warmup_linear_lr
from .tensor import Tensor
from .text import Vocab

MAX_UNKNOWN_RATE = 0.05


@dataclass
class TrainConfig:
    batch_size: int = 4
    grad_accum: int = 4
    lr: float = 1e-4
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.99)
    epochs: int = 10
    warmup_ratio: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.batch_size, self.grad_accum, self.lr, self.epochs) <= 0:
            raise EegScribeError("train config values must be positive")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise EegScribeError(f"warmup ratio {self.warmup_ratio} outside [0, 1]")


@dataclass
class TrainSample:
    sample_id: str
    tokens: np.ndarray               # (N, d_eeg) epoch tokens
    session_boundaries: list[int]
    prompt: str
    target: str


@dataclass
class FusedSequence:
    embeds: Tensor                   # (S, d_model)
    targets: np.ndarray              # (S,) next-token ids
    mask: np.ndarray                 # (S,) True on supervised positions
    spans: dict = field(default_factory=dict)


class PromptFusion(Module):
    """Owns the EEG_START / EEG_END / SESSION_SEP embeddings at decoder width."""

    def __init__(self, d_model: int, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.d_model = d_model
        self.eeg_start = self.param("eeg_start", T.parameter(rng, (1, d_model), scale=0.02))
        self.eeg_end = self.param("eeg_end", T.parameter(rng, (1, d_model), scale=0.02))
        self.session_sep = self.param("session_sep", T.parameter(rng, (1, d_model), scale=0.02))

    def build_fused(
        self,
        h_eeg: Tensor,
        prompt_ids: list[int],
        target_ids: list[int],
        decoder: ToyDecoder,
        vocab: Vocab,
        session_boundaries: list[int] | None = None,
        insert_session_seps: bool = False,
    ) -> FusedSequence:
        pieces = [self.eeg_start]
        if insert_session_seps and session_boundaries and len(session_boundaries) > 1:
            bounds = sorted(set(session_boundaries))
            ends = bounds[1:] + [h_eeg.shape[0]]
            for i, (start, end) in enumerate(zip(bounds, ends)):
                if i > 0:
                    pieces.append(self.session_sep)
                pieces.append(_slice_rows(h_eeg, start, end))
        else:
            pieces.append(h_eeg)
        pieces.append(self.eeg_end)
        n_eeg = sum(p.shape[0] for p in pieces) - 2
        if prompt_ids:
            pieces.append(decoder.embed(np.asarray(prompt_ids, dtype=np.int64)))
        if target_ids:
            pieces.append(decoder.embed(np.asarray(target_ids, dtype=np.int64)))
        embeds = T.concat(pieces, axis=0)
        s = embeds.shape[0]
        if s > decoder.cfg.max_positions:
            raise ContextOverflowError(
                f"fused length {s} (eeg {n_eeg} + prompt {len(prompt_ids)} + "
                f"target {len(target_ids)} + 2) exceeds context {decoder.cfg.max_positions}"
            )
        targets = np.zeros(s, dtype=np.int64)
        mask = np.zeros(s, dtype=bool)
        m = len(target_ids)
        first_pred = s - m - 1  # position whose next token is target_ids[0]
        for j, tid in enumerate(target_ids):
            targets[first_pred + j] = tid
        targets[s - 1] = vocab.eos_id
        mask[first_pred : s] = True
        if m == 0:
            mask[:] = False
        spans = {
            "eeg": (0, n_eeg + 2),
            "prompt": (n_eeg + 2, n_eeg + 2 + len(prompt_ids)),
            "target": (n_eeg + 2 + len(prompt_ids), s),
        }
        return FusedSequence(embeds, targets, mask, spans)


def _slice_rows(x: Tensor, start: int, end: int) -> Tensor:
    rows = x.shape[0]
    sel = np.zeros((end - start, rows))
    sel[np.arange(end - start), np.arange(start, end)] = 1.0
    return T.matmul(Tensor(sel), x)


def nll_loss(logits: Tensor, fused: FusedSequence) -> Tensor:
    """Mean negative log-likelihood over the supervised positions."""
    if not fused.mask.any():
        raise EegScribeError("nll_loss on a fused sequence with an empty mask")
    return T.cross_entropy(logits, fused.targets, fused.mask)


class ReportModel:
    """Frozen encoder + trainable alignment stage + frozen decoder."""

    def __init__(self, encoder: ToyEncoder, projector: Projector,
                 fusion: PromptFusion, decoder: ToyDecoder, vocab: Vocab):
        if fusion.d_model != decoder.cfg.d_model:
            raise EegScribeError("fusion width must match decoder width")
        self.encoder = encoder
        self.projector = projector
        self.fusion = fusion
        self.decoder = decoder
        self.vocab = vocab
        self.decoder.freeze()

    def trainable_parameters(self) -> dict[str, Tensor]:
        out = {f"projector.{k}": p for k, p in self.projector.parameters().items()}
        out.update({f"fusion.{k}": p for k, p in self.fusion.parameters().items()})
        return out

    def trainable_state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.trainable_parameters().items()}

    def load_trainable_state(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.trainable_parameters()
        for k, p in params.items():
            p.data = np.asarray(arrays[k], dtype=np.float64).copy()

    def encoder_hash(self) -> str:
        return hash_arrays(self.encoder.parameters())

    def decoder_hash(self) -> str:
        return hash_arrays(self.decoder.state_arrays())

    def alignment_parameter_count(self) -> int:
        return sum(p.data.size for p in self.trainable_parameters().values())

    def fuse_sample(self, sample: TrainSample, include_target: bool = True,
                    extra_target_ids: list[int] | None = None,
                    h_eeg: Tensor | None = None) -> FusedSequence:
        for label, textpiece in (("prompt", sample.prompt), ("target", sample.target)):
            if textpiece and self.vocab.unknown_rate(textpiece) > MAX_UNKNOWN_RATE:
                raise EegScribeError(
                    f"{label} for {sample.sample_id} exceeds {MAX_UNKNOWN_RATE:.0%} "
                    f"unknown tokens"
                )
        h = h_eeg if h_eeg is not None else self.projector(
            sample.tokens, sample.session_boundaries
        )
        prompt_ids = self.vocab.encode(sample.prompt) if sample.prompt else []
        if include_target:
            target_ids = self.vocab.encode(sample.target)
        else:
            target_ids = list(extra_target_ids or [])
        return self.fusion.build_fused(
            h, prompt_ids, target_ids, self.decoder, self.vocab,
            session_boundaries=sample.session_boundaries,
            insert_session_seps=self.projector.variant == "linear",
        )

    def _project_together(self, samples: list[TrainSample]) -> list[Tensor | None]:
        """One batched projector pass when every sample shares shape/boundaries."""
        first = samples[0]
        uniform = len(samples) > 1 and all(
            s.tokens.shape == first.tokens.shape
            and s.session_boundaries == first.session_boundaries
            for s in samples
        )
        if not uniform:
            return [None] * len(samples)
        stacked = np.stack([s.tokens for s in samples])
        out = self.projector(stacked, first.session_boundaries)
        return [T.select0(out, i) for i in range(len(samples))]

    def batch_loss(self, samples: list[TrainSample]) -> Tensor:
        h_batch = self._project_together(samples)
        fused = [self.fuse_sample(s, h_eeg=h) for s, h in zip(samples, h_batch)]
        s_max = max(f.embeds.shape[0] for f in fused)
        d = self.fusion.d_model
        padded, targets, mask, pad_mask = [], [], [], []
        for f in fused:
            s = f.embeds.shape[0]
            emb = f.embeds
            if s < s_max:
                emb = T.concat([emb, Tensor(np.zeros((s_max - s, d)))], axis=0)
            padded.append(T.reshape(emb, (1, s_max, d)))
            targets.append(np.pad(f.targets, (0, s_max - s)))
            mask.append(np.pad(f.mask, (0, s_max - s)))
            pad_mask.append(np.arange(s_max) < s)
        embeds = T.concat(padded, axis=0)
        logits = self.decoder(embeds, pad_mask=np.stack(pad_mask))
        return T.cross_entropy(logits, np.stack(targets), np.stack(mask))

    def sample_nll(self, sample: TrainSample) -> tuple[float, int]:
        fused = self.fuse_sample(sample)
        logits = self.decoder(
            T.reshape(fused.embeds, (1,) + fused.embeds.shape),
            pad_mask=np.ones((1, fused.embeds.shape[0]), dtype=bool),
        )
        loss = nll_loss(logits, _batchify(fused))
        return float(loss.data), int(fused.mask.sum())

    def generate(self, sample: TrainSample, max_tokens: int = 64, mode: str = "greedy",
                 temperature: float = 1.0, rng: np.random.Generator | None = None) -> str:
        if max_tokens < 1:
            raise EegScribeError(f"max_tokens must be >= 1, got {max_tokens}")
        if mode not in ("greedy", "temperature"):
            raise EegScribeError(f"unknown generation mode {mode!r}")
        if mode == "temperature" and rng is None:
            rng = np.random.default_rng(0)
        generated: list[int] = []
        for _ in range(max_tokens):
            fused = self.fuse_sample(sample, include_target=False, extra_target_ids=generated)
            logits = self.decoder(
                T.reshape(fused.embeds, (1,) + fused.embeds.shape),
                pad_mask=np.ones((1, fused.embeds.shape[0]), dtype=bool),
            )
            last = logits.data[0, -1]
            if mode == "greedy":
                nxt = int(np.argmax(last))
            else:
                z = (last - last.max()) / max(temperature, 1e-6)
                p = np.exp(z) / np.exp(z).sum()
                nxt = int(rng.choice(len(p), p=p))
            if nxt == self.vocab.eos_id:
                break
            generated.append(nxt)
        return self.vocab.decode(generated)


def _batchify(fused: FusedSequence) -> FusedSequence:
    return FusedSequence(
        fused.embeds, fused.targets[None, :], fused.mask[None, :], fused.spans
    )


@dataclass
class TrainResult:
    curves: list[dict]               # epoch/split/loss/perplexity rows
    best_state: dict[str, np.ndarray]
    final_state: dict[str, np.ndarray]
    best_val_loss: float
    lr_trace: list[float]


def train(
    model: ReportModel,
    cfg: TrainConfig,
    train_samples: list[TrainSample],
    val_samples: list[TrainSample],
) -> TrainResult:
    """Optimize the alignment stage only; encoder/decoder stay frozen."""
    if not train_samples:
        raise EegScribeError("empty training set")
    enc_hash, dec_hash = model.encoder_hash(), model.decoder_hash()
    params = model.trainable_parameters()
    opt = AdamW(params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(cfg.seed + 1)

    n = len(train_samples)
    micro_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    steps_per_epoch = (micro_per_epoch + cfg.grad_accum - 1) // cfg.grad_accum
    total_steps = steps_per_epoch * cfg.epochs

    curves: list[dict] = []
    lr_trace: list[float] = []
    best_val = float("inf")
    best_state = model.trainable_state()
    step = 0
    for epoch_idx in range(cfg.epochs):
        order = rng.permutation(n)
        micros = [
            [train_samples[i] for i in order[s : s + cfg.batch_size]]
            for s in range(0, n, cfg.batch_size)
        ]
        train_losses = []
        for group_start in range(0, len(micros), cfg.grad_accum):
            group = micros[group_start : group_start + cfg.grad_accum]
            opt.zero_grad()
            model.projector.dropout_rng = dropout_rng
            for batch_idx, micro in enumerate(group):
                loss = model.batch_loss(micro)
                if not np.isfinite(loss.data):
                    grads = [p.grad for p in params.values() if p.grad is not None]
                    gmax = max((float(np.abs(g).max()) for g in grads), default=0.0)
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch_idx} batch "
                        f"{group_start + batch_idx} (max grad {gmax:.3e})"
                    )
                train_losses.append(float(loss.data))
                scaled = T.mul(loss, Tensor(1.0 / len(group)))
                scaled.backward()
            model.projector.dropout_rng = None
            lr = warmup_linear_lr(step, total_steps, cfg.lr, cfg.warmup_ratio)
            lr_trace.append(lr)
            opt.step(lr)
            step += 1
        val_loss, val_ppl = evaluate(model, val_samples)
        curves.append({"epoch": epoch_idx, "split": "train",
                       "loss": float(np.mean(train_losses)), "perplexity": ""})
        curves.append({"epoch": epoch_idx, "split": "val",
                       "loss": val_loss, "perplexity": val_ppl})
        if val_loss < best_val:
            best_val = val_loss
            best_state = model.trainable_state()

    if model.encoder_hash() != enc_hash or model.decoder_hash() != dec_hash:
        raise TrainingError("frozen parameter group changed during training")
    return TrainResult(curves, best_state, model.trainable_state(), best_val, lr_trace)


def evaluate(model: ReportModel, samples: list[TrainSample]) -> tuple[float, float]:
    """Mean per-sample NLL and pooled perplexity over all supervised positions."""
    if not samples:
        return float("nan"), float("nan")
    nlls, counts = [], []
    for s in samples:
        nll, count = model.sample_nll(s)
        nlls.append(nll)
        counts.append(count)
    pooled = float(np.dot(nlls, counts) / np.sum(counts))
    return float(np.mean(nlls)), float(np.exp(pooled))


def perplexity(model: ReportModel, samples: list[TrainSample]) -> float:
    if not samples:
        raise EegScribeError("perplexity of an empty corpus")
    return evaluate(model, samples)[1]
