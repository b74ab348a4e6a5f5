"""Experiment runner: per-variant training, scoring, and the ablation table.

Every variant of a seed shares the same decoder warm-up, vocabulary, data
order, and evaluation set, so rows differ only in the alignment module.
Failed arms are recorded in the results table instead of aborting the run.
"""

from __future__ import annotations

import csv
import hashlib
import json
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .align import build_projector
from .checkpoint import save_arrays
from .config import RunConfig
from .decoder import pretrain_decoder
from .eeg_tokens import ToyEncoder
from .errors import EegScribeError
from .fusion import PromptFusion, ReportModel, TrainSample, train
from .metrics import METRIC_NAMES, score_corpus
from .synth import SynthPair, load_corpus
from .text import Vocab

ZERO_EEG_SUFFIX = "-zeroed"


@dataclass
class ArmResult:
    variant: str
    seed: int
    status: str                  # "ok" or "failed: <reason>"
    metrics: dict[str, float]
    perplexity: float
    best_val_loss: float
    curves: list[dict]


def build_samples(pairs: list[SynthPair], tokens, ids: list[str], task: str,
                  zero_eeg: bool = False) -> list[TrainSample]:
    by_id = {p.pair_id: p for p in pairs}
    out = []
    for pid in ids:
        p = by_id[pid]
        seq = tokens[pid]
        tok = np.zeros_like(seq.tokens) if zero_eeg else seq.tokens
        prompt = p.context if task == "with-context" else ""
        out.append(TrainSample(pid, tok, list(seq.session_boundaries), prompt, p.report))
    return out


def prepare_language(pairs: list[SynthPair], train_ids: list[str], cfg: RunConfig, seed: int):
    """Vocabulary from the train split, decoder warmed up on its reports."""
    by_id = {p.pair_id: p for p in pairs}
    reports = [by_id[pid].report for pid in train_ids]
    contexts = [by_id[pid].context for pid in train_ids]
    vocab = Vocab.build(reports + contexts)
    decoder = pretrain_decoder(
        reports, vocab, cfg.decoder_config(len(vocab)), seed=seed,
        epochs=cfg.decoder_pretrain_epochs, lr=cfg.decoder_pretrain_lr,
    )
    decoder.freeze()
    return vocab, decoder


def run_arm(variant: str, seed: int, cfg: RunConfig, corpus_dir, out_dir,
            vocab=None, decoder=None) -> ArmResult:
    """Train one projector variant and score it on the validation split."""
    pairs, tokens, splits = load_corpus(corpus_dir)
    zero_eeg = variant.endswith(ZERO_EEG_SUFFIX)
    base_variant = variant[: -len(ZERO_EEG_SUFFIX)] if zero_eeg else variant

    if vocab is None or decoder is None:
        vocab, decoder = prepare_language(pairs, splits["train"], cfg, seed)

    train_s = build_samples(pairs, tokens, splits["train"], cfg.task, zero_eeg)
    val_s = build_samples(pairs, tokens, splits["val"], cfg.task, zero_eeg)

    projector = build_projector(cfg.projector_config(base_variant), seed=seed)
    model = ReportModel(ToyEncoder(), projector, PromptFusion(decoder.cfg.d_model, seed=seed),
                        decoder, vocab)
    train_cfg = cfg.train
    train_cfg = type(train_cfg)(**{**train_cfg.__dict__, "seed": seed})
    result = train(model, train_cfg, train_s, val_s)
    model.load_trainable_state(result.best_state)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_arrays(out_dir / f"{variant}_seed{seed}.ckpt", result.best_state)

    rows = []
    generations = []
    for s in val_s:
        hyp = model.generate(s, max_tokens=cfg.max_generate_tokens)
        generations.append({"id": s.sample_id, "prompt": s.prompt,
                            "generated": hyp, "reference": s.target})
        rows.append((s.sample_id, hyp, s.target, "all"))
    score = score_corpus(rows)
    with open(out_dir / f"{variant}_seed{seed}_generations.jsonl", "w", encoding="utf-8") as f:
        for g in generations:
            f.write(json.dumps(g) + "\n")

    val_rows = [r for r in result.curves if r["split"] == "val"]
    ppl = float(val_rows[-1]["perplexity"]) if val_rows else float("nan")
    best_ppl = min(float(r["perplexity"]) for r in val_rows) if val_rows else float("nan")
    return ArmResult(
        variant=variant, seed=seed, status="ok",
        metrics=dict(score.mean), perplexity=best_ppl,
        best_val_loss=result.best_val_loss, curves=result.curves,
    )


def run_ablation(cfg: RunConfig, corpus_dir, out_dir,
                 include_zeroed: bool = False) -> list[ArmResult]:
    """All variants x seeds with shared per-seed language stack."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairs, _, splits = load_corpus(corpus_dir)
    results: list[ArmResult] = []
    variants = list(cfg.variants)
    if include_zeroed:
        variants += [f"sca{ZERO_EEG_SUFFIX}"]
    for seed in cfg.seeds:
        vocab, decoder = prepare_language(pairs, splits["train"], cfg, seed)
        for variant in variants:
            try:
                results.append(
                    run_arm(variant, seed, cfg, corpus_dir, out_dir, vocab, decoder)
                )
            except EegScribeError as exc:
                results.append(ArmResult(variant, seed, f"failed: {exc}",
                                         {}, float("nan"), float("nan"), []))
            except Exception as exc:  # persist partial results with a note
                traceback.print_exc()
                results.append(ArmResult(variant, seed, f"failed: {type(exc).__name__}: {exc}",
                                         {}, float("nan"), float("nan"), []))
        write_results(out_dir, results)
    write_results(out_dir, results)
    return results


def write_results(out_dir, results: list[ArmResult]) -> None:
    out_dir = Path(out_dir)
    with open(out_dir / "results.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "seed", "status", *METRIC_NAMES,
                         "val_perplexity", "best_val_loss"])
        for r in results:
            writer.writerow(
                [r.variant, r.seed, r.status]
                + [f"{r.metrics.get(m, float('nan')):.6f}" for m in METRIC_NAMES]
                + [f"{r.perplexity:.6f}", f"{r.best_val_loss:.6f}"]
            )
    with open(out_dir / "curves.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["variant", "seed", "epoch", "split", "loss", "perplexity"])
        for r in results:
            for row in r.curves:
                writer.writerow([r.variant, r.seed, row["epoch"], row["split"],
                                 f"{row['loss']:.6f}", row["perplexity"]])


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, inputs: dict, config_path=None, seed=None) -> None:
    """inputs, config hash, seed, and content hashes of everything produced."""
    out_dir = Path(out_dir)
    lines = [f"input.{k}: {v}" for k, v in inputs.items()]
    if config_path is not None:
        lines.append(f"config: {config_path}")
        lines.append(f"config_hash: {file_hash(config_path)}")
    if seed is not None:
        lines.append(f"seed: {seed}")
    for path in sorted(out_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.txt":
            lines.append(f"output.{path.relative_to(out_dir)}: {file_hash(path)}")
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
