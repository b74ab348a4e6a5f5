"""Command-line interface.

Subcommands: preprocess, structure, synth, train, generate, score, ablate.
Every subcommand takes --config and --seed; exit code 0 on success, 2 for
usage problems, 1 with a categorized error line otherwise.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from datetime import datetime
from pathlib import Path

import numpy as np

from . import checkpoint
from .align import build_projector
from .config import RunConfig, load_config
from .edf import read_edf
from .errors import ConfigError, EegScribeError
from .experiment import (
    build_samples, file_hash, prepare_language, run_ablation, run_arm,
    write_manifest, write_results,
)
from .fusion import ReportModel, PromptFusion
from .metrics import METRIC_NAMES, aggregate, score_pair
from .reports import (
    Lexicon, ReportRecord, SessionRecord, match_report_to_sessions,
    patient_split, read_report_corpus, structure_report, write_structured_corpus,
)
from .signal import bandpass_notch, epoch, montage_map, resample
from .synth import load_corpus, synth_corpus
from .eeg_tokens import ToyEncoder


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.synth.seed = args.seed
            cfg.train.seed = args.seed
            cfg.seeds = (args.seed,)
        return args.func(args, cfg)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"error[config]: {exc}", file=sys.stderr)
        return 2
    except EegScribeError as exc:
        category = type(exc).__name__
        print(f"error[{category}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eegscribe",
        description="EEG preprocessing, report structuring, alignment training, "
                    "generation, and scoring on synthetic corpora.",
    )
    sub = parser.add_subparsers(dest="command")
    parser.set_defaults(command=None)

    def common(p):
        p.add_argument("--config", required=True, help="INI config file")
        p.add_argument("--seed", type=int, default=None, help="override config seeds")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("preprocess", help="EDF directory -> epoched stores")
    common(p)
    p.add_argument("--edf-dir", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("structure", help="report corpus -> structured corpus + splits")
    common(p)
    p.add_argument("--reports", required=True, help="line-delimited report records")
    p.add_argument("--sessions", default=None, help="line-delimited session records")
    p.set_defaults(func=cmd_structure)

    p = sub.add_parser("synth", help="generate a synthetic paired corpus")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one projector variant on a corpus")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--variant", default="sca")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="generate reports from a trained checkpoint")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variant", default="sca")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("score", help="score hypothesis/reference records")
    common(p)
    p.add_argument("--pairs", required=True,
                   help="jsonl with id, hypothesis, reference, optional section")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ablate", help="train and score every configured variant")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--zeroed-arm", action="store_true",
                   help="add an arm with EEG rows zeroed")
    p.set_defaults(func=cmd_ablate)
    return parser


def cmd_preprocess(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    edf_dir = Path(args.edf_dir)
    files = sorted(edf_dir.glob("*.edf"))
    if not files:
        raise EegScribeError(f"no .edf files under {edf_dir}")
    for path in files:
        rec = read_edf(path.read_bytes())
        rec = montage_map(resample(bandpass_notch(rec), 200.0))
        ep = epoch(rec, 10.0)
        store = out / f"{path.stem}.epochs"
        checkpoint.save_arrays(store, {"epochs": ep.epochs})
        checkpoint.write_metadata(
            str(store) + ".meta",
            {
                "channels": ep.channels,
                "sample_rate_hz": ep.sample_rate_hz,
                "epoch_seconds": ep.epoch_seconds,
                "n_epochs": ep.n_epochs,
                "patient_id": ep.patient_id,
                "session_id": ep.session_id,
            },
        )
        print(f"{path.name}: {ep.n_epochs} epochs x {len(ep.channels)} channels")
    write_manifest(out, {"edf_dir": str(edf_dir)}, args.config, cfg.train.seed)
    return 0


def cmd_structure(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lexicon = Lexicon.from_file(cfg.lexicon_path) if cfg.lexicon_path else Lexicon.default()
    records = read_report_corpus(args.reports)
    structured = [
        structure_report(r.text, lexicon, r.report_id, r.patient_id, r.timestamp)
        for r in records
    ]
    write_structured_corpus(out / "structured.jsonl", structured)

    sessions = []
    if args.sessions:
        for line in Path(args.sessions).read_text(encoding="utf-8").splitlines():
            if line.strip():
                obj = json.loads(line)
                sessions.append(SessionRecord(
                    session_id=str(obj["session_id"]),
                    patient_id=str(obj["patient"]),
                    start_time=datetime.fromisoformat(obj["start_time"]),
                    path=obj.get("path", ""),
                    duration_seconds=float(obj.get("duration_seconds", 0.0)),
                ))
    pairs = match_report_to_sessions(
        records_to_reports(records), sessions,
        window_hours=cfg.match_window_hours,
        max_duration_seconds=cfg.max_session_seconds,
    ) if sessions else []
    kept = [p for p in pairs if p.kept]
    with open(out / "pairs.jsonl", "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(json.dumps({
                "report_id": p.report_id, "patient": p.patient_id,
                "session_ids": p.session_ids, "kept": p.kept,
            }) + "\n")
    if kept:
        split = patient_split(kept, cfg.split_ratios, seed=cfg.train.seed)
        for name in ("train", "val", "test"):
            (out / f"{name}.ids").write_text(
                "\n".join(split.of(name)) + "\n", encoding="utf-8"
            )
        print(f"{len(kept)} single-session pairs; splits "
              f"{len(split.train)}/{len(split.val)}/{len(split.test)}")
    print(f"structured {len(structured)} reports")
    write_manifest(out, {"reports": args.reports}, args.config, cfg.train.seed)
    return 0


def records_to_reports(records: list[ReportRecord]) -> list[ReportRecord]:
    return records


def cmd_synth(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    pairs = synth_corpus(cfg.synth, out, split_ratios=cfg.split_ratios)
    print(f"wrote {len(pairs)} pairs to {out}")
    write_manifest(out, {}, args.config, cfg.synth.seed)
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    seed = cfg.seeds[0]
    result = run_arm(args.variant, seed, cfg, args.corpus, out)
    write_results(out, [result])
    write_manifest(out, {"corpus": str(args.corpus)}, args.config, seed)
    print(f"{args.variant} seed {seed}: {result.status}, "
          f"val rouge1 {result.metrics.get('rouge1', float('nan')):.4f}")
    return 0


def cmd_generate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    pairs, tokens, splits = load_corpus(args.corpus)
    vocab, decoder = prepare_language(pairs, splits["train"], cfg, seed)
    projector = build_projector(cfg.projector_config(args.variant), seed=seed)
    model = ReportModel(ToyEncoder(), projector, PromptFusion(decoder.cfg.d_model, seed=seed),
                        decoder, vocab)
    model.load_trainable_state(checkpoint.load_arrays(args.checkpoint))
    samples = build_samples(pairs, tokens, splits[args.split], cfg.task)
    path = out / "generations.jsonl"
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            hyp = model.generate(s, max_tokens=cfg.max_generate_tokens)
            f.write(json.dumps({"id": s.sample_id, "prompt": s.prompt,
                                "generated": hyp, "reference": s.target}) + "\n")
    print(f"wrote {len(samples)} generations to {path}")
    write_manifest(out, {"corpus": str(args.corpus), "checkpoint": args.checkpoint},
                   args.config, seed)
    return 0


def cmd_score(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for line in Path(args.pairs).read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            hyp = obj.get("generated", obj.get("hypothesis", ""))
            row = {"id": obj["id"], "section": obj.get("section", "all")}
            row.update(score_pair(hyp, obj["reference"]))
            rows.append(row)
    if not rows:
        raise EegScribeError(f"no records in {args.pairs}")
    score = aggregate(rows)
    with open(out / "per_sample.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "section", *METRIC_NAMES])
        for row in rows:
            writer.writerow([row["id"], row["section"]]
                            + [f"{row[m]:.6f}" for m in METRIC_NAMES])
    with open(out / "aggregate.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["metric", "mean", "std"])
        for m in METRIC_NAMES:
            writer.writerow([m, f"{score.mean[m]:.6f}", f"{score.std[m]:.6f}"])
    print(f"scored {len(rows)} pairs")
    write_manifest(out, {"pairs": args.pairs}, args.config, cfg.train.seed)
    return 0


def cmd_ablate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    results = run_ablation(cfg, args.corpus, out, include_zeroed=args.zeroed_arm)
    write_manifest(out, {"corpus": str(args.corpus)}, args.config, cfg.seeds[0])
    for r in results:
        print(f"{r.variant} seed {r.seed}: {r.status} "
              f"rouge1={r.metrics.get('rouge1', float('nan')):.4f} "
              f"ppl={r.perplexity:.3f}")
    failed = [r for r in results if r.status != "ok"]
    return 0 if not failed else 1


if __name__ == "__main__":
    sys.exit(main())
