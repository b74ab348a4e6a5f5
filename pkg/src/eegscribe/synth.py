"""Synthetic paired EEG/report corpora with constructible ground truth.

Each recording is pink noise plus a seeded draw of catalog events; an event
injects a sine burst at its band frequency into its channels over a
contiguous block of epochs, and contributes one fixed phrase to the paired
report (phrases appear in catalog order, so the target is a deterministic
function of the injected set). Clinical-context strings come from a
template pool and are independent of the events, so context alone cannot
solve the task.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, asdict
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .edf import EegRecording, read_edf, write_edf
from .eeg_tokens import ToyEncoder, tokenize_recording, save_token_store
from .errors import EegScribeError
from .signal import CANONICAL_CHANNELS, bandpass_notch, epoch, montage_map, resample


@dataclass
class SpectralEvent:
    name: str
    freq_hz: float
    channels: list[str]
    amplitude_uv: float
    probability: float
    phrase: str
    epoch_fraction: float = 0.4


DEFAULT_CATALOG = [
    SpectralEvent("diffuse_delta", 2.0, ["F3", "F4", "C3", "C4", "P3", "P4"], 60.0, 0.45,
                  "diffuse delta slowing is present"),
    SpectralEvent("focal_delta", 3.2, ["T3", "T5"], 70.0, 0.30,
                  "focal temporal delta is identified"),
    SpectralEvent("generalized_theta", 6.0,
                  ["Fp1", "Fp2", "F3", "F4", "C3", "C4", "P3", "P4", "O1", "O2"], 50.0, 0.40,
                  "generalized theta slowing is evident"),
    SpectralEvent("posterior_alpha", 10.0, ["O1", "O2"], 65.0, 0.60,
                  "posterior dominant alpha rhythm appears"),
    SpectralEvent("frontal_beta", 20.0, ["Fp1", "Fp2", "F3", "F4", "Fz"], 45.0, 0.45,
                  "excess frontal beta activity occurs"),
    SpectralEvent("central_gamma", 40.0, ["C3", "C4", "Cz"], 40.0, 0.30,
                  "low voltage gamma runs emerge centrally"),
    SpectralEvent("sleep_spindles", 14.0, ["C3", "C4"], 50.0, 0.40,
                  "sleep spindles indicate stage two sleep"),
]

NORMAL_PHRASE = "background within normal limits"

# phrase qualifier by the tercile of the event's block start; reports encode
# where in the recording an event occurred, not just that it occurred
TEMPORAL_QUALIFIERS = [
    "early in the recording",
    "midway through the recording",
    "late in the recording",
]

CONTEXT_TEMPLATES = [
    "patient referred for evaluation of episodic confusion",
    "follow up study after medication adjustment",
    "longstanding history of migraine headaches",
    "routine outpatient recording requested by neurology",
    "evaluation following a single unprovoked spell",
    "known seizure disorder on stable therapy",
]


@dataclass
class SyntheticSpec:
    n_pairs: int = 24
    epochs_min: int = 6
    epochs_max: int = 10
    events: list[SpectralEvent] = field(default_factory=lambda: list(DEFAULT_CATALOG))
    noise_uv: float = 15.0
    seed: int = 0
    sample_rate_hz: float = 200.0
    epoch_seconds: float = 10.0
    keep_edf: bool = False

    def __post_init__(self):
        if not self.events:
            raise EegScribeError("synthetic event catalog is empty")
        phrases = [e.phrase for e in self.events]
        if len(set(phrases)) != len(phrases):
            raise EegScribeError("catalog phrases must be unique")
        unknown = {c for e in self.events for c in e.channels} - set(CANONICAL_CHANNELS)
        if unknown:
            raise EegScribeError(f"catalog channels outside montage: {sorted(unknown)}")


@dataclass
class SynthPair:
    pair_id: str
    patient_id: str
    session_id: str
    timestamp: str
    n_epochs: int
    events: list[str]          # "name@tercile" entries in catalog order
    report: str
    context: str


def _pink_noise(rng: np.random.Generator, n_channels: int, n_samples: int,
                rate: float, rms: float) -> np.ndarray:
    white = rng.normal(0.0, 1.0, (n_channels, n_samples))
    spec = np.fft.rfft(white, axis=1)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / rate)
    shape = 1.0 / np.sqrt(np.maximum(freqs, 0.5))
    shaped = np.fft.irfft(spec * shape, n=n_samples, axis=1)
    scale = rms / np.sqrt((shaped**2).mean(axis=1, keepdims=True))
    return shaped * scale


def tercile_of(start_epoch: int, span: int, n_epochs: int) -> int:
    """Which third of the recording the event block is centered in."""
    center = start_epoch + span / 2.0
    return min(2, int(3 * center / n_epochs))


def synth_recording(
    spec: SyntheticSpec, rng: np.random.Generator
) -> tuple[EegRecording, list[tuple[SpectralEvent, int]], int]:
    """One recording: pink-noise base plus per-event sine bursts.

    Returns the recording, the injected (event, tercile) list, and the epoch
    count. Event placement is uniform, so reports carry genuine temporal
    information that only sequence-aware alignment can read off directly.
    """
    n_epochs = int(rng.integers(spec.epochs_min, spec.epochs_max + 1))
    t_epoch = int(round(spec.epoch_seconds * spec.sample_rate_hz))
    n_samples = n_epochs * t_epoch
    data = _pink_noise(rng, len(CANONICAL_CHANNELS), n_samples, spec.sample_rate_hz, spec.noise_uv)
    index = {ch: i for i, ch in enumerate(CANONICAL_CHANNELS)}
    t = np.arange(n_samples) / spec.sample_rate_hz

    chosen: list[tuple[SpectralEvent, int]] = []
    for event in spec.events:
        if rng.random() >= event.probability:
            continue
        span = max(1, int(round(event.epoch_fraction * n_epochs)))
        start_epoch = int(rng.integers(0, n_epochs - span + 1))
        chosen.append((event, tercile_of(start_epoch, span, n_epochs)))
        lo = start_epoch * t_epoch
        hi = (start_epoch + span) * t_epoch
        for ch in event.channels:
            phase = rng.uniform(0, 2 * np.pi)
            data[index[ch], lo:hi] += event.amplitude_uv * np.sin(
                2 * np.pi * event.freq_hz * t[lo:hi] + phase
            )
    return (
        EegRecording(
            channels=list(CANONICAL_CHANNELS),
            sample_rate_hz=spec.sample_rate_hz,
            samples=data,
            start_time=datetime(2024, 1, 1, tzinfo=timezone.utc),
            patient_id="",
            session_id="",
        ),
        chosen,
        n_epochs,
    )


def report_for(events: list[tuple[SpectralEvent, int]],
               catalog: list[SpectralEvent]) -> str:
    by_name = {e.name: tc for e, tc in events}
    phrases = [
        f"{e.phrase} {TEMPORAL_QUALIFIERS[by_name[e.name]]}"
        for e in catalog
        if e.name in by_name
    ]
    if not phrases:
        phrases = [NORMAL_PHRASE]
    return ". ".join(phrases) + "."


def synth_corpus(spec: SyntheticSpec, out_dir, encoder: ToyEncoder | None = None,
                 split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)) -> list[SynthPair]:
    """Generate the paired corpus; writes corpus.jsonl, tokens.bin, splits.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    encoder = encoder or ToyEncoder(sample_rate_hz=spec.sample_rate_hz)
    rng = np.random.default_rng(spec.seed)
    base_time = datetime(2024, 1, 1, 8, 0, 0, tzinfo=timezone.utc)

    pairs: list[SynthPair] = []
    sequences = {}
    edf_dir = out_dir / "edf"
    if spec.keep_edf:
        edf_dir.mkdir(exist_ok=True)
    for i in range(spec.n_pairs):
        rec, chosen, n_epochs = synth_recording(spec, rng)
        pair_id = f"pair{i:04d}"
        rec.patient_id = f"pt{i:04d}"
        rec.session_id = f"ses{i:04d}"
        rec.start_time = base_time + timedelta(hours=6 * i)

        blob = write_edf(rec)
        if spec.keep_edf:
            (edf_dir / f"{pair_id}.edf").write_bytes(blob)
        loaded = read_edf(blob)
        processed = epoch(
            montage_map(resample(bandpass_notch(loaded), spec.sample_rate_hz)),
            spec.epoch_seconds,
        )
        seq = tokenize_recording(processed, encoder)
        sequences[pair_id] = seq

        pairs.append(
            SynthPair(
                pair_id=pair_id,
                patient_id=rec.patient_id,
                session_id=rec.session_id,
                timestamp=rec.start_time.isoformat(),
                n_epochs=n_epochs,
                events=[f"{e.name}@{tc}" for e, tc in chosen],
                report=report_for(chosen, spec.events),
                context=str(rng.choice(CONTEXT_TEMPLATES)),
            )
        )

    with open(out_dir / "corpus.jsonl", "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(json.dumps(asdict(p)) + "\n")
    save_token_store(out_dir / "tokens.bin", sequences)

    split = _assign_splits(pairs, split_ratios, spec.seed)
    (out_dir / "splits.json").write_text(json.dumps(split, indent=1) + "\n", encoding="utf-8")
    return pairs


def _assign_splits(pairs: list[SynthPair], ratios, seed: int) -> dict[str, list[str]]:
    from .reports import BenchmarkPair, patient_split

    bench = [
        BenchmarkPair(p.pair_id, p.patient_id, [p.session_id], [""]) for p in pairs
    ]
    split = patient_split(bench, tuple(ratios), seed=seed)
    return {"train": split.train, "val": split.val, "test": split.test}


def load_corpus(corpus_dir) -> tuple[list[SynthPair], dict, dict[str, list[str]]]:
    """Read back corpus.jsonl, the token store, and the split manifest."""
    from .eeg_tokens import load_token_store

    corpus_dir = Path(corpus_dir)
    pairs = []
    for line in (corpus_dir / "corpus.jsonl").read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            pairs.append(SynthPair(**obj))
    tokens = load_token_store(corpus_dir / "tokens.bin")
    splits = json.loads((corpus_dir / "splits.json").read_text(encoding="utf-8"))
    return pairs, tokens, splits
