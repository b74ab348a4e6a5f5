"""Epoch-aggregated tokenization of epoched recordings.

Each 1-second single-channel mini-window is embedded by a frozen encoder,
then the per-epoch grid of (channel x window) embeddings is pooled into one
token per epoch. The bundled ToyEncoder stands in for a pretrained model:
five band powers (dB above the floor, so silence maps to exactly zero)
pushed through a fixed seeded linear map with tanh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .errors import EegScribeError, ShapeError
from .signal import DEFAULT_BANDS, POWER_FLOOR, EpochedRecording


class EncoderInterface:
    """Deterministic per-window embedding; output width is constant."""

    window_seconds: float = 1.0
    width: int = 200
    has_summary_slot: bool = False

    def encode(self, window: np.ndarray) -> np.ndarray:
        """window: (channels', samples) floats -> (width,) embedding."""
        raise NotImplementedError

    def encode_batch(self, windows: np.ndarray) -> np.ndarray:
        """windows: (M, samples) single-channel rows -> (M, width)."""
        return np.stack([self.encode(w[None, :]) for w in windows])

    def parameters(self) -> dict[str, np.ndarray]:
        return {}


class ToyEncoder(EncoderInterface):
    """Frozen spectral projection: 5 band powers -> width, tanh, plus bias.

    Band powers are taken in dB above the power floor and centered across
    the five bands, so a silent window yields an exactly-zero feature vector
    and broadband level shifts cancel; only band shape carries through.
    """

    FEATURE_SCALE = 0.2  # keeps centered dB features inside tanh's linear range

    def __init__(self, width: int = 200, sample_rate_hz: float = 200.0, seed: int = 1234,
                 floor: float = POWER_FLOOR):
        self.width = width
        self.window_seconds = 1.0
        self.sample_rate_hz = sample_rate_hz
        self.floor = floor
        self.bands = [(lo, hi) for _, lo, hi in DEFAULT_BANDS]
        rng = np.random.default_rng(seed)
        n_feats = len(self.bands)
        self.weight = rng.normal(0.0, 1.0 / np.sqrt(n_feats), (n_feats, width))
        self.bias = rng.normal(0.0, 0.02, (width,))
        t = int(round(self.window_seconds * sample_rate_hz))
        self._hann = np.hanning(t)
        self._freqs = np.fft.rfftfreq(t, d=1.0 / sample_rate_hz)

    def band_features(self, rows: np.ndarray) -> np.ndarray:
        """(M, T) single-channel windows -> (M, 5) centered band-shape features."""
        t = rows.shape[-1]
        if t != self._hann.size:
            raise ShapeError("toy_encoder", rows.shape, (None, self._hann.size))
        spec = np.fft.rfft(rows * self._hann, axis=-1)
        scale = 1.0 / (self.sample_rate_hz * np.sum(self._hann**2))
        psd = (np.abs(spec) ** 2) * scale
        psd[..., 1:-1] *= 2.0
        df = self._freqs[1] - self._freqs[0]
        nyq = self.sample_rate_hz / 2.0
        feats = np.empty(rows.shape[:-1] + (len(self.bands),))
        for i, (lo, hi) in enumerate(self.bands):
            sel = (self._freqs >= lo) & (self._freqs < min(hi, nyq) + 1e-12)
            power = psd[..., sel].sum(axis=-1) * df
            feats[..., i] = 10.0 * np.log10(np.maximum(power, self.floor) / self.floor)
        centered = feats - feats.mean(axis=-1, keepdims=True)
        return centered * self.FEATURE_SCALE

    def encode(self, window: np.ndarray) -> np.ndarray:
        window = np.asarray(window, dtype=np.float64)
        if window.ndim != 2 or window.shape[0] != 1:
            raise ShapeError("toy_encoder", window.shape, (1, self._hann.size))
        return self.encode_batch(window)[0]

    def encode_batch(self, windows: np.ndarray) -> np.ndarray:
        feats = self.band_features(np.asarray(windows, dtype=np.float64))
        return np.tanh(feats @ self.weight) + self.bias

    def parameters(self) -> dict[str, np.ndarray]:
        return {"toy_encoder.weight": self.weight, "toy_encoder.bias": self.bias}


@dataclass
class EpochTokenSequence:
    tokens: np.ndarray  # (N, width)
    session_boundaries: list[int]
    patient_id: str = ""
    session_id: str = ""
    meta: dict = field(default_factory=dict)


def encode_mini_windows(ep: EpochedRecording, enc: EncoderInterface) -> np.ndarray:
    """All (epoch, channel, window) mini tokens, shape (N, C, W, width)."""
    n, c, t = ep.epochs.shape
    t_win = enc.window_seconds * ep.sample_rate_hz
    if abs(t_win - round(t_win)) > 1e-9:
        raise EegScribeError(
            f"window of {enc.window_seconds}s at {ep.sample_rate_hz}Hz is not integral"
        )
    t_win = int(round(t_win))
    if t % t_win != 0:
        raise EegScribeError(f"epoch length {t} not divisible by window {t_win}")
    w = t // t_win
    rows = ep.epochs.reshape(n, c, w, t_win).reshape(-1, t_win)
    encoded = enc.encode_batch(rows)
    if encoded.shape != (rows.shape[0], enc.width):
        raise ShapeError("encode_mini_windows", encoded.shape, (rows.shape[0], enc.width))
    return np.ascontiguousarray(encoded.reshape(n, c, w, enc.width))


def aggregate_epoch_tokens(
    mini: np.ndarray,
    strategy: str = "mean",
    encoder: EncoderInterface | None = None,
) -> np.ndarray:
    """Pool (N, C, W, D) mini tokens into (N, D) epoch tokens."""
    mini = np.asarray(mini, dtype=np.float64)
    if mini.ndim != 4:
        raise ShapeError("aggregate_epoch_tokens", mini.shape, "(N, C, W, D)")
    if strategy == "mean":
        return mini.mean(axis=(1, 2))
    if strategy == "cls":
        if encoder is None or not encoder.has_summary_slot:
            raise EegScribeError("cls aggregation needs an encoder with a summary slot")
        return mini[:, 0, 0, :]
    raise EegScribeError(f"unknown aggregation strategy {strategy!r}")


def tokenize_recording(ep: EpochedRecording, enc: EncoderInterface,
                       strategy: str = "mean") -> EpochTokenSequence:
    mini = encode_mini_windows(ep, enc)
    tokens = aggregate_epoch_tokens(mini, strategy, enc)
    return EpochTokenSequence(
        tokens=tokens,
        session_boundaries=[0],
        patient_id=ep.patient_id,
        session_id=ep.session_id,
        meta={
            "epoch_seconds": ep.epoch_seconds,
            "sample_rate_hz": ep.sample_rate_hz,
            "n_epochs": ep.n_epochs,
        },
    )


def save_token_store(path, sequences: dict[str, EpochTokenSequence]) -> None:
    """Token store: one array per pair id, plus a sidecar listing ids."""
    arrays = {pid: seq.tokens for pid, seq in sequences.items()}
    checkpoint.save_arrays(path, arrays)
    meta = {"ids": list(sequences)}
    for pid, seq in sequences.items():
        meta[f"patient.{pid}"] = seq.patient_id
        meta[f"session.{pid}"] = seq.session_id
    checkpoint.write_metadata(str(path) + ".meta", meta)


def load_token_store(path) -> dict[str, EpochTokenSequence]:
    arrays = checkpoint.load_arrays(path)
    meta = checkpoint.read_metadata(str(path) + ".meta")
    out = {}
    for pid, tokens in arrays.items():
        out[pid] = EpochTokenSequence(
            tokens=tokens,
            session_boundaries=[0],
            patient_id=meta.get(f"patient.{pid}", ""),
            session_id=meta.get(f"session.{pid}", ""),
        )
    return out
