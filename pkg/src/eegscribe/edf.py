"""Classic EDF reading and writing (continuous records, 16-bit samples).

The reader maps digital values to physical units through the per-signal
linear calibration and rejects malformed containers with distinct error
types. EDF+ annotation channels are not parsed; they are skipped and
flagged on the returned recording.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import EdfError, RecordSizeMismatchError, TruncatedHeaderError, ZeroDigitalRangeError

HEADER_BYTES = 256
SIGNAL_HEADER_BYTES = 256
ANNOTATION_LABEL = "EDF Annotations"


@dataclass
class EegRecording:
    """Multichannel time series in microvolts, channel-major."""

    channels: list[str]
    sample_rate_hz: float
    samples: np.ndarray  # (C, T) float64
    start_time: datetime
    patient_id: str = ""
    session_id: str = ""
    flags: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise EdfError(f"samples must be (channels, time), got shape {self.samples.shape}")
        if self.samples.shape[0] != len(self.channels):
            raise EdfError(
                f"{len(self.channels)} labels for {self.samples.shape[0]} sample rows"
            )
        if self.sample_rate_hz <= 0:
            raise EdfError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if len(set(self.channels)) != len(self.channels):
            raise EdfError("duplicate channel labels")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_seconds(self) -> float:
        return self.n_samples / self.sample_rate_hz


def _field(raw: bytes, start: int, length: int) -> str:
    return raw[start : start + length].decode("ascii", errors="replace").strip()


def read_edf(data: bytes) -> EegRecording:
    """Parse a classic EDF byte stream into an EegRecording."""
    if len(data) < HEADER_BYTES:
        raise TruncatedHeaderError(f"need {HEADER_BYTES} header bytes, got {len(data)}")
    patient_field = _field(data, 8, 80)
    recording_field = _field(data, 88, 80)
    startdate = _field(data, 168, 8)
    starttime = _field(data, 176, 8)
    try:
        n_records = int(_field(data, 236, 8))
        record_seconds = float(_field(data, 244, 8))
        n_signals = int(_field(data, 252, 4))
    except ValueError as exc:
        raise TruncatedHeaderError(f"unparseable header counts: {exc}") from None

    start_time = _parse_start(startdate, starttime)
    patient_id = patient_field.split()[0] if patient_field else ""
    session_id = recording_field.split()[0] if recording_field else ""

    if n_signals == 0:
        return EegRecording([], 1.0, np.zeros((0, 0)), start_time, patient_id, session_id)

    sig_header_end = HEADER_BYTES + n_signals * SIGNAL_HEADER_BYTES
    if len(data) < sig_header_end:
        raise TruncatedHeaderError(
            f"need {sig_header_end} bytes for {n_signals} signal headers, got {len(data)}"
        )

    # offsets within the signal header block, in field order:
    # label 16, transducer 80, dimension 8, phys_min 8, phys_max 8,
    # dig_min 8, dig_max 8, prefilter 80, samples_per_record 8, reserved 32
    base = HEADER_BYTES

    def col(idx: int, width: int, start: int) -> str:
        return _field(data, base + start * n_signals + idx * width, width)

    offsets = {"label": 0, "transducer": 16, "dimension": 96, "phys_min": 104,
               "phys_max": 112, "dig_min": 120, "dig_max": 128, "prefilter": 136,
               "spr": 216, "reserved": 224}
    labels = [col(i, 16, offsets["label"]) for i in range(n_signals)]
    phys_min = [float(col(i, 8, offsets["phys_min"])) for i in range(n_signals)]
    phys_max = [float(col(i, 8, offsets["phys_max"])) for i in range(n_signals)]
    dig_min = [int(col(i, 8, offsets["dig_min"])) for i in range(n_signals)]
    dig_max = [int(col(i, 8, offsets["dig_max"])) for i in range(n_signals)]
    spr = [int(col(i, 8, offsets["spr"])) for i in range(n_signals)]

    record_words = sum(spr)
    payload = data[sig_header_end:]
    expected = n_records * record_words * 2
    if expected != len(payload):
        raise RecordSizeMismatchError(
            f"{n_records} records x {record_words * 2} bytes = {expected}, "
            f"but {len(payload)} bytes remain"
        )

    flags = []
    keep = []
    for i, label in enumerate(labels):
        if label == ANNOTATION_LABEL:
            flags.append("edfplus_annotations_skipped")
            continue
        if dig_max[i] == dig_min[i]:
            raise ZeroDigitalRangeError(f"signal {i} ({label!r}) has zero digital range")
        keep.append(i)

    raw = np.frombuffer(payload, dtype="<i2").reshape(n_records, record_words)
    bounds = np.cumsum([0] + spr)
    channels, rows = [], []
    for i in keep:
        gain = (phys_max[i] - phys_min[i]) / (dig_max[i] - dig_min[i])
        offset = phys_min[i] - gain * dig_min[i]
        digital = raw[:, bounds[i] : bounds[i + 1]].reshape(-1).astype(np.float64)
        rows.append(digital * gain + offset)
        channels.append(labels[i])

    if keep:
        rates = {spr[i] / record_seconds for i in keep}
        if len(rates) != 1:
            raise EdfError(f"mixed sampling rates across signals: {sorted(rates)}")
        rate = rates.pop()
        samples = np.stack(rows)
    else:
        rate, samples = 1.0, np.zeros((0, 0))

    rec = EegRecording(channels, rate, samples, start_time, patient_id, session_id)
    rec.flags.extend(flags)
    return rec


def _parse_start(startdate: str, starttime: str) -> datetime:
    try:
        dd, mm, yy = (int(x) for x in startdate.split("."))
        hh, mi, ss = (int(x) for x in starttime.split("."))
        year = 1900 + yy if yy >= 85 else 2000 + yy
        return datetime(year, mm, dd, hh, mi, ss, tzinfo=timezone.utc)
    except (ValueError, TypeError):
        return datetime(1985, 1, 1, tzinfo=timezone.utc)


def write_edf(rec: EegRecording, record_seconds: float = 1.0) -> bytes:
    """Serialize a recording as classic EDF; trailing partial record dropped."""
    spr = rec.sample_rate_hz * record_seconds
    if abs(spr - round(spr)) > 1e-9:
        raise EdfError(
            f"record length {record_seconds}s at {rec.sample_rate_hz}Hz gives "
            f"non-integer samples per record"
        )
    spr = int(round(spr))
    n_channels = len(rec.channels)
    n_records = rec.n_samples // spr if n_channels else 0

    def pad(text: str, width: int) -> bytes:
        b = text.encode("ascii", errors="replace")[:width]
        return b + b" " * (width - len(b))

    start = rec.start_time
    header = b"".join([
        pad("0", 8),
        pad(rec.patient_id or "X", 80),
        pad(rec.session_id or "X", 80),
        pad(f"{start.day:02d}.{start.month:02d}.{start.year % 100:02d}", 8),
        pad(f"{start.hour:02d}.{start.minute:02d}.{start.second:02d}", 8),
        pad(str(HEADER_BYTES + SIGNAL_HEADER_BYTES * n_channels), 8),
        pad("", 44),
        pad(str(n_records), 8),
        pad(_num8(record_seconds), 8),
        pad(str(n_channels), 4),
    ])

    dig_min, dig_max = -32768, 32767
    phys_ranges = []
    for c in range(n_channels):
        peak = float(np.abs(rec.samples[c, : n_records * spr]).max()) if n_records else 0.0
        limit = max(1.0, float(np.ceil(peak)))
        phys_ranges.append((-limit, limit))

    cols = {
        "label": (16, [ch for ch in rec.channels]),
        "transducer": (80, ["" for _ in range(n_channels)]),
        "dimension": (8, ["uV" for _ in range(n_channels)]),
        "phys_min": (8, [_num8(lo) for lo, _ in phys_ranges]),
        "phys_max": (8, [_num8(hi) for _, hi in phys_ranges]),
        "dig_min": (8, [str(dig_min)] * n_channels),
        "dig_max": (8, [str(dig_max)] * n_channels),
        "prefilter": (80, ["" for _ in range(n_channels)]),
        "spr": (8, [str(spr)] * n_channels),
        "reserved": (32, ["" for _ in range(n_channels)]),
    }
    sig_header = b"".join(
        b"".join(pad(v, width) for v in values) for width, values in cols.values()
    )

    records = np.zeros((n_records, n_channels * spr), dtype="<i2")
    for c in range(n_channels):
        lo, hi = phys_ranges[c]
        gain = (hi - lo) / (dig_max - dig_min)
        x = rec.samples[c, : n_records * spr]
        digital = np.clip(np.round((x - lo) / gain + dig_min), dig_min, dig_max)
        records[:, c * spr : (c + 1) * spr] = digital.reshape(n_records, spr).astype("<i2")

    return header + sig_header + records.tobytes()


def _num8(value: float) -> str:
    """Format a number to fit an 8-char EDF field."""
    if float(value).is_integer():
        return str(int(value))
    s = f"{value:.6g}"
    return s[:8]
