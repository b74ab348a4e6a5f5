"""Clinical-report structuring: detect, extract, normalize.

Section headers are found by case-insensitive whole-line-prefix matching
against a configurable lexicon; bodies are copied verbatim (never
rewritten), then folded into canonical categories partitioned into
clinical-context vs EEG-findings groups. Also provides report-to-session
temporal matching and leakage-free patient-level splits.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .errors import ReportStructuringError

CONTEXT = "ClinicalContext"
FINDINGS = "EegFindings"

# canonical category -> partition
CANONICAL_CATEGORIES = {
    "history": CONTEXT,
    "indication": CONTEXT,
    "medications": CONTEXT,
    "eeg_description": FINDINGS,
    "impressions": FINDINGS,
    "background_activity": FINDINGS,
    "epileptiform_abnormalities": FINDINGS,
    "events_seizures": FINDINGS,
}

# header -> canonical category; uppercase-normalized at load time
DEFAULT_LEXICON_RULES = [
    ("HISTORY", "history"),
    ("CLINICAL HISTORY", "history"),
    ("PATIENT HISTORY", "history"),
    ("INDICATION", "indication"),
    ("REASON FOR STUDY", "indication"),
    ("MEDICATIONS", "medications"),
    ("CURRENT MEDICATIONS", "medications"),
    ("EEG DESCRIPTION", "eeg_description"),
    ("EEG DETAILS", "eeg_description"),
    ("DESCRIPTION OF THE RECORD", "eeg_description"),
    ("DESCRIPTION", "eeg_description"),
    ("IMPRESSION", "impressions"),
    ("IMPRESSIONS", "impressions"),
    ("INTERPRETATION", "impressions"),
    ("BACKGROUND ACTIVITY", "background_activity"),
    ("BACKGROUND", "background_activity"),
    ("EPILEPTIFORM ABNORMALITIES", "epileptiform_abnormalities"),
    ("INTERICTAL EPILEPTIFORM ABNORMALITIES", "epileptiform_abnormalities"),
    ("EPILEPTIFORM ACTIVITY", "epileptiform_abnormalities"),
    ("EVENTS", "events_seizures"),
    ("SEIZURES", "events_seizures"),
    ("EVENTS/SEIZURES", "events_seizures"),
]


@dataclass
class Lexicon:
    """Uppercase header -> canonical category, with the category partition map."""

    rules: dict[str, str]

    def __post_init__(self):
        if not self.rules:
            raise ReportStructuringError("lexicon is empty")
        for header, category in self.rules.items():
            if header != header.upper():
                raise ReportStructuringError(f"lexicon header not uppercase: {header!r}")
            if category not in CANONICAL_CATEGORIES:
                raise ReportStructuringError(
                    f"lexicon entry {header!r} maps to unknown category {category!r}"
                )

    @classmethod
    def default(cls) -> "Lexicon":
        return cls(dict(DEFAULT_LEXICON_RULES))

    @classmethod
    def from_file(cls, path) -> "Lexicon":
        """One rule per line: `HEADER -> category | partition`."""
        rules = {}
        for lineno, line in enumerate(open(path, encoding="utf-8"), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            m = re.match(r"^(.+?)\s*->\s*(\w+)\s*\|\s*(\w+)$", line)
            if not m:
                raise ReportStructuringError(f"{path}:{lineno}: bad lexicon rule {line!r}")
            header, category, partition = m.group(1).strip().upper(), m.group(2), m.group(3)
            if category not in CANONICAL_CATEGORIES:
                raise ReportStructuringError(
                    f"{path}:{lineno}: unknown category {category!r}"
                )
            if CANONICAL_CATEGORIES[category] != partition:
                raise ReportStructuringError(
                    f"{path}:{lineno}: category {category!r} belongs to "
                    f"{CANONICAL_CATEGORIES[category]}, not {partition!r}"
                )
            rules[header] = category
        return cls(rules)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for header, category in self.rules.items():
                f.write(f"{header} -> {category} | {CANONICAL_CATEGORIES[category]}\n")


@dataclass
class SectionSpan:
    header_text: str
    start_offset: int
    end_offset: int
    body_offset: int  # first byte after the header terminator
    category_hint: str


@dataclass
class StructuredReport:
    report_id: str
    patient_id: str
    timestamp: datetime | None
    sections: dict[str, str]
    partition: dict[str, str]

    def findings_text(self) -> str:
        return "\n".join(
            self.sections[c] for c in self.sections if self.partition[c] == FINDINGS
        )

    def context_text(self) -> str:
        return "\n".join(
            self.sections[c] for c in self.sections if self.partition[c] == CONTEXT
        )


def detect_sections(report: str, lexicon: Lexicon) -> list[SectionSpan]:
    """Whole-line-prefix header matches; each span runs to the next header."""
    headers = sorted(lexicon.rules, key=len, reverse=True)  # prefer longest match
    hits: list[tuple[int, str, int]] = []  # (line start, header, body offset)
    offset = 0
    for line in report.splitlines(keepends=True):
        stripped = line.lstrip()
        indent = len(line) - len(stripped)
        upper = stripped.upper()
        for header in headers:
            if not upper.startswith(header):
                continue
            rest = stripped[len(header):]
            m = re.match(r"^[ \t]*:", rest)
            if m is None:
                continue
            body_off = offset + indent + len(header) + m.end()
            hits.append((offset + indent, header, body_off))
            break
        offset += len(line)
    spans = []
    for i, (start, header, body_off) in enumerate(hits):
        end = hits[i + 1][0] if i + 1 < len(hits) else len(report)
        spans.append(SectionSpan(header, start, end, body_off, lexicon.rules[header]))
    return spans


def extract_section(report: str, span: SectionSpan) -> str:
    """Verbatim copy of the span body (whitespace-trimmed, never rewritten)."""
    if not (0 <= span.start_offset < span.end_offset <= len(report)):
        raise ReportStructuringError(
            f"span [{span.start_offset}, {span.end_offset}) out of bounds "
            f"for report of length {len(report)}"
        )
    return report[span.body_offset : span.end_offset].strip()


def normalize_sections(
    report: str,
    spans: list[SectionSpan],
    report_id: str = "",
    patient_id: str = "",
    timestamp: datetime | None = None,
    separator: str = "\n",
) -> StructuredReport:
    """Fold spans into canonical categories; duplicates concatenate in order."""
    sections: dict[str, str] = {}
    for span in sorted(spans, key=lambda s: s.start_offset):
        text = extract_section(report, span)
        if not text:
            continue
        cat = span.category_hint
        sections[cat] = sections[cat] + separator + text if cat in sections else text
    partition = {cat: CANONICAL_CATEGORIES[cat] for cat in sections}
    return StructuredReport(report_id, patient_id, timestamp, sections, partition)


def structure_report(
    report: str,
    lexicon: Lexicon | None = None,
    report_id: str = "",
    patient_id: str = "",
    timestamp: datetime | None = None,
) -> StructuredReport:
    lexicon = lexicon or Lexicon.default()
    return normalize_sections(
        report, detect_sections(report, lexicon), report_id, patient_id, timestamp
    )


# -- report/session pairing -----------------------------------------------------


@dataclass
class SessionRecord:
    session_id: str
    patient_id: str
    start_time: datetime
    path: str = ""
    duration_seconds: float = 0.0


@dataclass
class ReportRecord:
    report_id: str
    patient_id: str
    timestamp: datetime
    text: str


@dataclass
class BenchmarkPair:
    report_id: str
    patient_id: str
    session_ids: list[str]
    eeg_paths: list[str]
    split: str = ""

    @property
    def kept(self) -> bool:
        return len(self.session_ids) == 1


def match_report_to_sessions(
    reports: list[ReportRecord],
    sessions: list[SessionRecord],
    window_hours: float = 24.0,
    max_duration_seconds: float = 10000.0,
) -> list[BenchmarkPair]:
    """One-sided window match: session start in [report time - window, report time].

    Sessions longer than `max_duration_seconds` are ignored; pairs with any
    number of sessions other than one are flagged (kept == False) and
    excluded from modeling corpora downstream.
    """
    window = timedelta(hours=window_hours)
    by_patient: dict[str, list[SessionRecord]] = {}
    for s in sessions:
        if s.duration_seconds and s.duration_seconds > max_duration_seconds:
            continue
        by_patient.setdefault(s.patient_id, []).append(s)
    pairs = []
    for r in reports:
        matched = [
            s
            for s in by_patient.get(r.patient_id, [])
            if r.timestamp - window <= s.start_time <= r.timestamp
        ]
        matched.sort(key=lambda s: s.start_time)
        pairs.append(
            BenchmarkPair(
                report_id=r.report_id,
                patient_id=r.patient_id,
                session_ids=[s.session_id for s in matched],
                eeg_paths=[s.path for s in matched],
            )
        )
    return pairs


@dataclass
class Split:
    train: list[str]  # report ids
    val: list[str]
    test: list[str]
    patients: dict[str, str] = field(default_factory=dict)  # patient -> split name

    def of(self, name: str) -> list[str]:
        return {"train": self.train, "val": self.val, "test": self.test}[name]


def patient_split(
    pairs: list[BenchmarkPair],
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2),
    seed: int = 0,
) -> Split:
    """Shuffle patients (not pairs) and partition; pairs inherit the split."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ReportStructuringError(f"split ratios {ratios} do not sum to 1")
    patients = sorted({p.patient_id for p in pairs})
    if len(patients) < 3:
        raise ReportStructuringError(f"need >= 3 patients to split, got {len(patients)}")
    rng = np.random.default_rng(seed)
    order = [patients[i] for i in rng.permutation(len(patients))]
    n = len(order)
    n_val = int(round(ratios[1] * n))
    n_test = int(round(ratios[2] * n))
    n_train = n - n_val - n_test
    assignment = {}
    for i, patient in enumerate(order):
        if i < n_train:
            assignment[patient] = "train"
        elif i < n_train + n_val:
            assignment[patient] = "val"
        else:
            assignment[patient] = "test"
    split = Split([], [], [], assignment)
    for pair in pairs:
        pair.split = assignment[pair.patient_id]
        split.of(pair.split).append(pair.report_id)
    return split


# -- corpus files -----------------------------------------------------------------


def read_report_corpus(path) -> list[ReportRecord]:
    """Line-delimited records: {"id", "patient", "timestamp", "text"}."""
    records = []
    for lineno, line in enumerate(open(path, encoding="utf-8"), 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
            records.append(
                ReportRecord(
                    report_id=str(obj["id"]),
                    patient_id=str(obj["patient"]),
                    timestamp=datetime.fromisoformat(obj["timestamp"]),
                    text=str(obj["text"]),
                )
            )
        except (KeyError, ValueError) as exc:
            raise ReportStructuringError(f"{path}:{lineno}: bad report record: {exc}") from None
    return records


def write_structured_corpus(path, structured: list[StructuredReport]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for s in structured:
            f.write(
                json.dumps(
                    {
                        "id": s.report_id,
                        "patient": s.patient_id,
                        "timestamp": s.timestamp.isoformat() if s.timestamp else None,
                        "sections": s.sections,
                        "partition": s.partition,
                    }
                )
                + "\n"
            )
