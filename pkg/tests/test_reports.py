from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from eegscribe.errors import ReportStructuringError
from eegscribe.reports import (
    CANONICAL_CATEGORIES, CONTEXT, FINDINGS, BenchmarkPair, Lexicon,
    ReportRecord, SessionRecord, detect_sections, extract_section,
    match_report_to_sessions, normalize_sections, patient_split,
    structure_report,
)

UTC = timezone.utc
LEX = Lexicon.default()

SAMPLE = """HISTORY: 54 year old with episodic confusion.
MEDICATIONS: keppra.
EEG DESCRIPTION: The background is well organized.
Posterior rhythm reaches 10 Hz.
IMPRESSION: Normal study.
"""


class TestDetect:
    def test_single_header(self):
        spans = detect_sections("IMPRESSION: Normal study.", LEX)
        assert len(spans) == 1
        assert spans[0].category_hint == "impressions"

    def test_spans_tile_to_next_header(self):
        text = "IMPRESSION: abc.\nBACKGROUND: def.\n"
        spans = detect_sections(text, LEX)
        assert len(spans) == 2
        assert spans[0].end_offset == spans[1].start_offset
        assert spans[1].end_offset == len(text)

    def test_no_headers_empty(self):
        assert detect_sections("just prose with no sections", LEX) == []

    def test_case_insensitive(self):
        spans = detect_sections("impression: ok", LEX)
        assert len(spans) == 1

    def test_longest_header_wins(self):
        spans = detect_sections("BACKGROUND ACTIVITY: slow.", LEX)
        assert spans[0].header_text == "BACKGROUND ACTIVITY"

    def test_full_document_coverage(self):
        spans = detect_sections(SAMPLE, LEX)
        # spans tile the document from the first header to the end
        assert spans[0].start_offset == 0
        for a, b in zip(spans, spans[1:]):
            assert a.end_offset == b.start_offset
        assert spans[-1].end_offset == len(SAMPLE)


class TestExtract:
    def test_verbatim_body(self):
        text = "IMPRESSION: Normal study."
        span = detect_sections(text, LEX)[0]
        assert extract_section(text, span) == "Normal study."

    def test_multiline_body_preserved(self):
        spans = detect_sections(SAMPLE, LEX)
        desc = next(s for s in spans if s.category_hint == "eeg_description")
        body = extract_section(SAMPLE, desc)
        assert body == "The background is well organized.\nPosterior rhythm reaches 10 Hz."

    def test_empty_body(self):
        text = "IMPRESSION:"
        span = detect_sections(text, LEX)[0]
        assert extract_section(text, span) == ""

    def test_out_of_bounds_span(self):
        text = "IMPRESSION: x"
        span = detect_sections(text, LEX)[0]
        span.end_offset = 999
        with pytest.raises(ReportStructuringError):
            extract_section(text, span)


class TestNormalize:
    def test_partitions(self):
        report = structure_report(SAMPLE, LEX, report_id="r1")
        assert report.partition["history"] == CONTEXT
        assert report.partition["impressions"] == FINDINGS

    def test_duplicate_categories_concatenate_in_order(self):
        text = "IMPRESSION: first.\nINTERPRETATION: second.\n"
        report = structure_report(text, LEX)
        assert report.sections["impressions"] == "first.\nsecond."

    def test_verbatim_guarantee(self):
        report = structure_report(SAMPLE, LEX)
        for body in report.sections.values():
            for piece in body.split("\n"):
                assert piece in SAMPLE

    def test_events_category(self):
        report = structure_report("EVENTS: none recorded.", LEX)
        assert report.partition == {"events_seizures": FINDINGS}

    def test_empty_sections_dropped(self):
        report = structure_report("IMPRESSION:\nBACKGROUND: slow.", LEX)
        assert "impressions" not in report.sections
        assert report.sections["background_activity"] == "slow."


class TestLexicon:
    def test_file_roundtrip(self, tmp_path):
        path = tmp_path / "lex.txt"
        LEX.write(path)
        loaded = Lexicon.from_file(path)
        assert loaded.rules == LEX.rules

    def test_unknown_category_rejected(self, tmp_path):
        path = tmp_path / "lex.txt"
        path.write_text("FOO -> nonsense | EegFindings\n")
        with pytest.raises(ReportStructuringError):
            Lexicon.from_file(path)

    def test_partition_mismatch_rejected(self, tmp_path):
        path = tmp_path / "lex.txt"
        path.write_text("HISTORY -> history | EegFindings\n")
        with pytest.raises(ReportStructuringError):
            Lexicon.from_file(path)

    def test_empty_lexicon_rejected(self):
        with pytest.raises(ReportStructuringError):
            Lexicon({})

    def test_every_default_rule_maps_to_known_category(self):
        for category in LEX.rules.values():
            assert category in CANONICAL_CATEGORIES


def _report(rid, patient, when):
    return ReportRecord(rid, patient, when, "IMPRESSION: ok")


def _session(sid, patient, when, duration=600.0):
    return SessionRecord(sid, patient, when, path=f"{sid}.edf",
                         duration_seconds=duration)


class TestMatching:
    T0 = datetime(2024, 5, 1, 12, 0, tzinfo=UTC)

    def test_session_before_report_matches(self):
        pairs = match_report_to_sessions(
            [_report("r", "p", self.T0)],
            [_session("s", "p", self.T0 - timedelta(hours=2))],
        )
        assert pairs[0].session_ids == ["s"] and pairs[0].kept

    def test_two_sessions_flagged(self):
        pairs = match_report_to_sessions(
            [_report("r", "p", self.T0)],
            [_session("s1", "p", self.T0 - timedelta(hours=2)),
             _session("s2", "p", self.T0 - timedelta(hours=4))],
        )
        assert len(pairs[0].session_ids) == 2 and not pairs[0].kept

    def test_session_after_report_excluded(self):
        pairs = match_report_to_sessions(
            [_report("r", "p", self.T0)],
            [_session("s", "p", self.T0 + timedelta(minutes=5))],
        )
        assert pairs[0].session_ids == []

    def test_window_boundary(self):
        pairs = match_report_to_sessions(
            [_report("r", "p", self.T0)],
            [_session("s", "p", self.T0 - timedelta(hours=25))],
            window_hours=24.0,
        )
        assert pairs[0].session_ids == []

    def test_other_patient_never_matches(self):
        pairs = match_report_to_sessions(
            [_report("r", "p1", self.T0)],
            [_session("s", "p2", self.T0 - timedelta(hours=1))],
        )
        assert pairs[0].session_ids == []

    def test_overlong_session_filtered(self):
        pairs = match_report_to_sessions(
            [_report("r", "p", self.T0)],
            [_session("s", "p", self.T0 - timedelta(hours=1), duration=20000.0)],
            max_duration_seconds=10000.0,
        )
        assert pairs[0].session_ids == []


def _pairs(n_patients, pairs_per_patient=1):
    out = []
    for p in range(n_patients):
        for k in range(pairs_per_patient):
            out.append(BenchmarkPair(f"r{p}_{k}", f"pt{p}", [f"s{p}_{k}"], [""]))
    return out


class TestSplit:
    def test_counts(self):
        split = patient_split(_pairs(10), seed=1)
        assert (len(split.train), len(split.val), len(split.test)) == (6, 2, 2)

    def test_multi_pair_patient_stays_together(self):
        pairs = _pairs(10)
        extra = [BenchmarkPair(f"rX_{k}", "pt0", [f"sX{k}"], [""]) for k in range(4)]
        split = patient_split(pairs + extra, seed=3)
        homes = {name for name in ("train", "val", "test")
                 for rid in split.of(name) if rid.startswith(("r0_", "rX_"))}
        found = [name for name in ("train", "val", "test")
                 if any(r.startswith(("r0_", "rX_")) for r in split.of(name))]
        assert len(found) == 1

    def test_determinism(self):
        a = patient_split(_pairs(20), seed=7)
        b = patient_split(_pairs(20), seed=7)
        assert (a.train, a.val, a.test) == (b.train, b.val, b.test)

    def test_zero_leakage_many_seeds(self):
        pairs = _pairs(17, pairs_per_patient=2)
        for seed in range(20):
            split = patient_split(pairs, seed=seed)
            groups = [
                {rid.split("_")[0] for rid in split.of(name)}
                for name in ("train", "val", "test")
            ]
            assert not (groups[0] & groups[1])
            assert not (groups[0] & groups[2])
            assert not (groups[1] & groups[2])

    def test_bad_ratios(self):
        with pytest.raises(ReportStructuringError):
            patient_split(_pairs(10), ratios=(0.5, 0.2, 0.2))

    def test_too_few_patients(self):
        with pytest.raises(ReportStructuringError):
            patient_split(_pairs(2), seed=0)
