import json
from dataclasses import replace

import numpy as np
import pytest

from eegscribe.errors import EegScribeError
from eegscribe.signal import epoch, welch_band_power
from eegscribe.synth import (
    DEFAULT_CATALOG, NORMAL_PHRASE, TEMPORAL_QUALIFIERS, SpectralEvent,
    SyntheticSpec, load_corpus, report_for, synth_corpus, synth_recording,
    tercile_of,
)


def _spec(**kw):
    defaults = dict(n_pairs=4, epochs_min=5, epochs_max=7, seed=3, noise_uv=12.0)
    defaults.update(kw)
    return SyntheticSpec(**defaults)


class TestSpecValidation:
    def test_empty_catalog_rejected(self):
        with pytest.raises(EegScribeError):
            _spec(events=[])

    def test_duplicate_phrases_rejected(self):
        ev = DEFAULT_CATALOG[0]
        with pytest.raises(EegScribeError):
            _spec(events=[ev, replace(ev, name="other")])

    def test_unknown_channel_rejected(self):
        bad = replace(DEFAULT_CATALOG[0], channels=["XX9"])
        with pytest.raises(EegScribeError):
            _spec(events=[bad])


class TestReportText:
    def test_catalog_order_is_canonical(self):
        chosen = [(DEFAULT_CATALOG[3], 0), (DEFAULT_CATALOG[0], 2)]
        text = report_for(chosen, DEFAULT_CATALOG)
        first = text.index(DEFAULT_CATALOG[0].phrase)
        second = text.index(DEFAULT_CATALOG[3].phrase)
        assert first < second  # catalog order, not injection order

    def test_empty_event_set_normal_phrase(self):
        assert report_for([], DEFAULT_CATALOG) == NORMAL_PHRASE + "."

    def test_temporal_qualifier_attached(self):
        text = report_for([(DEFAULT_CATALOG[0], 1)], DEFAULT_CATALOG)
        assert TEMPORAL_QUALIFIERS[1] in text

    def test_tercile_of(self):
        assert tercile_of(0, 2, 30) == 0
        assert tercile_of(14, 2, 30) == 1
        assert tercile_of(27, 3, 30) == 2


class TestRecording:
    def test_deterministic_given_rng_state(self):
        a, ea, na = synth_recording(_spec(), np.random.default_rng(42))
        b, eb, nb = synth_recording(_spec(), np.random.default_rng(42))
        assert a.samples.tobytes() == b.samples.tobytes()
        assert [(e.name, t) for e, t in ea] == [(e.name, t) for e, t in eb]

    def test_epoch_count_in_range(self):
        rng = np.random.default_rng(0)
        for _ in range(8):
            _, _, n = synth_recording(_spec(), rng)
            assert 5 <= n <= 7

    def test_injected_alpha_raises_band_power(self):
        # single always-on alpha event over a long block; oracle is the
        # welch band power on event epochs vs quiet epochs
        alpha = replace(DEFAULT_CATALOG[3], probability=1.0, epoch_fraction=0.5)
        spec = _spec(events=[alpha], epochs_min=10, epochs_max=10, seed=9)
        rng = np.random.default_rng(5)
        rec, chosen, n = synth_recording(spec, rng)
        assert len(chosen) == 1
        ep = epoch(rec, 10.0)
        bp = welch_band_power(ep)
        o1 = rec.channels.index("O1")
        alpha_db = bp.values[:, o1, 2]
        hot = alpha_db.max()
        cold = alpha_db.min()
        assert hot - cold >= 6.0  # dB over baseline epochs


class TestCorpus:
    def test_fixed_seed_reproduces_bytes(self, tmp_path):
        for name in ("a", "b"):
            synth_corpus(_spec(), tmp_path / name)
        a = (tmp_path / "a" / "corpus.jsonl").read_bytes()
        b = (tmp_path / "b" / "corpus.jsonl").read_bytes()
        assert a == b
        ta = (tmp_path / "a" / "tokens.bin").read_bytes()
        tb = (tmp_path / "b" / "tokens.bin").read_bytes()
        assert ta == tb

    def test_degenerate_catalog_single_phrase(self, tmp_path):
        only = replace(DEFAULT_CATALOG[3], probability=1.0)
        pairs = synth_corpus(_spec(events=[only], n_pairs=5), tmp_path / "one")
        for p in pairs:
            assert p.report.startswith(only.phrase)

    def test_roundtrip_and_splits(self, tmp_path):
        spec = _spec(n_pairs=10)
        written = synth_corpus(spec, tmp_path / "c")
        pairs, tokens, splits = load_corpus(tmp_path / "c")
        assert len(pairs) == 10
        assert sorted(len(v) for v in splits.values()) == [2, 2, 6]
        for p in pairs:
            assert p.pair_id in tokens
            assert tokens[p.pair_id].tokens.shape[0] == p.n_epochs

    def test_context_uncorrelated_with_events(self, tmp_path):
        # contexts come from a fixed template pool independent of the draw
        pairs = synth_corpus(_spec(n_pairs=12, seed=1), tmp_path / "ctx")
        from eegscribe.synth import CONTEXT_TEMPLATES
        assert all(p.context in CONTEXT_TEMPLATES for p in pairs)

    def test_keep_edf_writes_files(self, tmp_path):
        spec = _spec(n_pairs=4, keep_edf=True)
        synth_corpus(spec, tmp_path / "edf")
        files = list((tmp_path / "edf" / "edf").glob("*.edf"))
        assert len(files) == 4
