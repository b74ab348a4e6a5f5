"""Text-generation metrics: smoothed BLEU, the ROUGE family, METEOR-lite.

All metrics share the model's word-level tokenizer so scores are internally
consistent. METEOR-lite replaces the synonym stage of full METEOR with a
suffix stemmer (strip ing/ed/es/s); trend-comparable, not absolute-value
comparable, with implementations using synonym resources.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .text import tokenize

BLEU_EPSILON = 0.1  # add-epsilon smoothing on zero n-gram counts


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hyp: str, ref: str, max_n: int = 1, epsilon: float = BLEU_EPSILON) -> float:
    """Geometric mean of smoothed modified n-gram precisions x brevity penalty."""
    h, r = tokenize(hyp), tokenize(ref)
    if not h:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        h_counts = _ngrams(h, n)
        r_counts = _ngrams(r, n)
        total = max(sum(h_counts.values()), 1)
        clipped = sum(min(c, r_counts[g]) for g, c in h_counts.items())
        p = clipped / total if clipped > 0 else epsilon / total
        log_sum += math.log(p)
    precision = math.exp(log_sum / max_n)
    bp = 1.0 if len(h) >= len(r) else math.exp(1.0 - len(r) / len(h))
    return precision * bp


def rouge_n(hyp: str, ref: str, n: int = 1) -> tuple[float, float, float]:
    """Clipped n-gram overlap precision/recall/F1."""
    h_counts = _ngrams(tokenize(hyp), n)
    r_counts = _ngrams(tokenize(ref), n)
    overlap = sum(min(c, r_counts[g]) for g, c in h_counts.items())
    return _prf(overlap, sum(h_counts.values()), sum(r_counts.values()))


def _prf(hits: float, hyp_total: int, ref_total: int) -> tuple[float, float, float]:
    p = hits / hyp_total if hyp_total else 0.0
    r = hits / ref_total if ref_total else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def _lcs_table(a: list[str], b: list[str]) -> np.ndarray:
    la, lb = len(a), len(b)
    dp = np.zeros((la + 1, lb + 1), dtype=np.int64)
    for i in range(1, la + 1):
        for j in range(1, lb + 1):
            if a[i - 1] == b[j - 1]:
                dp[i, j] = dp[i - 1, j - 1] + 1
            else:
                dp[i, j] = max(dp[i - 1, j], dp[i, j - 1])
    return dp


def _lcs_length(a: list[str], b: list[str]) -> int:
    return int(_lcs_table(a, b)[-1, -1])


def _lcs_positions(a: list[str], b: list[str]) -> list[int]:
    """Indices into `a` of one longest common subsequence with `b`."""
    dp = _lcs_table(a, b)
    i, j = len(a), len(b)
    picked = []
    while i > 0 and j > 0:
        if a[i - 1] == b[j - 1] and dp[i, j] == dp[i - 1, j - 1] + 1:
            picked.append(i - 1)
            i, j = i - 1, j - 1
        elif dp[i - 1, j] >= dp[i, j - 1]:
            i -= 1
        else:
            j -= 1
    return picked[::-1]


def rouge_l(hyp: str, ref: str) -> tuple[float, float, float]:
    h, r = tokenize(hyp), tokenize(ref)
    return _prf(_lcs_length(h, r), len(h), len(r))


def _sentences(text: str) -> list[list[str]]:
    parts = []
    for raw in text.replace("\n", ".").split("."):
        toks = tokenize(raw)
        if toks:
            parts.append(toks)
    return parts or [[]]


def rouge_lsum(hyp: str, ref: str) -> tuple[float, float, float]:
    """Union-LCS per reference sentence, summed (sentence split on ./newline)."""
    h_sents = _sentences(hyp)
    r_sents = _sentences(ref)
    h_all = [t for s in h_sents for t in s]
    r_all = [t for s in r_sents for t in s]
    hits = 0
    budget = Counter(h_all)  # clip repeated matches against hypothesis tokens
    for r_sent in r_sents:
        matched: set[int] = set()  # reference positions hit by any hyp sentence
        for h_sent in h_sents:
            matched.update(_lcs_positions(r_sent, h_sent))
        for idx in sorted(matched):
            tok = r_sent[idx]
            if budget[tok] > 0:
                budget[tok] -= 1
                hits += 1
    return _prf(hits, len(h_all), len(r_all))


_SUFFIXES = ("ing", "ed", "es", "s")


def _stem(word: str) -> str:
    for suffix in _SUFFIXES:
        if word.endswith(suffix) and len(word) - len(suffix) >= 2:
            return word[: -len(suffix)]
    return word


def meteor_lite(hyp: str, ref: str) -> float:
    """Unigram alignment (exact, then stemmed), harmonic F10, chunk penalty."""
    h, r = tokenize(hyp), tokenize(ref)
    if not h or not r:
        return 0.0
    pairs: list[tuple[int, int]] = []
    used_r: set[int] = set()
    matched_h: set[int] = set()
    for key in (lambda w: w, _stem):
        for i, tok in enumerate(h):
            if i in matched_h:
                continue
            want = key(tok)
            for j, rtok in enumerate(r):
                if j in used_r:
                    continue
                if key(rtok) == want:
                    pairs.append((i, j))
                    used_r.add(j)
                    matched_h.add(i)
                    break
    m = len(pairs)
    if m == 0:
        return 0.0
    pairs.sort()
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if i1 != i0 + 1 or j1 != j0 + 1:
            chunks += 1
    p, r_ = m / len(h), m / len(r)
    f_mean = 10 * p * r_ / (r_ + 9 * p)
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1.0 - penalty)


METRIC_NAMES = (
    "bleu1", "bleu4", "rouge1", "rouge2", "rougeL", "rougeLsum", "meteor_lite",
)


def score_pair(hyp: str, ref: str) -> dict[str, float]:
    return {
        "bleu1": bleu(hyp, ref, 1),
        "bleu4": bleu(hyp, ref, 4),
        "rouge1": rouge_n(hyp, ref, 1)[2],
        "rouge2": rouge_n(hyp, ref, 2)[2],
        "rougeL": rouge_l(hyp, ref)[2],
        "rougeLsum": rouge_lsum(hyp, ref)[2],
        "meteor_lite": meteor_lite(hyp, ref),
    }


@dataclass
class GenerationScore:
    per_sample: list[dict]  # {"id", "section", metric values...}
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)


def aggregate(per_sample: list[dict]) -> GenerationScore:
    """Mean and population std per metric over all samples."""
    if not per_sample:
        raise ValueError("aggregate needs at least one sample")
    out = GenerationScore(per_sample=per_sample)
    for name in METRIC_NAMES:
        vals = np.array([row[name] for row in per_sample], dtype=np.float64)
        out.mean[name] = float(vals.mean())
        out.std[name] = float(vals.std())  # population std
    return out


def aggregate_by_section(per_sample: list[dict]) -> dict[str, GenerationScore]:
    groups: dict[str, list[dict]] = {}
    for row in per_sample:
        groups.setdefault(row.get("section", "all"), []).append(row)
    return {section: aggregate(rows) for section, rows in sorted(groups.items())}


def score_corpus(pairs: list[tuple[str, str, str, str]]) -> GenerationScore:
    """pairs: (id, hypothesis, reference, section) tuples."""
    rows = []
    for sample_id, hyp, ref, section in pairs:
        row = {"id": sample_id, "section": section}
        row.update(score_pair(hyp, ref))
        rows.append(row)
    return aggregate(rows)
