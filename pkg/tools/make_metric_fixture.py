"""Generate the frozen 20-pair metric fixture with an independent implementation.

Run once; the output is committed at tests/data/metric_fixture.json. The
implementations here deliberately share no code with the package: n-grams
via explicit loops, LCS via recursion with memoization, METEOR alignment
re-derived from the formula. Definitional choices mirror the documented
contracts (add-0.1 smoothing, population std, suffix stemmer).
"""

import json
import math
import re
import sys
from functools import lru_cache
from pathlib import Path

TOKEN = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


def toks(text):
    return TOKEN.findall(text.lower())


def ngram_list(tokens, n):
    return [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]


def count(items):
    out = {}
    for it in items:
        out[it] = out.get(it, 0) + 1
    return out


def ref_bleu(hyp, ref, max_n, eps=0.1):
    h, r = toks(hyp), toks(ref)
    if len(h) == 0:
        return 0.0
    logs = []
    for n in range(1, max_n + 1):
        hc, rc = count(ngram_list(h, n)), count(ngram_list(r, n))
        total = max(1, sum(hc.values()))
        hits = 0
        for g, c in hc.items():
            hits += min(c, rc.get(g, 0))
        p = (hits if hits > 0 else eps) / total
        logs.append(math.log(p))
    gm = math.exp(sum(logs) / max_n)
    bp = math.exp(1 - len(r) / len(h)) if len(h) < len(r) else 1.0
    return gm * bp


def _f1(hits, np_, nr):
    p = hits / np_ if np_ else 0.0
    r = hits / nr if nr else 0.0
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def ref_rouge_n(hyp, ref, n):
    hc = count(ngram_list(toks(hyp), n))
    rc = count(ngram_list(toks(ref), n))
    hits = sum(min(c, rc.get(g, 0)) for g, c in hc.items())
    return _f1(hits, sum(hc.values()), sum(rc.values()))


def lcs_len(a, b):
    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == 0 or j == 0:
            return 0
        if a[i - 1] == b[j - 1]:
            return rec(i - 1, j - 1) + 1
        return max(rec(i - 1, j), rec(i, j - 1))
    sys.setrecursionlimit(100000)
    return rec(len(a), len(b))


def lcs_match_positions(a, b):
    """Positions in a of one LCS, choosing the same tie-break as a DP walk."""
    la, lb = len(a), len(b)
    dp = [[0] * (lb + 1) for _ in range(la + 1)]
    for i in range(1, la + 1):
        for j in range(1, lb + 1):
            if a[i - 1] == b[j - 1]:
                dp[i][j] = dp[i - 1][j - 1] + 1
            else:
                dp[i][j] = max(dp[i - 1][j], dp[i][j - 1])
    i, j, out = la, lb, []
    while i and j:
        if a[i - 1] == b[j - 1] and dp[i][j] == dp[i - 1][j - 1] + 1:
            out.append(i - 1)
            i -= 1
            j -= 1
        elif dp[i - 1][j] >= dp[i][j - 1]:
            i -= 1
        else:
            j -= 1
    return out


def ref_rouge_l(hyp, ref):
    h, r = toks(hyp), toks(ref)
    return _f1(lcs_len(tuple(h), tuple(r)), len(h), len(r))


def sentences(text):
    out = []
    for part in text.replace("\n", ".").split("."):
        t = toks(part)
        if t:
            out.append(t)
    return out or [[]]


def ref_rouge_lsum(hyp, ref):
    hs, rs = sentences(hyp), sentences(ref)
    h_all = [t for s in hs for t in s]
    r_all = [t for s in rs for t in s]
    budget = count(h_all)
    hits = 0
    for r_sent in rs:
        matched = set()
        for h_sent in hs:
            matched.update(lcs_match_positions(r_sent, h_sent))
        for idx in sorted(matched):
            tok = r_sent[idx]
            if budget.get(tok, 0) > 0:
                budget[tok] -= 1
                hits += 1
    return _f1(hits, len(h_all), len(r_all))


def stem(w):
    for suf in ("ing", "ed", "es", "s"):
        if w.endswith(suf) and len(w) - len(suf) >= 2:
            return w[: -len(suf)]
    return w


def ref_meteor(hyp, ref):
    h, r = toks(hyp), toks(ref)
    if not h or not r:
        return 0.0
    pairs = []
    used = set()
    done = set()
    for keyer in (lambda w: w, stem):
        for i, hw in enumerate(h):
            if i in done:
                continue
            for j, rw in enumerate(r):
                if j in used:
                    continue
                if keyer(hw) == keyer(rw):
                    pairs.append((i, j))
                    used.add(j)
                    done.add(i)
                    break
    m = len(pairs)
    if m == 0:
        return 0.0
    pairs.sort()
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if not (i1 == i0 + 1 and j1 == j0 + 1):
            chunks += 1
    p, rr = m / len(h), m / len(r)
    fmean = 10 * p * rr / (rr + 9 * p)
    return fmean * (1 - 0.5 * (chunks / m) ** 3)


PAIRS = [
    ("identical short", "the cat sat", "the cat sat"),
    ("identical long", "diffuse slowing is present over both hemispheres during drowsiness",
     "diffuse slowing is present over both hemispheres during drowsiness"),
    ("prefix hyp", "the cat", "the cat sat"),
    ("swap order", "the cat sat", "the sat cat"),
    ("fully disjoint long",
     "alpha beta gamma delta theta sigma kappa lambda omicron epsilon zeta eta iota mu nu",
     "one two three four five six seven eight nine ten eleven twelve thirteen fourteen"),
    ("subset overlap", "a b", "a b c"),
    ("lcs gap", "a c", "a b c"),
    ("repeated tokens", "spike and wave and spike", "spike and wave discharges"),
    ("clip test", "the the the the", "the cat"),
    ("multi sentence identical", "normal study. no seizures recorded.",
     "normal study. no seizures recorded."),
    ("multi sentence shuffled", "no seizures recorded. normal study.",
     "normal study. no seizures recorded."),
    ("sentence subset", "normal study.", "normal study. no seizures recorded."),
    ("stemmed match", "spiking waves recorded", "spike wave record"),
    ("punctuation only", "...", "..."),
    ("empty hypothesis", "", "normal study"),
    ("hyp longer than ref", "the recording shows a normal posterior rhythm with no abnormality",
     "normal posterior rhythm"),
    ("clinical-ish a",
     "diffuse delta slowing is present. posterior dominant alpha rhythm appears.",
     "diffuse delta slowing is present. excess frontal beta activity occurs."),
    ("clinical-ish b",
     "background within normal limits",
     "sleep spindles indicate stage two sleep"),
    ("numbers and units", "posterior rhythm at 10 hz", "posterior rhythm at 9 hz"),
    ("single token", "normal", "normal"),
]


def main():
    rows = []
    for name, hyp, ref in PAIRS:
        rows.append({
            "name": name,
            "hypothesis": hyp,
            "reference": ref,
            "bleu1": ref_bleu(hyp, ref, 1),
            "bleu4": ref_bleu(hyp, ref, 4),
            "rouge1": ref_rouge_n(hyp, ref, 1),
            "rouge2": ref_rouge_n(hyp, ref, 2),
            "rougeL": ref_rouge_l(hyp, ref),
            "rougeLsum": ref_rouge_lsum(hyp, ref),
            "meteor_lite": ref_meteor(hyp, ref),
        })
    out = Path(__file__).resolve().parent.parent / "tests" / "data" / "metric_fixture.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(rows, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {len(rows)} pairs to {out}")


if __name__ == "__main__":
    main()
