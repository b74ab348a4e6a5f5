"""Word-level text tokenization shared by the decoder and the metrics."""

from __future__ import annotations

import re
from collections import Counter

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")

PAD, UNK, BOS, EOS = "[PAD]", "[UNK]", "[BOS]", "[EOS]"
SPECIALS = (PAD, UNK, BOS, EOS)


def tokenize(text: str) -> list[str]:
    """Lowercase word/punctuation split; punctuation marks are single tokens."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    def __init__(self, words: list[str]):
        self.id_to_word = list(SPECIALS) + list(words)
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        self.pad_id = self.word_to_id[PAD]
        self.unk_id = self.word_to_id[UNK]
        self.bos_id = self.word_to_id[BOS]
        self.eos_id = self.word_to_id[EOS]

    def __len__(self) -> int:
        return len(self.id_to_word)

    @classmethod
    def build(cls, texts, cap: int = 8192) -> "Vocab":
        counts = Counter()
        for text in texts:
            counts.update(tokenize(text))
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        keep = [w for w, _ in ranked[: max(0, cap - len(SPECIALS))]]
        return cls(keep)

    def encode(self, text: str) -> list[int]:
        return [self.word_to_id.get(tok, self.unk_id) for tok in tokenize(text)]

    def decode(self, ids) -> str:
        words = [self.id_to_word[i] for i in ids if self.id_to_word[i] not in SPECIALS]
        return " ".join(words)

    def unknown_rate(self, text: str) -> float:
        ids = self.encode(text)
        return sum(1 for i in ids if i == self.unk_id) / len(ids) if ids else 0.0
