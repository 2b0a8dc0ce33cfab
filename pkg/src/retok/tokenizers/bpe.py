"""Byte-pair-encoding tokenizer with dropout sampling."""

from __future__ import annotations

from collections import Counter

import numpy as np

from ..corpus import Vocabulary, chars_of
from ..lattice import Segmentation
from .base import TokenizerBase


def _has_space(sym: str) -> bool:
    return any(ch.isspace() for ch in sym)


class BpeTokenizer(TokenizerBase):
    """Greedy highest-frequency pair merging; merges never cross whitespace.

    Encoding applies the merges in training order, leftmost occurrence
    first; with dropout each individual merge application is skipped
    independently with probability p (BPE-dropout style sampling).
    """

    kind = "bpe"

    def __init__(self, vocab_size: int = 16000, dropout: float = 0.1):
        self.vocab_size = vocab_size
        self.dropout = dropout
        self.alphabet: list[str] = []
        self.merges: list[tuple[str, str]] = []
        self.vocab: Vocabulary | None = None
        self._merge_set: set[tuple[str, str]] = set()

    def get_params(self) -> dict:
        return {"vocab_size": self.vocab_size, "dropout": self.dropout}

    def fit(self, corpus: list[str]) -> "BpeTokenizer":
        if not corpus:
            raise ValueError("cannot train BPE on an empty corpus")
        seen: dict[str, None] = {}
        for text in corpus:
            for ch in chars_of(text):
                seen.setdefault(ch, None)
        self.alphabet = list(seen)
        if self.vocab_size < len(self.alphabet):
            raise ValueError(
                f"vocab_size {self.vocab_size} below alphabet size {len(self.alphabet)}")
        sequences = [chars_of(text) for text in corpus]
        tokens: dict[str, None] = dict.fromkeys(self.alphabet)
        self.merges = []
        while len(tokens) < self.vocab_size:
            pair_counts: Counter[tuple[str, str]] = Counter()
            for seq in sequences:
                for left, right in zip(seq, seq[1:]):
                    if _has_space(left) or _has_space(right):
                        continue
                    pair_counts[(left, right)] += 1
            if not pair_counts:
                break
            best = min(pair_counts, key=lambda p: (-pair_counts[p], p))
            self.merges.append(best)
            merged = best[0] + best[1]
            tokens.setdefault(merged, None)
            sequences = [_apply_merge(seq, best, merged) for seq in sequences]
        self._finalize()
        return self

    def _finalize(self) -> None:
        tokens = list(dict.fromkeys(self.alphabet + [l + r for l, r in self.merges]))
        self.vocab = Vocabulary(tokens)
        self._merge_set = set(self.merges)

    def encode(self, text: str, dropout_p: float | None = None,
               rng: np.random.Generator | None = None) -> Segmentation:
        self._check_fitted()
        p = 0.0 if dropout_p is None else dropout_p
        if p > 0 and rng is None:
            raise ValueError("dropout requires an rng")
        symbols = chars_of(text)
        for merge in self.merges:
            merged = merge[0] + merge[1]
            out: list[str] = []
            i = 0
            while i < len(symbols):
                if (i + 1 < len(symbols)
                        and (symbols[i], symbols[i + 1]) == merge
                        and (p == 0.0 or rng.random() >= p)):
                    out.append(merged)
                    i += 2
                else:
                    out.append(symbols[i])
                    i += 1
            symbols = out
        spans = []
        pos = 0
        for sym in symbols:
            spans.append((pos, pos + len(sym)))
            pos += len(sym)
        return Segmentation(spans=tuple(spans), tokens=tuple(symbols))

    def sample(self, text: str, rng: np.random.Generator) -> Segmentation:
        return self.encode(text, dropout_p=self.dropout, rng=rng)

    def _check_fitted(self):
        if self.vocab is None:
            raise RuntimeError("tokenizer is not trained")

    def to_json(self) -> dict:
        self._check_fitted()
        return {"kind": self.kind,
                "params": self.get_params(),
                "alphabet": self.alphabet,
                "merges": [[l, r] for l, r in self.merges]}

    @classmethod
    def from_json(cls, obj: dict) -> "BpeTokenizer":
        model = cls(**obj["params"])
        model.alphabet = list(obj["alphabet"])
        model.merges = [tuple(m) for m in obj["merges"]]
        model._finalize()
        return model


def _apply_merge(seq: list[str], pair: tuple[str, str], merged: str) -> list[str]:
    out: list[str] = []
    i = 0
    while i < len(seq):
        if i + 1 < len(seq) and (seq[i], seq[i + 1]) == pair:
            out.append(merged)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out
