"""Greedy maximum-matching (WordPiece-style) tokenizer with dropout."""

from __future__ import annotations

import numpy as np

from ..corpus import Vocabulary, chars_of
from ..lattice import Segmentation
from .base import TokenizerBase
from .bpe import BpeTokenizer


class MaxMatchTokenizer(TokenizerBase):
    """Longest-match-first tokenizer over a BPE-derived vocabulary.

    Word-internal tokens carry a continuation prefix (BERT-style "##").
    With dropout, each found multi-character match is rejected with
    probability p and the next shorter match is tried; single characters
    are never rejected.
    """

    kind = "maxmatch"

    def __init__(self, vocab_size: int = 16000, dropout: float = 0.1,
                 continuation_prefix: str = "##"):
        self.vocab_size = vocab_size
        self.dropout = dropout
        self.continuation_prefix = continuation_prefix
        self.vocab: Vocabulary | None = None

    def get_params(self) -> dict:
        return {"vocab_size": self.vocab_size, "dropout": self.dropout,
                "continuation_prefix": self.continuation_prefix}

    def fit(self, corpus: list[str]) -> "MaxMatchTokenizer":
        bpe = BpeTokenizer(vocab_size=self.vocab_size).fit(corpus)
        prefix = self.continuation_prefix
        tokens: dict[str, None] = {}
        for ch in bpe.alphabet:
            tokens.setdefault(ch, None)
            if not ch.isspace():
                tokens.setdefault(prefix + ch, None)
        for text in corpus:
            seg = bpe.encode(text)
            chars = chars_of(text)
            for (start, _), tok in zip(seg.spans, seg.tokens):
                if tok.isspace():
                    continue
                word_start = start == 0 or chars[start - 1].isspace()
                tokens.setdefault(tok if word_start else prefix + tok, None)
        self.vocab = Vocabulary(list(tokens), continuation_prefix=prefix)
        return self

    def encode(self, text: str, dropout_p: float | None = None,
               rng: np.random.Generator | None = None) -> Segmentation:
        if self.vocab is None:
            raise RuntimeError("tokenizer is not trained")
        p = 0.0 if dropout_p is None else dropout_p
        if p > 0 and rng is None:
            raise ValueError("dropout requires an rng")
        chars = chars_of(text)
        n = len(chars)
        max_len = self.vocab.max_token_chars
        spans: list[tuple[int, int]] = []
        tokens: list[str] = []
        i = 0
        while i < n:
            chosen = None
            for j in range(min(i + max_len, n), i, -1):
                tok = self.vocab.span_token(chars, i, j)
                if tok is None:
                    continue
                if j - i > 1 and p > 0.0 and rng.random() < p:
                    continue  # dropout rejects this length, try shorter
                chosen = (j, tok)
                break
            if chosen is None:
                chosen = (i + 1, chars[i])  # unknown character fallback
            spans.append((i, chosen[0]))
            tokens.append(chosen[1])
            i = chosen[0]
        return Segmentation(spans=tuple(spans), tokens=tuple(tokens))

    def sample(self, text: str, rng: np.random.Generator) -> Segmentation:
        return self.encode(text, dropout_p=self.dropout, rng=rng)

    def to_json(self) -> dict:
        if self.vocab is None:
            raise RuntimeError("tokenizer is not trained")
        return {"kind": self.kind,
                "params": self.get_params(),
                "tokens": self.vocab.tokens[2:]}

    @classmethod
    def from_json(cls, obj: dict) -> "MaxMatchTokenizer":
        model = cls(**obj["params"])
        model.vocab = Vocabulary(obj["tokens"],
                                 continuation_prefix=model.continuation_prefix)
        return model
