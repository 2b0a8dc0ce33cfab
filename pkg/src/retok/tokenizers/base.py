"""Shared tokenizer interface and candidate generation."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..corpus import Vocabulary
from ..lattice import Segmentation


class TokenizerBase:
    """Common surface of the trainable downstream tokenizers."""

    kind: str = ""

    vocab: Vocabulary

    def fit(self, corpus: list[str]) -> "TokenizerBase":
        raise NotImplementedError

    def encode(self, text: str) -> Segmentation:
        """Deterministic tokenization."""
        raise NotImplementedError

    def sample(self, text: str, rng: np.random.Generator) -> Segmentation:
        """One stochastic tokenization (subword regularization)."""
        raise NotImplementedError

    def candidates(self, text: str, n: int, rng: np.random.Generator,
                   mode: str = "sample", dedup: bool = True) -> list[Segmentation]:
        """N candidate tokenizations; candidate 0 is the deterministic encode."""
        if mode != "sample":
            raise ValueError(f"{self.kind} tokenizer only supports sampled candidates")
        return sampled_candidates(self.encode(text),
                                  lambda: self.sample(text, rng), n, dedup)

    def get_params(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


def sampled_candidates(deterministic: Segmentation,
                       draw: Callable[[], Segmentation],
                       n: int, dedup: bool = True,
                       max_attempts_factor: int = 5) -> list[Segmentation]:
    """Deterministic encode plus sampled variants, de-duplicated by default.

    Sampling stops after 5N attempts even if fewer than N distinct
    tokenizations were found.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out = [deterministic]
    seen = {deterministic.spans}
    attempts = 0
    while len(out) < n and attempts < max_attempts_factor * n:
        attempts += 1
        cand = draw()
        if dedup:
            if cand.spans in seen:
                continue
            seen.add(cand.spans)
        out.append(cand)
    return out
