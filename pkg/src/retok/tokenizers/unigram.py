"""Unigram language-model tokenizer with an EM trainer and lattice decoding."""

from __future__ import annotations

import math
from collections import Counter, defaultdict

import numpy as np

from ..corpus import Vocabulary, chars_of
from ..lattice import (Lattice, Segmentation, build_lattice, nbest,
                       sample_segmentation, viterbi_best)
from .base import TokenizerBase, sampled_candidates


class UnigramTokenizer(TokenizerBase):
    """Unigram LM over subword tokens; Viterbi encode, exact n-best, sampling.

    Training: seed vocabulary of frequent substrings, EM rounds with
    forward-backward expected counts, then iterative pruning of the tokens
    whose removal costs the least likelihood, until the target size.
    Single characters are never pruned (coverage guarantee).
    """

    kind = "unigram"

    def __init__(self, vocab_size: int = 16000, alpha: float = 0.2,
                 seed_max_len: int = 8, seed_min_freq: int = 2,
                 seed_cap_factor: int = 20, prune_fraction: float = 0.2,
                 em_iters: int = 2):
        self.vocab_size = vocab_size
        self.alpha = alpha
        self.seed_max_len = seed_max_len
        self.seed_min_freq = seed_min_freq
        self.seed_cap_factor = seed_cap_factor
        self.prune_fraction = prune_fraction
        self.em_iters = em_iters
        self.vocab: Vocabulary | None = None
        self.log_prob: dict[str, float] = {}

    def get_params(self) -> dict:
        return {"vocab_size": self.vocab_size, "alpha": self.alpha,
                "seed_max_len": self.seed_max_len,
                "seed_min_freq": self.seed_min_freq,
                "seed_cap_factor": self.seed_cap_factor,
                "prune_fraction": self.prune_fraction,
                "em_iters": self.em_iters}

    # -- training

    def fit(self, corpus: list[str]) -> "UnigramTokenizer":
        if not corpus:
            raise ValueError("cannot train a unigram model on an empty corpus")
        singles, counts = self._seed_counts(corpus)
        if self.vocab_size < len(singles) + 1:
            raise ValueError(
                f"vocab_size {self.vocab_size} below alphabet size {len(singles)} + 1")
        multi = [tok for tok, _ in
                 sorted(((t, c) for t, c in counts.items()
                         if len(t) > 1 and c >= self.seed_min_freq),
                        key=lambda item: (-item[1], item[0]))]
        cap = max(0, self.seed_cap_factor * self.vocab_size - len(singles))
        multi = multi[:cap]
        probs = {t: float(counts[t]) for t in singles + multi}
        total = sum(probs.values())
        logp = {t: math.log(c / total) for t, c in probs.items()}

        while True:
            for _ in range(self.em_iters):
                logp = self._em_round(corpus, logp, singles)
            n_tokens = len(logp)
            if n_tokens <= self.vocab_size:
                break
            logp = self._prune(logp, singles,
                               target=max(self.vocab_size,
                                          int(n_tokens * (1 - self.prune_fraction))))
        self._set_model(logp)
        return self

    def _seed_counts(self, corpus: list[str]):
        counts: Counter[str] = Counter()
        single_set: dict[str, None] = {}
        for text in corpus:
            chars = chars_of(text)
            for ch in chars:
                single_set.setdefault(ch, None)
            for i in range(len(chars)):
                for j in range(i + 1, min(i + self.seed_max_len, len(chars)) + 1):
                    sub = "".join(chars[i:j])
                    if j - i > 1 and any(ch.isspace() for ch in sub):
                        continue
                    counts[sub] += 1
        return list(single_set), counts

    def _em_round(self, corpus: list[str], logp: dict[str, float],
                  singles: list[str]) -> dict[str, float]:
        expected: dict[str, float] = defaultdict(float)
        max_len = max(len(t) for t in logp)
        for text in corpus:
            chars = chars_of(text)
            n = len(chars)
            edges: list[list[tuple[int, str, float]]] = [[] for _ in range(n)]
            for i in range(n):
                for j in range(i + 1, min(i + max_len, n) + 1):
                    sub = "".join(chars[i:j])
                    w = logp.get(sub)
                    if w is not None:
                        edges[i].append((j, sub, w))
            fwd = [-math.inf] * (n + 1)
            fwd[0] = 0.0
            for i in range(n):
                if fwd[i] == -math.inf:
                    continue
                for j, _, w in edges[i]:
                    fwd[j] = _logadd(fwd[j], fwd[i] + w)
            bwd = [-math.inf] * (n + 1)
            bwd[n] = 0.0
            for i in range(n - 1, -1, -1):
                for j, _, w in edges[i]:
                    if bwd[j] > -math.inf:
                        bwd[i] = _logadd(bwd[i], w + bwd[j])
            log_z = fwd[n]
            if log_z == -math.inf:
                continue  # unreachable: singles cover every sentence
            for i in range(n):
                if fwd[i] == -math.inf:
                    continue
                for j, sub, w in edges[i]:
                    if bwd[j] > -math.inf:
                        expected[sub] += math.exp(fwd[i] + w + bwd[j] - log_z)
        floor = 1e-10
        kept = {t: c for t, c in expected.items() if c > 1e-8 or len(t) == 1}
        for ch in singles:
            kept.setdefault(ch, floor)
        total = sum(max(c, floor) for c in kept.values())
        return {t: math.log(max(c, floor) / total) for t, c in kept.items()}

    def _prune(self, logp: dict[str, float], singles: list[str],
               target: int) -> dict[str, float]:
        single_set = set(singles)
        prunable = [t for t in logp if t not in single_set and len(t) > 1]
        n_drop = len(logp) - target
        if n_drop <= 0 or not prunable:
            return logp
        impact = {}
        for tok in prunable:
            alt = self._best_alt_score(tok, logp)
            impact[tok] = math.exp(logp[tok]) * (logp[tok] - alt)
        prunable.sort(key=lambda t: (impact[t], t))
        dropped = set(prunable[:n_drop])
        kept = {t: p for t, p in logp.items() if t not in dropped}
        total = sum(math.exp(p) for p in kept.values())
        return {t: p - math.log(total) for t, p in kept.items()}

    def _best_alt_score(self, token: str, logp: dict[str, float]) -> float:
        """Best segmentation score of a token using the other vocab entries."""
        chars = chars_of(token)
        n = len(chars)
        best = [-math.inf] * (n + 1)
        best[0] = 0.0
        for i in range(n):
            if best[i] == -math.inf:
                continue
            for j in range(i + 1, n + 1):
                if i == 0 and j == n:
                    continue
                w = logp.get("".join(chars[i:j]))
                if w is not None and best[i] + w > best[j]:
                    best[j] = best[i] + w
        return best[n]

    def _set_model(self, logp: dict[str, float]) -> None:
        # normalize exactly
        total = sum(math.exp(p) for p in logp.values())
        logp = {t: p - math.log(total) for t, p in logp.items()}
        tokens = sorted(logp, key=lambda t: (-logp[t], t))
        self.vocab = Vocabulary(tokens)
        self.log_prob = logp

    # -- decoding

    @property
    def unk_log_prob(self) -> float:
        return min(self.log_prob.values()) - 10.0

    def _weight(self, i: int, j: int, tid: int) -> float:
        if tid == self.vocab.unk_id:
            return self.unk_log_prob
        return self.log_prob[self.vocab.tokens[tid]]

    def lattice(self, text: str) -> Lattice:
        self._check_fitted()
        return build_lattice(text, self.vocab, self._weight)

    def encode(self, text: str) -> Segmentation:
        return viterbi_best(self.lattice(text))

    def nbest(self, text: str, n: int) -> list[Segmentation]:
        return nbest(self.lattice(text), n)

    def sample(self, text: str, rng: np.random.Generator,
               alpha: float | None = None) -> Segmentation:
        a = self.alpha if alpha is None else alpha
        return sample_segmentation(self.lattice(text), a, rng)

    def candidates(self, text: str, n: int, rng: np.random.Generator,
                   mode: str = "nbest", dedup: bool = True) -> list[Segmentation]:
        if mode == "nbest":
            return self.nbest(text, n)
        if mode == "sample":
            return sampled_candidates(self.encode(text),
                                      lambda: self.sample(text, rng), n, dedup)
        raise ValueError(f"unknown candidate mode {mode!r}")

    def _check_fitted(self):
        if self.vocab is None:
            raise RuntimeError("tokenizer is not trained")

    # -- serialization

    def to_json(self) -> dict:
        self._check_fitted()
        tokens = self.vocab.tokens[2:]
        return {"kind": self.kind,
                "params": self.get_params(),
                "tokens": tokens,
                "log_probs": [self.log_prob[t] for t in tokens]}

    @classmethod
    def from_json(cls, obj: dict) -> "UnigramTokenizer":
        model = cls(**obj["params"])
        model.log_prob = dict(zip(obj["tokens"], obj["log_probs"]))
        model.vocab = Vocabulary(obj["tokens"])
        return model


def _logadd(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = a if a > b else b
    return m + math.log(math.exp(a - m) + math.exp(b - m))
