"""Segmentation lattices: construction, Viterbi, exact n-best, sampling."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .corpus import Vocabulary, chars_of

# WeightFn maps (start, end, token_id) -> log-domain edge weight.
WeightFn = Callable[[int, int, int], float]


@dataclass(frozen=True)
class Segmentation:
    """Contiguous character spans covering a sentence, plus token strings."""

    spans: tuple[tuple[int, int], ...]
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.spans:
            raise ValueError("empty segmentation")
        pos = 0
        for start, end in self.spans:
            if start != pos or end <= start:
                raise ValueError(f"non-contiguous spans {self.spans}")
            pos = end
        if len(self.tokens) != len(self.spans):
            raise ValueError("span/token count mismatch")

    @property
    def length(self) -> int:
        return self.spans[-1][1]

    def bi_tags(self) -> list[str]:
        tags = []
        for start, end in self.spans:
            tags.append("B")
            tags.extend("I" * (end - start - 1))
        return tags


def segmentation_from_spans(sentence: str | list[str],
                            spans: list[tuple[int, int]]) -> Segmentation:
    chars = chars_of(sentence) if isinstance(sentence, str) else sentence
    tokens = tuple("".join(chars[s:e]) for s, e in spans)
    return Segmentation(spans=tuple(tuple(sp) for sp in spans), tokens=tokens)


@dataclass(frozen=True)
class Edge:
    end: int
    token_id: int
    token: str
    weight: float
    fallback: bool = False


class Lattice:
    """DAG over character boundaries; edges are in-vocabulary spans.

    Out-of-vocabulary spans are structurally absent (probability zero).
    Single-character UNK fallback edges are added only where connectivity
    from position 0 to |s| would otherwise fail.
    """

    def __init__(self, length: int, edges: list[list[Edge]]):
        self.length = length
        self.edges = edges  # edges[i] = outgoing edges at char position i
        self.incoming: list[list[tuple[int, Edge]]] = [[] for _ in range(length + 1)]
        for start, outs in enumerate(edges):
            for edge in outs:
                if not math.isfinite(edge.weight):
                    raise ValueError(f"non-finite edge weight at ({start},{edge.end})")
                self.incoming[edge.end].append((start, edge))

    def segmentation(self, path: list[tuple[int, Edge]]) -> Segmentation:
        spans = tuple((start, edge.end) for start, edge in path)
        tokens = tuple(edge.token for _, edge in path)
        return Segmentation(spans=spans, tokens=tokens)

    def render(self) -> str:
        """Triangular text rendering of edges for debugging."""
        n = self.length
        grid = [["." for _ in range(n)] for _ in range(n)]
        for start, outs in enumerate(self.edges):
            for edge in outs:
                grid[start][edge.end - 1] = "u" if edge.fallback else "#"
        header = "start\\end " + " ".join(f"{j + 1:>2d}" for j in range(n))
        rows = [f"{i:>9d} " + "  ".join(grid[i]) for i in range(n)]
        return "\n".join([header] + rows)


def build_lattice(sentence: str | list[str], vocab: Vocabulary,
                  weights: WeightFn) -> Lattice:
    chars = chars_of(sentence) if isinstance(sentence, str) else list(sentence)
    n = len(chars)
    if n == 0:
        raise ValueError("cannot build a lattice for an empty sentence")
    max_len = vocab.max_token_chars
    edges: list[list[Edge]] = [[] for _ in range(n)]
    for i in range(n):
        for j in range(i + 1, min(i + max_len, n) + 1):
            tok = vocab.span_token(chars, i, j)
            if tok is not None:
                tid = vocab.index[tok]
                edges[i].append(Edge(end=j, token_id=tid, token=tok,
                                     weight=float(weights(i, j, tid))))
    _ensure_connected(chars, edges, vocab, weights)
    return Lattice(n, edges)


def _ensure_connected(chars: list[str], edges: list[list[Edge]],
                      vocab: Vocabulary, weights: WeightFn) -> None:
    """Add per-character UNK fallback edges until a 0 -> n path exists."""
    n = len(chars)
    while True:
        reach = [False] * (n + 1)
        reach[0] = True
        for i in range(n):
            if reach[i]:
                for edge in edges[i]:
                    reach[edge.end] = True
        if reach[n]:
            return
        frontier = max(i for i in range(n) if reach[i])
        edges[frontier].append(Edge(
            end=frontier + 1, token_id=vocab.unk_id, token=chars[frontier],
            weight=float(weights(frontier, frontier + 1, vocab.unk_id)),
            fallback=True))


def _path_key(score: float, spans: tuple[tuple[int, int], ...]):
    """Sort key: higher score first; ties prefer the longer first-differing span."""
    return (-score, tuple(s - e for s, e in spans))


def nbest(lattice: Lattice, n: int) -> list[Segmentation]:
    """Exact top-n paths by total weight, deterministic tie-break.

    Ties prefer the longer first-differing span (i.e. lexicographically
    smaller sequence of negated span lengths). The per-position merge is
    exact because the tie-break order is preserved under appending a
    common suffix.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    length = lattice.length
    # lists[j]: up to n entries (neg_score, neg_len_seq, path), sorted.
    lists: list[list[tuple]] = [[] for _ in range(length + 1)]
    lists[0] = [(0.0, (), [])]
    for j in range(1, length + 1):
        cands = []
        for i, edge in lattice.incoming[j]:
            for neg_score, lens, path in lists[i]:
                cands.append((neg_score - edge.weight, lens + (i - j,),
                              path + [(i, edge)]))
        cands.sort(key=lambda item: (item[0], item[1]))
        lists[j] = cands[:n]
    if not lists[length]:
        raise ValueError("lattice has no complete path")
    return [lattice.segmentation(path) for _, _, path in lists[length]]


def viterbi_best(lattice: Lattice) -> Segmentation:
    """Maximum-weight path, deterministic tie-break (longer spans first)."""
    return nbest(lattice, 1)[0]


def path_score(lattice: Lattice, segmentation: Segmentation) -> float:
    """Total log-weight of a segmentation's edges in a lattice."""
    total = 0.0
    for start, end in segmentation.spans:
        match = [e for e in lattice.edges[start] if e.end == end]
        if not match:
            raise ValueError(f"span ({start},{end}) not in lattice")
        total += match[0].weight
    return total


def sample_segmentation(lattice: Lattice, alpha: float,
                        rng: np.random.Generator) -> Segmentation:
    """Exact sample with P(path) proportional to exp(alpha * total weight).

    Forward filtering, backward sampling in the log domain. alpha = 0 is
    uniform over paths.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    n = lattice.length
    fwd = [-math.inf] * (n + 1)
    fwd[0] = 0.0
    for j in range(1, n + 1):
        terms = [fwd[i] + alpha * edge.weight for i, edge in lattice.incoming[j]
                 if fwd[i] > -math.inf]
        if terms:
            m = max(terms)
            fwd[j] = m + math.log(sum(math.exp(t - m) for t in terms))
    if fwd[n] == -math.inf:
        raise ValueError("lattice has no complete path")
    path: list[tuple[int, Edge]] = []
    j = n
    while j > 0:
        options = [(i, edge) for i, edge in lattice.incoming[j] if fwd[i] > -math.inf]
        logits = np.array([fwd[i] + alpha * edge.weight for i, edge in options])
        probs = np.exp(logits - fwd[j])
        probs /= probs.sum()
        idx = int(rng.choice(len(options), p=probs))
        path.append(options[idx])
        j = options[idx][0]
    path.reverse()
    return lattice.segmentation(path)


class SentenceTooLong(ValueError):
    pass


def enumerate_all(sentence: str | list[str], vocab: Vocabulary,
                  max_len: int = 16, weights: WeightFn | None = None
                  ) -> list[Segmentation]:
    """Every valid segmentation of a short sentence (brute-force oracle)."""
    chars = chars_of(sentence) if isinstance(sentence, str) else list(sentence)
    if len(chars) > max_len:
        raise SentenceTooLong(
            f"refusing to enumerate a {len(chars)}-char sentence (cap {max_len})")
    wf: WeightFn = weights if weights is not None else (lambda i, j, t: 0.0)
    lattice = build_lattice(chars, vocab, wf)
    out: list[Segmentation] = []

    def walk(pos: int, path: list[tuple[int, Edge]]):
        if pos == lattice.length:
            out.append(lattice.segmentation(path))
            return
        for edge in lattice.edges[pos]:
            walk(edge.end, path + [(pos, edge)])

    walk(0, [])
    return out
