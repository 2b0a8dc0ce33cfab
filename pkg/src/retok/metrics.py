"""Evaluation quantities: macro-F1, BI-tag accuracy, UNK ratio, token stats."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus import CharTable, Vocabulary
from .lattice import Segmentation


def macro_f1(predictions: list[int], gold: list[int], num_labels: int) -> float:
    """Unweighted mean of per-label F1.

    Labels absent from both predictions and gold are excluded from the mean.
    """
    if not predictions or len(predictions) != len(gold):
        raise ValueError("predictions and gold must be equal-length and non-empty")
    f1s = []
    for label in range(num_labels):
        tp = sum(1 for p, g in zip(predictions, gold) if p == label and g == label)
        fp = sum(1 for p, g in zip(predictions, gold) if p == label and g != label)
        fn = sum(1 for p, g in zip(predictions, gold) if p != label and g == label)
        if tp == fp == fn == 0:
            continue
        f1s.append(2 * tp / (2 * tp + fp + fn))
    if not f1s:
        raise ValueError("no labels present")
    return sum(f1s) / len(f1s)


def bi_tag_accuracy(hyp: Segmentation, ref: Segmentation) -> float:
    """Fraction of matching per-character B/I tags between two segmentations."""
    if hyp.length != ref.length:
        raise ValueError(f"length mismatch: {hyp.length} vs {ref.length}")
    h, r = hyp.bi_tags(), ref.bi_tags()
    return sum(1 for a, b in zip(h, r) if a == b) / len(h)


def unk_ratio(segmentations: list[Segmentation], vocab: Vocabulary,
              char_table: CharTable | None = None,
              exclude_unknown_chars: bool = True) -> float:
    """Fraction of output tokens that are not in the downstream vocabulary.

    With ``exclude_unknown_chars``, single-character tokens whose character
    is outside the training alphabet are not counted as unknown.
    """
    if not segmentations:
        raise ValueError("empty split")
    total = 0
    unknown = 0
    for seg in segmentations:
        for tok in seg.tokens:
            total += 1
            if tok in vocab:
                continue
            if (exclude_unknown_chars and char_table is not None
                    and len(tok) == 1 and tok not in char_table):
                continue
            unknown += 1
    return unknown / total


def avg_tokens(segmentations: list[Segmentation]) -> float:
    if not segmentations:
        raise ValueError("empty split")
    return sum(len(s.tokens) for s in segmentations) / len(segmentations)


def unigram_perplexity(segmentations: list[Segmentation]) -> float:
    """exp of the Shannon entropy (nats) of the empirical token distribution."""
    counts: Counter[str] = Counter()
    for seg in segmentations:
        counts.update(seg.tokens)
    total = sum(counts.values())
    if total == 0:
        raise ValueError("no tokens")
    entropy = -sum((c / total) * math.log(c / total) for c in counts.values())
    return math.exp(entropy)


@dataclass
class EvalReport:
    """Container for reported metric values plus run metadata."""

    metrics: dict[str, float] = field(default_factory=dict)
    per_label_f1: dict[str, list[float]] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        meta = dict(self.metadata)
        meta.setdefault("f1_variant", "macro (labels absent from gold and "
                                      "predictions excluded from the mean)")
        meta.setdefault("perplexity_variant", "exp(entropy of empirical "
                                              "token distribution)")
        return {"metrics": self.metrics, "per_label_f1": self.per_label_f1,
                "metadata": meta}
