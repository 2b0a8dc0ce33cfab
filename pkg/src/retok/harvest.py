"""Minimum-loss tokenization harvesting and the oracle upper bound."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classifier import ClassifierModel
from .corpus import LabeledExample
from .lattice import Segmentation, segmentation_from_spans
from .metrics import macro_f1
from .rng import substream
from .tokenizers import TokenizerBase


@dataclass
class CandidateSet:
    sentence_id: int
    candidates: list[Segmentation]
    losses: list[float] = field(default_factory=list)
    n_requested: int = 0
    provenance: str = ""


@dataclass
class RetokRecord:
    sentence_id: int
    text: str
    segmentation: Segmentation
    loss: float
    label: int
    n_candidates: int


@dataclass
class RetokDataset:
    """Per-sentence minimum-loss segmentations harvested from the train split."""

    records: list[RetokRecord]

    def __len__(self) -> int:
        return len(self.records)

    def save(self, path: str | Path) -> None:
        lines = []
        for rec in self.records:
            lines.append(json.dumps(
                {"id": rec.sentence_id, "text": rec.text,
                 "tokens": list(rec.segmentation.tokens),
                 "spans": [list(sp) for sp in rec.segmentation.spans],
                 "loss": rec.loss, "label": rec.label,
                 "n_candidates": rec.n_candidates},
                sort_keys=True, ensure_ascii=False))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RetokDataset":
        records = []
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                seg = Segmentation(
                    spans=tuple((s, e) for s, e in obj["spans"]),
                    tokens=tuple(obj["tokens"]))
                records.append(RetokRecord(
                    sentence_id=obj["id"], text=obj["text"], segmentation=seg,
                    loss=obj["loss"], label=obj["label"],
                    n_candidates=obj["n_candidates"]))
        return cls(records=records)


def generate_candidates(sentence: str, tokenizer: TokenizerBase, n: int,
                        mode: str, rng: np.random.Generator,
                        dedup: bool = True) -> CandidateSet:
    """N candidate tokenizations; candidate 0 is the deterministic encode."""
    cands = tokenizer.candidates(sentence, n, rng, mode=mode, dedup=dedup)
    return CandidateSet(sentence_id=-1, candidates=cands, n_requested=n,
                        provenance=f"{tokenizer.kind}/{mode}")


def _select_best(example: LabeledExample, model: ClassifierModel,
                 tokenizer: TokenizerBase, n: int, mode: str, seed: int,
                 dedup: bool) -> tuple[Segmentation, float, int]:
    rng = substream(seed, "candidates", example.id)
    cset = generate_candidates(example.text, tokenizer, n, mode, rng, dedup)
    cset.sentence_id = example.id
    best_idx = 0
    best_loss = None
    for idx, seg in enumerate(cset.candidates):
        loss = model.loss_value(seg, example.label)
        cset.losses.append(loss)
        if best_loss is None or loss < best_loss:
            best_idx, best_loss = idx, loss
    return cset.candidates[best_idx], float(best_loss), len(cset.candidates)


def collect_best(examples: list[LabeledExample], model: ClassifierModel,
                 tokenizer: TokenizerBase, n: int, mode: str, seed: int,
                 dedup: bool = True) -> RetokDataset:
    """Build the harvested dataset: per sentence, the minimum-loss candidate.

    Ties go to the lower candidate index, so the deterministic tokenization
    wins when it is among the minimizers.
    """
    records = []
    for ex in examples:
        seg, loss, n_cands = _select_best(ex, model, tokenizer, n, mode,
                                          seed, dedup)
        records.append(RetokRecord(
            sentence_id=ex.id, text=ex.text, segmentation=seg, loss=loss,
            label=ex.label, n_candidates=n_cands))
    return RetokDataset(records=records)


def oracle_select(examples: list[LabeledExample], model: ClassifierModel,
                  tokenizer: TokenizerBase, n: int, mode: str, seed: int,
                  num_labels: int, dedup: bool = True
                  ) -> tuple[list[Segmentation], float]:
    """Label-informed per-sentence best candidates and the resulting F1.

    Same mechanics as collect_best, run on an evaluation split using its
    gold labels; the F1 is this task's upper bound.
    """
    chosen = []
    preds = []
    for ex in examples:
        seg, _, _ = _select_best(ex, model, tokenizer, n, mode, seed, dedup)
        chosen.append(seg)
        preds.append(model.predict_label(seg))
    f1 = macro_f1(preds, [ex.label for ex in examples], num_labels)
    return chosen, f1
