"""Seeded synthetic corpus with planted tokenization ambiguity.

Each sentence carries one class-specific signal string. Signals are built
from two-character pieces that also occur independently as decoy blocks in
all classes, so a frequency-trained unigram tokenizer tends to split a
signal into its pieces; the whole-signal reading survives only among the
N-best candidates. That plants headroom for selecting and reproducing
better tokenizations.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np


@dataclass
class SynthSpec:
    n_train: int = 2000
    n_valid: int = 500
    n_test: int = 500
    num_labels: int = 2
    signals_per_class: int = 4
    min_units: int = 12
    max_units: int = 18
    piece_rate: float = 0.30
    separate_pieces: bool = False
    label_noise: float = 0.05
    distractor_alphabet: str = "abcdefgh"
    signal_alphabet: str = "pqrs"
    seed: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SynthSpec":
        return cls(**obj)


def _build_inventory(spec: SynthSpec) -> tuple[list[str], list[list[str]]]:
    """Decoy pieces and per-class signal strings (piece concatenations)."""
    pieces = ["".join(p) for p in
              itertools.permutations(spec.signal_alphabet, 2)]
    combos = [a + b for a, b in itertools.permutations(pieces, 2)
              if a[1] != b[0] and a[0] != b[1]]  # avoid shared-boundary repeats
    needed = spec.num_labels * spec.signals_per_class
    if needed > len(combos):
        raise ValueError(
            f"cannot build {needed} signals from alphabet "
            f"{spec.signal_alphabet!r}; reduce signals_per_class or num_labels")
    signals = combos[:needed]
    per_class = [signals[c * spec.signals_per_class:(c + 1) * spec.signals_per_class]
                 for c in range(spec.num_labels)]
    return pieces, per_class


def _sentence(rng: np.random.Generator, spec: SynthSpec, pieces: list[str],
              all_signals: list[str], signal: str) -> str:
    for _ in range(200):
        n_units = int(rng.integers(spec.min_units, spec.max_units + 1))
        units = []
        prev_piece = False
        for _ in range(n_units):
            # with separate_pieces on, decoy pieces are never adjacent, so
            # piece-boundary substrings stay rare in the raw text
            if not (spec.separate_pieces and prev_piece) \
                    and rng.random() < spec.piece_rate:
                units.append(pieces[int(rng.integers(len(pieces)))])
                prev_piece = True
            else:
                units.append(spec.distractor_alphabet[
                    int(rng.integers(len(spec.distractor_alphabet)))])
                prev_piece = False
        slot = int(rng.integers(0, n_units + 1))
        units.insert(slot, signal)
        text = "".join(units)
        # exactly one signal occurrence, and none from any other class
        hits = sum(text.count(s) for s in all_signals)
        if hits == 1:
            return text
    raise RuntimeError("could not generate a clean sentence; adjust the spec")


def generate(spec: SynthSpec) -> dict[str, list[dict]]:
    """Generate all splits as lists of {"text", "label"} records."""
    pieces, per_class = _build_inventory(spec)
    all_signals = [s for group in per_class for s in group]
    splits: dict[str, list[dict]] = {}
    for split, count in (("train", spec.n_train), ("valid", spec.n_valid),
                         ("test", spec.n_test)):
        rng = np.random.default_rng([spec.seed & 0xFFFFFFFF,
                                     {"train": 1, "valid": 2, "test": 3}[split]])
        records = []
        for _ in range(count):
            label = int(rng.integers(spec.num_labels))
            signal = per_class[label][int(rng.integers(spec.signals_per_class))]
            text = _sentence(rng, spec, pieces, all_signals, signal)
            observed = label
            if spec.label_noise > 0 and rng.random() < spec.label_noise:
                observed = int(rng.integers(spec.num_labels))
            records.append({"text": text, "label": observed})
        splits[split] = records
    return splits


def write_dataset(spec: SynthSpec, out_dir: str | Path) -> dict:
    """Write train/valid/test.jsonl plus a spec echo; returns the echo."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = generate(spec)
    for split, records in splits.items():
        lines = [json.dumps(rec, sort_keys=True, ensure_ascii=False)
                 for rec in records]
        (out_dir / f"{split}.jsonl").write_text("\n".join(lines) + "\n",
                                                encoding="utf-8")
    pieces, per_class = _build_inventory(spec)
    echo = {"spec": spec.to_json(), "pieces": pieces,
            "signals_per_class": per_class}
    (out_dir / "synth_spec.json").write_text(
        json.dumps(echo, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return echo
