"""Baseline tokenizers trained on the harvested dataset: BI-Tag and
a count-based unigram model."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .corpus import CharTable, Vocabulary, chars_of
from .harvest import RetokDataset
from .lattice import Segmentation, build_lattice, segmentation_from_spans, viterbi_best
from .rng import substream
from .span_tokenizer import _fit_char_model


@dataclass
class BiTagConfig:
    char_dim: int = 128
    hidden: int = 256
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    grad_clip: float = 5.0
    early_stop: bool = True
    patience: int = 20


class BiTagTokenizer:
    """BiLSTM-CRF sequence tagger over {B, I}; no vocabulary restriction,
    so its output tokens can fall outside the downstream vocabulary."""

    kind = "bitag"

    def __init__(self, char_table: CharTable,
                 config: BiTagConfig | None = None, seed: int = 0):
        self.char_table = char_table
        self.config = config or BiTagConfig()
        cfg = self.config
        params = ad.ParamSet()
        rng = substream(seed, "bitag-init")
        self._emb = params.add(
            "char_emb", rng.normal(0.0, 0.1, size=(len(char_table), cfg.char_dim)))
        self._lstm_f = ad.init_lstm(params, "lstm_f", cfg.char_dim, cfg.hidden, rng)
        self._lstm_b = ad.init_lstm(params, "lstm_b", cfg.char_dim, cfg.hidden, rng)
        self._mlp = ad.init_mlp(params, "emit", [2 * cfg.hidden, 2], rng)
        self._trans = params.add("transitions", np.zeros((2, 2)))
        self.params = params

    def _emissions(self, text: str) -> ad.Tensor:
        ids = self.char_table.encode(text)
        if not ids:
            raise ValueError("empty sentence")
        emb = ad.rows(self._emb, ids)
        h = ad.bilstm_forward(self._lstm_f, self._lstm_b, emb)
        return ad.mlp_forward(self._mlp, h)

    def loss(self, text: str, gold: Segmentation) -> ad.Tensor:
        tags = [0 if t == "B" else 1 for t in gold.bi_tags()]
        return ad.crf_nll(self._emissions(text), self._trans, tags)

    def tokenize(self, text: str) -> Segmentation:
        """Decode BI tags and cut the sentence at B positions."""
        emissions = self._emissions(text).data
        tags = ad.crf_decode(emissions, self._trans.data)
        spans: list[tuple[int, int]] = []
        start = 0
        for pos in range(1, len(tags)):
            if tags[pos] == 0:
                spans.append((start, pos))
                start = pos
        spans.append((start, len(tags)))
        return segmentation_from_spans(text, spans)

    encode = tokenize

    def reproducibility_accuracy(self, dhat: RetokDataset) -> float:
        from .metrics import bi_tag_accuracy
        accs = [bi_tag_accuracy(self.tokenize(rec.text), rec.segmentation)
                for rec in dhat.records]
        return sum(accs) / len(accs)

    def fit(self, dhat: RetokDataset, seed: int = 0) -> list[dict]:
        return _fit_char_model(self, dhat, seed, stream="bitag-train")

    def save(self, manifest_path: str | Path) -> None:
        manifest_path = Path(manifest_path)
        self.params.save(manifest_path)
        doc = {"kind": self.kind, "config": asdict(self.config),
               "char_table": self.char_table.to_json()}
        manifest_path.with_suffix(".meta.json").write_text(
            json.dumps(doc, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8")

    @classmethod
    def load(cls, manifest_path: str | Path) -> "BiTagTokenizer":
        manifest_path = Path(manifest_path)
        doc = json.loads(manifest_path.with_suffix(".meta.json")
                         .read_text(encoding="utf-8"))
        model = cls(CharTable.from_json(doc["char_table"]),
                    BiTagConfig(**doc["config"]))
        model.params.load(manifest_path)
        return model


class UnigramOptTokenizer:
    """Relative-frequency unigram model counted over the harvested dataset,
    with 0.5-count single-character backoff; Viterbi decoding."""

    kind = "unigram_opt"

    def __init__(self, log_prob: dict[str, float],
                 continuation_prefix: str | None = None):
        self.log_prob = log_prob
        self.vocab = Vocabulary(sorted(log_prob, key=lambda t: (-log_prob[t], t)),
                                continuation_prefix=continuation_prefix)

    @classmethod
    def build(cls, dhat: RetokDataset, char_table: CharTable,
              continuation_prefix: str | None = None) -> "UnigramOptTokenizer":
        if not dhat.records:
            raise ValueError("empty harvested dataset")
        counts: Counter[str] = Counter()
        for rec in dhat.records:
            counts.update(rec.segmentation.tokens)
        weighted = {tok: float(c) for tok, c in counts.items()}
        for ch in char_table.chars[1:]:
            weighted.setdefault(ch, 0.5)
            if continuation_prefix and not ch.isspace():
                weighted.setdefault(continuation_prefix + ch, 0.5)
        total = sum(weighted.values())
        log_prob = {tok: math.log(c / total) for tok, c in weighted.items()}
        return cls(log_prob, continuation_prefix=continuation_prefix)

    @property
    def unk_log_prob(self) -> float:
        return min(self.log_prob.values()) - 10.0

    def tokenize(self, text: str) -> Segmentation:
        def weight(i: int, j: int, tid: int) -> float:
            if tid == self.vocab.unk_id:
                return self.unk_log_prob
            return self.log_prob[self.vocab.tokens[tid]]

        return viterbi_best(build_lattice(text, self.vocab, weight))

    encode = tokenize

    def reproducibility_accuracy(self, dhat: RetokDataset) -> float:
        from .metrics import bi_tag_accuracy
        accs = [bi_tag_accuracy(self.tokenize(rec.text), rec.segmentation)
                for rec in dhat.records]
        return sum(accs) / len(accs)

    def save(self, path: str | Path) -> None:
        tokens = self.vocab.tokens[2:]
        doc = {"kind": self.kind, "tokens": tokens,
               "log_probs": [self.log_prob[t] for t in tokens],
               "continuation_prefix": self.vocab.continuation_prefix}
        Path(path).write_text(
            json.dumps(doc, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "UnigramOptTokenizer":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(dict(zip(doc["tokens"], doc["log_probs"])),
                   continuation_prefix=doc.get("continuation_prefix"))
