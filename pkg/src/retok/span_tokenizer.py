"""Vocabulary-restricted neural span tokenizer.

A character BiLSTM feeds two distinct MLPs producing begin/end vectors;
the probability of the span (i, j) being a token is the sigmoid of their
dot product. Spans outside the downstream vocabulary are structurally
absent, so the tokenizer cannot emit unknown multi-character tokens.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .corpus import CharTable, Vocabulary, chars_of
from .harvest import RetokDataset
from .lattice import Lattice, Segmentation, build_lattice, viterbi_best
from .metrics import bi_tag_accuracy
from .rng import substream

UNK_FALLBACK_LOG_PROB = math.log(0.5)  # untrained-sigmoid prior


@dataclass
class SpanTokenizerConfig:
    char_dim: int = 128
    hidden: int = 256
    mlp_hidden: int = 256
    proj_dim: int = 128
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    grad_clip: float = 5.0
    early_stop: bool = True
    patience: int = 20
    # weight for the -log(1 - p) term over non-gold in-vocabulary spans;
    # 0.0 keeps the standard positive-spans-only objective
    negative_weight: float = 0.0


class SpanTokenizer:
    kind = "span"

    def __init__(self, vocab: Vocabulary, char_table: CharTable,
                 config: SpanTokenizerConfig | None = None, seed: int = 0):
        self.vocab = vocab
        self.char_table = char_table
        self.config = config or SpanTokenizerConfig()
        cfg = self.config
        params = ad.ParamSet()
        rng = substream(seed, "span-init")
        self._emb = params.add(
            "char_emb", rng.normal(0.0, 0.1, size=(len(char_table), cfg.char_dim)))
        self._lstm_f = ad.init_lstm(params, "lstm_f", cfg.char_dim, cfg.hidden, rng)
        self._lstm_b = ad.init_lstm(params, "lstm_b", cfg.char_dim, cfg.hidden, rng)
        self._mlp_begin = ad.init_mlp(params, "mlp_begin",
                                      [2 * cfg.hidden, cfg.mlp_hidden,
                                       cfg.proj_dim], rng)
        self._mlp_end = ad.init_mlp(params, "mlp_end",
                                    [2 * cfg.hidden, cfg.mlp_hidden,
                                     cfg.proj_dim], rng)
        self.params = params

    # -- forward

    def _begin_end(self, text: str) -> tuple[ad.Tensor, ad.Tensor]:
        ids = self.char_table.encode(text)
        if not ids:
            raise ValueError("empty sentence")
        emb = ad.rows(self._emb, ids)
        h = ad.bilstm_forward(self._lstm_f, self._lstm_b, emb)
        return (ad.mlp_forward(self._mlp_begin, h),
                ad.mlp_forward(self._mlp_end, h))

    def span_scores(self, text: str) -> dict[tuple[int, int], float]:
        """Probabilities for in-vocabulary spans (start, end exclusive).

        One BiLSTM run, two MLP passes, one matrix of dot products per
        sentence; out-of-vocabulary cells are absent.
        """
        chars = chars_of(text)
        hb, he = self._begin_end(text)
        logits = hb.data @ he.data.T  # begin index x end index (inclusive)
        max_len = self.vocab.max_token_chars
        scores: dict[tuple[int, int], float] = {}
        for i in range(len(chars)):
            for j in range(i + 1, min(i + max_len, len(chars)) + 1):
                if self.vocab.span_token(chars, i, j) is not None:
                    scores[(i, j)] = float(_sigmoid(logits[i, j - 1]))
        return scores

    def loss(self, text: str, gold: Segmentation) -> ad.Tensor:
        """Negative log probability of the gold spans (positive spans only).

        Single-character out-of-vocabulary fallbacks contribute zero;
        multi-character out-of-vocabulary gold spans are an error.
        """
        chars = chars_of(text)
        begin_idx, end_idx = [], []
        for start, end in gold.spans:
            if self.vocab.span_token(chars, start, end) is None:
                if end - start == 1:
                    continue  # unknown-character fallback
                raise ValueError(
                    f"gold span {(start, end)} {''.join(chars[start:end])!r} "
                    f"is out of vocabulary")
            begin_idx.append(start)
            end_idx.append(end - 1)
        neg_weight = self.config.negative_weight
        if not begin_idx and neg_weight <= 0.0:
            return ad.constant(0.0)
        hb, he = self._begin_end(text)
        total = ad.constant(0.0)
        if begin_idx:
            b = ad.rows(hb, begin_idx)
            e = ad.rows(he, end_idx)
            logits = ad.tensor_sum(ad.mul(b, e), axis=1)
            total = ad.scale(ad.tensor_sum(ad.logsigmoid(logits)), -1.0)
        if neg_weight > 0.0:
            gold_cells = {(s, e - 1) for s, e in gold.spans}
            nb, ne = [], []
            max_len = self.vocab.max_token_chars
            for i in range(len(chars)):
                for j in range(i + 1, min(i + max_len, len(chars)) + 1):
                    if ((i, j - 1) not in gold_cells
                            and self.vocab.span_token(chars, i, j) is not None):
                        nb.append(i)
                        ne.append(j - 1)
            if nb:
                logits = ad.tensor_sum(
                    ad.mul(ad.rows(hb, nb), ad.rows(he, ne)), axis=1)
                # log(1 - sigmoid(x)) = logsigmoid(-x)
                neg = ad.tensor_sum(ad.logsigmoid(ad.scale(logits, -1.0)))
                total = ad.add(total, ad.scale(neg, -neg_weight))
        return total

    # -- decoding

    def _weight_fn(self, text: str):
        chars = chars_of(text)
        hb, he = self._begin_end(text)
        logits = hb.data @ he.data.T

        def weight(i: int, j: int, tid: int) -> float:
            if tid == self.vocab.unk_id:
                return UNK_FALLBACK_LOG_PROB
            return float(_logsigmoid(logits[i, j - 1]))

        return weight

    def lattice(self, text: str) -> Lattice:
        return build_lattice(text, self.vocab, self._weight_fn(text))

    def tokenize(self, text: str) -> Segmentation:
        """Highest-probability segmentation by Viterbi over the span lattice."""
        return viterbi_best(self.lattice(text))

    encode = tokenize  # deterministic; same surface as the base tokenizers

    # -- training

    def reproducibility_accuracy(self, dhat: RetokDataset) -> float:
        accs = [bi_tag_accuracy(self.tokenize(rec.text), rec.segmentation)
                for rec in dhat.records]
        return sum(accs) / len(accs)

    def fit(self, dhat: RetokDataset, seed: int = 0) -> list[dict]:
        """Minimize the mean gold-span loss over the harvested dataset.

        Returns the per-epoch log (mean loss and reproducibility accuracy).
        Optionally stops early when the reproducibility accuracy plateaus.
        """
        return _fit_char_model(self, dhat, seed, stream="span-train")

    def epoch_losses(self, dhat: RetokDataset) -> list[float]:
        return [self.loss(rec.text, rec.segmentation).item()
                for rec in dhat.records]

    # -- persistence

    def save(self, manifest_path: str | Path) -> None:
        manifest_path = Path(manifest_path)
        self.params.save(manifest_path)
        doc = {"kind": self.kind, "config": asdict(self.config),
               "vocab_tokens": self.vocab.tokens[2:],
               "continuation_prefix": self.vocab.continuation_prefix,
               "char_table": self.char_table.to_json()}
        manifest_path.with_suffix(".meta.json").write_text(
            json.dumps(doc, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8")

    @classmethod
    def load(cls, manifest_path: str | Path) -> "SpanTokenizer":
        manifest_path = Path(manifest_path)
        doc = json.loads(manifest_path.with_suffix(".meta.json")
                         .read_text(encoding="utf-8"))
        vocab = Vocabulary(doc["vocab_tokens"],
                           continuation_prefix=doc.get("continuation_prefix"))
        model = cls(vocab, CharTable.from_json(doc["char_table"]),
                    SpanTokenizerConfig(**doc["config"]))
        model.params.load(manifest_path)
        return model


def _fit_char_model(model, dhat: RetokDataset, seed: int, stream: str) -> list[dict]:
    """Shared Adam training loop for the char-level tokenizers."""
    cfg = model.config
    if not dhat.records:
        raise ValueError("empty harvested dataset")
    log: list[dict] = []
    order = np.arange(len(dhat.records))
    best_acc = -1.0
    since_best = 0
    for epoch in range(cfg.epochs):
        rng = substream(seed, stream, epoch)
        rng.shuffle(order)
        total_loss = 0.0
        batch = 0
        model.params.zero_grad()
        for idx in order:
            rec = dhat.records[int(idx)]
            loss = model.loss(rec.text, rec.segmentation)
            total_loss += loss.item()
            if loss.requires_grad:
                ad.scale(loss, 1.0 / cfg.batch_size).backward()
            batch += 1
            if batch == cfg.batch_size:
                model.params.clip_grads(cfg.grad_clip)
                model.params.adam_step(lr=cfg.lr)
                model.params.zero_grad()
                batch = 0
        if batch:
            model.params.clip_grads(cfg.grad_clip)
            model.params.adam_step(lr=cfg.lr)
            model.params.zero_grad()
        acc = model.reproducibility_accuracy(dhat)
        log.append({"epoch": epoch, "mean_loss": total_loss / len(dhat.records),
                    "reproducibility_accuracy": acc})
        if acc > best_acc + 1e-4:
            best_acc = acc
            since_best = 0
        else:
            since_best += 1
            if cfg.early_stop and since_best >= cfg.patience:
                log.append({"early_stop_epoch": epoch})
                break
    return log


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    ex = math.exp(x)
    return ex / (1.0 + ex)


def _logsigmoid(x: float) -> float:
    return -math.log1p(math.exp(-abs(x))) + min(x, 0.0)
