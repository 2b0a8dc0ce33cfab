"""The downstream model: token-embedding BiLSTM classifier.

Trained once with stochastic tokenization, then frozen; every later stage
only evaluates per-tokenization losses against it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .corpus import Dataset, Vocabulary
from .lattice import Segmentation
from .metrics import macro_f1
from .rng import substream
from .tokenizers import TokenizerBase


@dataclass
class ClassifierConfig:
    num_labels: int
    embed_dim: int = 64
    hidden: int = 256
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    grad_clip: float = 5.0


class ClassifierModel:
    """BiLSTM over token embeddings; sentence vector = concat of final
    forward and final backward hidden states, then an affine output layer."""

    def __init__(self, config: ClassifierConfig, vocab: Vocabulary, seed: int):
        self.config = config
        self.vocab = vocab
        params = ad.ParamSet()
        rng = substream(seed, "classifier-init")
        self._emb = params.add(
            "emb", rng.normal(0.0, 0.1, size=(len(vocab), config.embed_dim)))
        self._lstm_f = ad.init_lstm(params, "lstm_f", config.embed_dim,
                                    config.hidden, rng)
        self._lstm_b = ad.init_lstm(params, "lstm_b", config.embed_dim,
                                    config.hidden, rng)
        self._out = ad.init_mlp(params, "out",
                                [2 * config.hidden, config.num_labels], rng)
        self.params = params

    def token_ids(self, segmentation: Segmentation) -> list[int]:
        return [self.vocab.lookup(tok) for tok in segmentation.tokens]

    def logits(self, segmentation: Segmentation) -> ad.Tensor:
        if not segmentation.tokens:
            raise ValueError("empty segmentation")
        ids = self.token_ids(segmentation)
        emb = ad.rows(self._emb, ids)
        hf = ad.lstm_forward(self._lstm_f, emb, "fwd")
        hb = ad.lstm_forward(self._lstm_b, emb, "bwd")
        sent = ad.concat([hf[-1], hb[0]], axis=1)  # final state per direction
        return ad.mlp_forward(self._out, sent)

    def classify_loss(self, segmentation: Segmentation, label: int) -> ad.Tensor:
        """Cross-entropy of the softmax output against the gold label."""
        log_probs = ad.log_softmax(self.logits(segmentation))
        return ad.scale(ad.pick(log_probs, (0, label)), -1.0)

    def loss_value(self, segmentation: Segmentation, label: int) -> float:
        return self.classify_loss(segmentation, label).item()

    def predict(self, segmentation: Segmentation) -> np.ndarray:
        """Softmax label distribution."""
        log_probs = ad.log_softmax(self.logits(segmentation))
        return np.exp(log_probs.data[0])

    def predict_label(self, segmentation: Segmentation) -> int:
        return int(np.argmax(self.predict(segmentation)))

    def save(self, manifest_path: str | Path, sidecar: dict | None = None) -> None:
        manifest_path = Path(manifest_path)
        self.params.save(manifest_path)
        doc = {"config": asdict(self.config),
               "vocab_tokens": self.vocab.tokens[2:],
               "continuation_prefix": self.vocab.continuation_prefix}
        doc.update(sidecar or {})
        manifest_path.with_suffix(".meta.json").write_text(
            json.dumps(doc, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8")

    @classmethod
    def load(cls, manifest_path: str | Path) -> "ClassifierModel":
        manifest_path = Path(manifest_path)
        doc = json.loads(manifest_path.with_suffix(".meta.json")
                         .read_text(encoding="utf-8"))
        config = ClassifierConfig(**doc["config"])
        vocab = Vocabulary(doc["vocab_tokens"],
                           continuation_prefix=doc.get("continuation_prefix"))
        model = cls(config, vocab, seed=0)
        model.params.load(manifest_path)
        return model


def evaluate_split(model: ClassifierModel, examples, tokenizer: TokenizerBase,
                   num_labels: int) -> float:
    preds = [model.predict_label(tokenizer.encode(ex.text)) for ex in examples]
    gold = [ex.label for ex in examples]
    return macro_f1(preds, gold, num_labels)


def train_classifier(config: ClassifierConfig, dataset: Dataset,
                     tokenizer: TokenizerBase, seed: int
                     ) -> tuple[ClassifierModel, list[dict]]:
    """Train with stochastic tokenization; keep the best-valid-F1 checkpoint.

    Validation after each epoch uses deterministic tokenization. Returns the
    model (restored to its best epoch) and the per-epoch log.
    """
    model = ClassifierModel(config, tokenizer.vocab, seed)
    log: list[dict] = []
    best: tuple[float, int, dict] | None = None
    order = np.arange(len(dataset.train))
    for epoch in range(config.epochs):
        shuffle_rng = substream(seed, "classifier-shuffle", epoch)
        shuffle_rng.shuffle(order)
        batch = 0
        model.params.zero_grad()
        for idx in order:
            ex = dataset.train[int(idx)]
            sample_rng = substream(seed, "classifier-sample", epoch, ex.id)
            seg = tokenizer.sample(ex.text, sample_rng)
            loss = ad.scale(model.classify_loss(seg, ex.label),
                            1.0 / config.batch_size)
            loss.backward()
            batch += 1
            if batch == config.batch_size:
                model.params.clip_grads(config.grad_clip)
                model.params.adam_step(lr=config.lr)
                model.params.zero_grad()
                batch = 0
        if batch:
            model.params.clip_grads(config.grad_clip)
            model.params.adam_step(lr=config.lr)
            model.params.zero_grad()
        valid_f1 = evaluate_split(model, dataset.valid, tokenizer,
                                  config.num_labels)
        log.append({"epoch": epoch, "valid_f1": valid_f1})
        if best is None or valid_f1 > best[0]:
            best = (valid_f1, epoch, model.params.state_copy())
    if best is not None:
        model.params.load_state(best[2])
        log.append({"best_epoch": best[1], "best_valid_f1": best[0]})
    return model, log
