import math

import numpy as np
import pytest

from retok.classifier import (ClassifierConfig, ClassifierModel,
                              evaluate_split, train_classifier)
from retok.corpus import Dataset, LabeledExample, Vocabulary
from retok.lattice import segmentation_from_spans
from retok.tokenizers import MaxMatchTokenizer, UnigramTokenizer


def tiny_model(num_labels=3, seed=0, vocab=None):
    vocab = vocab or Vocabulary(["a", "b", "ab"])
    cfg = ClassifierConfig(num_labels=num_labels, embed_dim=4, hidden=5)
    return ClassifierModel(cfg, vocab, seed=seed)


def seg(text, spans):
    return segmentation_from_spans(text, spans)


class TestLossAndPredict:
    def test_uniform_logits_loss_ln_l(self):
        model = tiny_model(num_labels=4)
        for t in model.params.params.values():
            t.data[...] = 0.0
        s = seg("ab", [(0, 1), (1, 2)])
        assert model.loss_value(s, 2) == pytest.approx(math.log(4))
        assert np.allclose(model.predict(s), 0.25)

    def test_loss_equals_neg_log_prob(self):
        model = tiny_model()
        s = seg("ab", [(0, 2)])
        for label in range(3):
            assert model.loss_value(s, label) == pytest.approx(
                -math.log(model.predict(s)[label]))

    def test_predict_sums_to_one(self):
        model = tiny_model(seed=4)
        s = seg("ab", [(0, 1), (1, 2)])
        assert model.predict(s).sum() == pytest.approx(1.0, abs=1e-9)

    def test_deterministic(self):
        model = tiny_model()
        s = seg("ab", [(0, 2)])
        assert model.loss_value(s, 1) == model.loss_value(s, 1)

    def test_empty_segmentation_unrepresentable(self):
        with pytest.raises(ValueError):
            segmentation_from_spans("ab", [])

    def test_unk_token_flows_through(self):
        model = tiny_model()
        s = seg("zz", [(0, 2)])  # "zz" not in vocab -> unk id
        assert model.token_ids(s) == [model.vocab.unk_id]
        assert np.isfinite(model.loss_value(s, 0))


def separable_dataset():
    """Label 1 iff the text contains "xx"; tokenizer vocab covers both."""
    rng = np.random.default_rng(0)
    examples = []
    idx = 0
    out = {"train": [], "valid": [], "test": []}
    for split, count in (("train", 60), ("valid", 24), ("test", 24)):
        for _ in range(count):
            label = int(rng.integers(2))
            body = "".join("ab"[rng.integers(2)] for _ in range(6))
            text = body + ("xx" if label else "ay")
            out[split].append(LabeledExample(text=text, label=label, id=idx))
            idx += 1
    return Dataset(num_labels=2, **out)


class TestTraining:
    def test_separable_task_learned(self):
        ds = separable_dataset()
        tok = UnigramTokenizer(vocab_size=12).fit([e.text for e in ds.train])
        cfg = ClassifierConfig(num_labels=2, embed_dim=8, hidden=8, epochs=12,
                               lr=5e-3)
        model, log = train_classifier(cfg, ds, tok, seed=0)
        best = [e for e in log if "best_valid_f1" in e][0]
        assert best["best_valid_f1"] > 0.95

    def test_zero_epochs(self):
        ds = separable_dataset()
        tok = UnigramTokenizer(vocab_size=12).fit([e.text for e in ds.train])
        cfg = ClassifierConfig(num_labels=2, embed_dim=4, hidden=4, epochs=0)
        model, log = train_classifier(cfg, ds, tok, seed=0)
        assert log == []

    def test_seed_determinism(self):
        ds = separable_dataset()
        tok = UnigramTokenizer(vocab_size=12).fit([e.text for e in ds.train])
        cfg = ClassifierConfig(num_labels=2, embed_dim=4, hidden=4, epochs=2)

        def run():
            model, log = train_classifier(cfg, ds, tok, seed=7)
            return model.params.state_copy(), log

        s1, l1 = run()
        s2, l2 = run()
        assert l1 == l2
        assert all(np.array_equal(s1[k], s2[k]) for k in s1)

    def test_best_checkpoint_restored(self):
        ds = separable_dataset()
        tok = UnigramTokenizer(vocab_size=12).fit([e.text for e in ds.train])
        cfg = ClassifierConfig(num_labels=2, embed_dim=6, hidden=6, epochs=5)
        model, log = train_classifier(cfg, ds, tok, seed=1)
        best = [e for e in log if "best_valid_f1" in e][0]
        epochs = [e for e in log if "valid_f1" in e]
        assert best["best_valid_f1"] == max(e["valid_f1"] for e in epochs)
        assert evaluate_split(model, ds.valid, tok, 2) == pytest.approx(
            best["best_valid_f1"])


class TestPersistence:
    def test_round_trip(self, tmp_path):
        model = tiny_model(seed=3)
        path = tmp_path / "clf.json"
        model.save(path)
        clone = ClassifierModel.load(path)
        s = seg("ab", [(0, 1), (1, 2)])
        assert np.array_equal(clone.predict(s), model.predict(s))
        assert clone.vocab.tokens == model.vocab.tokens

    def test_maxmatch_vocab_prefix_preserved(self, tmp_path):
        tok = MaxMatchTokenizer(vocab_size=3).fit(["abab"])
        cfg = ClassifierConfig(num_labels=2, embed_dim=4, hidden=4)
        model = ClassifierModel(cfg, tok.vocab, seed=0)
        path = tmp_path / "clf.json"
        model.save(path)
        assert ClassifierModel.load(path).vocab.continuation_prefix == "##"
