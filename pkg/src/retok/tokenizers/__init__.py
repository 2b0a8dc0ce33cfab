"""Trainable downstream tokenizers and their file format."""

from __future__ import annotations

import json
from pathlib import Path

from .base import TokenizerBase, sampled_candidates
from .bpe import BpeTokenizer
from .maxmatch import MaxMatchTokenizer
from .unigram import UnigramTokenizer

TOKENIZER_FORMAT_VERSION = 1

_KINDS = {cls.kind: cls for cls in (UnigramTokenizer, BpeTokenizer, MaxMatchTokenizer)}


class TokenizerFormatError(ValueError):
    pass


def make_tokenizer(kind: str, **kwargs) -> TokenizerBase:
    if kind not in _KINDS:
        raise ValueError(f"unknown tokenizer kind {kind!r}")
    return _KINDS[kind](**kwargs)


def save_tokenizer(model: TokenizerBase, path: str | Path) -> None:
    doc = model.to_json()
    doc["version"] = TOKENIZER_FORMAT_VERSION
    Path(path).write_text(
        json.dumps(doc, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8")


def load_tokenizer(path: str | Path) -> TokenizerBase:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise TokenizerFormatError(f"malformed tokenizer file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "kind" not in doc:
        raise TokenizerFormatError(f"{path} is not a tokenizer file")
    if doc.get("version") != TOKENIZER_FORMAT_VERSION:
        raise TokenizerFormatError(
            f"unsupported tokenizer format version {doc.get('version')!r}")
    kind = doc["kind"]
    if kind not in _KINDS:
        raise TokenizerFormatError(f"unknown tokenizer kind {kind!r}")
    try:
        return _KINDS[kind].from_json(doc)
    except (KeyError, TypeError) as exc:
        raise TokenizerFormatError(f"malformed tokenizer file {path}: {exc}") from exc


__all__ = ["TokenizerBase", "UnigramTokenizer", "BpeTokenizer",
           "MaxMatchTokenizer", "make_tokenizer", "save_tokenizer",
           "load_tokenizer", "sampled_candidates", "TokenizerFormatError"]
