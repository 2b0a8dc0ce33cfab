"""Dataset ingestion, character handling, and vocabulary bookkeeping."""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"


class SchemaError(ValueError):
    """Raised when an input file violates the expected record schema."""


@dataclass(frozen=True)
class LabeledExample:
    text: str
    label: int
    id: int


@dataclass
class Dataset:
    train: list[LabeledExample]
    valid: list[LabeledExample]
    test: list[LabeledExample]
    num_labels: int

    def split(self, name: str) -> list[LabeledExample]:
        if name not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


def chars_of(text: str) -> list[str]:
    """Characters of a text as Unicode scalar values; len() of this is |s|."""
    return list(text)


def load_jsonl(path: str | Path, split: str, *, nfkc: bool = False,
               num_labels: int | None = None) -> list[LabeledExample]:
    """Load one split from a JSONL file of {"text": str, "label": int} records.

    Ids are assigned sequentially in file order. With ``nfkc`` the text is
    NFKC-normalized on ingestion (off by default).
    """
    path = Path(path)
    examples: list[LabeledExample] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno} ({split}): malformed JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise SchemaError(f"{path}:{lineno} ({split}): expected an object")
            if "text" not in obj:
                raise SchemaError(f"{path}:{lineno} ({split}): missing text")
            if "label" not in obj:
                raise SchemaError(f"{path}:{lineno} ({split}): missing label")
            text, label = obj["text"], obj["label"]
            if not isinstance(text, str):
                raise SchemaError(f"{path}:{lineno} ({split}): text must be a string")
            if not isinstance(label, int) or isinstance(label, bool):
                raise SchemaError(f"{path}:{lineno} ({split}): label must be an integer")
            if not text.strip():
                raise SchemaError(f"{path}:{lineno} ({split}): empty text")
            if num_labels is not None and not (0 <= label < num_labels):
                raise SchemaError(
                    f"{path}:{lineno} ({split}): label {label} out of range [0, {num_labels})")
            if nfkc:
                text = unicodedata.normalize("NFKC", text)
            examples.append(LabeledExample(text=text, label=label, id=len(examples)))
    return examples


def load_dataset(dataset_dir: str | Path, *, nfkc: bool = False) -> Dataset:
    """Load train/valid/test.jsonl from a dataset directory."""
    dataset_dir = Path(dataset_dir)
    splits = {}
    for name in ("train", "valid", "test"):
        path = dataset_dir / f"{name}.jsonl"
        if not path.exists():
            raise FileNotFoundError(f"missing split file {path}")
        splits[name] = load_jsonl(path, name, nfkc=nfkc)
    num_labels = 1 + max(ex.label for exs in splits.values() for ex in exs)
    if num_labels < 2:
        raise SchemaError(f"dataset in {dataset_dir} has fewer than 2 labels")
    return Dataset(num_labels=num_labels, **splits)


@dataclass
class CharTable:
    """Dense char -> id map over the training alphabet plus an UNK character."""

    chars: list[str] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)
    unk_id: int = 0

    @classmethod
    def build(cls, train: list[LabeledExample] | list[str]) -> "CharTable":
        if not train:
            raise ValueError("cannot build a character table from an empty corpus")
        table = cls()
        table.chars.append("<unk-char>")
        table.unk_id = 0
        for item in train:
            text = item.text if isinstance(item, LabeledExample) else item
            for ch in chars_of(text):
                if ch not in table.index:
                    table.index[ch] = len(table.chars)
                    table.chars.append(ch)
        return table

    def __len__(self) -> int:
        return len(self.chars)

    def encode(self, text: str) -> list[int]:
        idx = self.index
        return [idx.get(ch, self.unk_id) for ch in chars_of(text)]

    def __contains__(self, ch: str) -> bool:
        return ch in self.index

    def to_json(self) -> dict:
        return {"chars": self.chars[1:]}

    @classmethod
    def from_json(cls, obj: dict) -> "CharTable":
        table = cls()
        table.chars.append("<unk-char>")
        for ch in obj["chars"]:
            table.index[ch] = len(table.chars)
            table.chars.append(ch)
        return table


def build_char_table(train: list[LabeledExample]) -> CharTable:
    return CharTable.build(train)


class Vocabulary:
    """Token <-> dense id map with UNK/pad specials and span lookup.

    Span lookup (`span_token`) maps a substring of a sentence to the vocab
    entry that represents it, honoring an optional continuation prefix for
    word-internal tokens (MaxMatch convention). Tokens that would span a
    whitespace character are rejected here, matching the construction-time
    exclusion of space-crossing tokens.
    """

    def __init__(self, tokens: list[str], *, continuation_prefix: str | None = None):
        self.tokens: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.index: dict[str, int] = {PAD_TOKEN: 0, UNK_TOKEN: 1}
        self.continuation_prefix = continuation_prefix
        for tok in tokens:
            self.add(tok)
        self.pad_id = 0
        self.unk_id = 1

    def add(self, token: str) -> int:
        if not token:
            raise ValueError("empty token")
        if token in self.index:
            return self.index[token]
        self.index[token] = len(self.tokens)
        self.tokens.append(token)
        return self.index[token]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def lookup(self, token: str) -> int:
        return self.index.get(token, self.unk_id)

    @property
    def max_token_chars(self) -> int:
        prefix = self.continuation_prefix or ""
        best = 1
        for tok in self.tokens[2:]:
            surface = tok[len(prefix):] if prefix and tok.startswith(prefix) else tok
            best = max(best, len(surface))
        return best

    def span_token(self, chars: list[str], start: int, end: int) -> str | None:
        """Vocab entry covering chars[start:end], or None if out of vocabulary."""
        sub = "".join(chars[start:end])
        if end - start > 1 and any(ch.isspace() for ch in sub):
            return None
        if self.continuation_prefix is not None:
            word_start = start == 0 or chars[start - 1].isspace()
            if not word_start and not sub.isspace():
                cont = self.continuation_prefix + sub
                return cont if cont in self.index else None
        return sub if sub in self.index else None

    def surface(self, token: str) -> str:
        """Token string with any continuation prefix stripped."""
        prefix = self.continuation_prefix
        if prefix and token.startswith(prefix) and len(token) > len(prefix):
            return token[len(prefix):]
        return token
