"""Experiment configuration (versioned JSON schema) and run manifests."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field, asdict
from pathlib import Path

CONFIG_VERSION = 1
MANIFEST_VERSION = 1

OPT_KINDS = ("span", "bitag", "unigram_opt")


class ConfigError(ValueError):
    """Schema violation; the message lists every offending field."""


@dataclass
class TokenizerSection:
    kind: str = "unigram"
    vocab_size: int = 800
    alpha: float = 0.2
    dropout: float = 0.1
    seed_max_len: int = 8
    seed_min_freq: int = 2


@dataclass
class ClassifierSection:
    embed_dim: int = 64
    hidden: int = 256
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    grad_clip: float = 5.0


@dataclass
class CandidateSection:
    n: int = 25
    mode: str = "nbest"
    dedup: bool = True


@dataclass
class SpanSection:
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
    negative_weight: float = 0.0


@dataclass
class BiTagSection:
    char_dim: int = 128
    hidden: int = 256
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    grad_clip: float = 5.0
    early_stop: bool = True
    patience: int = 20


@dataclass
class ExperimentConfig:
    dataset_dir: str
    out_dir: str
    seed: int = 0
    nfkc: bool = False
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    candidates: CandidateSection = field(default_factory=CandidateSection)
    span: SpanSection = field(default_factory=SpanSection)
    bitag: BiTagSection = field(default_factory=BiTagSection)
    opt_kinds: list[str] = field(default_factory=lambda: list(OPT_KINDS))
    eval_seeds: list[int] = field(default_factory=lambda: [1, 2, 3])

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["version"] = CONFIG_VERSION
        return doc


_SECTIONS = {
    "tokenizer": TokenizerSection,
    "classifier": ClassifierSection,
    "candidates": CandidateSection,
    "span": SpanSection,
    "bitag": BiTagSection,
}


def _check_scalar(value, ftype, path: str, errors: list[str]):
    if ftype is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path}: expected a number, got {value!r}")
            return None
        return float(value)
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{path}: expected an integer, got {value!r}")
            return None
    elif not isinstance(value, ftype):
        errors.append(f"{path}: expected {ftype.__name__}, got {value!r}")
        return None
    return value


def _parse_section(obj, cls, path: str, errors: list[str]):
    if not isinstance(obj, dict):
        errors.append(f"{path}: expected an object")
        return cls()
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in obj.items():
        if key not in fields:
            errors.append(f"{path}.{key}: unknown key")
            continue
        ftype = {"str": str, "int": int, "float": float, "bool": bool}[
            fields[key].type]
        checked = _check_scalar(value, ftype, f"{path}.{key}", errors)
        if checked is not None:
            kwargs[key] = checked
    return cls(**kwargs)


def parse_config(obj: dict, source: str = "<config>") -> ExperimentConfig:
    """Validate a config document; raises ConfigError with field-level detail."""
    errors: list[str] = []
    if not isinstance(obj, dict):
        raise ConfigError(f"{source}: config must be a JSON object")
    if obj.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        errors.append(f"version: unsupported value {obj.get('version')!r} "
                      f"(expected {CONFIG_VERSION})")
    known = {"version", "dataset_dir", "out_dir", "seed", "nfkc",
             "opt_kinds", "eval_seeds", *_SECTIONS}
    for key in obj:
        if key not in known:
            errors.append(f"{key}: unknown key")
    kwargs = {}
    for name, ftype in (("dataset_dir", str), ("out_dir", str)):
        if name not in obj:
            errors.append(f"{name}: required")
        else:
            checked = _check_scalar(obj[name], ftype, name, errors)
            if checked is not None:
                kwargs[name] = checked
    for name, ftype in (("seed", int), ("nfkc", bool)):
        if name in obj:
            checked = _check_scalar(obj[name], ftype, name, errors)
            if checked is not None:
                kwargs[name] = checked
    for name, cls in _SECTIONS.items():
        if name in obj:
            kwargs[name] = _parse_section(obj[name], cls, name, errors)
    if "opt_kinds" in obj:
        kinds = obj["opt_kinds"]
        if (not isinstance(kinds, list)
                or any(k not in OPT_KINDS for k in kinds)):
            errors.append(f"opt_kinds: expected a list drawn from {OPT_KINDS}")
        else:
            kwargs["opt_kinds"] = list(kinds)
    if "eval_seeds" in obj:
        seeds = obj["eval_seeds"]
        if (not isinstance(seeds, list) or not seeds
                or any(isinstance(s, bool) or not isinstance(s, int)
                       for s in seeds)):
            errors.append("eval_seeds: expected a non-empty list of integers")
        else:
            kwargs["eval_seeds"] = list(seeds)
    if "tokenizer" in kwargs and kwargs["tokenizer"].kind not in (
            "unigram", "bpe", "maxmatch"):
        errors.append(f"tokenizer.kind: unknown kind {kwargs['tokenizer'].kind!r}")
    if "candidates" in kwargs and kwargs["candidates"].mode not in (
            "nbest", "sample"):
        errors.append(f"candidates.mode: unknown mode {kwargs['candidates'].mode!r}")
    if errors:
        raise ConfigError(f"{source}: " + "; ".join(errors))
    return ExperimentConfig(**kwargs)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON: {exc}") from exc
    return parse_config(obj, source=str(path))


# -- run manifests


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=1,
                                       ensure_ascii=False) + "\n")


@dataclass
class RunManifest:
    """Provenance record written next to each command's outputs."""

    command: str
    config_echo: dict
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    wall_clock_sec: float = 0.0
    version: int = MANIFEST_VERSION

    def add_input(self, path: str | Path) -> None:
        self.inputs[Path(path).name] = sha256_file(path)

    def add_output(self, path: str | Path) -> None:
        self.outputs[Path(path).name] = sha256_file(path)

    def save(self, path: str | Path) -> None:
        atomic_write_json(path, asdict(self))

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


class StaleArtifactError(RuntimeError):
    """An input artifact does not match the hash recorded upstream."""
