"""Command-line pipeline: dataset generation, training, collection,
optimized-tokenizer training, evaluation, and N sweeps.

Every command validates its config first, names the producing command for
any missing upstream artifact, writes outputs atomically, and records a
RunManifest with input/output hashes next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

from .baselines import BiTagConfig, BiTagTokenizer, UnigramOptTokenizer
from .classifier import ClassifierConfig, ClassifierModel, train_classifier
from .config import (ConfigError, ExperimentConfig, RunManifest,
                     StaleArtifactError, atomic_write_json, load_config,
                     sha256_file)
from .corpus import CharTable, Dataset, load_dataset
from .harvest import RetokDataset, collect_best, oracle_select
from .metrics import EvalReport, avg_tokens, macro_f1, unigram_perplexity, unk_ratio
from .span_tokenizer import SpanTokenizer, SpanTokenizerConfig
from .synth import SynthSpec, write_dataset
from .tokenizers import TokenizerBase, load_tokenizer, make_tokenizer, save_tokenizer

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3


class MissingArtifactError(RuntimeError):
    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing artifact {path}; run `retok {producer}` first")


# -- artifact layout

def tokenizer_path(out: Path) -> Path:
    return out / "tokenizer.json"


def classifier_path(out: Path) -> Path:
    return out / "classifier.json"


def dhat_path(out: Path) -> Path:
    return out / "dhat.jsonl"


def opt_path(out: Path, kind: str, seed: int | None = None) -> Path:
    if kind == "unigram_opt":
        return out / "opt_unigram_opt.json"
    return out / f"opt_{kind}_seed{seed}.json"


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return path


def _manifest(out: Path, command: str, cfg: ExperimentConfig,
              inputs: list[Path], outputs: list[Path], started: float) -> Path:
    man = RunManifest(command=command, config_echo=cfg.to_json(),
                      wall_clock_sec=time.monotonic() - started)
    for p in inputs:
        man.add_input(p)
    for p in outputs:
        man.add_output(p)
    path = out / f"{command.replace('-', '_')}.run.json"
    man.save(path)
    return path


def _load_corpus(cfg: ExperimentConfig) -> Dataset:
    try:
        return load_dataset(cfg.dataset_dir, nfkc=cfg.nfkc)
    except FileNotFoundError as exc:
        raise MissingArtifactError(Path(cfg.dataset_dir), "gen-synth") from exc


def _char_table(dataset: Dataset) -> CharTable:
    return CharTable.build(dataset.train)


# -- commands

def cmd_gen_synth(spec: SynthSpec, out_dir: str | Path) -> dict:
    started = time.monotonic()
    out = Path(out_dir)
    echo = write_dataset(spec, out)
    cfg_echo = {"synth_spec": spec.to_json()}
    man = RunManifest(command="gen-synth", config_echo=cfg_echo,
                      wall_clock_sec=time.monotonic() - started)
    for name in ("train.jsonl", "valid.jsonl", "test.jsonl", "synth_spec.json"):
        man.add_output(out / name)
    man.save(out / "gen_synth.run.json")
    return echo


def cmd_train_tokenizer(cfg: ExperimentConfig) -> TokenizerBase:
    started = time.monotonic()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _load_corpus(cfg)
    kwargs = {"vocab_size": cfg.tokenizer.vocab_size}
    if cfg.tokenizer.kind == "unigram":
        kwargs["alpha"] = cfg.tokenizer.alpha
        kwargs["seed_max_len"] = cfg.tokenizer.seed_max_len
        kwargs["seed_min_freq"] = cfg.tokenizer.seed_min_freq
    else:
        kwargs["dropout"] = cfg.tokenizer.dropout
    tok = make_tokenizer(cfg.tokenizer.kind, **kwargs)
    tok.fit([ex.text for ex in dataset.train])
    save_tokenizer(tok, tokenizer_path(out))
    _manifest(out, "train-tokenizer", cfg,
              inputs=[Path(cfg.dataset_dir) / "train.jsonl"],
              outputs=[tokenizer_path(out)], started=started)
    return tok


def cmd_train_downstream(cfg: ExperimentConfig) -> tuple[ClassifierModel, float]:
    started = time.monotonic()
    out = Path(cfg.out_dir)
    tok_file = _require(tokenizer_path(out), "train-tokenizer")
    tok = load_tokenizer(tok_file)
    dataset = _load_corpus(cfg)
    ccfg = ClassifierConfig(num_labels=dataset.num_labels,
                            **asdict(cfg.classifier))
    model, log = train_classifier(ccfg, dataset, tok, cfg.seed)
    model.save(classifier_path(out),
               sidecar={"tokenizer_sha256": sha256_file(tok_file)})
    atomic_write_json(out / "classifier_log.json", log)
    _manifest(out, "train-downstream", cfg,
              inputs=[tok_file, Path(cfg.dataset_dir) / "train.jsonl",
                      Path(cfg.dataset_dir) / "valid.jsonl"],
              outputs=[classifier_path(out),
                       classifier_path(out).with_suffix(".bin"),
                       classifier_path(out).with_suffix(".meta.json"),
                       out / "classifier_log.json"], started=started)
    best = [e for e in log if "best_valid_f1" in e]
    return model, best[0]["best_valid_f1"] if best else float("nan")


def cmd_collect(cfg: ExperimentConfig) -> RetokDataset:
    started = time.monotonic()
    out = Path(cfg.out_dir)
    tok_file = _require(tokenizer_path(out), "train-tokenizer")
    clf_file = _require(classifier_path(out), "train-downstream")
    tok = load_tokenizer(tok_file)
    model = ClassifierModel.load(clf_file)
    dataset = _load_corpus(cfg)
    dhat = collect_best(dataset.train, model, tok, n=cfg.candidates.n,
                        mode=cfg.candidates.mode, seed=cfg.seed,
                        dedup=cfg.candidates.dedup)
    dhat.save(dhat_path(out))
    original = [tok.encode(ex.text) for ex in dataset.train]
    harvested = [rec.segmentation for rec in dhat.records]
    stats = {
        "original": {"avg_tokens": avg_tokens(original),
                     "unigram_perplexity": unigram_perplexity(original)},
        "harvested": {"avg_tokens": avg_tokens(harvested),
                      "unigram_perplexity": unigram_perplexity(harvested)},
        "mean_loss_original": sum(
            model.loss_value(seg, ex.label)
            for seg, ex in zip(original, dataset.train)) / len(original),
        "mean_loss_harvested": sum(r.loss for r in dhat.records) / len(dhat),
    }
    atomic_write_json(out / "dhat_stats.json", stats)
    _manifest(out, "collect", cfg,
              inputs=[tok_file, clf_file,
                      Path(cfg.dataset_dir) / "train.jsonl"],
              outputs=[dhat_path(out), out / "dhat_stats.json"],
              started=started)
    return dhat


def cmd_train_opt(cfg: ExperimentConfig) -> dict[str, list[Path]]:
    started = time.monotonic()
    out = Path(cfg.out_dir)
    dhat_file = _require(dhat_path(out), "collect")
    clf_file = _require(classifier_path(out), "train-downstream")
    dhat = RetokDataset.load(dhat_file)
    model = ClassifierModel.load(clf_file)
    dataset = _load_corpus(cfg)
    char_table = _char_table(dataset)
    produced: dict[str, list[Path]] = {}
    logs: dict[str, dict] = {}
    for kind in cfg.opt_kinds:
        paths: list[Path] = []
        if kind == "span":
            for seed in cfg.eval_seeds:
                st = SpanTokenizer(model.vocab, char_table,
                                   SpanTokenizerConfig(**asdict(cfg.span)),
                                   seed=seed)
                logs[f"span_seed{seed}"] = st.fit(dhat, seed=seed)
                path = opt_path(out, kind, seed)
                st.save(path)
                paths.append(path)
        elif kind == "bitag":
            for seed in cfg.eval_seeds:
                bt = BiTagTokenizer(char_table,
                                    BiTagConfig(**asdict(cfg.bitag)),
                                    seed=seed)
                logs[f"bitag_seed{seed}"] = bt.fit(dhat, seed=seed)
                path = opt_path(out, kind, seed)
                bt.save(path)
                paths.append(path)
        elif kind == "unigram_opt":
            uo = UnigramOptTokenizer.build(
                dhat, char_table,
                continuation_prefix=model.vocab.continuation_prefix)
            path = opt_path(out, kind)
            uo.save(path)
            paths.append(path)
        produced[kind] = paths
    atomic_write_json(out / "train_opt_log.json", logs)
    outputs = [p for paths in produced.values() for p in paths]
    _manifest(out, "train-opt", cfg, inputs=[dhat_file, clf_file],
              outputs=outputs + [out / "train_opt_log.json"], started=started)
    return produced


def _check_staleness(out: Path, force: bool) -> None:
    """Refuse to evaluate artifacts produced against different inputs."""
    if force:
        return
    checks = [
        ("collect.run.json", "tokenizer.json", "train-tokenizer or collect"),
        ("collect.run.json", "classifier.json", "train-downstream or collect"),
        ("train_opt.run.json", "classifier.json", "train-downstream or train-opt"),
        ("train_downstream.run.json", "tokenizer.json",
         "train-tokenizer or train-downstream"),
    ]
    for man_name, artifact, producers in checks:
        man_path = out / man_name
        artifact_path = out / artifact
        if not man_path.exists() or not artifact_path.exists():
            continue
        recorded = RunManifest.load(man_path).inputs.get(artifact)
        if recorded is not None and recorded != sha256_file(artifact_path):
            raise StaleArtifactError(
                f"{artifact} has changed since {man_name} was written; "
                f"rerun `retok {producers.split(' or ')[-1]}` "
                f"(or pass --force to evaluate anyway)")


def _seg_stats(segs, vocab, char_table) -> dict:
    return {"unk_ratio": unk_ratio(segs, vocab, char_table),
            "avg_tokens": avg_tokens(segs),
            "unigram_perplexity": unigram_perplexity(segs)}


def cmd_evaluate(cfg: ExperimentConfig, split: str, force: bool = False) -> dict:
    started = time.monotonic()
    out = Path(cfg.out_dir)
    tok_file = _require(tokenizer_path(out), "train-tokenizer")
    clf_file = _require(classifier_path(out), "train-downstream")
    _check_staleness(out, force)
    tok = load_tokenizer(tok_file)
    model = ClassifierModel.load(clf_file)
    dataset = _load_corpus(cfg)
    char_table = _char_table(dataset)
    examples = dataset.split(split)
    gold = [ex.label for ex in examples]
    texts = [ex.text for ex in examples]

    methods: dict[str, dict] = {}

    def method_report(segs) -> dict:
        preds = [model.predict_label(seg) for seg in segs]
        rep = {"macro_f1": macro_f1(preds, gold, dataset.num_labels)}
        rep.update(_seg_stats(segs, model.vocab, char_table))
        return rep

    original_segs = [tok.encode(t) for t in texts]
    methods["original"] = method_report(original_segs)

    oracle_segs, oracle_f1 = oracle_select(
        examples, model, tok, n=cfg.candidates.n, mode=cfg.candidates.mode,
        seed=cfg.seed, num_labels=dataset.num_labels,
        dedup=cfg.candidates.dedup)
    methods["oracle"] = {"macro_f1": oracle_f1,
                         **_seg_stats(oracle_segs, model.vocab, char_table)}

    inputs = [tok_file, clf_file, Path(cfg.dataset_dir) / f"{split}.jsonl"]
    loaders = {"span": SpanTokenizer.load, "bitag": BiTagTokenizer.load,
               "unigram_opt": UnigramOptTokenizer.load}
    for kind in cfg.opt_kinds:
        seeds = [None] if kind == "unigram_opt" else cfg.eval_seeds
        trials = []
        for seed in seeds:
            path = _require(opt_path(out, kind, seed), "train-opt")
            inputs.append(path)
            opt_tok = loaders[kind](path)
            trials.append(method_report([opt_tok.tokenize(t) for t in texts]))
        report = {key: sum(t[key] for t in trials) / len(trials)
                  for key in trials[0]}
        if len(trials) > 1:
            report["trials"] = trials
            report["seeds"] = list(cfg.eval_seeds)
        methods[kind] = report

    report = EvalReport(
        metrics={f"{m}_{k}": v for m, rep in methods.items()
                 for k, v in rep.items() if isinstance(v, float)},
        metadata={"split": split, "n_candidates": cfg.candidates.n,
                  "candidate_mode": cfg.candidates.mode, "seed": cfg.seed,
                  "methods": methods}).to_json()
    path = out / f"eval_{split}.json"
    atomic_write_json(path, report)
    _manifest(out, f"evaluate-{split}", cfg, inputs=inputs, outputs=[path],
              started=started)
    return report


_TABLE_COLUMNS = [("original", "Original"), ("unigram_opt", "Unigram^OPT"),
                  ("bitag", "BI-Tag"), ("span", "Proposed"),
                  ("oracle", "Oracle")]
_TABLE_ROWS = [("macro_f1", "macro-F1"), ("unk_ratio", "UNK ratio"),
               ("avg_tokens", "avg tokens"),
               ("unigram_perplexity", "perplexity")]


def render_table(report: dict) -> str:
    methods = report["metadata"]["methods"]
    cols = [(key, title) for key, title in _TABLE_COLUMNS if key in methods]
    width = 12
    head = "metric".ljust(16) + "".join(t.rjust(width) for _, t in cols)
    lines = [head, "-" * len(head)]
    for key, title in _TABLE_ROWS:
        cells = []
        for mkey, _ in cols:
            value = methods[mkey].get(key)
            cells.append(("-" if value is None else f"{value:.4f}").rjust(width))
        lines.append(title.ljust(16) + "".join(cells))
    return "\n".join(lines)


def cmd_sweep_n(cfg: ExperimentConfig, ns: list[int], split: str) -> dict:
    """Oracle and original F1 for increasing candidate counts N.

    With n-best candidates the candidate sets are nested, reproducing the
    more-candidates-never-hurt trend.
    """
    started = time.monotonic()
    out = Path(cfg.out_dir)
    tok_file = _require(tokenizer_path(out), "train-tokenizer")
    clf_file = _require(classifier_path(out), "train-downstream")
    tok = load_tokenizer(tok_file)
    model = ClassifierModel.load(clf_file)
    dataset = _load_corpus(cfg)
    examples = dataset.split(split)
    gold = [ex.label for ex in examples]
    original = [tok.encode(ex.text) for ex in examples]
    preds = [model.predict_label(seg) for seg in original]
    original_f1 = macro_f1(preds, gold, dataset.num_labels)
    points = []
    for n in sorted(ns):
        _, f1 = oracle_select(examples, model, tok, n=n,
                              mode=cfg.candidates.mode, seed=cfg.seed,
                              num_labels=dataset.num_labels,
                              dedup=cfg.candidates.dedup)
        points.append({"n": n, "oracle_f1": f1})
    report = {"split": split, "original_f1": original_f1,
              "candidate_mode": cfg.candidates.mode, "points": points}
    path = out / f"sweep_n_{split}.json"
    atomic_write_json(path, report)
    _manifest(out, f"sweep-n-{split}", cfg,
              inputs=[tok_file, clf_file,
                      Path(cfg.dataset_dir) / f"{split}.jsonl"],
              outputs=[path], started=started)
    return report


# -- argument parsing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="retok",
        description="Tokenization optimization as classifier post-processing")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None, help="override the output dir")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads (accepted; execution is "
                            "single-threaded and deterministic)")

    common(sub.add_parser("train-tokenizer",
                          help="fit the downstream tokenizer on the train split"))
    p = sub.add_parser("train-downstream",
                       help="train and freeze the classifier")
    common(p)
    common(sub.add_parser("collect",
                          help="harvest minimum-loss tokenizations (D-hat)"))
    common(sub.add_parser("train-opt",
                          help="train optimized tokenizers on the harvest"))

    p = sub.add_parser("evaluate", help="evaluate all methods on a split")
    common(p)
    p.add_argument("--split", choices=("train", "valid", "test"),
                   default="test")
    p.add_argument("--format", choices=("json", "table"), default="table")
    p.add_argument("--force", action="store_true",
                   help="skip staleness checks between pipeline stages")
    p.add_argument("--dump-lattice", metavar="TEXT", default=None,
                   help="print the tokenizer's segmentation lattice for a "
                        "sentence and exit")

    p = sub.add_parser("sweep-n", help="oracle F1 as a function of N")
    common(p)
    p.add_argument("--split", choices=("train", "valid", "test"),
                   default="test")
    p.add_argument("--ns", default="1,5,10,25",
                   help="comma-separated candidate counts")
    p.add_argument("--format", choices=("json", "table"), default="json")

    p = sub.add_parser("gen-synth", help="generate the synthetic dataset")
    p.add_argument("--out", required=True, help="dataset directory to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", default=None,
                   help="JSON file of generator settings")
    return parser


def _experiment_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    return cfg


def _synth_spec(args) -> SynthSpec:
    obj = {}
    if args.spec is not None:
        spec_path = Path(args.spec)
        if not spec_path.exists():
            raise ConfigError(f"spec file {spec_path} does not exist")
        try:
            obj = json.loads(spec_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{spec_path}: malformed JSON: {exc}") from exc
    try:
        spec = SynthSpec.from_json(obj)
    except TypeError as exc:
        raise ConfigError(f"synth spec: {exc}") from exc
    spec.seed = args.seed
    return spec


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "gen-synth":
            cmd_gen_synth(_synth_spec(args), args.out)
            print(f"wrote dataset to {args.out}")
            return EXIT_OK
        cfg = _experiment_config(args)
        if args.command == "train-tokenizer":
            tok = cmd_train_tokenizer(cfg)
            print(f"trained {tok.kind} tokenizer "
                  f"({len(tok.vocab) - 2} tokens) -> "
                  f"{tokenizer_path(Path(cfg.out_dir))}")
        elif args.command == "train-downstream":
            _, valid_f1 = cmd_train_downstream(cfg)
            print(f"classifier valid macro-F1 {valid_f1:.4f} -> "
                  f"{classifier_path(Path(cfg.out_dir))}")
        elif args.command == "collect":
            dhat = cmd_collect(cfg)
            print(f"harvested {len(dhat)} records -> "
                  f"{dhat_path(Path(cfg.out_dir))}")
        elif args.command == "train-opt":
            produced = cmd_train_opt(cfg)
            for kind, paths in produced.items():
                print(f"{kind}: {', '.join(str(p) for p in paths)}")
        elif args.command == "evaluate":
            if args.dump_lattice is not None:
                tok = load_tokenizer(_require(
                    tokenizer_path(Path(cfg.out_dir)), "train-tokenizer"))
                if not hasattr(tok, "lattice"):
                    raise ConfigError(
                        f"--dump-lattice requires a lattice-based tokenizer, "
                        f"not {tok.kind!r}")
                print(tok.lattice(args.dump_lattice).render())
                return EXIT_OK
            report = cmd_evaluate(cfg, args.split, force=args.force)
            if args.format == "json":
                print(json.dumps(report, sort_keys=True, indent=1))
            else:
                print(render_table(report))
        elif args.command == "sweep-n":
            try:
                ns = [int(x) for x in args.ns.split(",") if x.strip()]
            except ValueError as exc:
                raise ConfigError(f"--ns: {exc}") from exc
            if not ns or any(n < 1 for n in ns):
                raise ConfigError("--ns: expected positive integers")
            report = cmd_sweep_n(cfg, ns, args.split)
            if args.format == "json":
                print(json.dumps(report, sort_keys=True, indent=1))
            else:
                print(f"original macro-F1 {report['original_f1']:.4f}")
                for pt in report["points"]:
                    print(f"N={pt['n']:>4d}  oracle macro-F1 "
                          f"{pt['oracle_f1']:.4f}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingArtifactError, StaleArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
