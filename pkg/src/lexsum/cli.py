"""Command-line entry point.

Subcommands: ``ingest``, ``stats``, ``oracle-label``, ``train``, ``extract``,
``sweep``, ``evaluate``.  Exit codes are 0 (success), 1 (usage error),
2 (data error), 3 (numeric failure).

Configuration is a flat ``key=value`` file; command-line flags override file
values.  Every run that writes output also writes a JSON manifest next to it
recording the command, the fully resolved configuration, the paths and the
seed.  Wallclock fields in manifests and history files vary run to run; all
primary outputs (corpora, labels, checkpoints, extractions, reports) are
byte-identical for identical seeded invocations.
"""

from __future__ import annotations

import argparse
import dataclasses
import difflib
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .corpus import (
    DataError,
    build_vocab,
    compute_stats,
    load_corpus,
    render_stats,
    save_corpus,
)
from .extraction import ExtractionConfig, evaluate, extract, lead_n, sweep_threshold
from .oracle import label_corpus, load_labels
from .policy import (
    CheckpointError,
    NumericsError,
    PolicyConfig,
    PolicyNetwork,
    load_checkpoint,
)
from .training import TrainerConfig, train, write_history_tsv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_POLICY_KEYS = (
    "embed_dim", "hidden_dim", "attention_heads", "history_layers",
    "max_sentences", "max_tokens_per_sentence",
)
_TRAINER_KEYS = (
    "learning_rate", "episodes_per_update", "samples_per_document", "max_steps",
    "total_updates", "seed", "eval_interval", "stop_threshold", "optimizer",
    "warm_start_updates", "early_stop_val_reward",
)


def _config_defaults() -> dict:
    defaults = {"min_freq": 1}
    for field in dataclasses.fields(PolicyConfig):
        if field.name in _POLICY_KEYS:
            defaults[field.name] = field.default
    for field in dataclasses.fields(TrainerConfig):
        if field.name in _TRAINER_KEYS:
            defaults[field.name] = field.default
    return defaults


def _parse_value(key: str, raw: str, default) -> object:
    try:
        if isinstance(default, bool):
            return raw.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as exc:
        raise DataError(f"config key {key!r}: cannot parse {raw!r}") from exc


def load_config(path: str | None, overrides: dict[str, str]) -> dict:
    """Merge defaults, a key=value config file and command-line overrides.

    Unknown keys are rejected with the valid key list and a closest-match
    suggestion.
    """
    values = _config_defaults()

    def apply(key: str, raw: str, where: str) -> None:
        if key not in values:
            suggestion = difflib.get_close_matches(key, values, n=1)
            hint = f" (did you mean {suggestion[0]!r}?)" if suggestion else ""
            raise DataError(
                f"{where}: unknown config key {key!r}{hint}; "
                f"valid keys: {', '.join(sorted(values))}"
            )
        values[key] = _parse_value(key, raw, values[key])

    if path is not None:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                stripped = line.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                if "=" not in stripped:
                    raise DataError(
                        f"{path}:{line_no}: expected key=value, got {stripped!r}"
                    )
                key, raw = stripped.split("=", 1)
                apply(key.strip(), raw.strip(), f"{path}:{line_no}")
    for key, raw in overrides.items():
        apply(key, str(raw), "command line")
    return values


def write_manifest(
    output: Path, command: str, config: dict, inputs: dict, outputs: dict,
    seed: int, started: float,
) -> None:
    """Atomically write the run manifest next to an output path."""
    manifest = {
        "command": command,
        "config": config,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
        "seed": seed,
        "wallclock_s": round(time.perf_counter() - started, 3),
        "artifact_version": __version__,
    }
    path = output.parent / (output.name + ".manifest.json") if output.suffix else (
        output / "manifest.json"
    )
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")
    os.replace(tmp, path)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage problems, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _overrides(args) -> dict[str, str]:
    values: dict[str, str] = {}
    for item in args.set or []:
        if "=" not in item:
            raise DataError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        values[key.strip()] = raw.strip()
    if args.seed is not None:
        values["seed"] = str(args.seed)
    return values


def _parse_taus(spec: str) -> list[float]:
    try:
        start, stop, step = (float(p) for p in spec.split(":"))
    except ValueError as exc:
        raise DataError(f"--taus expects start:stop:step, got {spec!r}") from exc
    if step <= 0:
        raise DataError("--taus step must be positive")
    taus = []
    value = start
    while value <= stop + 1e-9:
        taus.append(round(value, 10))
        value += step
    return taus


def _load_network(path: str) -> PolicyNetwork:
    params, config, vocab = load_checkpoint(path)
    return PolicyNetwork(config, vocab, params)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lexsum", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None,
                       help="seed recorded in the manifest and used for RNG")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("--config", default=None, help="key=value config file")

    p = sub.add_parser("ingest", help="normalize a corpus to canonical JSONL")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    common(p)

    p = sub.add_parser("stats", help="print corpus statistics")
    p.add_argument("--input", required=True)
    common(p)

    p = sub.add_parser("oracle-label", help="write greedy oracle labels")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--workers", type=int,
                   default=int(os.environ.get("LEXSUM_WORKERS", "1")))
    p.add_argument("--objective", choices=("r12", "reward"), default="r12")
    common(p)

    p = sub.add_parser("train", help="train the extraction policy")
    p.add_argument("--train", required=True, dest="train_path")
    p.add_argument("--val", required=True)
    p.add_argument("--labels", default=None)
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("extract", help="extract summaries with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--tau", type=float, default=0.65)
    p.add_argument("--max-sents", type=int, default=10)
    common(p)

    p = sub.add_parser("sweep", help="sweep stopping thresholds on a corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--taus", default="0.0:1.0:0.05")
    p.add_argument("--max-sents", type=int, default=10)
    p.add_argument("--report", default=None, help="also write the table here")
    common(p)

    p = sub.add_parser("evaluate", help="score systems against gold summaries")
    p.add_argument("--model", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--tau", type=float, default=0.65)
    p.add_argument("--max-sents", type=int, default=10)
    p.add_argument("--lead", type=int, default=10)
    common(p)

    return parser


def _cmd_ingest(args, config, seed, started) -> int:
    corpus = load_corpus(args.input)
    out = Path(args.output)
    save_corpus(corpus, out)
    write_manifest(out, "ingest", config, {"input": args.input},
                   {"corpus": out}, seed, started)
    print(f"ingested {len(corpus)} documents -> {out}")
    return EXIT_OK


def _cmd_stats(args, config, seed, started) -> int:
    corpus = load_corpus(args.input)
    print(render_stats(compute_stats(corpus)))
    return EXIT_OK


def _cmd_oracle_label(args, config, seed, started) -> int:
    if args.workers < 1:
        raise DataError("--workers must be >= 1")
    corpus = load_corpus(args.input)
    out = Path(args.output)
    summary = label_corpus(corpus, out, workers=args.workers,
                           objective=args.objective)
    write_manifest(out, "oracle-label", config, {"input": args.input},
                   {"labels": out}, seed, started)
    print(
        f"labeled {summary.written} documents "
        f"(skipped {len(summary.skipped)}), mean objective "
        f"{summary.mean_objective:.4f}"
    )
    for doc_id, reason in summary.skipped:
        print(f"  skipped {doc_id}: {reason}", file=sys.stderr)
    return EXIT_OK


def _cmd_train(args, config, seed, started) -> int:
    train_corpus = load_corpus(args.train_path)
    val_corpus = load_corpus(args.val)
    labels = load_labels(args.labels) if args.labels else None
    vocab = build_vocab(train_corpus, min_freq=config["min_freq"])
    policy_config = PolicyConfig(
        vocab_size=len(vocab),
        **{k: config[k] for k in _POLICY_KEYS},
    )
    trainer_config = TrainerConfig(**{k: config[k] for k in _TRAINER_KEYS})
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result = train(
        train_corpus, val_corpus, policy_config, trainer_config,
        vocab=vocab, out_dir=out_dir, labels=labels,
    )
    write_history_tsv(result.history, out_dir / "history.tsv")
    write_manifest(out_dir, "train", config,
                   {"train": args.train_path, "val": args.val,
                    "labels": args.labels or ""},
                   {"checkpoint": out_dir / "model.lexsum",
                    "history": out_dir / "history.tsv"},
                   trainer_config.seed, started)
    print(
        f"trained {trainer_config.total_updates} updates; "
        f"best val reward {result.best_val_reward:.4f} -> {out_dir/'model.lexsum'}"
    )
    return EXIT_OK


def _cmd_extract(args, config, seed, started) -> int:
    network = _load_network(args.model)
    corpus = load_corpus(args.input)
    cfg = ExtractionConfig(stop_threshold=args.tau,
                           max_summary_sentences=args.max_sents)
    out = Path(args.output)
    with open(out, "w", encoding="utf-8") as fh:
        for doc in corpus:
            indices = extract(network, doc, cfg)
            record = {
                "id": doc.id,
                "indices": indices,
                "sentences": [doc.sentences[i].raw for i in indices],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    write_manifest(out, "extract", {**config, "tau": args.tau,
                   "max_sents": args.max_sents},
                   {"model": args.model, "input": args.input},
                   {"extractions": out}, seed, started)
    print(f"extracted {len(corpus)} documents -> {out}")
    return EXIT_OK


def _cmd_sweep(args, config, seed, started) -> int:
    network = _load_network(args.model)
    corpus = load_corpus(args.val)
    report = sweep_threshold(network, corpus, _parse_taus(args.taus),
                             max_sentences=args.max_sents)
    text = report.render()
    print(text)
    if args.report:
        out = Path(args.report)
        out.write_text(text + "\n", "utf-8")
        write_manifest(out, "sweep", {**config, "taus": args.taus},
                       {"model": args.model, "val": args.val},
                       {"report": out}, seed, started)
    return EXIT_OK


def _cmd_evaluate(args, config, seed, started) -> int:
    network = _load_network(args.model)
    corpus = load_corpus(args.input)
    labels = load_labels(args.labels)
    missing = [d.id for d in corpus if d.id not in labels]
    if missing:
        raise DataError(
            f"labels file lacks entries for {len(missing)} documents "
            f"(first: {missing[0]!r})"
        )
    cfg = ExtractionConfig(stop_threshold=args.tau,
                           max_summary_sentences=args.max_sents)
    systems = [
        (f"lead-{args.lead}", lambda d: lead_n(d, args.lead)),
        (f"policy@tau={args.tau}", lambda d: extract(network, d, cfg)),
        ("oracle", lambda d: sorted(labels[d.id].indices)),
    ]
    report = evaluate(corpus, systems)
    out = Path(args.report)
    out.write_text(report.render() + "\n", "utf-8")
    print(report.render())
    write_manifest(out, "evaluate", {**config, "tau": args.tau},
                   {"model": args.model, "input": args.input,
                    "labels": args.labels},
                   {"report": out}, seed, started)
    return EXIT_OK


_COMMANDS = {
    "ingest": _cmd_ingest,
    "stats": _cmd_stats,
    "oracle-label": _cmd_oracle_label,
    "train": _cmd_train,
    "extract": _cmd_extract,
    "sweep": _cmd_sweep,
    "evaluate": _cmd_evaluate,
}


def dispatch(argv: list[str]) -> int:
    """Parse argv, run the subcommand and map failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.perf_counter()
    try:
        config = load_config(args.config, _overrides(args))
        seed = int(config.get("seed", 0))
        return _COMMANDS[args.command](args, config, seed, started)
    except FileNotFoundError as exc:
        print(f"lexsum: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, CheckpointError, ValueError) as exc:
        print(f"lexsum: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericsError as exc:
        print(f"lexsum: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main(argv: list[str] | None = None) -> None:
    raise SystemExit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
