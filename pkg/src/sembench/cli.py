"""Command-line entry point: train / eval / sweep / quantize / report.

Configuration resolves with precedence flags > config file > documented desk
defaults; the fully resolved config is written into the output directory so
every run is replayable. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .contrastive import TrainConfig, train, write_loss_trace
from .corpus import (
    Vocabulary,
    build_vocab,
    load_corpus,
    prepare_corpus,
)
from .encoder import EncoderConfig, init_model
from .errors import ConfigError, SembenchError
from .pooling import parse_method
from .quantize import quantize_checkpoint
from .sts import (
    evaluate,
    format_report_table,
    load_sts,
    report_csv_lines,
    write_report_csv,
)
from .sweep import emit_sweep_report, load_grid, run_sweep, write_trial_trace

# Desk-scale defaults. These are repository defaults, not literature values.
DEFAULTS: dict = {
    "corpus": None,
    "out_dir": None,
    "steps": 1000,
    "batch_size": 64,
    "lr": 3e-5,
    "temperature": 0.05,
    "pooling": "avg-last",
    "seed": 0,
    "amp": False,
    "loss_scale": 65536.0,
    "eval_dir": None,
    "eval_every": 100,
    "vocab_size": 8192,
    "hidden_dim": 64,
    "n_layers": 4,
    "n_heads": 4,
    "ffn_dim": 256,
    "max_seq_len": 32,
    "dropout_rate": 0.1,
}

_TYPES = {
    "corpus": str, "out_dir": str, "eval_dir": str, "pooling": str,
    "steps": int, "batch_size": int, "seed": int, "eval_every": int,
    "vocab_size": int, "hidden_dim": int, "n_layers": int, "n_heads": int,
    "ffn_dim": int, "max_seq_len": int,
    "lr": float, "temperature": float, "loss_scale": float, "dropout_rate": float,
    "amp": bool,
}


def resolve_config(defaults: dict, file_path: str | None, flags: dict) -> dict:
    """Merge defaults <- config file <- flags; unknown keys are rejected."""
    resolved = dict(defaults)
    if file_path is not None:
        with open(file_path, encoding="utf-8") as fh:
            try:
                from_file = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {file_path} is not valid JSON: {exc}")
        if not isinstance(from_file, dict):
            raise ConfigError(f"config file {file_path} must hold a JSON object")
        for key, value in from_file.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key: {key}")
            resolved[key] = _coerce(key, value)
    for key, value in flags.items():
        if value is None:
            continue
        if key not in defaults:
            raise ConfigError(f"unknown config key: {key}")
        resolved[key] = _coerce(key, value)
    return resolved


def _coerce(key: str, value):
    want = _TYPES.get(key)
    if want is None or value is None:
        return value
    if want is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"config key {key} must be a boolean, got {value!r}")
    if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if want is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key} must be an integer, got {value!r}")
        return value
    if not isinstance(value, want):
        raise ConfigError(f"config key {key} must be {want.__name__}, got {value!r}")
    return value


def _write_resolved(resolved: dict, out_dir: str) -> None:
    with open(os.path.join(out_dir, "resolved_config.json"), "w",
              encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_vocab(vocab: Vocabulary, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"tokens": vocab.tokens}, fh)
        fh.write("\n")


def _load_vocab(path: str) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return Vocabulary({tok: 3 + i for i, tok in enumerate(data["tokens"])})


def _vocab_for_model(model_path: str, explicit: str | None) -> Vocabulary:
    path = explicit or os.path.join(os.path.dirname(os.path.abspath(model_path)),
                                    "vocab.json")
    if not os.path.exists(path):
        raise ConfigError(f"vocabulary file not found at {path}; pass --vocab")
    return _load_vocab(path)


def _load_datasets(sts_dir: str):
    """A dataset directory holds *.tsv subsets; a parent of such directories
    holds multiple datasets."""
    entries = sorted(os.listdir(sts_dir))
    if any(e.endswith(".tsv") for e in entries):
        return [load_sts(sts_dir)]
    subdirs = [os.path.join(sts_dir, e) for e in entries
               if os.path.isdir(os.path.join(sts_dir, e))]
    if not subdirs:
        raise ConfigError(f"no .tsv files or dataset directories under {sts_dir}")
    return [load_sts(d) for d in subdirs]


def cmd_train(args) -> int:
    # encoder-shape keys have no dedicated flags; they resolve via file/defaults
    flags = {key: getattr(args, key, None) for key in DEFAULTS}
    resolved = resolve_config(DEFAULTS, args.config, flags)
    if not resolved["corpus"] or not resolved["out_dir"]:
        raise ConfigError("train requires --corpus and --out-dir")
    out_dir = resolved["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    _write_resolved(resolved, out_dir)

    sentences = load_corpus(resolved["corpus"])
    vocab = build_vocab(sentences, resolved["vocab_size"])
    corpus = prepare_corpus(sentences, vocab, resolved["max_seq_len"])
    enc_config = EncoderConfig(vocab_size=vocab.size,
                               hidden_dim=resolved["hidden_dim"],
                               n_layers=resolved["n_layers"],
                               n_heads=resolved["n_heads"],
                               ffn_dim=resolved["ffn_dim"],
                               max_seq_len=resolved["max_seq_len"],
                               dropout_rate=resolved["dropout_rate"])
    config = TrainConfig(temperature=resolved["temperature"],
                         learning_rate=resolved["lr"],
                         batch_size=resolved["batch_size"],
                         max_steps=resolved["steps"],
                         pooling=parse_method(resolved["pooling"]),
                         seed=resolved["seed"],
                         amp=resolved["amp"],
                         loss_scale=resolved["loss_scale"])

    model = init_model(enc_config, config.seed)
    model, trace = train(model, corpus, config)
    write_loss_trace(trace, os.path.join(out_dir, "loss.csv"), amp=config.amp)
    _write_vocab(vocab, os.path.join(out_dir, "vocab.json"))
    n_bytes = save_checkpoint(model, os.path.join(out_dir, "model.ckpt"))
    print(f"trained {config.max_steps} steps; checkpoint {n_bytes} bytes "
          f"({model.param_count()} parameters)")

    if resolved["eval_dir"]:
        datasets = _load_datasets(resolved["eval_dir"])
        report = evaluate(model, vocab, datasets, config.pooling,
                          mode="concat", model_id=os.path.join(out_dir, "model.ckpt"))
        write_report_csv(report, os.path.join(out_dir, "eval.csv"))
        print(format_report_table(report))
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    vocab = _vocab_for_model(args.model, args.vocab)
    datasets = _load_datasets(args.sts_dir)
    report = evaluate(model, vocab, datasets, parse_method(args.pooling),
                      mode=args.mode, model_id=args.model)
    print("\n".join(report_csv_lines(report)))
    print()
    print(format_report_table(report))
    if args.out_csv:
        write_report_csv(report, args.out_csv)
    return 0


def cmd_sweep(args) -> int:
    grid = load_grid(args.grid)
    sentences = load_corpus(args.corpus)
    vocab = build_vocab(sentences, DEFAULTS["vocab_size"])
    corpus = prepare_corpus(sentences, vocab, DEFAULTS["max_seq_len"])
    enc_config = EncoderConfig(vocab_size=vocab.size,
                               hidden_dim=DEFAULTS["hidden_dim"],
                               n_layers=DEFAULTS["n_layers"],
                               n_heads=DEFAULTS["n_heads"],
                               ffn_dim=DEFAULTS["ffn_dim"],
                               max_seq_len=DEFAULTS["max_seq_len"],
                               dropout_rate=DEFAULTS["dropout_rate"])
    datasets = _load_datasets(args.sts_dir)
    results = run_sweep(grid, corpus, datasets, enc_config, jobs=args.jobs)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(args.grid, encoding="utf-8") as src:
        with open(os.path.join(args.out_dir, "grid.json"), "w", encoding="utf-8") as dst:
            dst.write(src.read())
    for i, result in enumerate(results):
        if not result.failed:
            write_trial_trace(result, os.path.join(args.out_dir, f"trial{i:03d}.csv"))
    csv_path, md_path = emit_sweep_report(results, args.out_dir)
    n_failed = sum(r.failed for r in results)
    print(f"swept {len(results)} configs ({n_failed} failed): {csv_path}, {md_path}")
    return 0


def cmd_quantize(args) -> int:
    report = quantize_checkpoint(args.model, args.out)
    print(report.to_text())
    csv_path = args.out + ".sizes.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    print(f"per-tensor sizes: {csv_path}")
    return 0


def cmd_report(args) -> int:
    path = args.infile
    if os.path.isdir(path):
        path = os.path.join(path, "sweep.csv")
    with open(path, encoding="utf-8") as fh:
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if args.format == "csv":
        for row in rows:
            print(",".join(row))
        return 0
    header, body = rows[0], rows[1:]
    print("| " + " | ".join(header) + " |")
    print("|" + "|".join(" --- " for _ in header) + "|")
    for row in body:
        print("| " + " | ".join(row) + " |")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sembench",
        description="Contrastive sentence-embedding workbench (desk scale)")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train an encoder on a corpus")
    p_train.add_argument("--corpus")
    p_train.add_argument("--out-dir", dest="out_dir")
    p_train.add_argument("--config", help="JSON config file (flag names, underscores)")
    p_train.add_argument("--steps", type=int)
    p_train.add_argument("--batch-size", dest="batch_size", type=int)
    p_train.add_argument("--lr", type=float)
    p_train.add_argument("--temperature", type=float)
    p_train.add_argument("--pooling")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--amp", action="store_const", const=True, default=None)
    p_train.add_argument("--loss-scale", dest="loss_scale", type=float)
    p_train.add_argument("--eval-dir", dest="eval_dir")
    p_train.add_argument("--eval-every", dest="eval_every", type=int)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on STS data")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--sts-dir", dest="sts_dir", required=True)
    p_eval.add_argument("--mode", choices=["concat", "average"], default="concat")
    p_eval.add_argument("--pooling", default=DEFAULTS["pooling"])
    p_eval.add_argument("--vocab", help="vocab.json (default: next to the model)")
    p_eval.add_argument("--out-csv", dest="out_csv")
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep", help="grid-search hyperparameters")
    p_sweep.add_argument("--corpus", required=True)
    p_sweep.add_argument("--sts-dir", dest="sts_dir", required=True)
    p_sweep.add_argument("--grid", required=True, help="JSON grid file")
    p_sweep.add_argument("--out-dir", dest="out_dir", required=True)
    p_sweep.add_argument("--jobs", type=int, default=1)
    p_sweep.set_defaults(func=cmd_sweep)

    p_quant = sub.add_parser("quantize", help="int8-quantize a checkpoint")
    p_quant.add_argument("--model", required=True)
    p_quant.add_argument("--out", required=True)
    p_quant.set_defaults(func=cmd_quantize)

    p_report = sub.add_parser("report", help="re-emit a result CSV as csv or markdown")
    p_report.add_argument("--in", dest="infile", required=True)
    p_report.add_argument("--format", choices=["csv", "md"], default="md")
    p_report.set_defaults(func=cmd_report)
    return parser


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SembenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
