"""Command-line pipeline: label, split, finetune, adapt, predict, grid, stats,
report.

Settings resolve as: built-in default < JSON config file (--config) < explicit
flag. Every run logs its fully resolved configuration as one JSON line, which
is enough to reproduce it. Exit codes: 0 success, 1 usage, 2 data error,
3 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from kinetic_triage import corpus, evalstats, trainer
from kinetic_triage.encoder import FreezeConfig, load_archive
from kinetic_triage.errors import DataError, NumericError
from kinetic_triage.tokenizer import Vocab
from kinetic_triage.trainer import (
    GridSpec,
    OptimizerConfig,
    TrainConfig,
    TrainPlan,
    read_ledger,
    run_grid,
)

log = logging.getLogger("kt")

_TRAIN_DEFAULTS = {
    "freeze": "nn3", "optimizer": "adam", "lr": 0.0001, "dropout": 0.2,
    "weight_decay": 0.01, "batch_size": 16, "max_epochs": 200, "patience": 10,
    "train_fraction": 0.8, "seed": 0, "max_len": 128,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--freeze", choices=["nn1", "nn2", "nn3"])
    p.add_argument("--optimizer", choices=["sgd", "adam", "adamw"])
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--train-fraction", type=float, dest="train_fraction")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-len", type=int, dest="max_len")


def build_parser() -> _Parser:
    parser = _Parser(prog="kt", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON config file; flags override it")
    parser.add_argument("--workers", type=int,
                        help="worker processes (or env KT_WORKERS; default 1)")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("label", help="apply a rule file to unlabelled notes")
    p.add_argument("--data")
    p.add_argument("--rules")
    p.add_argument("--out")
    p.add_argument("--format", choices=["jsonl", "csv"])

    p = sub.add_parser("split", help="stratified train/validation split")
    p.add_argument("--data")
    p.add_argument("--train-out", dest="train_out")
    p.add_argument("--val-out", dest="val_out")
    p.add_argument("--fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--stratify", action=argparse.BooleanOptionalAction)

    p = sub.add_parser("finetune", help="stage-1 fine-tune from a base archive")
    p.add_argument("--data")
    p.add_argument("--init")
    p.add_argument("--vocab")
    p.add_argument("--out")
    _add_train_flags(p)

    p = sub.add_parser("adapt", help="stage-2 domain adaptation of a model archive")
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--vocab")
    p.add_argument("--out")
    _add_train_flags(p)

    p = sub.add_parser("predict", help="label notes with a trained archive")
    p.add_argument("--model")
    p.add_argument("--vocab")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("grid", help="run the freeze x optimizer x lr x dropout sweep")
    p.add_argument("--data")
    p.add_argument("--init")
    p.add_argument("--vocab")
    p.add_argument("--out", help="ledger CSV (resume skips completed runs)")
    p.add_argument("--checkpoint-dir", dest="checkpoint_dir")
    p.add_argument("--repeats", type=int)
    p.add_argument("--freeze", help="comma list, e.g. nn2,nn3")
    p.add_argument("--optimizer", help="comma list, e.g. adam,adamw")
    p.add_argument("--lr", help="comma list of learning rates")
    p.add_argument("--dropout", help="comma list of dropout rates")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--train-fraction", type=float, dest="train_fraction")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("stats", help="Welch t-test between two ledger cells")
    p.add_argument("--ledger")
    p.add_argument("--cell-a", dest="cell_a",
                   help='"optimizer,lr,dr" or "freeze,optimizer,lr,dr"')
    p.add_argument("--cell-b", dest="cell_b")
    p.add_argument("--metric")
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("report", help="aggregate a ledger into tables and plots")
    p.add_argument("--ledger")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--metric")
    return parser


class Resolver:
    """default < config file < explicit flag; records the resolved mapping."""

    def __init__(self, args: argparse.Namespace, config_path: str | None):
        self.args = args
        self.config = {}
        if config_path:
            try:
                self.config = json.loads(Path(config_path).read_text(encoding="utf-8"))
            except FileNotFoundError:
                raise DataError(f"no such config file: {config_path}") from None
            except json.JSONDecodeError as exc:
                raise DataError(f"config file {config_path}: invalid JSON ({exc})") from None
            if not isinstance(self.config, dict):
                raise DataError(f"config file {config_path}: expected a JSON object")
        self.resolved: dict = {"subcommand": args.subcommand}

    def get(self, name: str, default=None, required: bool = False):
        value = getattr(self.args, name, None)
        if value is None:
            value = self.config.get(name, default)
        if value is None and required:
            raise DataError(f"missing required setting --{name.replace('_', '-')}")
        self.resolved[name] = value
        return value

    def workers(self) -> int:
        value = self.args.workers
        if value is None:
            value = self.config.get("workers")
        if value is None:
            value = os.environ.get("KT_WORKERS")
        value = 1 if value is None else int(value)
        self.resolved["workers"] = value
        return value

    def log_resolved(self) -> None:
        log.info("resolved-config %s", json.dumps(self.resolved, sort_keys=True))


def _train_config(r: Resolver) -> TrainConfig:
    return TrainConfig(
        max_epochs=int(r.get("max_epochs", _TRAIN_DEFAULTS["max_epochs"])),
        patience=int(r.get("patience", _TRAIN_DEFAULTS["patience"])),
        batch_size=int(r.get("batch_size", _TRAIN_DEFAULTS["batch_size"])),
        train_fraction=float(r.get("train_fraction", _TRAIN_DEFAULTS["train_fraction"])),
        seed=int(r.get("seed", _TRAIN_DEFAULTS["seed"])),
        max_len=int(r.get("max_len", _TRAIN_DEFAULTS["max_len"])),
    )


def _train_plan(r: Resolver) -> tuple[TrainPlan, float]:
    freeze = FreezeConfig.from_string(r.get("freeze", _TRAIN_DEFAULTS["freeze"]))
    opt = OptimizerConfig(
        kind=r.get("optimizer", _TRAIN_DEFAULTS["optimizer"]),
        lr=float(r.get("lr", _TRAIN_DEFAULTS["lr"])),
        weight_decay=float(r.get("weight_decay", _TRAIN_DEFAULTS["weight_decay"])),
    )
    dr = float(r.get("dropout", _TRAIN_DEFAULTS["dropout"]))
    return TrainPlan(freeze=freeze, optimizer=opt, train=_train_config(r)), dr


def _result_json(result: trainer.RunResult) -> str:
    payload = dataclasses.asdict(result)
    payload["metrics"] = dataclasses.asdict(result.metrics)
    return json.dumps(payload, sort_keys=True)


def _cmd_label(r: Resolver) -> int:
    records = corpus.load_records(r.get("data", required=True),
                                  r.get("format"))
    rules = corpus.LabelRuleSet.from_file(r.get("rules", required=True))
    out = r.get("out", required=True)
    r.log_resolved()
    labelled = corpus.apply_rules(records, rules)
    corpus.save_dataset(labelled, out, r.resolved.get("format"))
    print(json.dumps({"records": len(labelled), "positives": labelled.positives,
                      "negatives": labelled.negatives, "out": str(out)}))
    return 0


def _cmd_split(r: Resolver) -> int:
    data = corpus.load_dataset(r.get("data", required=True))
    spec = corpus.SplitSpec(
        train_fraction=float(r.get("fraction", 0.8)),
        seed=int(r.get("seed", 0)),
        stratified=bool(r.get("stratify", True)),
    )
    train_out = r.get("train_out", required=True)
    val_out = r.get("val_out", required=True)
    r.log_resolved()
    train_ds, val_ds = corpus.split(data, spec)
    corpus.save_dataset(train_ds, train_out)
    corpus.save_dataset(val_ds, val_out)
    print(json.dumps({"train": len(train_ds), "validation": len(val_ds)}))
    return 0


def _cmd_finetune(r: Resolver) -> int:
    data = corpus.load_dataset(r.get("data", required=True))
    params, cfg = load_archive(r.get("init", required=True))
    vocab = Vocab.from_file(r.get("vocab", required=True), lowercase=cfg.lowercase)
    out = r.get("out", required=True)
    plan, dr = _train_plan(r)
    r.log_resolved()
    cfg = dataclasses.replace(cfg, classifier_dropout=dr)
    result, _ = trainer.train(data, params, cfg, vocab, plan, checkpoint_path=out)
    print(_result_json(result))
    return 0


def _cmd_adapt(r: Resolver) -> int:
    data = corpus.load_dataset(r.get("data", required=True))
    model_path = r.get("model", required=True)
    _, cfg = load_archive(model_path)
    vocab = Vocab.from_file(r.get("vocab", required=True), lowercase=cfg.lowercase)
    out = r.get("out", required=True)
    plan, dr = _train_plan(r)
    r.log_resolved()
    result, _ = trainer.adapt(model_path, data, vocab, plan, out_archive=out, dr=dr)
    print(_result_json(result))
    return 0


def _cmd_predict(r: Resolver) -> int:
    records = corpus.load_records(r.get("data", required=True))
    params, cfg = load_archive(r.get("model", required=True))
    vocab = Vocab.from_file(r.get("vocab", required=True), lowercase=cfg.lowercase)
    out = r.get("out", required=True)
    batch_size = int(r.get("batch_size", 16))
    max_len = int(r.get("max_len", 128))
    workers = r.workers()
    r.log_resolved()

    result = evalstats.predict(params, cfg, vocab, records, batch_size=batch_size,
                               max_len=max_len, workers=workers)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "label", "score"])
        for rec, label, prob in zip(records, result.labels, result.scores):
            writer.writerow([rec.id, label, repr(prob)])

    summary = {
        "records": len(records),
        "wall_seconds": result.wall_seconds,
        "notes_per_second": result.notes_per_second,
        "out": str(out),
    }
    if all(rec.label is not None for rec in records):
        _, metrics = evalstats.score(result.labels, [rec.label for rec in records],
                                     wall_seconds=result.wall_seconds)
        summary["metrics"] = dataclasses.asdict(metrics)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _parse_grid(r: Resolver) -> GridSpec:
    def csv_list(value, cast):
        return tuple(cast(part.strip()) for part in str(value).split(",") if part.strip())

    kwargs = {}
    freeze = r.get("freeze")
    if freeze:
        kwargs["freezes"] = csv_list(freeze, FreezeConfig.from_string)
    optimizer = r.get("optimizer")
    if optimizer:
        kwargs["optimizers"] = csv_list(optimizer, str)
    lr = r.get("lr")
    if lr:
        kwargs["lrs"] = csv_list(lr, float)
    dropout = r.get("dropout")
    if dropout:
        kwargs["drs"] = csv_list(dropout, float)
    return GridSpec(**kwargs)


def _cmd_grid(r: Resolver) -> int:
    data = corpus.load_dataset(r.get("data", required=True))
    params, cfg = load_archive(r.get("init", required=True))
    vocab = Vocab.from_file(r.get("vocab", required=True), lowercase=cfg.lowercase)
    ledger = r.get("out", required=True)
    grid = _parse_grid(r)
    tcfg = dataclasses.replace(_train_config(r),
                               repeats=int(r.get("repeats", 10)))
    checkpoint_dir = r.get("checkpoint_dir")
    workers = r.workers()
    r.log_resolved()

    results = run_grid(data, params, cfg, vocab, grid, tcfg, ledger,
                       workers=workers, checkpoint_dir=checkpoint_dir)
    print(json.dumps({
        "cells": grid.cell_count,
        "repeats": tcfg.repeats,
        "executed": len(results),
        "ledger_rows": len(read_ledger(ledger)),
        "ledger": str(ledger),
    }, sort_keys=True))
    return 0


def _parse_cell(spec: str) -> dict:
    parts = [part.strip() for part in spec.split(",")]
    if len(parts) == 3:
        freeze = None
        opt, lr, dr = parts
    elif len(parts) == 4:
        freeze, opt, lr, dr = parts
    else:
        raise DataError(f"cell spec {spec!r}: expected optimizer,lr,dr or "
                        f"freeze,optimizer,lr,dr")
    return {"freeze": freeze, "optimizer": opt.lower(), "lr": float(lr),
            "dr": float(dr)}


def _cell_samples(rows: list[dict], cell: dict, metric: str) -> list[float]:
    picked = [
        float(row[metric]) for row in rows
        if row["optimizer"] == cell["optimizer"]
        and float(row["lr"]) == cell["lr"] and float(row["dr"]) == cell["dr"]
        and (cell["freeze"] is None or row["freeze"] == cell["freeze"])
    ]
    if not picked:
        raise DataError(f"no ledger rows match cell {cell}")
    return picked


def _cmd_stats(r: Resolver) -> int:
    rows = read_ledger(r.get("ledger", required=True))
    if not rows:
        raise DataError("ledger is empty")
    cell_a = _parse_cell(r.get("cell_a", required=True))
    cell_b = _parse_cell(r.get("cell_b", required=True))
    metric = r.get("metric", "accuracy")
    alpha = float(r.get("alpha", 0.05))
    r.log_resolved()
    result = evalstats.welch_ttest(_cell_samples(rows, cell_a, metric),
                                   _cell_samples(rows, cell_b, metric), alpha=alpha)
    print(json.dumps(dataclasses.asdict(result), sort_keys=True))
    return 0


def _cmd_report(r: Resolver) -> int:
    rows = read_ledger(r.get("ledger", required=True))
    if not rows:
        raise DataError("ledger is empty")
    out_dir = Path(r.get("out_dir", required=True))
    metric = r.get("metric", "accuracy")
    r.log_resolved()
    out_dir.mkdir(parents=True, exist_ok=True)
    table = evalstats.aggregate(rows)
    text = evalstats.emit_report(table, out_dir / "report.csv",
                                 out_dir / "report.txt", metric=metric)
    for m in ("accuracy", "f1", "train_seconds"):
        evalstats.emit_plot_data(table, m, out_dir / f"plot_{m}.csv")
    evalstats.emit_plot_svg(table, out_dir / "plots.svg")
    print(text, end="")
    return 0


_COMMANDS = {
    "label": _cmd_label,
    "split": _cmd_split,
    "finetune": _cmd_finetune,
    "adapt": _cmd_adapt,
    "predict": _cmd_predict,
    "grid": _cmd_grid,
    "stats": _cmd_stats,
    "report": _cmd_report,
}


class _StderrHandler(logging.StreamHandler):
    """Resolves sys.stderr at emit time so stream redirection keeps working."""

    def __init__(self):
        logging.Handler.__init__(self)

    @property
    def stream(self):
        return sys.stderr


_LOG_HANDLER: logging.Handler | None = None


def _setup_logging() -> None:
    global _LOG_HANDLER
    if _LOG_HANDLER is None:
        _LOG_HANDLER = _StderrHandler()
        _LOG_HANDLER.setFormatter(logging.Formatter("%(name)s %(message)s"))
        logging.getLogger().addHandler(_LOG_HANDLER)
    root = logging.getLogger()
    if root.level > logging.INFO or root.level == logging.NOTSET:
        root.setLevel(logging.INFO)


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        resolver = Resolver(args, args.config)
        return _COMMANDS[args.subcommand](resolver)
    except DataError as exc:
        print(f"kt: data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"kt: numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
