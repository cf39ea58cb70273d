import csv
import json
import logging

import pytest

from kinetic_triage import corpus
from kinetic_triage.cli import main
from kinetic_triage.encoder import init_params, save_archive
from kinetic_triage.trainer import read_ledger
from tests.conftest import synthetic_vocab, toy_config


@pytest.fixture(scope="module")
def env(tmp_path_factory):
    """Vocab file, toy base archive, and stage-1/stage-2 corpora on disk."""
    root = tmp_path_factory.mktemp("cli")
    vocab = synthetic_vocab()
    cfg = toy_config(vocab, hidden=4, layers=1, heads=1, max_positions=8)
    vocab_path = root / "vocab.txt"
    vocab.save(vocab_path)
    base = root / "base.nta"
    save_archive(init_params(cfg, seed=1), cfg, base)

    stage1 = root / "stage1.jsonl"
    corpus.save_dataset(corpus.make_synthetic(30, seed=1, domain="a"), stage1)
    stage2 = root / "stage2.jsonl"
    corpus.save_dataset(corpus.make_synthetic(30, seed=2, domain="b"), stage2)
    unlabelled = root / "raw.jsonl"
    corpus.save_records(
        [corpus.TriageRecord(r.id, r.text, None, r.source)
         for r in corpus.make_synthetic(10, seed=3).records], unlabelled)
    return {"root": root, "vocab": vocab_path, "base": base, "stage1": stage1,
            "stage2": stage2, "unlabelled": unlabelled}


TRAIN_FLAGS = ["--max-epochs", "2", "--patience", "1", "--batch-size", "8",
               "--max-len", "8", "--seed", "3"]


def test_label(env, tmp_path, capsys):
    rules = tmp_path / "rules.json"
    rules.write_text(json.dumps({"include": ["mva", "collision", "rollover",
                                             "struck", "cyclist", "motorbike"],
                                 "exclude": ["seizure"], "default_label": 0}))
    out = tmp_path / "labelled.jsonl"
    code = main(["label", "--data", str(env["unlabelled"]), "--rules", str(rules),
                 "--out", str(out)])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["records"] == 10
    assert summary["positives"] + summary["negatives"] == 10
    assert corpus.load_dataset(out)


def test_split(env, tmp_path, capsys):
    train_out = tmp_path / "train.jsonl"
    val_out = tmp_path / "val.jsonl"
    code = main(["split", "--data", str(env["stage1"]), "--train-out", str(train_out),
                 "--val-out", str(val_out), "--fraction", "0.8", "--seed", "1"])
    assert code == 0
    assert json.loads(capsys.readouterr().out) == {"train": 24, "validation": 6}
    assert len(corpus.load_dataset(train_out)) == 24


@pytest.fixture(scope="module")
def finetuned(env, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "stage1.nta"
    code = main(["finetune", "--data", str(env["stage1"]), "--init", str(env["base"]),
                 "--vocab", str(env["vocab"]), "--out", str(out),
                 "--freeze", "nn3", "--optimizer", "adam", "--lr", "0.001",
                 "--dropout", "0.15", *TRAIN_FLAGS])
    assert code == 0
    return out


def test_finetune_emits_result(finetuned, capsys):
    assert finetuned.exists()


def test_predict_writes_csv_and_metrics(env, finetuned, tmp_path, capsys):
    out = tmp_path / "preds.csv"
    code = main(["predict", "--model", str(finetuned), "--vocab", str(env["vocab"]),
                 "--data", str(env["stage2"]), "--out", str(out), "--max-len", "8"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["records"] == 30
    assert summary["wall_seconds"] > 0
    assert summary["notes_per_second"] > 0
    assert "metrics" in summary  # gold labels were present
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 30
    assert set(rows[0]) == {"id", "label", "score"}
    assert all(row["label"] in {"0", "1"} for row in rows)


def test_adapt_and_retired_config(env, finetuned, tmp_path, capsys):
    out = tmp_path / "adapted.nta"
    code = main(["adapt", "--data", str(env["stage2"]), "--model", str(finetuned),
                 "--vocab", str(env["vocab"]), "--out", str(out),
                 "--freeze", "nn2", "--optimizer", "adamw", "--lr", "0.001",
                 "--dropout", "0.2", *TRAIN_FLAGS])
    assert code == 0
    assert out.exists()
    capsys.readouterr()

    code = main(["adapt", "--data", str(env["stage2"]), "--model", str(finetuned),
                 "--vocab", str(env["vocab"]), "--out", str(out),
                 "--freeze", "nn1", "--optimizer", "adam", "--lr", "0.001",
                 *TRAIN_FLAGS])
    assert code == 2
    assert "retired" in capsys.readouterr().err


def test_grid_and_resume(env, tmp_path, capsys):
    ledger = tmp_path / "runs.csv"
    args = ["grid", "--data", str(env["stage1"]), "--init", str(env["base"]),
            "--vocab", str(env["vocab"]), "--out", str(ledger),
            "--freeze", "nn2", "--optimizer", "adam,sgd", "--lr", "0.0005",
            "--dropout", "0.15", "--repeats", "2", *TRAIN_FLAGS]
    assert main(args) == 0
    first = json.loads(capsys.readouterr().out)
    assert first["cells"] == 2
    assert first["executed"] == 4
    assert first["ledger_rows"] == 4
    assert len(read_ledger(ledger)) == 4

    assert main(args) == 0
    second = json.loads(capsys.readouterr().out)
    assert second["executed"] == 0
    assert second["ledger_rows"] == 4


def test_stats_on_grid_ledger(env, tmp_path, capsys):
    ledger = tmp_path / "runs.csv"
    args = ["grid", "--data", str(env["stage1"]), "--init", str(env["base"]),
            "--vocab", str(env["vocab"]), "--out", str(ledger),
            "--freeze", "nn2", "--optimizer", "adam,sgd", "--lr", "0.0005",
            "--dropout", "0.15", "--repeats", "3", *TRAIN_FLAGS]
    assert main(args) == 0
    capsys.readouterr()
    code = main(["stats", "--ledger", str(ledger),
                 "--cell-a", "adam,0.0005,0.15", "--cell-b", "sgd,0.0005,0.15",
                 "--metric", "best_val_loss"])
    assert code == 0
    result = json.loads(capsys.readouterr().out)
    assert set(result) >= {"t", "df", "p", "significant", "alpha"}
    assert 0.0 <= result["p"] <= 1.0


def test_report_outputs(env, tmp_path, capsys):
    ledger = tmp_path / "runs.csv"
    args = ["grid", "--data", str(env["stage1"]), "--init", str(env["base"]),
            "--vocab", str(env["vocab"]), "--out", str(ledger),
            "--freeze", "nn2", "--optimizer", "adam", "--lr", "0.0005",
            "--dropout", "0.15,0.25", "--repeats", "2", *TRAIN_FLAGS]
    assert main(args) == 0
    capsys.readouterr()
    out_dir = tmp_path / "reports"
    assert main(["report", "--ledger", str(ledger), "--out-dir", str(out_dir)]) == 0
    assert (out_dir / "report.csv").exists()
    assert (out_dir / "report.txt").exists()
    assert (out_dir / "plots.svg").exists()
    for metric in ("accuracy", "f1", "train_seconds"):
        assert (out_dir / f"plot_{metric}.csv").exists()
    assert "adam" in capsys.readouterr().out


# --- exit codes and config resolution ----------------------------------------------

def test_unknown_flag_exits_one(env):
    with pytest.raises(SystemExit) as exc:
        main(["predict", "--bogus"])
    assert exc.value.code == 1


def test_unknown_subcommand_exits_one():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1


def test_data_error_exits_two(env, tmp_path, capsys):
    code = main(["predict", "--model", str(env["base"]), "--vocab", str(env["vocab"]),
                 "--data", str(tmp_path / "missing.jsonl"),
                 "--out", str(tmp_path / "o.csv")])
    assert code == 2
    assert "data error" in capsys.readouterr().err


def test_numeric_error_exits_three(env, tmp_path, capsys):
    code = main(["finetune", "--data", str(env["stage1"]), "--init", str(env["base"]),
                 "--vocab", str(env["vocab"]), "--out", str(tmp_path / "m.nta"),
                 "--lr", "-1", *TRAIN_FLAGS])
    assert code == 3
    assert "numeric error" in capsys.readouterr().err


def test_config_file_and_flag_precedence(env, tmp_path, caplog):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "data": str(env["stage1"]), "init": str(env["base"]),
        "vocab": str(env["vocab"]), "out": str(tmp_path / "m.nta"),
        "lr": 0.0005, "dropout": 0.15, "max_epochs": 2, "patience": 1,
        "batch_size": 8, "max_len": 8,
    }))
    with caplog.at_level(logging.INFO, logger="kt"):
        code = main(["--config", str(config), "finetune", "--lr", "0.001"])
    assert code == 0
    line = next(msg for msg in caplog.messages if msg.startswith("resolved-config"))
    resolved = json.loads(line.removeprefix("resolved-config "))
    assert resolved["lr"] == 0.001       # flag beats config file
    assert resolved["dropout"] == 0.15   # config file beats default
    assert resolved["subcommand"] == "finetune"


def test_workers_env_var(env, tmp_path, capsys, monkeypatch, caplog):
    monkeypatch.setenv("KT_WORKERS", "2")
    out = tmp_path / "preds.csv"
    with caplog.at_level(logging.INFO, logger="kt"):
        code = main(["predict", "--model", str(env["base"]), "--vocab",
                     str(env["vocab"]), "--data", str(env["stage2"]),
                     "--out", str(out), "--max-len", "8"])
    assert code == 0
    line = next(msg for msg in caplog.messages if msg.startswith("resolved-config"))
    assert json.loads(line.removeprefix("resolved-config "))["workers"] == 2
