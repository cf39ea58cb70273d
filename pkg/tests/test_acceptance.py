"""Acceptance suite.

Each test implements one release criterion at its stated tolerance and prints
a single PASS line (visible with ``pytest -s`` or in failure output).
"""

import csv
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
import scipy.stats

from kinetic_triage.corpus import make_synthetic, save_dataset
from kinetic_triage.encoder import (
    FreezeConfig,
    ModelConfig,
    forward,
    init_params,
    save_archive,
    set_trainable,
    trainable_names,
)
from kinetic_triage.errors import DataError
from kinetic_triage.evalstats import score, welch_from_summary, welch_ttest
from kinetic_triage.numeric import Tape, backward, cross_entropy, grad_check
from kinetic_triage.tokenizer import tokenize
from kinetic_triage.trainer import (
    Adam,
    EarlyStopping,
    GridSpec,
    OptimizerConfig,
    TrainConfig,
    TrainPlan,
    derive_seed,
    make_optimizer,
    read_ledger,
    run_grid,
    train,
)
from tests.conftest import synthetic_vocab, toy_config

FREEZES = (FreezeConfig.HEAD_ONLY, FreezeConfig.TOP_LAYER, FreezeConfig.TOP_TWO_LAYERS)


def _passed(name: str, detail: str = "") -> None:
    print(f"[acceptance] {name}: PASS {detail}".rstrip())


@pytest.fixture(scope="module")
def vocab():
    return synthetic_vocab()


@pytest.fixture(scope="module")
def learn_cfg(vocab):
    # desk-scale encoder used for the learnability and pipeline criteria
    return ModelConfig(layers=2, hidden=32, heads=4, ff_dim=64,
                       vocab_size=len(vocab), max_positions=32,
                       classifier_dropout=0.15)


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory, vocab, learn_cfg):
    root = tmp_path_factory.mktemp("acceptance")
    vocab_path = root / "vocab.txt"
    vocab.save(vocab_path)
    base = root / "base.nta"
    save_archive(init_params(learn_cfg, seed=6, std=0.1), learn_cfg, base)
    return {"root": root, "vocab": vocab_path, "base": base}


def _kt(*args: str) -> subprocess.CompletedProcess:
    return subprocess.run([sys.executable, "-m", "kinetic_triage.cli", *args],
                          capture_output=True, text=True)


# -----------------------------------------------------------------------------
# 1. Gradient fidelity: finite differences over every trainable tensor of a
#    toy model under each freeze config, 64-bit, max rel err < 1e-6, < 1 min.
# -----------------------------------------------------------------------------

def test_a1_gradient_fidelity(vocab):
    t0 = time.perf_counter()
    cfg = toy_config(vocab, hidden=8, layers=2, heads=2, max_positions=16,
                     encoder_dropout=0.0, classifier_dropout=0.0)
    batch = [tokenize("driver in mva hit tree", vocab, 8),
             tokenize("central chest pain", vocab, 8)]
    labels = np.array([1, 0])
    worst = {}
    for freeze in FREEZES:
        params = init_params(cfg, seed=2, dtype=np.float64, std=0.1)
        set_trainable(params, cfg, freeze)

        def loss_fn(p, _freeze=freeze):
            return cross_entropy(forward(p, cfg, batch, training=True, freeze=_freeze),
                                 labels)

        # 4th-order differences: plain central differences bottom out around
        # 4e-6 on this model's smallest-gradient coordinates (float64
        # cancellation), above the 1e-6 gate
        err = grad_check(loss_fn, params, h=1e-2, order=4)
        assert err < 1e-6, f"{freeze.value}: max relative error {err:.3e}"
        worst[freeze.value] = err
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    _passed("gradient-fidelity",
            f"(worst {max(worst.values()):.2e}, {elapsed:.1f}s)")


# -----------------------------------------------------------------------------
# 2. Freeze invariants: 20 optimizer steps leave frozen tensors bit-identical
#    while every trainable tensor changes.
# -----------------------------------------------------------------------------

def test_a2_freeze_invariants(vocab):
    t0 = time.perf_counter()
    cfg = toy_config(vocab, hidden=8, layers=2, heads=2, max_positions=16,
                     encoder_dropout=0.0, classifier_dropout=0.0)
    batch = [tokenize("motorbike rider came off at speed", vocab, 8),
             tokenize("fever and productive cough", vocab, 8)]
    labels = np.array([1, 0])
    for freeze in FREEZES:
        params = init_params(cfg, seed=3, std=0.1)
        initial = {name: t.data.copy() for name, t in params.items()}
        trainable = set_trainable(params, cfg, freeze)
        opt = Adam(OptimizerConfig("adam", lr=0.001))
        for _ in range(20):
            with Tape() as tape:
                loss = cross_entropy(
                    forward(params, cfg, batch, training=True, freeze=freeze), labels)
            opt.step(trainable, backward(loss, tape))
        trainable_set = set(trainable_names(cfg, freeze))
        for name, tensor in params.items():
            if name in trainable_set:
                assert not np.array_equal(tensor.data, initial[name]), \
                    f"{freeze.value}: trainable {name} did not change"
            else:
                assert np.array_equal(tensor.data, initial[name]), \
                    f"{freeze.value}: frozen {name} changed"
    _passed("freeze-invariants", f"({time.perf_counter() - t0:.1f}s)")


# -----------------------------------------------------------------------------
# 3. Optimizer oracles: 5-step trajectories on a 1-D quadratic match an
#    independent textbook simulation within 1e-10 in 64-bit.
# -----------------------------------------------------------------------------

def _oracle_trajectory(kind, theta0, lr, steps):
    beta1, beta2, eps, wd = 0.9, 0.999, 1e-8, 0.01
    theta, m, v = theta0, 0.0, 0.0
    out = []
    for t in range(1, steps + 1):
        g = theta  # gradient of f(theta) = theta^2 / 2
        if kind == "sgd":
            theta -= lr * g
        else:
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            step = lr * (m / (1 - beta1 ** t)) / (math.sqrt(v / (1 - beta2 ** t)) + eps)
            if kind == "adamw":
                step += lr * wd * theta
            theta -= step
        out.append(theta)
    return out


def test_a3_optimizer_oracles():
    from kinetic_triage.numeric import Tensor

    for kind in ("sgd", "adam", "adamw"):
        opt = make_optimizer(OptimizerConfig(kind, lr=0.1, weight_decay=0.01))
        params = {"w.weight": Tensor(np.array([1.0]), requires_grad=True,
                                     name="w.weight", dtype=np.float64)}
        observed = []
        for _ in range(5):
            g = {"w.weight": Tensor(np.array([float(params["w.weight"].data[0])]),
                                    dtype=np.float64)}
            opt.step(params, g)
            observed.append(float(params["w.weight"].data[0]))
        expected = _oracle_trajectory(kind, 1.0, 0.1, 5)
        np.testing.assert_allclose(observed, expected, rtol=0, atol=1e-10,
                                   err_msg=f"{kind} trajectory")
    _passed("optimizer-oracles", "(sgd/adam/adamw, 1e-10)")


# -----------------------------------------------------------------------------
# 4. Grid structure: 81 cells, 810 ledger rows at repeats=10 with the
#    documented seed derivation; resume skips completed pairs.
# -----------------------------------------------------------------------------

def test_a4_grid_structure(tmp_path, vocab):
    t0 = time.perf_counter()
    grid = GridSpec()
    assert grid.cell_count == 81
    assert len(grid.cells()) == 81

    cfg = toy_config(vocab, hidden=4, layers=1, heads=1, max_positions=8)
    data = make_synthetic(12, seed=8)
    init = init_params(cfg, seed=4)
    tcfg = TrainConfig(max_epochs=1, patience=0, batch_size=16, seed=42,
                       repeats=10, max_len=8)
    ledger = tmp_path / "grid.csv"
    results = run_grid(data, init, cfg, vocab, grid, tcfg, ledger)
    rows = read_ledger(ledger)
    assert len(results) == 810
    assert len(rows) == 810

    cell_by_key = {(c.freeze.value, c.optimizer, c.lr, c.dr): c.index
                   for c in grid.cells()}
    for row in rows:
        index = cell_by_key[(row["freeze"], row["optimizer"], float(row["lr"]),
                             float(row["dr"]))]
        assert int(row["seed"]) == derive_seed(42, index, int(row["repeat"]))

    # resume: drop 7 rows, re-run, only those 7 execute
    kept = rows[:-7]
    with open(ledger, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(kept)
    rerun = run_grid(data, init, cfg, vocab, grid, tcfg, ledger)
    assert len(rerun) == 7
    assert len(read_ledger(ledger)) == 810
    assert run_grid(data, init, cfg, vocab, grid, tcfg, ledger) == []
    _passed("grid-structure", f"(810 rows, resume ok, {time.perf_counter() - t0:.0f}s)")


# -----------------------------------------------------------------------------
# 5. Early stopping: 50 randomized trajectories match a direct simulation of
#    the 200-epoch / patience-10 rule.
# -----------------------------------------------------------------------------

def _simulate_patience(losses, patience=10, max_epochs=200):
    best, best_epoch, stale = math.inf, 0, 0
    for epoch, loss in enumerate(losses[:max_epochs], start=1):
        if loss < best:
            best, best_epoch, stale = loss, epoch, 0
        else:
            stale += 1
        if stale >= patience or epoch == max_epochs:
            return epoch, best_epoch
    return min(len(losses), max_epochs), best_epoch


def test_a5_early_stopping_matches_simulation():
    rng = np.random.default_rng(55)
    for _ in range(50):
        n = int(rng.integers(5, 230))
        # plateaus and ties are common in rounded validation losses
        losses = np.round(rng.random(n) * rng.choice([0.2, 1.0]) + 0.4, 2).tolist()
        if rng.random() < 0.2:
            losses = sorted(losses, reverse=True)  # monotone improvement
        expected = _simulate_patience(losses)

        stopper = EarlyStopping(patience=10, max_epochs=200)
        stopped_at = None
        for epoch, loss in enumerate(losses[:200], start=1):
            if stopper.update(epoch, loss):
                stopped_at = epoch
                break
        observed = (stopped_at if stopped_at is not None else min(len(losses), 200),
                    stopper.best_epoch)
        assert observed == expected, f"trajectory {losses[:12]}..."
    _passed("early-stopping", "(50 trajectories)")


# -----------------------------------------------------------------------------
# 6. Learnability at desk scale: separable corpus, toy encoder; top-two-layer
#    tuning reaches 0.95 within 50 epochs, head-only still beats 0.80, and the
#    head-only < top-two ordering holds.
# -----------------------------------------------------------------------------

def test_a6_learnability(vocab, learn_cfg):
    t0 = time.perf_counter()
    data = make_synthetic(1000, seed=11)
    init = init_params(learn_cfg, seed=0, std=0.1)
    accuracy = {}
    for freeze in (FreezeConfig.TOP_TWO_LAYERS, FreezeConfig.HEAD_ONLY):
        plan = TrainPlan(freeze=freeze,
                         optimizer=OptimizerConfig("adam", lr=0.001),
                         train=TrainConfig(max_epochs=50, patience=49, batch_size=16,
                                           seed=1, max_len=16))
        result, _ = train(data, init, learn_cfg, vocab, plan)
        assert result.epochs_run <= 50
        accuracy[freeze] = result.metrics.accuracy
    elapsed = time.perf_counter() - t0
    assert accuracy[FreezeConfig.TOP_TWO_LAYERS] >= 0.95
    assert accuracy[FreezeConfig.HEAD_ONLY] > 0.80
    assert accuracy[FreezeConfig.HEAD_ONLY] <= accuracy[FreezeConfig.TOP_TWO_LAYERS]
    assert elapsed < 600.0
    _passed("learnability",
            f"(nn3 {accuracy[FreezeConfig.TOP_TWO_LAYERS]:.3f}, "
            f"nn1 {accuracy[FreezeConfig.HEAD_ONLY]:.3f}, {elapsed:.0f}s)")


# -----------------------------------------------------------------------------
# 7. Metrics/statistics oracles: brute-force recount, reference p-values, and
#    the published summary cell.
# -----------------------------------------------------------------------------

def test_a7_metrics_and_statistics_oracles():
    rng = np.random.default_rng(77)
    for _ in range(100):
        n = int(rng.integers(1, 60))
        predicted = rng.integers(0, 2, size=n).tolist()
        gold = rng.integers(0, 2, size=n).tolist()
        cm, report = score(predicted, gold)
        tp = sum(p == 1 and g == 1 for p, g in zip(predicted, gold))
        fp = sum(p == 1 and g == 0 for p, g in zip(predicted, gold))
        tn = sum(p == 0 and g == 0 for p, g in zip(predicted, gold))
        fn = sum(p == 0 and g == 1 for p, g in zip(predicted, gold))
        assert (cm.tp, cm.fp, cm.tn, cm.fn) == (tp, fp, tn, fn)
        assert report.accuracy == (tp + tn) / n
        assert report.precision == (tp / (tp + fp) if tp + fp else 0.0)
        assert report.recall == (tp / (tp + fn) if tp + fn else 0.0)
        expected_f1 = (2 * report.precision * report.recall
                       / (report.precision + report.recall)
                       if report.precision + report.recall else 0.0)
        assert report.f1 == expected_f1

    checked = 0
    while checked < 20:
        n_a, n_b = int(rng.integers(2, 25)), int(rng.integers(2, 25))
        a = rng.normal(rng.normal(), abs(rng.normal()) + 0.05, size=n_a)
        b = rng.normal(rng.normal(), abs(rng.normal()) + 0.05, size=n_b)
        try:
            ours = welch_ttest(a.tolist(), b.tolist())
        except DataError:
            continue
        oracle = scipy.stats.ttest_ind(a, b, equal_var=False)
        assert abs(ours.p - oracle.pvalue) < 1e-6
        checked += 1

    # published adapted-model cell: 0.935 +/- 0.004 vs 0.931 +/- 0.004, n=10
    hand_t = (0.935 - 0.931) / math.sqrt(0.004 ** 2 / 10 + 0.004 ** 2 / 10)
    result = welch_from_summary(0.935, 0.004, 10, 0.931, 0.004, 10)
    assert abs(result.t - hand_t) < 1e-12
    assert abs(result.t - 2.236) < 1e-3
    _passed("metrics-statistics-oracles",
            f"(100 recounts, 20 p-values, t={result.t:.4f})")


# -----------------------------------------------------------------------------
# 8. Pipeline structural reproduction: finetune -> predict -> adapt -> predict
#    through the CLI; adaptation does not lose accuracy on the target domain.
# -----------------------------------------------------------------------------

def test_a8_pipeline_structural_reproduction(cli_env):
    t0 = time.perf_counter()
    root = cli_env["root"]
    stage1 = root / "stage1.jsonl"
    stage2_train = root / "stage2_train.jsonl"
    stage2_test = root / "stage2_test.jsonl"
    save_dataset(make_synthetic(400, seed=21, domain="a"), stage1)
    save_dataset(make_synthetic(300, seed=22, domain="b"), stage2_train)
    save_dataset(make_synthetic(200, seed=23, domain="b"), stage2_test)

    train_flags = ["--freeze", "nn3", "--optimizer", "adam", "--lr", "0.001",
                   "--dropout", "0.15", "--max-epochs", "30", "--patience", "5",
                   "--batch-size", "16", "--max-len", "16", "--seed", "4"]
    model1 = root / "stage1_model.nta"
    step1 = _kt("finetune", "--data", str(stage1), "--init", str(cli_env["base"]),
                "--vocab", str(cli_env["vocab"]), "--out", str(model1), *train_flags)
    assert step1.returncode == 0, step1.stderr

    preds1 = root / "preds_stage1.csv"
    step2 = _kt("predict", "--model", str(model1), "--vocab", str(cli_env["vocab"]),
                "--data", str(stage2_test), "--out", str(preds1), "--max-len", "16")
    assert step2.returncode == 0, step2.stderr
    acc_stage1 = json.loads(step2.stdout)["metrics"]["accuracy"]

    model2 = root / "adapted_model.nta"
    step3 = _kt("adapt", "--data", str(stage2_train), "--model", str(model1),
                "--vocab", str(cli_env["vocab"]), "--out", str(model2), *train_flags)
    assert step3.returncode == 0, step3.stderr

    preds2 = root / "preds_adapted.csv"
    step4 = _kt("predict", "--model", str(model2), "--vocab", str(cli_env["vocab"]),
                "--data", str(stage2_test), "--out", str(preds2), "--max-len", "16")
    assert step4.returncode == 0, step4.stderr
    acc_adapted = json.loads(step4.stdout)["metrics"]["accuracy"]

    elapsed = time.perf_counter() - t0
    assert acc_adapted >= acc_stage1, (acc_adapted, acc_stage1)
    assert elapsed < 1800.0
    _passed("pipeline-structural-reproduction",
            f"(stage1 {acc_stage1:.3f} -> adapted {acc_adapted:.3f}, {elapsed:.0f}s)")


# -----------------------------------------------------------------------------
# 9. Throughput reporting: 1000 toy-scale notes predict in < 60 s on one
#    worker, with wall seconds and notes/sec reported.
# -----------------------------------------------------------------------------

def test_a9_throughput_reporting(cli_env):
    notes = cli_env["root"] / "notes1000.jsonl"
    save_dataset(make_synthetic(1000, seed=31, domain="b"), notes)
    out = cli_env["root"] / "preds1000.csv"
    proc = _kt("predict", "--model", str(cli_env["base"]),
               "--vocab", str(cli_env["vocab"]), "--data", str(notes),
               "--out", str(out), "--max-len", "16", "--workers", "1")
    assert proc.returncode == 0, proc.stderr
    summary = json.loads(proc.stdout)
    assert summary["records"] == 1000
    assert summary["wall_seconds"] < 60.0
    assert summary["notes_per_second"] > 0
    with open(out, newline="") as fh:
        assert len(list(csv.DictReader(fh))) == 1000
    _passed("throughput-reporting",
            f"({summary['wall_seconds']:.1f}s, "
            f"{summary['notes_per_second']:.0f} notes/s)")
