"""Fine-tuning loop: seeded minibatches, early stopping on validation loss,
best-epoch restore, and second-stage domain adaptation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np

from kinetic_triage import corpus
from kinetic_triage.corpus import LabelledDataset, SplitSpec
from kinetic_triage.encoder import (
    FreezeConfig,
    ModelConfig,
    forward,
    load_archive,
    save_archive,
    set_trainable,
)
from kinetic_triage.encoder.model import ModelParams
from kinetic_triage.errors import DataError, NumericError
from kinetic_triage.evalstats import MetricsReport, score
from kinetic_triage.numeric import Tape, backward, cross_entropy
from kinetic_triage.tokenizer import Vocab, tokenize
from kinetic_triage.trainer.optim import OptimizerConfig, make_optimizer

RETIRED_MESSAGE = "configuration retired after stage-1 evaluation"
RETIRED_LR = 0.005


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    patience: int = 10
    batch_size: int = 16
    train_fraction: float = 0.8
    seed: int = 0
    repeats: int = 10
    max_len: int = 128

    def __post_init__(self):
        if self.patience >= self.max_epochs:
            raise DataError(f"patience {self.patience} must be < max_epochs {self.max_epochs}")
        if self.repeats < 1:
            raise DataError(f"repeats must be >= 1, got {self.repeats}")
        if self.batch_size < 1:
            raise DataError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class TrainPlan:
    """One grid cell's full recipe."""

    freeze: FreezeConfig
    optimizer: OptimizerConfig
    train: TrainConfig


@dataclass
class RunResult:
    freeze: str
    optimizer: str
    lr: float
    dr: float
    repeat: int
    seed: int
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    metrics: MetricsReport
    train_seconds: float
    checkpoint: str = ""


class EarlyStopping:
    """Strict-improvement patience rule: stop once the validation loss has
    gone ``patience`` consecutive epochs without a new minimum, or at
    ``max_epochs``."""

    def __init__(self, patience: int, max_epochs: int):
        self.patience = patience
        self.max_epochs = max_epochs
        self.best = math.inf
        self.best_epoch = 0
        self.stale = 0

    def update(self, epoch: int, loss: float) -> bool:
        """Feed epoch (1-based) and its validation loss; True means stop."""
        if loss < self.best:
            self.best = loss
            self.best_epoch = epoch
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience or epoch >= self.max_epochs


def _epoch_rng(seed: int, *path: int) -> np.random.Generator:
    # counter-based derivation: one independent stream per (seed, path)
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=path))


def _batched(n: int, batch_size: int, order=None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start:start + batch_size]


def _mean_val_loss(params, cfg, seqs, labels, batch_size) -> float:
    total = 0.0
    for chunk in _batched(len(seqs), batch_size):
        logits = forward(params, cfg, [seqs[i] for i in chunk], training=False)
        loss = cross_entropy(logits, labels[chunk])
        total += float(loss.data) * len(chunk)
    return total / len(seqs)


def _predict_labels(params, cfg, seqs, batch_size) -> list[int]:
    out: list[int] = []
    for chunk in _batched(len(seqs), batch_size):
        logits = forward(params, cfg, [seqs[i] for i in chunk], training=False)
        out.extend(int(i) for i in np.argmax(logits.data, axis=-1))
    return out


def train(data: LabelledDataset, init: ModelParams, cfg: ModelConfig, vocab: Vocab,
          plan: TrainPlan, checkpoint_path: str | None = None,
          repeat: int = 0) -> tuple[RunResult, ModelParams]:
    """Fine-tune from ``init`` under the plan's freeze/optimizer/stop settings.

    Deterministic given (data, init, plan): the split, batch order, and
    dropout masks all derive from the plan seed. Weights from the best
    validation epoch are restored before returning.
    """
    t0 = time.perf_counter()
    tcfg = plan.train
    train_ds, val_ds = corpus.split(
        data, SplitSpec(tcfg.train_fraction, seed=tcfg.seed, stratified=True))
    if len(train_ds) == 0 or len(val_ds) == 0:
        raise DataError("empty train or validation split")

    max_len = min(tcfg.max_len, cfg.max_positions)
    train_seqs = [tokenize(r.text, vocab, max_len) for r in train_ds.records]
    val_seqs = [tokenize(r.text, vocab, max_len) for r in val_ds.records]
    train_labels = np.asarray(train_ds.labels())
    val_labels = np.asarray(val_ds.labels())

    params = {name: t.copy() for name, t in init.items()}
    trainable = set_trainable(params, cfg, plan.freeze)
    opt = make_optimizer(plan.optimizer)
    stopper = EarlyStopping(tcfg.patience, tcfg.max_epochs)
    best_state = {name: t.data.copy() for name, t in trainable.items()}

    epoch = 0
    for epoch in range(1, tcfg.max_epochs + 1):
        order = _epoch_rng(tcfg.seed, 1, epoch).permutation(len(train_seqs))
        for batch_idx, chunk in enumerate(_batched(len(train_seqs), tcfg.batch_size, order)):
            drop_rng = _epoch_rng(tcfg.seed, 2, epoch, batch_idx)
            try:
                with Tape() as tape:
                    logits = forward(params, cfg, [train_seqs[i] for i in chunk],
                                     training=True, freeze=plan.freeze, rng=drop_rng)
                    loss = cross_entropy(logits, train_labels[chunk])
                grads = backward(loss, tape)
                opt.step(trainable, grads)
            except NumericError as exc:
                raise NumericError(f"epoch {epoch} batch {batch_idx}: {exc}") from exc

        val_loss = _mean_val_loss(params, cfg, val_seqs, val_labels, tcfg.batch_size)
        improved = val_loss < stopper.best
        stop = stopper.update(epoch, val_loss)
        if improved:
            for name, t in trainable.items():
                best_state[name] = t.data.copy()
        if stop:
            break

    for name, t in trainable.items():
        t.data = best_state[name].copy()
    train_seconds = time.perf_counter() - t0

    predicted = _predict_labels(params, cfg, val_seqs, tcfg.batch_size)
    _, metrics = score(predicted, list(val_labels))

    if checkpoint_path:
        save_archive(params, cfg, checkpoint_path)
    result = RunResult(
        freeze=plan.freeze.value,
        optimizer=plan.optimizer.kind,
        lr=plan.optimizer.lr,
        dr=cfg.classifier_dropout,
        repeat=repeat,
        seed=tcfg.seed,
        epochs_run=epoch,
        best_epoch=stopper.best_epoch,
        best_val_loss=stopper.best,
        metrics=metrics,
        train_seconds=train_seconds,
        checkpoint=checkpoint_path or "",
    )
    return result, params


def adapt(archive_path: str, data: LabelledDataset, vocab: Vocab, plan: TrainPlan,
          out_archive: str | None = None, dr: float | None = None,
          repeat: int = 0) -> tuple[RunResult, ModelParams]:
    """Second-stage fine-tune (domain adaptation) starting from an archive.

    Configurations that were dropped after stage-1 evaluation (head-only
    freezing, SGD, lr = 0.005) are rejected.
    """
    if plan.freeze is FreezeConfig.HEAD_ONLY:
        raise DataError(f"{RETIRED_MESSAGE}: freeze {plan.freeze.value}")
    if plan.optimizer.kind == "sgd":
        raise DataError(f"{RETIRED_MESSAGE}: optimizer sgd")
    if plan.optimizer.lr == RETIRED_LR:
        raise DataError(f"{RETIRED_MESSAGE}: lr {RETIRED_LR}")
    params, cfg = load_archive(archive_path)
    if dr is not None:
        cfg = replace(cfg, classifier_dropout=dr)
    return train(data, params, cfg, vocab, plan,
                 checkpoint_path=out_archive, repeat=repeat)
