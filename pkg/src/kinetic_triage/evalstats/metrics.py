"""Prediction over a record list and confusion-matrix metrics.

The positive class is 1 (kinetic injury). F1 is the binary positive-class
score. An argmax tie predicts 0, deterministically.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from kinetic_triage.corpus import TriageRecord
from kinetic_triage.encoder import ModelConfig, forward
from kinetic_triage.encoder.model import ModelParams
from kinetic_triage.errors import DataError
from kinetic_triage.numeric import Tensor
from kinetic_triage.tokenizer import Vocab, tokenize


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    n: int
    wall_seconds: float = 0.0
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class PredictionResult:
    labels: list[int]
    scores: list[float]  # softmax probability of the positive class
    wall_seconds: float

    @property
    def notes_per_second(self) -> float:
        return len(self.labels) / self.wall_seconds if self.wall_seconds > 0 else 0.0


def _positive_probability(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e[:, 1] / e.sum(axis=-1)


def _predict_shard(args) -> tuple[list[int], list[float]]:
    arrays, cfg, vocab, texts, batch_size, max_len = args
    params = {name: Tensor(arr, name=name) for name, arr in arrays.items()}
    seqs = [tokenize(text, vocab, max_len) for text in texts]
    labels: list[int] = []
    scores: list[float] = []
    for start in range(0, len(seqs), batch_size):
        logits = forward(params, cfg, seqs[start:start + batch_size], training=False)
        labels.extend(int(i) for i in np.argmax(logits.data, axis=-1))
        scores.extend(float(p) for p in _positive_probability(logits.data))
    return labels, scores


def predict(params: ModelParams, cfg: ModelConfig, vocab: Vocab,
            records: Sequence[TriageRecord], batch_size: int = 16,
            max_len: int = 128, workers: int = 1) -> PredictionResult:
    """Argmax labels for every record; timing covers tokenization + forward.

    Labels do not depend on batch_size or worker count; shards reassemble in
    input order.
    """
    if not records:
        raise DataError("predict: no records")
    max_len = min(max_len, cfg.max_positions)
    texts = [r.text for r in records]
    t0 = time.perf_counter()
    if workers <= 1:
        labels, scores = _predict_shard(
            ({n: t.data for n, t in params.items()}, cfg, vocab, texts,
             batch_size, max_len))
    else:
        arrays = {n: t.data for n, t in params.items()}
        bounds = np.linspace(0, len(texts), workers + 1).astype(int)
        shards = [
            (arrays, cfg, vocab, texts[a:b], batch_size, max_len)
            for a, b in zip(bounds[:-1], bounds[1:]) if b > a
        ]
        labels, scores = [], []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for shard_labels, shard_scores in pool.map(_predict_shard, shards):
                labels.extend(shard_labels)
                scores.extend(shard_scores)
    return PredictionResult(labels, scores, time.perf_counter() - t0)


def score(predicted: Sequence[int], gold: Sequence[int],
          wall_seconds: float = 0.0) -> tuple[ConfusionMatrix, MetricsReport]:
    """Confusion counts plus accuracy/precision/recall/F1.

    Precision or recall with a zero denominator is reported as 0 and flagged.
    """
    if len(predicted) != len(gold):
        raise DataError(
            f"score: length mismatch, {len(predicted)} predictions vs {len(gold)} gold")
    if len(gold) == 0:
        raise DataError("score: empty inputs")
    for value in (*predicted, *gold):
        if value not in (0, 1):
            raise DataError(f"score: label {value!r} outside {{0,1}}")

    tp = sum(1 for p, g in zip(predicted, gold) if p == 1 and g == 1)
    fp = sum(1 for p, g in zip(predicted, gold) if p == 1 and g == 0)
    tn = sum(1 for p, g in zip(predicted, gold) if p == 0 and g == 0)
    fn = sum(1 for p, g in zip(predicted, gold) if p == 0 and g == 1)
    cm = ConfusionMatrix(tp, fp, tn, fn)

    flags: list[str] = []
    accuracy = (tp + tn) / cm.n
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision, flags = 0.0, flags + ["precision_undefined"]
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall, flags = 0.0, flags + ["recall_undefined"]
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    report = MetricsReport(accuracy, precision, recall, f1, cm.n,
                           wall_seconds, tuple(flags))
    return cm, report
