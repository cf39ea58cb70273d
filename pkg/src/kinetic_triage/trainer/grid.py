"""Grid sweep over freeze x optimizer x lr x dropout, with a resumable CSV
ledger.

Every (cell, repeat) pair trains with its own derived seed; finished pairs
are recorded immediately, so an interrupted sweep picks up where it stopped.
"""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

from kinetic_triage.corpus import LabelledDataset
from kinetic_triage.encoder import FreezeConfig, ModelConfig
from kinetic_triage.encoder.model import ModelParams
from kinetic_triage.errors import DataError
from kinetic_triage.numeric import Tensor
from kinetic_triage.tokenizer import Vocab
from kinetic_triage.trainer.loop import RunResult, TrainConfig, TrainPlan, train
from kinetic_triage.trainer.optim import OPTIMIZER_KINDS, OptimizerConfig

log = logging.getLogger(__name__)

DEFAULT_LRS = (0.0001, 0.0005, 0.005)
DEFAULT_DRS = (0.15, 0.20, 0.25)

LEDGER_COLUMNS = [
    "freeze", "optimizer", "lr", "dr", "repeat", "seed", "epochs_run",
    "best_epoch", "best_val_loss", "accuracy", "precision", "recall", "f1",
    "train_seconds", "checkpoint",
]

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(base_seed: int, cell_index: int, repeat: int) -> int:
    """64-bit seed mix: splitmix64 applied to base, then cell, then repeat.

    Documented so ledgers stay portable: s0 = splitmix64(base),
    s1 = splitmix64(s0 xor (cell_index + 1)), result = splitmix64(s1 xor
    (repeat + 1)).
    """
    s = _splitmix64(base_seed & _MASK64)
    s = _splitmix64(s ^ (cell_index + 1))
    return _splitmix64(s ^ (repeat + 1))


@dataclass(frozen=True)
class GridCell:
    index: int
    freeze: FreezeConfig
    optimizer: str
    lr: float
    dr: float


@dataclass(frozen=True)
class GridSpec:
    freezes: tuple[FreezeConfig, ...] = (
        FreezeConfig.HEAD_ONLY, FreezeConfig.TOP_LAYER, FreezeConfig.TOP_TWO_LAYERS)
    optimizers: tuple[str, ...] = OPTIMIZER_KINDS
    lrs: tuple[float, ...] = DEFAULT_LRS
    drs: tuple[float, ...] = DEFAULT_DRS

    def __post_init__(self):
        for dim, values in (("freezes", self.freezes), ("optimizers", self.optimizers),
                            ("lrs", self.lrs), ("drs", self.drs)):
            if not values:
                raise DataError(f"grid dimension {dim!r} is empty")

    @property
    def cell_count(self) -> int:
        return len(self.freezes) * len(self.optimizers) * len(self.lrs) * len(self.drs)

    def cells(self) -> list[GridCell]:
        """Deterministic enumeration order: freeze, optimizer, lr, dr."""
        return [
            GridCell(i, fz, opt, lr, dr)
            for i, (fz, opt, lr, dr) in enumerate(
                product(self.freezes, self.optimizers, self.lrs, self.drs))
        ]


RunKey = tuple[str, str, float, float, int]


def result_to_row(r: RunResult) -> dict:
    return {
        "freeze": r.freeze,
        "optimizer": r.optimizer,
        "lr": repr(r.lr),
        "dr": repr(r.dr),
        "repeat": r.repeat,
        "seed": r.seed,
        "epochs_run": r.epochs_run,
        "best_epoch": r.best_epoch,
        "best_val_loss": repr(r.best_val_loss),
        "accuracy": repr(r.metrics.accuracy),
        "precision": repr(r.metrics.precision),
        "recall": repr(r.metrics.recall),
        "f1": repr(r.metrics.f1),
        "train_seconds": repr(r.train_seconds),
        "checkpoint": r.checkpoint,
    }


def read_ledger(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = set(LEDGER_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise DataError(f"{path}: ledger missing columns {sorted(missing)}")
        return list(reader)


def completed_keys(rows: list[dict]) -> set[RunKey]:
    return {
        (row["freeze"], row["optimizer"], float(row["lr"]), float(row["dr"]),
         int(row["repeat"]))
        for row in rows
    }


def append_ledger_row(path: str | Path, row: dict) -> None:
    path = Path(path)
    fresh = not path.exists() or path.stat().st_size == 0
    with open(path, "a", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LEDGER_COLUMNS)
        if fresh:
            writer.writeheader()
        writer.writerow(row)
        fh.flush()


def _cell_plan(cell: GridCell, tcfg: TrainConfig, repeat: int,
               cfg: ModelConfig) -> tuple[TrainPlan, ModelConfig, int]:
    seed = derive_seed(tcfg.seed, cell.index, repeat)
    plan = TrainPlan(
        freeze=cell.freeze,
        optimizer=OptimizerConfig(kind=cell.optimizer, lr=cell.lr),
        train=replace(tcfg, seed=seed),
    )
    return plan, replace(cfg, classifier_dropout=cell.dr), seed


def _checkpoint_path(checkpoint_dir, cell: GridCell, repeat: int) -> str | None:
    if checkpoint_dir is None:
        return None
    name = f"{cell.freeze.value}_{cell.optimizer}_lr{cell.lr!r}_dr{cell.dr!r}_rep{repeat}.nta"
    return str(Path(checkpoint_dir) / name)


def _run_cell(task) -> RunResult:
    (cell, repeat, data, arrays, cfg, vocab, tcfg, checkpoint_dir) = task
    params = {name: Tensor(arr, name=name) for name, arr in arrays.items()}
    plan, cell_cfg, _ = _cell_plan(cell, tcfg, repeat, cfg)
    result, _ = train(data, params, cell_cfg, vocab, plan,
                      checkpoint_path=_checkpoint_path(checkpoint_dir, cell, repeat),
                      repeat=repeat)
    return result


def run_grid(data: LabelledDataset, init: ModelParams, cfg: ModelConfig, vocab: Vocab,
             grid: GridSpec, tcfg: TrainConfig, ledger_path: str | Path,
             workers: int = 1, checkpoint_dir: str | None = None,
             train_fn=None) -> list[RunResult]:
    """Execute every (cell, repeat) pair not already in the ledger.

    Returns only the newly executed results; the ledger accumulates all of
    them. ``train_fn`` can replace the training call (serial mode only, for
    tests).
    """
    done = completed_keys(read_ledger(ledger_path))
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)

    pending: list[tuple[GridCell, int]] = [
        (cell, repeat)
        for cell in grid.cells()
        for repeat in range(tcfg.repeats)
        if (cell.freeze.value, cell.optimizer, float(cell.lr), float(cell.dr),
            repeat) not in done
    ]
    total = grid.cell_count * tcfg.repeats
    log.info("grid: %d cells x %d repeats = %d runs, %d already in ledger, %d pending",
             grid.cell_count, tcfg.repeats, total, total - len(pending), len(pending))

    results: list[RunResult] = []
    if workers <= 1:
        runner = train_fn or train
        for cell, repeat in pending:
            plan, cell_cfg, _ = _cell_plan(cell, tcfg, repeat, cfg)
            result, _ = runner(data, init, cell_cfg, vocab, plan,
                               checkpoint_path=_checkpoint_path(checkpoint_dir, cell, repeat),
                               repeat=repeat)
            append_ledger_row(ledger_path, result_to_row(result))
            results.append(result)
    else:
        arrays = {name: t.data for name, t in init.items()}
        tasks = {
            (cell.index, repeat): (cell, repeat, data, arrays, cfg, vocab, tcfg,
                                   checkpoint_dir)
            for cell, repeat in pending
        }
        finished: dict[tuple[int, int], RunResult] = {}
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_run_cell, task): key for key, task in tasks.items()}
            for future in as_completed(futures):
                result = future.result()
                append_ledger_row(ledger_path, result_to_row(result))
                finished[futures[future]] = result
        results = [finished[key] for key in sorted(finished)]
    return results
