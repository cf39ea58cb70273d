"""Optimizers, the fine-tuning loop, domain adaptation, and the grid runner."""

from kinetic_triage.trainer.optim import SGD, Adam, AdamW, OptimizerConfig, make_optimizer
from kinetic_triage.trainer.loop import (
    EarlyStopping,
    RunResult,
    TrainConfig,
    TrainPlan,
    adapt,
    train,
)
from kinetic_triage.trainer.grid import (
    LEDGER_COLUMNS,
    GridCell,
    GridSpec,
    append_ledger_row,
    completed_keys,
    derive_seed,
    read_ledger,
    run_grid,
)

__all__ = [
    "SGD", "Adam", "AdamW", "OptimizerConfig", "make_optimizer",
    "EarlyStopping", "RunResult", "TrainConfig", "TrainPlan", "adapt", "train",
    "LEDGER_COLUMNS", "GridCell", "GridSpec", "append_ledger_row",
    "completed_keys", "derive_seed", "read_ledger", "run_grid",
]
