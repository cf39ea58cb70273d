"""First-order optimizers: SGD, Adam, and AdamW with decoupled weight decay.

All three update a named parameter subset in place from a gradient map with
exactly matching names. AdamW applies its decay only to dense weight matrices
(names ending in ".weight"); biases, layer norms, and embeddings are exempt.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from kinetic_triage.errors import NumericError
from kinetic_triage.numeric import Tensor

OPTIMIZER_KINDS = ("sgd", "adam", "adamw")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01  # adamw only

    def __post_init__(self):
        if self.kind not in OPTIMIZER_KINDS:
            raise NumericError(f"unknown optimizer {self.kind!r} (expected sgd|adam|adamw)")
        if self.lr < 0:
            # lr = 0 is a legal degenerate step (used to probe no-op training)
            raise NumericError(f"lr must be non-negative, got {self.lr}")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise NumericError(f"betas must be in (0,1), got {self.beta1}, {self.beta2}")


def _check_step_inputs(params: dict[str, Tensor], grads: dict[str, Tensor]) -> None:
    if params.keys() != grads.keys():
        only_p = sorted(params.keys() - grads.keys())
        only_g = sorted(grads.keys() - params.keys())
        raise NumericError(
            f"optimizer step: gradient names do not match trainable names "
            f"(missing grads: {only_p[:3]}, unexpected grads: {only_g[:3]})")
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad.data)):
            raise NumericError(f"optimizer step: non-finite gradient for {name!r}")


class SGD:
    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg

    def step(self, params: dict[str, Tensor], grads: dict[str, Tensor]) -> None:
        _check_step_inputs(params, grads)
        for name, p in params.items():
            p.data -= np.asarray(self.cfg.lr, dtype=p.dtype) * grads[name].data


class Adam:
    decoupled_decay = False

    def __init__(self, cfg: OptimizerConfig):
        self.cfg = cfg
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, Tensor]) -> None:
        _check_step_inputs(params, grads)
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name, p in params.items():
            g = grads[name].data
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.m[name] = m
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            update = cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
            if self.decoupled_decay and name.endswith(".weight"):
                update = update + cfg.lr * cfg.weight_decay * p.data
            p.data -= update.astype(p.dtype, copy=False)


class AdamW(Adam):
    """Adam plus decoupled decay: theta -= lr * wd * theta, weights only."""

    decoupled_decay = True


def make_optimizer(cfg: OptimizerConfig):
    return {"sgd": SGD, "adam": Adam, "adamw": AdamW}[cfg.kind](cfg)
