"""Central-difference gradient checker.

Meant to run in 64-bit mode: pass float64 parameter tensors, otherwise the
difference quotient drowns in rounding noise.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from kinetic_triage.errors import NumericError
from kinetic_triage.numeric.tensor import Tape, Tensor, backward


def grad_check(f: Callable[[dict[str, Tensor]], Tensor], params: dict[str, Tensor],
               h: float = 1e-5, samples: int | None = None, seed: int = 0,
               order: int = 2) -> float:
    """Max relative error between tape gradients and finite differences.

    ``order=2`` is the plain central difference (f(x+h)-f(x-h))/2h;
    ``order=4`` adds Richardson extrapolation, which tolerates a much larger
    h and therefore beats float64 cancellation on near-zero-gradient
    coordinates. ``samples`` limits the probed coordinates per tensor (seeded
    choice); None probes every coordinate. Relative error is
    |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
    """
    if h <= 0:
        raise NumericError(f"grad_check: step h must be positive, got {h}")
    if order not in (2, 4):
        raise NumericError(f"grad_check: order must be 2 or 4, got {order}")

    with Tape() as tape:
        loss = f(params)
    analytic = backward(loss, tape)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, tensor in params.items():
        if not tensor.requires_grad:
            continue
        grad = analytic.get(name)
        flat = tensor.data.reshape(-1)
        n = flat.size
        if samples is None or samples >= n:
            coords = range(n)
        else:
            coords = rng.choice(n, size=samples, replace=False)
        for i in coords:
            original = flat[i]

            def eval_at(x):
                flat[i] = x
                return float(f(params).data)

            d_h = (eval_at(original + h) - eval_at(original - h)) / (2.0 * h)
            if order == 4:
                d_half = (eval_at(original + h / 2) - eval_at(original - h / 2)) / h
                numeric = (4.0 * d_half - d_h) / 3.0
            else:
                numeric = d_h
            flat[i] = original
            a = 0.0 if grad is None else float(grad.data.reshape(-1)[i])
            err = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
            if err > worst:
                worst = err
    return worst
