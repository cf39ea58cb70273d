"""Dense-tensor math with reverse-mode gradients on an explicit tape."""

from kinetic_triage.numeric.tensor import Tape, Tensor, backward, constant
from kinetic_triage.numeric.ops import (
    add,
    cross_entropy,
    dropout,
    embedding_lookup,
    gelu,
    layer_norm,
    matmul,
    mul,
    reduce_sum,
    reshape,
    softmax,
    swapaxes,
    take,
    tanh,
    transpose,
)
from kinetic_triage.numeric.gradcheck import grad_check

__all__ = [
    "Tape", "Tensor", "backward", "constant",
    "add", "cross_entropy", "dropout", "embedding_lookup", "gelu",
    "layer_norm", "matmul", "mul", "reduce_sum", "reshape", "softmax",
    "swapaxes", "take", "tanh", "transpose",
    "grad_check",
]
