"""Encoder architecture: embeddings, self-attention layers, pooler, classifier.

Parameters live in a flat name -> Tensor dict. Dense weights are stored
(in, out) so the forward pass is ``x @ W + b``. Residual ordering is
post-layer-norm, matching the original BERT family.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from kinetic_triage.errors import NumericError
from kinetic_triage.numeric import (
    Tensor,
    add,
    dropout,
    embedding_lookup,
    gelu,
    layer_norm,
    matmul,
    mul,
    reshape,
    softmax,
    swapaxes,
    take,
    tanh,
    transpose,
)
from kinetic_triage.tokenizer import TokenSequence

ModelParams = dict[str, Tensor]

NEG_INF_BIAS = -1e9


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 12
    hidden: int = 768
    heads: int = 12
    ff_dim: int = 3072
    vocab_size: int = 28996
    max_positions: int = 512
    ln_eps: float = 1e-12
    encoder_dropout: float = 0.1
    classifier_dropout: float = 0.1
    lowercase: bool = True  # companion-tokenizer casing, carried in archives

    def __post_init__(self):
        if self.layers < 1:
            raise NumericError(f"layers must be >= 1, got {self.layers}")
        if self.hidden % self.heads != 0:
            raise NumericError(
                f"hidden {self.hidden} not divisible by heads {self.heads}")
        if not 0.0 <= self.classifier_dropout < 1.0:
            raise NumericError(
                f"classifier_dropout must be in [0,1), got {self.classifier_dropout}")
        if not 0.0 <= self.encoder_dropout < 1.0:
            raise NumericError(
                f"encoder_dropout must be in [0,1), got {self.encoder_dropout}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


class FreezeConfig(Enum):
    """Which parameters train: the head alone, or the head plus the top one
    or two encoder layers. Everything else stays frozen."""

    HEAD_ONLY = "nn1"
    TOP_LAYER = "nn2"
    TOP_TWO_LAYERS = "nn3"

    @property
    def unfrozen_layer_count(self) -> int:
        return {"nn1": 0, "nn2": 1, "nn3": 2}[self.value]

    @classmethod
    def from_string(cls, s: str) -> "FreezeConfig":
        try:
            return cls(s.lower())
        except ValueError:
            raise NumericError(f"unknown freeze config {s!r} (expected nn1|nn2|nn3)") from None


def _layer_names(i: int) -> dict[str, tuple[str, ...]]:
    p = f"encoder.layer.{i}."
    return {
        "attn_q": (p + "attention.query.weight", p + "attention.query.bias"),
        "attn_k": (p + "attention.key.weight", p + "attention.key.bias"),
        "attn_v": (p + "attention.value.weight", p + "attention.value.bias"),
        "attn_out": (p + "attention.output.weight", p + "attention.output.bias"),
        "attn_ln": (p + "attention.layer_norm.gain", p + "attention.layer_norm.bias"),
        "ffn_in": (p + "ffn.intermediate.weight", p + "ffn.intermediate.bias"),
        "ffn_out": (p + "ffn.output.weight", p + "ffn.output.bias"),
        "ffn_ln": (p + "ffn.layer_norm.gain", p + "ffn.layer_norm.bias"),
    }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical tensor names and shapes, in archive order."""
    h, f = cfg.hidden, cfg.ff_dim
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.word": (cfg.vocab_size, h),
        "embeddings.position": (cfg.max_positions, h),
        "embeddings.segment": (2, h),
        "embeddings.layer_norm.gain": (h,),
        "embeddings.layer_norm.bias": (h,),
    }
    for i in range(cfg.layers):
        names = _layer_names(i)
        for key, dims in (
            ("attn_q", ((h, h), (h,))),
            ("attn_k", ((h, h), (h,))),
            ("attn_v", ((h, h), (h,))),
            ("attn_out", ((h, h), (h,))),
            ("attn_ln", ((h,), (h,))),
            ("ffn_in", ((h, f), (f,))),
            ("ffn_out", ((f, h), (h,))),
            ("ffn_ln", ((h,), (h,))),
        ):
            shapes[names[key][0]] = dims[0]
            shapes[names[key][1]] = dims[1]
    shapes["pooler.dense.weight"] = (h, h)
    shapes["pooler.dense.bias"] = (h,)
    shapes["classifier.weight"] = (h, 2)
    shapes["classifier.bias"] = (2,)
    return shapes


def validate_params(params: ModelParams, cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    missing = expected.keys() - params.keys()
    if missing:
        raise NumericError(f"params missing tensors: {sorted(missing)[:3]}...")
    extra = params.keys() - expected.keys()
    if extra:
        raise NumericError(f"params have unknown tensors: {sorted(extra)[:3]}...")
    for name, shape in expected.items():
        if tuple(params[name].shape) != shape:
            raise NumericError(
                f"tensor {name}: shape {tuple(params[name].shape)} != expected {shape}")


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32,
                std: float = 0.02) -> ModelParams:
    """Random init: truncated normal weights (|x| <= 2 std), zero biases,
    identity layer norms."""
    rng = np.random.default_rng(seed)
    params: ModelParams = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            data = np.ones(shape)
        elif name.endswith(".bias") or name.endswith("layer_norm.bias"):
            data = np.zeros(shape)
        else:
            data = _trunc_normal(rng, shape, std)
        params[name] = Tensor(data.astype(dtype), name=name)
    return params


def trainable_names(cfg: ModelConfig, freeze: FreezeConfig) -> list[str]:
    """Trainable subset per freeze config, in stable order: unfrozen layers
    bottom-up, then pooler, then classifier. The pooler and classifier train
    under every config. "Top one/two layers" clamps to the stack height on
    shallow models."""
    names: list[str] = []
    k = min(freeze.unfrozen_layer_count, cfg.layers)
    for i in range(cfg.layers - k, cfg.layers):
        for pair in _layer_names(i).values():
            names.extend(pair)
    names += ["pooler.dense.weight", "pooler.dense.bias",
              "classifier.weight", "classifier.bias"]
    return names


def trainable_params(params: ModelParams, cfg: ModelConfig,
                     freeze: FreezeConfig) -> ModelParams:
    return {name: params[name] for name in trainable_names(cfg, freeze)}


def set_trainable(params: ModelParams, cfg: ModelConfig,
                  freeze: FreezeConfig) -> ModelParams:
    """Mark the trainable subset on the tensors themselves; returns it."""
    wanted = trainable_names(cfg, freeze)
    wanted_set = set(wanted)
    for name, tensor in params.items():
        tensor.requires_grad = name in wanted_set
        tensor.tracked = tensor.requires_grad
    return {name: params[name] for name in wanted}


def batch_arrays(batch: Sequence[TokenSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a batch into (ids, mask) int64/float arrays of shape (B, T)."""
    if not batch:
        raise NumericError("forward: batch must be non-empty")
    t = len(batch[0])
    if any(len(seq) != t for seq in batch):
        raise NumericError("forward: all sequences in a batch must share max_len")
    ids = np.array([seq.ids for seq in batch], dtype=np.int64)
    mask = np.array([seq.mask for seq in batch], dtype=np.float64)
    return ids, mask


def encode(params: ModelParams, cfg: ModelConfig, batch: Sequence[TokenSequence],
           training: bool = False, freeze: FreezeConfig | None = None,
           rng: np.random.Generator | None = None,
           collect_attention: list[np.ndarray] | None = None) -> Tensor:
    """Run embeddings and all encoder layers; returns hidden states (B, T, H).

    Encoder-internal dropout fires only in unfrozen layers while training;
    frozen layers always run in inference mode. ``collect_attention`` receives
    each layer's (B, A, T, T) attention weights when provided.
    """
    ids, mask = batch_arrays(batch)
    b, t = ids.shape
    if t > cfg.max_positions:
        raise NumericError(
            f"forward: sequence length {t} exceeds max positions {cfg.max_positions}")
    dtype = params["embeddings.word"].dtype
    n_unfrozen = (cfg.layers if freeze is None
                  else min(freeze.unfrozen_layer_count, cfg.layers))
    first_unfrozen = cfg.layers - n_unfrozen

    word = embedding_lookup(params["embeddings.word"], ids)
    position = embedding_lookup(params["embeddings.position"],
                                np.broadcast_to(np.arange(t), (b, t)))
    segment = embedding_lookup(params["embeddings.segment"],
                               np.zeros((b, t), dtype=np.int64))
    h = add(add(word, position), segment)
    h = layer_norm(h, params["embeddings.layer_norm.gain"],
                   params["embeddings.layer_norm.bias"], cfg.ln_eps)
    if training and freeze is None:
        h = dropout(h, cfg.encoder_dropout, training, rng)

    # additive key mask: padded positions get a large negative pre-softmax bias
    att_bias = Tensor(((1.0 - mask) * NEG_INF_BIAS).astype(dtype)[:, None, None, :])
    scale = Tensor(np.asarray(1.0 / math.sqrt(cfg.head_dim), dtype=dtype))
    heads, hd = cfg.heads, cfg.head_dim

    for i in range(cfg.layers):
        names = _layer_names(i)
        live = training and i >= first_unfrozen

        def proj(key):
            w, bias = names[key]
            return add(matmul(h, params[w]), params[bias])

        def split(x):
            return swapaxes(reshape(x, (b, t, heads, hd)), 1, 2)

        q, k, v = split(proj("attn_q")), split(proj("attn_k")), split(proj("attn_v"))
        scores = add(mul(matmul(q, transpose(k)), scale), att_bias)
        weights = softmax(scores)
        if collect_attention is not None:
            collect_attention.append(weights.data.copy())
        probs = dropout(weights, cfg.encoder_dropout, live, rng)
        ctx = reshape(swapaxes(matmul(probs, v), 1, 2), (b, t, cfg.hidden))
        w, bias = names["attn_out"]
        attn_out = dropout(add(matmul(ctx, params[w]), params[bias]),
                           cfg.encoder_dropout, live, rng)
        gain, lbias = names["attn_ln"]
        h = layer_norm(add(h, attn_out), params[gain], params[lbias], cfg.ln_eps)

        w, bias = names["ffn_in"]
        mid = gelu(add(matmul(h, params[w]), params[bias]))
        w, bias = names["ffn_out"]
        ffn_out = dropout(add(matmul(mid, params[w]), params[bias]),
                          cfg.encoder_dropout, live, rng)
        gain, lbias = names["ffn_ln"]
        h = layer_norm(add(h, ffn_out), params[gain], params[lbias], cfg.ln_eps)
    return h


def forward(params: ModelParams, cfg: ModelConfig, batch: Sequence[TokenSequence],
            training: bool = False, freeze: FreezeConfig | None = None,
            rng: np.random.Generator | None = None) -> Tensor:
    """Full model: encoder, tanh pooler on the [CLS] state, dropout, two logits."""
    h = encode(params, cfg, batch, training=training, freeze=freeze, rng=rng)
    cls = take(h, 0, axis=1)
    pooled = tanh(add(matmul(cls, params["pooler.dense.weight"]),
                      params["pooler.dense.bias"]))
    pooled = dropout(pooled, cfg.classifier_dropout, training, rng)
    return add(matmul(pooled, params["classifier.weight"]), params["classifier.bias"])
