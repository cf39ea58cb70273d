"""Checkpoint conversion into the NTA1 named-tensor archive.

The archive layout (all little-endian): magic "NTA1", u32 version 1, u64
header length, a UTF-8 JSON header {"config": ..., "tensors": [...]}
space-padded to 8-byte alignment, then raw float32 blobs at 8-aligned
offsets relative to the data region. Tensors are sorted by name, so
conversion is byte-deterministic given the same inputs and seed.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from weightconv.namemap import (
    DROPPED_HEAD_PREFIXES,
    IGNORED_BUFFER_SUFFIXES,
    build_name_map,
    required_shapes,
)

MAGIC = b"NTA1"
VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")

CLASSIFIER_STD = 0.02
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")


class ConversionError(RuntimeError):
    pass


def _load_state_dict(src: Path) -> dict[str, np.ndarray]:
    safetensors_path = src / "model.safetensors"
    bin_path = src / "pytorch_model.bin"
    if safetensors_path.exists():
        from safetensors import safe_open

        out = {}
        with safe_open(str(safetensors_path), framework="np") as fh:
            for key in fh.keys():
                out[key] = np.asarray(fh.get_tensor(key))
        return out
    if bin_path.exists():
        import torch

        state = torch.load(str(bin_path), map_location="cpu", weights_only=True)
        return {key: value.numpy() for key, value in state.items()}
    raise ConversionError(
        f"{src}: no model.safetensors or pytorch_model.bin found")


def _load_config(src: Path) -> dict:
    config_path = src / "config.json"
    if not config_path.exists():
        raise ConversionError(f"{src}: missing config.json")
    return json.loads(config_path.read_text(encoding="utf-8"))


def _detect_lowercase(src: Path) -> bool:
    tok_config = src / "tokenizer_config.json"
    if tok_config.exists():
        raw = json.loads(tok_config.read_text(encoding="utf-8"))
        if "do_lower_case" in raw:
            return bool(raw["do_lower_case"])
    return True


def _strip_prefix(name: str) -> str:
    return name[5:] if name.startswith("bert.") else name


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def _write_archive(tensors: dict[str, np.ndarray], config: dict, path: Path) -> None:
    names = sorted(tensors)
    table = []
    blobs = []
    offset = 0
    for name in names:
        blob = np.ascontiguousarray(tensors[name], dtype="<f4").tobytes()
        offset = (offset + 7) & ~7
        table.append({"name": name, "dtype": "f32",
                      "shape": list(tensors[name].shape),
                      "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"config": config, "tensors": table},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    pad = -(_PREAMBLE.size + len(header)) % 8
    header += b" " * pad
    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        pos = 0
        for entry, blob in zip(table, blobs):
            fh.write(b"\0" * (entry["offset"] - pos))
            fh.write(blob)
            pos = entry["offset"] + len(blob)


def _export_vocab(src: Path, out_vocab: Path, expected_size: int) -> int:
    vocab_path = src / "vocab.txt"
    if not vocab_path.exists():
        raise ConversionError(f"{src}: missing vocab.txt")
    lines = vocab_path.read_text(encoding="utf-8").splitlines()
    while lines and lines[-1] == "":
        lines.pop()
    missing = [tok for tok in SPECIAL_TOKENS if tok not in lines]
    if missing:
        raise ConversionError(f"vocabulary lacks special tokens: {missing}")
    if len(lines) != expected_size:
        raise ConversionError(
            f"vocabulary has {len(lines)} tokens but config declares {expected_size}")
    out_vocab.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return len(lines)


def convert(src_dir: str | Path, out_archive: str | Path, out_vocab: str | Path,
            seed: int = 0) -> dict:
    """Convert a pretrained checkpoint directory; returns the summary dict.

    The classification head is absent from pretrained encoders, so it is
    initialized here with a fixed seed: truncated normal (sigma 0.02) weight,
    zero bias. Pretraining-head tensors are dropped and listed.
    """
    src = Path(src_dir)
    hf_config = _load_config(src)
    layers = int(hf_config["num_hidden_layers"])
    hidden = int(hf_config["hidden_size"])
    heads = int(hf_config["num_attention_heads"])
    ff_dim = int(hf_config["intermediate_size"])
    vocab_size = int(hf_config["vocab_size"])
    max_positions = int(hf_config["max_position_embeddings"])
    dropout = float(hf_config.get("hidden_dropout_prob", 0.1))
    classifier_dropout = hf_config.get("classifier_dropout") or dropout

    state = {_strip_prefix(k): v for k, v in _load_state_dict(src).items()}
    name_map = build_name_map(layers, hidden, ff_dim, vocab_size, max_positions)
    expected = required_shapes(layers, hidden, ff_dim, vocab_size, max_positions)

    tensors: dict[str, np.ndarray] = {}
    for entry in name_map:
        if entry.source not in state:
            raise ConversionError(f"missing required tensor {entry.source!r}")
        value = state.pop(entry.source)
        if entry.transpose:
            value = np.ascontiguousarray(value.T)
        if tuple(value.shape) != entry.shape:
            raise ConversionError(
                f"tensor {entry.source!r}: shape {tuple(value.shape)} does not match "
                f"declared config shape {entry.shape}")
        tensors[entry.canonical] = value.astype(np.float32, copy=False)

    dropped, ignored = [], []
    for leftover in sorted(state):
        if leftover.startswith(DROPPED_HEAD_PREFIXES):
            dropped.append(leftover)
        elif leftover.endswith(IGNORED_BUFFER_SUFFIXES):
            ignored.append(leftover)
        else:
            raise ConversionError(
                f"unexpected source tensor {leftover!r} is neither mapped nor a "
                f"pretraining-head tensor")

    rng = np.random.default_rng(seed)
    tensors["classifier.weight"] = _truncated_normal(
        rng, (hidden, 2), CLASSIFIER_STD).astype(np.float32)
    tensors["classifier.bias"] = np.zeros(2, dtype=np.float32)

    for name, shape in expected.items():
        if tuple(tensors[name].shape) != shape:
            raise ConversionError(
                f"converted tensor {name!r}: shape {tuple(tensors[name].shape)} "
                f"!= expected {shape}")

    config = {
        "layers": layers,
        "hidden": hidden,
        "heads": heads,
        "ff_dim": ff_dim,
        "vocab_size": vocab_size,
        "max_positions": max_positions,
        "ln_eps": float(hf_config.get("layer_norm_eps", 1e-12)),
        "encoder_dropout": dropout,
        "classifier_dropout": float(classifier_dropout),
        "lowercase": _detect_lowercase(src),
    }
    out_archive = Path(out_archive)
    out_vocab = Path(out_vocab)
    _write_archive(tensors, config, out_archive)
    vocab_tokens = _export_vocab(src, out_vocab, vocab_size)

    return {
        "tensors": len(tensors),
        "total_parameters": int(sum(t.size for t in tensors.values())),
        "dropped_pretraining_tensors": dropped,
        "ignored_buffers": ignored,
        "classifier_seed": seed,
        "vocab_tokens": vocab_tokens,
        "lowercase": config["lowercase"],
        "archive": str(out_archive),
        "vocab": str(out_vocab),
    }
