"""Source-to-canonical tensor name mapping.

Canonical names and shapes follow the NTA1 archive convention of the
kinetic-triage toolkit: dense weights are stored (in, out), so every
source nn.Linear weight (out, in) is transposed on conversion.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class MappedTensor:
    source: str
    canonical: str
    shape: tuple[int, ...]  # canonical (post-transpose) shape
    transpose: bool


# source tensors that are legitimately absent from a classification archive
DROPPED_HEAD_PREFIXES = ("cls.",)
# non-parameter buffers some checkpoints serialize
IGNORED_BUFFER_SUFFIXES = ("embeddings.position_ids", "embeddings.token_type_ids")


def required_shapes(layers: int, hidden: int, ff_dim: int, vocab_size: int,
                    max_positions: int) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape for a full archive, classifier included."""
    shapes: dict[str, tuple[int, ...]] = {
        "embeddings.word": (vocab_size, hidden),
        "embeddings.position": (max_positions, hidden),
        "embeddings.segment": (2, hidden),
        "embeddings.layer_norm.gain": (hidden,),
        "embeddings.layer_norm.bias": (hidden,),
    }
    for i in range(layers):
        p = f"encoder.layer.{i}."
        for block in ("query", "key", "value", "output"):
            shapes[p + f"attention.{block}.weight"] = (hidden, hidden)
            shapes[p + f"attention.{block}.bias"] = (hidden,)
        shapes[p + "attention.layer_norm.gain"] = (hidden,)
        shapes[p + "attention.layer_norm.bias"] = (hidden,)
        shapes[p + "ffn.intermediate.weight"] = (hidden, ff_dim)
        shapes[p + "ffn.intermediate.bias"] = (ff_dim,)
        shapes[p + "ffn.output.weight"] = (ff_dim, hidden)
        shapes[p + "ffn.output.bias"] = (hidden,)
        shapes[p + "ffn.layer_norm.gain"] = (hidden,)
        shapes[p + "ffn.layer_norm.bias"] = (hidden,)
    shapes["pooler.dense.weight"] = (hidden, hidden)
    shapes["pooler.dense.bias"] = (hidden,)
    shapes["classifier.weight"] = (hidden, 2)
    shapes["classifier.bias"] = (2,)
    return shapes


def _entry(source, canonical, shape, transpose=False):
    return MappedTensor(source, canonical, shape, transpose)


def build_name_map(layers: int, hidden: int, ff_dim: int, vocab_size: int,
                   max_positions: int) -> list[MappedTensor]:
    """Ordered mapping from source checkpoint names (without any "bert."
    prefix) to canonical names. Total over every required canonical name
    except the classifier pair, which conversion seeds fresh."""
    entries = [
        _entry("embeddings.word_embeddings.weight", "embeddings.word",
               (vocab_size, hidden)),
        _entry("embeddings.position_embeddings.weight", "embeddings.position",
               (max_positions, hidden)),
        _entry("embeddings.token_type_embeddings.weight", "embeddings.segment",
               (2, hidden)),
        _entry("embeddings.LayerNorm.weight", "embeddings.layer_norm.gain", (hidden,)),
        _entry("embeddings.LayerNorm.bias", "embeddings.layer_norm.bias", (hidden,)),
    ]
    for i in range(layers):
        src = f"encoder.layer.{i}."
        dst = f"encoder.layer.{i}."
        for block in ("query", "key", "value"):
            entries += [
                _entry(src + f"attention.self.{block}.weight",
                       dst + f"attention.{block}.weight", (hidden, hidden),
                       transpose=True),
                _entry(src + f"attention.self.{block}.bias",
                       dst + f"attention.{block}.bias", (hidden,)),
            ]
        entries += [
            _entry(src + "attention.output.dense.weight",
                   dst + "attention.output.weight", (hidden, hidden), transpose=True),
            _entry(src + "attention.output.dense.bias",
                   dst + "attention.output.bias", (hidden,)),
            _entry(src + "attention.output.LayerNorm.weight",
                   dst + "attention.layer_norm.gain", (hidden,)),
            _entry(src + "attention.output.LayerNorm.bias",
                   dst + "attention.layer_norm.bias", (hidden,)),
            _entry(src + "intermediate.dense.weight",
                   dst + "ffn.intermediate.weight", (hidden, ff_dim), transpose=True),
            _entry(src + "intermediate.dense.bias",
                   dst + "ffn.intermediate.bias", (ff_dim,)),
            _entry(src + "output.dense.weight",
                   dst + "ffn.output.weight", (ff_dim, hidden), transpose=True),
            _entry(src + "output.dense.bias", dst + "ffn.output.bias", (hidden,)),
            _entry(src + "output.LayerNorm.weight",
                   dst + "ffn.layer_norm.gain", (hidden,)),
            _entry(src + "output.LayerNorm.bias",
                   dst + "ffn.layer_norm.bias", (hidden,)),
        ]
    entries += [
        _entry("pooler.dense.weight", "pooler.dense.weight", (hidden, hidden),
               transpose=True),
        _entry("pooler.dense.bias", "pooler.dense.bias", (hidden,)),
    ]
    canonical = [e.canonical for e in entries]
    assert len(set(canonical)) == len(canonical), "duplicate canonical mapping"
    return entries
