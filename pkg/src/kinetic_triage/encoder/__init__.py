"""BERT-style encoder with a two-logit head, freeze configs, and archive I/O."""

from kinetic_triage.encoder.model import (
    FreezeConfig,
    ModelConfig,
    batch_arrays,
    encode,
    forward,
    init_params,
    param_shapes,
    set_trainable,
    trainable_names,
    trainable_params,
    validate_params,
)
from kinetic_triage.encoder.archive import (
    load_archive,
    load_config_json,
    save_archive,
    save_config_json,
)

__all__ = [
    "FreezeConfig", "ModelConfig", "batch_arrays", "encode", "forward",
    "init_params", "param_shapes", "set_trainable", "trainable_names",
    "trainable_params", "validate_params",
    "load_archive", "load_config_json", "save_archive", "save_config_json",
]
