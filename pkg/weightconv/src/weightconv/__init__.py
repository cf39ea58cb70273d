"""Convert pretrained BERT-family checkpoints into NTA1 weight archives."""

from weightconv.convert import ConversionError, convert
from weightconv.namemap import build_name_map, required_shapes

__version__ = "0.1.0"

__all__ = ["ConversionError", "convert", "build_name_map", "required_shapes"]
