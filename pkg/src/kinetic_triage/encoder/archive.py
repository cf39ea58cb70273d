"""Named-tensor weight archive ("NTA1").

Layout, all little-endian:

    bytes 0..3    magic "NTA1"
    bytes 4..7    u32 format version (currently 1)
    bytes 8..15   u64 header length in bytes
    header        UTF-8 JSON, space-padded so the data region is 8-aligned:
                  {"config": {...}, "tensors": [{name, dtype, shape, offset,
                  nbytes}, ...]}
    data          raw float32 blobs; each offset is relative to the data
                  region start and 8-byte aligned

Round trips are bit-exact for float32 parameters.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from kinetic_triage.encoder.model import ModelConfig, ModelParams, validate_params
from kinetic_triage.errors import ArchiveError
from kinetic_triage.numeric import Tensor

MAGIC = b"NTA1"
VERSION = 1
_PREAMBLE = struct.Struct("<4sIQ")


def _align8(n: int) -> int:
    return (n + 7) & ~7


def config_to_dict(cfg: ModelConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(raw: dict) -> ModelConfig:
    fields = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = raw.keys() - fields
    if unknown:
        raise ArchiveError(f"archive config has unknown fields: {sorted(unknown)}")
    try:
        return ModelConfig(**raw)
    except Exception as exc:
        raise ArchiveError(f"archive config invalid: {exc}") from exc


def save_config_json(cfg: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n",
                          encoding="utf-8")


def load_config_json(path: str | Path) -> ModelConfig:
    return config_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_archive(params: ModelParams, cfg: ModelConfig, path: str | Path) -> None:
    """Write all parameters as float32 blobs, sorted by name."""
    names = sorted(params)
    table = []
    offset = 0
    blobs: list[bytes] = []
    for name in names:
        data = params[name].data if isinstance(params[name], Tensor) else params[name]
        blob = np.ascontiguousarray(data, dtype="<f4").tobytes()
        offset = _align8(offset)
        table.append({
            "name": name,
            "dtype": "f32",
            "shape": list(np.shape(data)),
            "offset": offset,
            "nbytes": len(blob),
        })
        blobs.append(blob)
        offset += len(blob)

    header = json.dumps({"config": config_to_dict(cfg), "tensors": table},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    pad = _align8(_PREAMBLE.size + len(header)) - (_PREAMBLE.size + len(header))
    header += b" " * pad

    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        pos = 0
        for entry, blob in zip(table, blobs):
            fh.write(b"\0" * (entry["offset"] - pos))
            fh.write(blob)
            pos = entry["offset"] + len(blob)


def load_archive(path: str | Path, validate: bool = True,
                 ) -> tuple[ModelParams, ModelConfig]:
    """Read an archive back into named float32 tensors plus its config."""
    raw = Path(path).read_bytes()
    if len(raw) < _PREAMBLE.size:
        raise ArchiveError(f"{path}: truncated archive (no preamble)")
    magic, version, header_len = _PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise ArchiveError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ArchiveError(f"{path}: unsupported archive version {version}")
    header_end = _PREAMBLE.size + header_len
    if header_end > len(raw):
        raise ArchiveError(f"{path}: truncated archive header")
    try:
        header = json.loads(raw[_PREAMBLE.size:header_end].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ArchiveError(f"{path}: corrupt archive header ({exc})") from exc
    if not isinstance(header, dict) or "config" not in header or "tensors" not in header:
        raise ArchiveError(f"{path}: archive header missing config/tensors")

    cfg = config_from_dict(header["config"])
    data = raw[header_end:]
    params: ModelParams = {}
    for entry in header["tensors"]:
        name = entry.get("name")
        shape = tuple(entry.get("shape", ()))
        offset, nbytes = entry.get("offset"), entry.get("nbytes")
        if name is None or offset is None or nbytes is None:
            raise ArchiveError(f"{path}: malformed tensor table entry {entry!r}")
        if name in params:
            raise ArchiveError(f"{path}: duplicate tensor {name!r}")
        if entry.get("dtype") != "f32":
            raise ArchiveError(f"{path}: tensor {name!r}: unsupported dtype "
                               f"{entry.get('dtype')!r}")
        if offset % 8 != 0 or nbytes != int(np.prod(shape, dtype=np.int64)) * 4:
            raise ArchiveError(f"{path}: tensor {name!r}: shape/offset inconsistency")
        if offset + nbytes > len(data):
            raise ArchiveError(f"{path}: truncated blob for tensor {name!r}")
        arr = np.frombuffer(data, dtype="<f4", count=nbytes // 4, offset=offset)
        params[name] = Tensor(arr.reshape(shape).copy(), name=name)

    if validate:
        try:
            validate_params(params, cfg)
        except Exception as exc:
            raise ArchiveError(f"{path}: archive does not match its config: {exc}") from exc
    return params, cfg
