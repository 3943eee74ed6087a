"""Binary checkpoint format (``.mbf``).

Layout::

    b"MBF1"                      magic
    u32 little-endian            format version
    u32 little-endian            header length in bytes
    header                       UTF-8 JSON: config, vocabulary, provenance,
                                 tensor directory (name, shape, offset, nbytes)
    payload                      raw little-endian float32 tensors

Offsets in the directory are relative to the start of the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .errors import ConfigMismatchError, CorruptCheckpointError, UnsupportedVersionError
from .model import ModelConfig, ModelParams
from .strategies import AdamState

MAGIC = b"MBF1"
FORMAT_VERSION = 1
_LE_F32 = np.dtype("<f4")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ModelParams
    vocab: List[str]
    provenance: Dict[str, object] = field(default_factory=dict)
    optimizer: Optional[AdamState] = None


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _tensor_entries(ckpt: Checkpoint):
    for name, tensor in ckpt.params.items():
        yield name, tensor.data
    if ckpt.optimizer is not None:
        for name in ckpt.params:
            yield f"optimizer.m.{name}", ckpt.optimizer.m[name]
            yield f"optimizer.v.{name}", ckpt.optimizer.v[name]


def save_checkpoint(path, ckpt: Checkpoint) -> str:
    """Write ``ckpt`` and return the short sha256 of the written file."""
    directory, chunks, offset = [], [], 0
    for name, array in _tensor_entries(ckpt):
        raw = np.ascontiguousarray(array, dtype=_LE_F32).tobytes()
        directory.append({"name": name, "shape": list(array.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = {
        "config": ckpt.config.to_dict(),
        "vocab": list(ckpt.vocab),
        "provenance": ckpt.provenance,
        "tensors": directory,
        "payload_bytes": offset,
    }
    if ckpt.optimizer is not None:
        header["optimizer"] = {
            "step": ckpt.optimizer.step,
            "counts": ckpt.optimizer.counts,
            "betas": [ckpt.optimizer.beta1, ckpt.optimizer.beta2],
            "eps": ckpt.optimizer.eps,
        }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)
    return file_hash(path)


def load_checkpoint(path, expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CorruptCheckpointError("magic", f"{path} does not start with {MAGIC!r}")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(version)
    if 12 + header_len > len(raw):
        raise CorruptCheckpointError("header", "file ends inside the header")
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
        directory = header["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError("header", str(exc)) from exc
    payload = raw[12 + header_len:]
    if len(payload) != header.get("payload_bytes"):
        raise CorruptCheckpointError(
            "tensor bytes", f"expected {header.get('payload_bytes')} payload bytes, found {len(payload)}"
        )
    arrays = OrderedDict()
    for entry in directory:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * _LE_F32.itemsize
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if entry["nbytes"] != nbytes or stop > len(payload):
            raise CorruptCheckpointError("tensor bytes", f"{entry['name']} has an inconsistent size")
        arrays[entry["name"]] = np.frombuffer(payload[start:stop], dtype=_LE_F32).reshape(shape).astype(np.float32)
    if expected_config is not None and expected_config != config:
        raise ConfigMismatchError(f"checkpoint {path} was written for a different model config")
    params = ModelParams.from_arrays(config, {k: v for k, v in arrays.items() if not k.startswith("optimizer.")})
    optimizer = None
    if "optimizer" in header:
        meta = header["optimizer"]
        optimizer = AdamState(params, beta1=meta["betas"][0], beta2=meta["betas"][1], eps=meta["eps"])
        optimizer.step = meta["step"]
        optimizer.counts = dict(meta["counts"])
        for name in params:
            optimizer.m[name] = arrays[f"optimizer.m.{name}"]
            optimizer.v[name] = arrays[f"optimizer.v.{name}"]
    return Checkpoint(config, params, header.get("vocab", []), header.get("provenance", {}), optimizer)
