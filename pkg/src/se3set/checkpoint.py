"""Binary checkpoint files.

Layout: ``b"SE3S"``, format version (u32 little endian), header length (u64
little endian), UTF-8 JSON header, then the raw little-endian float64 payload
of every tensor.  The header holds the model config, an optional free-form
``extra`` dict and a directory ``name -> {shape, offset, nbytes}`` with
offsets counted from the start of the payload.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .model import ModelConfig, SE3Set

MAGIC = b"SE3S"
VERSION = 1


class CheckpointError(ValueError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


def write_tensors(path, header: dict, tensors: Mapping[str, np.ndarray]) -> None:
    directory, payload, offset = {}, [], 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        directory[name] = {"shape": list(a.shape), "offset": offset, "nbytes": a.nbytes}
        payload.append(a.tobytes())
        offset += a.nbytes
    head = json.dumps({**header, "tensors": directory}, sort_keys=True).encode()
    tmp = Path(f"{path}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(head)))
        fh.write(head)
        for chunk in payload:
            fh.write(chunk)
    os.replace(tmp, path)


def read_tensors(path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise CorruptCheckpointError(f"{path}: truncated header")
    version, head_len = struct.unpack("<IQ", raw[4:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {VERSION}")
    if len(raw) < 16 + head_len:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header") from exc
    base = 16 + head_len
    tensors = {}
    for name, entry in header.get("tensors", {}).items():
        start, nbytes = base + entry["offset"], entry["nbytes"]
        if start + nbytes > len(raw) or nbytes != 8 * int(np.prod(entry["shape"], dtype=np.int64)):
            raise CorruptCheckpointError(f"{path}: tensor {name!r} is truncated")
        tensors[name] = np.frombuffer(raw[start : start + nbytes], dtype="<f8").reshape(entry["shape"]).astype(np.float64)
    if base + sum(e["nbytes"] for e in header.get("tensors", {}).values()) != len(raw):
        raise CorruptCheckpointError(f"{path}: payload size does not match the directory")
    return header, tensors


def save_checkpoint(path, model: SE3Set, extra: dict | None = None, optimizer_state: Mapping[str, np.ndarray] | None = None) -> None:
    tensors = {f"param.{k}": p.data for k, p in model.params.items()}
    tensors["buffer.energy_shift"] = model.energy_shift
    tensors["buffer.energy_scale"] = np.array([model.energy_scale])
    for k, v in (optimizer_state or {}).items():
        tensors[f"optim.{k}"] = v
    write_tensors(path, {"config": model.cfg.to_dict(), "extra": extra or {}}, tensors)


def load_checkpoint(path, expect_config: ModelConfig | None = None) -> tuple[SE3Set, dict, dict[str, np.ndarray]]:
    """Model, ``extra`` header dict and optimizer state (possibly empty).

    Nothing is returned unless every parameter is present with the right shape.
    """
    header, tensors = read_tensors(path)
    try:
        cfg = ModelConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: invalid model config") from exc
    if expect_config is not None and expect_config.to_dict() != cfg.to_dict():
        diff = sorted(k for k, v in expect_config.to_dict().items() if cfg.to_dict().get(k) != v)
        raise ConfigMismatchError(f"{path}: checkpoint config differs in {diff}")
    model = SE3Set(cfg)
    names = {f"param.{k}" for k in model.params} | {"buffer.energy_shift", "buffer.energy_scale"}
    missing = names - set(tensors)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)[:5]}")
    unexpected = {k for k in tensors if not k.startswith("optim.")} - names
    if unexpected:
        raise CheckpointError(f"{path}: unexpected tensors {sorted(unexpected)[:5]}")
    for k, p in model.params.items():
        arr = tensors[f"param.{k}"]
        if arr.shape != p.shape:
            raise ConfigMismatchError(f"{path}: parameter {k} has shape {arr.shape}, model expects {p.shape}")
    for k, p in model.params.items():
        p.data = tensors[f"param.{k}"]
    model.energy_shift = tensors["buffer.energy_shift"]
    model.energy_scale = float(tensors["buffer.energy_scale"][0])
    optim = {k[len("optim.") :]: v for k, v in tensors.items() if k.startswith("optim.")}
    return model, header.get("extra", {}), optim
