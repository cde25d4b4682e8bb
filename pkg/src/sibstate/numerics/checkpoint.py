"""Self-describing binary checkpoint container.

Layout: an 8-byte magic string, a little-endian uint32 format version, a
uint64 JSON header length, the UTF-8 JSON header, then the raw little-endian
float64 buffers (value, first moment, second moment per parameter, in header
order). The header carries parameter names/shapes, the optimizer step counter
and an arbitrary model-config dict, so a checkpoint fully describes the model
it belongs to. Serialization is canonical (sorted JSON keys, fixed buffer
order), making files byte-reproducible.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CheckpointError
from .optim import ParamStore

MAGIC = b"SIBCKPT0"
CHECKPOINT_VERSION = 1


@dataclass
class LoadedCheckpoint:
    values: dict[str, np.ndarray]
    moments: dict[str, tuple[np.ndarray, np.ndarray]]
    step_count: int
    model_config: dict


def save_checkpoint(path, store: ParamStore, model_config: dict) -> None:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "step_count": store.step_count,
        "model_config": model_config,
        "params": [
            {"name": name, "shape": list(p.value.data.shape)}
            for name, p in store.params.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in store.params.values():
            for arr in (p.value.data, p.m, p.v):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> LoadedCheckpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + 12 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} "
                              f"(expected {CHECKPOINT_VERSION})")
    (hlen,) = struct.unpack_from("<Q", raw, off)
    off += 8
    try:
        header = json.loads(raw[off:off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header: {exc}") from exc
    off += hlen

    values: dict[str, np.ndarray] = {}
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        bufs = []
        for _ in range(3):
            nbytes = count * 8
            if off + nbytes > len(raw):
                raise CheckpointError(f"{path}: truncated checkpoint data")
            bufs.append(np.frombuffer(raw, dtype="<f8", count=count, offset=off)
                        .astype(np.float64).reshape(shape))
            off += nbytes
        values[spec["name"]] = bufs[0]
        moments[spec["name"]] = (bufs[1], bufs[2])
    return LoadedCheckpoint(
        values=values,
        moments=moments,
        step_count=int(header["step_count"]),
        model_config=header["model_config"],
    )


def restore_into(store: ParamStore, ckpt: LoadedCheckpoint) -> None:
    """Copy checkpoint values and optimizer state into an existing store."""
    missing = set(store.params) ^ set(ckpt.values)
    if missing:
        raise CheckpointError(f"checkpoint/store parameter mismatch: {sorted(missing)}")
    store.load_values(ckpt.values)
    for name, (m, v) in ckpt.moments.items():
        p = store.params[name]
        p.m[...] = m
        p.v[...] = v
    store.step_count = ckpt.step_count
