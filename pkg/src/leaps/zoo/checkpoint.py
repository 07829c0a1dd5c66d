"""Single-file model checkpoints.

Layout: ``LEAPSMDL`` magic, u32 version, u32 descriptor length, UTF-8 JSON
descriptor (architecture kind, config, tensor names/shapes/dtypes), then every
state-dict tensor in declaration order as little-endian float32.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from leaps.errors import FormatError, VersionError
from leaps.zoo.models import build_model, freeze

MAGIC = b"LEAPSMDL"
VERSION = 1


def save_model(model: nn.Module, path: str | Path, meta: dict | None = None) -> None:
    state = model.state_dict()
    tensors = [{"name": k, "shape": list(v.shape), "dtype": str(v.dtype).removeprefix("torch.")}
               for k, v in state.items()]
    descriptor = json.dumps({"kind": model.kind, "config": model.config, "tensors": tensors,
                             "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(descriptor)))
        f.write(descriptor)
        for v in state.values():
            f.write(v.detach().cpu().numpy().astype("<f4").tobytes())


def read_descriptor(raw: bytes) -> tuple[dict, int]:
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise FormatError("not a LEAPSMDL checkpoint")
    version, n = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version} (this build reads {VERSION})")
    if len(raw) < 16 + n:
        raise FormatError("checkpoint truncated inside descriptor")
    try:
        desc = json.loads(raw[16:16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"corrupt checkpoint descriptor: {e}") from None
    return desc, 16 + n


def load_model(path: str | Path) -> nn.Module:
    raw = Path(path).read_bytes()
    desc, offset = read_descriptor(raw)
    model = build_model(desc["kind"], **desc["config"])
    state = {}
    for t in desc["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        end = offset + 4 * count
        if end > len(raw):
            raise FormatError(f"checkpoint truncated at tensor {t['name']}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(t["shape"])
        state[t["name"]] = torch.from_numpy(arr.copy()).to(getattr(torch, t["dtype"]))
        offset = end
    if offset != len(raw):
        raise FormatError(f"{len(raw) - offset} trailing bytes after the last tensor")
    model.load_state_dict(state)
    model.meta = desc.get("meta", {})
    return freeze(model)
