"""Versioned JSON-wrapped tensor checkpoints shared by every model."""
from __future__ import annotations

import base64
import json
from pathlib import Path

import numpy as np
import torch

CHECKPOINT_VERSION = 1


def encode_state(state: dict) -> dict:
    tensors = {}
    for name, t in state.items():
        arr = t.detach().cpu().numpy()
        arr = np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<"), copy=False))
        tensors[name] = {
            "shape": list(arr.shape),
            "dtype": arr.dtype.name,
            "data": base64.b64encode(arr.tobytes()).decode("ascii"),
        }
    return tensors


def decode_state(tensors: dict) -> dict:
    state = {}
    for name, meta in tensors.items():
        dtype = np.dtype(meta["dtype"]).newbyteorder("<")
        arr = np.frombuffer(base64.b64decode(meta["data"]), dtype=dtype).reshape(meta["shape"])
        state[name] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    return state


def save_checkpoint(path, arch_id: str, state: dict, config: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": CHECKPOINT_VERSION,
        "arch_id": arch_id,
        "config": config or {},
        "tensors": encode_state(state),
    }
    path.write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")
    return path


def load_checkpoint(path, expect_arch: str | None = None) -> tuple[str, dict, dict]:
    """Return ``(arch_id, config, state_dict)``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    if expect_arch is not None and doc["arch_id"] != expect_arch:
        raise ValueError(f"{path}: expected arch {expect_arch!r}, found {doc['arch_id']!r}")
    return doc["arch_id"], doc.get("config", {}), decode_state(doc["tensors"])
