"""Versioned model checkpoints with a verified architecture manifest.

A checkpoint is an ``.npz`` holding a canonical JSON manifest (layer specs,
class table, seed, format version), every parameter tensor in definition
order, named buffers (batch-norm running statistics), and optionally the
optimizer state. The manifest's SHA-256 is stored alongside and re-checked
on load so a file whose architecture was tampered with fails loudly.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import FormatError

FORMAT_VERSION = 1


def _canonical(manifest: dict) -> bytes:
    return json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(_canonical(manifest)).hexdigest()


class CheckpointError(FormatError):
    pass


def save_checkpoint(
    path: str | Path,
    manifest: dict,
    params: list[np.ndarray],
    buffers: dict[str, np.ndarray] | None = None,
    optimizer_state: dict | None = None,
) -> None:
    manifest = dict(manifest)
    manifest["format_version"] = FORMAT_VERSION
    blobs: dict[str, np.ndarray] = {
        "__manifest__": np.frombuffer(_canonical(manifest), dtype=np.uint8).copy(),
        "__hash__": np.frombuffer(manifest_hash(manifest).encode("ascii"), dtype=np.uint8).copy(),
    }
    for i, p in enumerate(params):
        blobs[f"param_{i:04d}"] = p
    for name, buf in (buffers or {}).items():
        blobs[f"buffer::{name}"] = buf
    if optimizer_state is not None:
        blobs["opt_t"] = np.array([optimizer_state["t"]], dtype=np.int64)
        for i, m in enumerate(optimizer_state["m"]):
            blobs[f"opt_m_{i:04d}"] = m
        for i, v in enumerate(optimizer_state["v"]):
            blobs[f"opt_v_{i:04d}"] = v
    with open(path, "wb") as fh:
        np.savez(fh, **blobs)


def load_checkpoint(path: str | Path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        raw = bytes(data["__manifest__"].tobytes())
        stored_hash = data["__hash__"].tobytes().decode("ascii")
        manifest = json.loads(raw.decode("utf-8"))
        if manifest_hash(manifest) != stored_hash:
            raise CheckpointError(f"{path}: manifest hash mismatch")
        if manifest.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format_version {manifest.get('format_version')}")
        params = []
        i = 0
        while f"param_{i:04d}" in data:
            params.append(data[f"param_{i:04d}"])
            i += 1
        buffers = {
            key.split("::", 1)[1]: data[key] for key in data.files if key.startswith("buffer::")
        }
        optimizer_state = None
        if "opt_t" in data:
            m, v = [], []
            i = 0
            while f"opt_m_{i:04d}" in data:
                m.append(data[f"opt_m_{i:04d}"])
                v.append(data[f"opt_v_{i:04d}"])
                i += 1
            optimizer_state = {"t": int(data["opt_t"][0]), "m": m, "v": v}
    return {
        "manifest": manifest,
        "params": params,
        "buffers": buffers,
        "optimizer_state": optimizer_state,
    }
