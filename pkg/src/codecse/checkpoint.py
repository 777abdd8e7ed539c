"""Checkpoint container.

Layout::

    b"NACSECKP"                      8-byte magic
    uint64 little-endian             length of the JSON header in bytes
    JSON header (utf-8)              {"format": 1, "config": {...},
                                      "params": [{"name", "shape", "offset", "nbytes"}, ...]}
    payload                          little-endian float32 values, row-major, in manifest order

Offsets are relative to the start of the payload.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Mapping

import numpy as np

MAGIC = b"NACSECKP"
FORMAT = 1


class CheckpointError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_checkpoint(config: Mapping[str, Any], params: Mapping[str, np.ndarray]) -> bytes:
    manifest, chunks, offset = [], [], 0
    for name, arr in params.items():
        buf = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(buf)})
        chunks.append(buf)
        offset += len(buf)
    header = json.dumps({"format": FORMAT, "config": config, "params": manifest},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def save_checkpoint(path, config: Mapping[str, Any], params: Mapping[str, np.ndarray]) -> None:
    atomic_write_bytes(path, encode_checkpoint(config, params))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return (config, {name: float64 array})."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported format {header.get('format')!r}")
    payload = memoryview(raw)[16 + hlen:]
    params = {}
    for entry in header["params"]:
        lo, n = entry["offset"], entry["nbytes"]
        if lo + n > len(payload):
            raise CheckpointError(f"{path}: parameter {entry['name']} runs past end of file")
        arr = np.frombuffer(payload[lo:lo + n], dtype="<f4").astype(np.float64)
        params[entry["name"]] = arr.reshape(entry["shape"])
    return header["config"], params


def snap_to_storage(params: Mapping[str, np.ndarray]) -> None:
    """Round arrays in place to float32-representable values so save/load is lossless."""
    for arr in params.values():
        arr[...] = arr.astype(np.float32).astype(np.float64)


def save_models(path, codec=None, se=None, extra: Mapping[str, Any] | None = None) -> None:
    """Write codec and/or SE parameters under the ``codec.`` and ``se.`` namespaces."""
    from dataclasses import asdict

    config: dict[str, Any] = dict(extra or {})
    params: dict[str, np.ndarray] = {}
    if codec is not None:
        config["codec"] = asdict(codec.config)
        params.update({f"codec.{n}": p.data for n, p in codec.named_parameters()})
    if se is not None:
        config["se"] = asdict(se.config)
        config["latent_dim"] = se.latent_dim
        params.update({f"se.{n}": p.data for n, p in se.named_parameters()})
    save_checkpoint(path, config, params)


def load_models(path):
    """Return (codec or None, se or None, header config)."""
    from .codec import CodecConfig, CodecModel
    from .se_model import SEConfig, SEModel

    if not Path(path).exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    config, params = load_checkpoint(path)
    codec = se = None
    if "codec" in config:
        codec = CodecModel(CodecConfig(**config["codec"]))
        codec.load_state_dict(_strip(params, "codec."))
    if "se" in config:
        se = SEModel(SEConfig(**config["se"]), int(config["latent_dim"]))
        se.load_state_dict(_strip(params, "se."))
    if codec is None and se is None:
        raise CheckpointError(f"{path}: contains neither codec nor SE parameters")
    return codec, se, config


def _strip(params: Mapping[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
