"""Binary containers for model checkpoints and embedding stores.

Layout (all integers little-endian, fixed width)::

    magic            4 bytes   b"RDNC" (checkpoint) or b"RDNE" (embeddings)
    version          u32
    metadata length  u64
    metadata         UTF-8 JSON, keys sorted, compact separators
    per tensor, in manifest order:
        name length  u32
        name         UTF-8
        dtype code   u32       0 = float32, 1 = float64
        rank         u32
        dims         u64 * rank
        data         little-endian, row-major

The JSON ``tensors`` list is the manifest: ``{"name", "dtype", "shape"}``
entries in on-disk order.  Files with trailing bytes, a manifest mismatch or a
newer version are rejected.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError

CHECKPOINT_MAGIC = b"RDNC"
EMBEDDING_MAGIC = b"RDNE"
FORMAT_VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
_NAMES = {0: "float32", 1: "float64"}


def _dumps(meta: dict) -> bytes:
    return json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def encode(magic: bytes, meta: dict, tensors: Mapping[str, np.ndarray]) -> bytes:
    manifest = []
    body = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise FormatError(f"tensor '{name}': unsupported dtype {arr.dtype}")
        code = _CODES[arr.dtype]
        manifest.append({"name": name, "dtype": _NAMES[code], "shape": list(arr.shape)})
        raw_name = name.encode("utf-8")
        body.append(struct.pack("<I", len(raw_name)))
        body.append(raw_name)
        body.append(struct.pack("<II", code, arr.ndim))
        body.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        body.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    meta = dict(meta)
    meta["tensors"] = manifest
    head = _dumps(meta)
    return b"".join([magic, struct.pack("<IQ", FORMAT_VERSION, len(head)), head, *body])


def decode(buf: bytes, magic: bytes) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    view = memoryview(buf)
    if len(buf) < 16 or bytes(view[:4]) != magic:
        raise FormatError(f"bad magic: expected {magic!r}, got {bytes(view[:4])!r}")
    version, mlen = struct.unpack_from("<IQ", buf, 4)
    if version > FORMAT_VERSION:
        raise FormatError(f"format version {version} is newer than supported version {FORMAT_VERSION}")
    if version < 1:
        raise FormatError(f"invalid format version {version}")
    pos = 16
    if pos + mlen > len(buf):
        raise FormatError("metadata length exceeds file size")
    try:
        meta = json.loads(bytes(view[pos:pos + mlen]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"metadata is not valid JSON: {e}") from None
    pos += mlen
    manifest = meta.get("tensors")
    if not isinstance(manifest, list):
        raise FormatError("metadata has no tensor manifest")
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for entry in manifest:
        try:
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = bytes(view[pos:pos + nlen]).decode("utf-8")
            pos += nlen
            code, rank = struct.unpack_from("<II", buf, pos)
            pos += 8
            dims = struct.unpack_from(f"<{rank}Q", buf, pos)
            pos += 8 * rank
        except struct.error:
            raise FormatError("file truncated inside a tensor header") from None
        if code not in _DTYPES:
            raise FormatError(f"tensor '{name}': unknown dtype code {code}")
        if name != entry.get("name") or list(dims) != entry.get("shape") or _NAMES[code] != entry.get("dtype"):
            raise FormatError(f"tensor '{name}' does not match its manifest entry {entry}")
        dt = _DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if pos + nbytes > len(buf):
            raise FormatError(f"tensor '{name}': payload truncated")
        arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(dims)
        tensors[name] = arr.astype(dt.newbyteorder("="), copy=True)
        pos += nbytes
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after the last tensor")
    meta.pop("tensors")
    return meta, tensors


def save_checkpoint(path, model_config: dict, tensors: Mapping[str, np.ndarray], extra: dict | None = None) -> None:
    meta = {"kind": "checkpoint", "model": model_config}
    if extra:
        meta["extra"] = extra
    Path(path).write_bytes(encode(CHECKPOINT_MAGIC, meta, tensors))


def load_checkpoint(path) -> tuple[dict, "OrderedDict[str, np.ndarray]"]:
    meta, tensors = decode(Path(path).read_bytes(), CHECKPOINT_MAGIC)
    if "model" not in meta:
        raise FormatError(f"{path}: checkpoint metadata lacks a model configuration")
    return meta, tensors


def save_model(path, model, extra_tensors: Mapping[str, np.ndarray] | None = None, extra: dict | None = None) -> None:
    tensors = OrderedDict(model.state_dict())
    if extra_tensors:
        tensors.update(extra_tensors)
    save_checkpoint(path, model.cfg.to_dict(), tensors, extra)


def load_model(path):
    """Rebuild a model from a checkpoint; returns ``(model, meta, other_tensors)``."""
    from .model import ModelConfig, build

    meta, tensors = load_checkpoint(path)
    cfg = ModelConfig.from_dict(meta["model"])
    model = build(cfg)
    own = model.state_dict()
    dtype = next(iter(tensors.values())).dtype if tensors else np.float32
    model.to(dtype)
    model.load_state_dict({k: v for k, v in tensors.items() if k in own})
    rest = OrderedDict((k, v) for k, v in tensors.items() if k not in own)
    return model, meta, rest


def save_embeddings(path, ids, embeddings: np.ndarray, extra: dict | None = None) -> None:
    ids = list(ids)
    embeddings = np.asarray(embeddings)
    if embeddings.ndim != 2 or embeddings.shape[0] != len(ids):
        raise FormatError(f"need one row per id: {len(ids)} ids, embeddings {embeddings.shape}")
    if len(set(ids)) != len(ids):
        raise FormatError("embedding ids must be unique")
    meta = {"kind": "embeddings", "dim": int(embeddings.shape[1]), "ids": ids}
    if extra:
        meta["extra"] = extra
    Path(path).write_bytes(encode(EMBEDDING_MAGIC, meta, OrderedDict(zip(ids, embeddings))))


def load_embeddings(path) -> "OrderedDict[str, np.ndarray]":
    meta, tensors = decode(Path(path).read_bytes(), EMBEDDING_MAGIC)
    dim = meta.get("dim")
    if list(tensors) != meta.get("ids"):
        raise FormatError(f"{path}: id list does not match stored records")
    for k, v in tensors.items():
        if v.shape != (dim,):
            raise FormatError(f"{path}: record '{k}' has shape {v.shape}, declared dim is {dim}")
    return tensors
