"""Versioned binary container for tensors plus a JSON manifest.

Byte layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"AGCKPT\\x00\\x01"
    8       4     uint32 format version
    12      8     uint64 manifest length M
    20      M     manifest, UTF-8 JSON with sorted keys
    20+M    ...   tensor blobs, back to back, in manifest order

The manifest holds ``version``, ``config_hash``, a free-form ``meta``
object and a ``tensors`` list of ``{name, dtype, shape, offset, nbytes,
crc32}`` with offsets relative to the start of the blob section.  Network
tensors are stored as ``<f4``; other arrays keep their dtype (little-endian)
so that simulator state survives bit-exactly.  Nothing time-dependent is
written, so saving the same state twice yields identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import zlib
from typing import Any

import numpy as np

from .errors import CheckpointError

MAGIC = b"AGCKPT\x00\x01"
VERSION = 1
_HEADER = struct.Struct("<8sIQ")


def config_hash(obj: Any) -> str:
    """Stable SHA-256 of a JSON-serialisable description of a config."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _le(a: np.ndarray) -> np.ndarray:
    # ascontiguousarray would promote 0-d arrays to 1-d
    a = np.asarray(a)
    if not a.flags.c_contiguous:
        a = a.copy(order="C")
    if a.dtype.byteorder == ">" or (a.dtype.byteorder == "=" and not np.little_endian):
        a = a.astype(a.dtype.newbyteorder("<"))
    return a


def encode(tensors: dict[str, np.ndarray], meta: dict, cfg_hash: str) -> bytes:
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        a = _le(np.asarray(arr))
        raw = a.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": a.dtype.str,
                "shape": list(a.shape),
                "offset": offset,
                "nbytes": len(raw),
                "crc32": zlib.crc32(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    manifest = {"version": VERSION, "config_hash": cfg_hash, "meta": meta, "tensors": entries}
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(text)) + text + b"".join(blobs)


def decode(data: bytes, expected_hash: str | None = None) -> tuple[dict[str, np.ndarray], dict, dict]:
    """Returns ``(tensors, meta, manifest)``; raises :class:`CheckpointError`."""
    if len(data) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, mlen = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}; not a checkpoint file")
    if version != VERSION:
        raise CheckpointError(f"format version mismatch: file has {version}, reader expects {VERSION}")
    start = _HEADER.size
    try:
        manifest = json.loads(data[start : start + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable manifest: {exc}") from None
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"manifest version {manifest.get('version')} != header version {VERSION}")
    if expected_hash is not None and manifest["config_hash"] != expected_hash:
        raise CheckpointError(
            "config hash mismatch:\n"
            f"  checkpoint: {manifest['config_hash']}\n"
            f"  current:    {expected_hash}"
        )
    base = start + mlen
    tensors: dict[str, np.ndarray] = {}
    bad = []
    for e in manifest["tensors"]:
        lo = base + e["offset"]
        raw = data[lo : lo + e["nbytes"]]
        if len(raw) != e["nbytes"]:
            raise CheckpointError(f"tensor {e['name']}: truncated blob ({len(raw)} of {e['nbytes']} bytes)")
        crc = zlib.crc32(raw)
        if crc != e["crc32"]:
            bad.append(f"  {e['name']}: manifest crc32 {e['crc32']:08x}, blob crc32 {crc:08x}")
            continue
        tensors[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    if bad:
        raise CheckpointError("checksum failure:\n" + "\n".join(bad))
    return tensors, manifest["meta"], manifest


def save(path, tensors: dict[str, np.ndarray], meta: dict, cfg_hash: str) -> None:
    data = encode(tensors, meta, cfg_hash)
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from None


def load(path, expected_hash: str | None = None):
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return decode(data, expected_hash)
