"""Self-describing binary container for named arrays plus JSON metadata.

Layout (all integers little-endian)::

    magic        8 bytes   file kind, e.g. b"DCSXCKPT"
    version      uint32
    header_len   uint64
    header       header_len bytes of UTF-8 JSON
    payload      concatenated array bytes

The header is ``{"meta": {...}, "arrays": [...], "payload_crc32": int}``
where each array entry holds ``name``, ``dtype`` ("<f8" or "<i8"),
``shape``, ``offset`` and ``nbytes`` relative to the payload start.
See docs/formats.md.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

_PREFIX = struct.Struct("<8sIQ")
_DTYPES = {"<f8": np.dtype("<f8"), "<i8": np.dtype("<i8")}


class FormatError(ValueError):
    """A file is malformed, truncated, or of the wrong kind/version."""


def atomic_write(path, data: bytes | str) -> Path:
    """Write ``data`` to ``path`` via a sibling temporary file and rename.

    Readers never observe a partially written file; on failure the target
    is left untouched and an :class:`OSError` naming ``path`` is raised.
    """
    path = Path(path)
    if isinstance(data, str):
        data = data.encode("utf-8")
    tmp = None
    try:
        with tempfile.NamedTemporaryFile("wb", dir=path.parent, prefix=f".{path.name}.", delete=False) as fh:
            tmp = fh.name
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if tmp is not None and os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_container(path, magic: bytes, version: int, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    if len(magic) != 8:
        raise ValueError("magic must be exactly 8 bytes")
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        if np.issubdtype(arr.dtype, np.integer):
            dt = "<i8"
        else:
            dt = "<f8"
        data = np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tobytes()
        entries.append({"name": name, "dtype": dt, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    payload = b"".join(chunks)
    header = json.dumps(
        {"meta": meta, "arrays": entries, "payload_crc32": zlib.crc32(payload)},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    atomic_write(path, _PREFIX.pack(magic, version, len(header)) + header + payload)


def read_container(path, magic: bytes, version: int) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: file too short")
    got_magic, got_version, header_len = _PREFIX.unpack_from(raw)
    if got_magic != magic:
        raise FormatError(f"{path}: expected a {magic!r} file, found {got_magic!r}")
    if got_version != version:
        raise FormatError(f"{path}: unsupported version {got_version} (expected {version})")
    start = _PREFIX.size
    if start + header_len > len(raw):
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start:start + header_len].decode("utf-8"))
        entries = header["arrays"]
        meta = header["meta"]
        crc = header["payload_crc32"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: corrupted header ({exc})") from exc
    payload = raw[start + header_len:]
    if zlib.crc32(payload) != crc:
        raise FormatError(f"{path}: payload checksum mismatch")
    arrays = {}
    for e in entries:
        try:
            dt = _DTYPES[e["dtype"]]
            shape = tuple(int(s) for s in e["shape"])
            off, nbytes = int(e["offset"]), int(e["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad array entry {e!r}") from exc
        if off < 0 or off + nbytes > len(payload) or nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise FormatError(f"{path}: array {e.get('name')!r} does not fit the payload")
        arrays[e["name"]] = np.frombuffer(payload, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape).astype(dt.newbyteorder("="))
    return meta, arrays
