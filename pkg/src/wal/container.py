"""Self-describing binary container used for `.wds` datasets, weight
checkpoints and persisted annotators.

Layout: 4-byte magic, u16 version, u32 header length, canonical JSON
header (kind, metadata, array descriptors), then the raw arrays
back-to-back in header order (row-major). The same bytes in always come
back out, so round-trips are bitwise lossless and files hash stably.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import ParseError, SchemaError

MAGIC = b"WDS1"
VERSION = 1

_ALLOWED_DTYPES = {"<f4", "<f8", "|u1", "<i8"}


def pack(kind: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    """Serialize named arrays into container bytes."""
    descriptors = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<").str if arr.dtype.kind == "f" else arr.dtype.str
        if dtype not in _ALLOWED_DTYPES:
            raise SchemaError(f"array {name!r} has unsupported dtype {arr.dtype}")
        descriptors.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        payloads.append(arr.astype(dtype, copy=False).tobytes())
    header = {"kind": kind, "meta": meta or {}, "arrays": descriptors}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    out = [MAGIC, struct.pack("<HI", VERSION, len(header_bytes)), header_bytes]
    out.extend(payloads)
    return b"".join(out)


def unpack(blob: bytes) -> tuple[str, dict[str, np.ndarray], dict]:
    """Parse container bytes into (kind, arrays, meta)."""
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise ParseError("bad magic, not a WDS container", offset=0)
    if len(blob) < 10:
        raise ParseError("truncated fixed header", offset=len(blob))
    version, header_len = struct.unpack("<HI", blob[4:10])
    if version != VERSION:
        raise ParseError(f"unsupported container version {version}", offset=4)
    header_end = 10 + header_len
    if len(blob) < header_end:
        raise ParseError("truncated JSON header", offset=len(blob))
    try:
        header = json.loads(blob[10:header_end].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"unreadable JSON header: {exc}", offset=10) from exc
    for key in ("kind", "meta", "arrays"):
        if key not in header:
            raise SchemaError(f"container header missing {key!r}")

    arrays: dict[str, np.ndarray] = {}
    offset = header_end
    for desc in header["arrays"]:
        dtype = np.dtype(desc["dtype"])
        shape = tuple(desc["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        end = offset + nbytes
        if len(blob) < end:
            raise ParseError(f"truncated payload for array {desc['name']!r}", offset=len(blob))
        arrays[desc["name"]] = np.frombuffer(blob[offset:end], dtype=dtype).reshape(shape).copy()
        offset = end
    if offset != len(blob):
        raise ParseError("trailing bytes after declared payload", offset=offset)
    return header["kind"], arrays, header["meta"]


def write(path, kind: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(pack(kind, arrays, meta))


def read(path) -> tuple[str, dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        return unpack(fh.read())
