"""Binary parameter store.

Layout::

    b"PYRX1"
    u64 little-endian length, then the manifest as UTF-8:
        one line per tensor: name <TAB> comma-separated shape <TAB> byte offset
    u64 little-endian length, then free-form UTF-8 metadata
    payload: raw little-endian float64 data at the manifest offsets

Offsets are relative to the start of the payload. Writes go to a temporary
file in the same directory and are renamed into place.
"""
from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"PYRX1"
_U64 = struct.Struct("<Q")


class CheckpointError(ValueError):
    pass


def encode(arrays: Mapping[str, np.ndarray], meta: str = "") -> bytes:
    lines, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        if "\t" in name or "\n" in name:
            raise CheckpointError(f"illegal character in parameter name {name!r}")
        a = np.ascontiguousarray(arr, dtype="<f8")
        lines.append(f"{name}\t{','.join(map(str, a.shape))}\t{offset}")
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = "\n".join(lines).encode("utf-8")
    meta_b = meta.encode("utf-8")
    return b"".join([MAGIC, _U64.pack(len(manifest)), manifest, _U64.pack(len(meta_b)), meta_b, *chunks])


def decode(blob: bytes) -> tuple[dict[str, np.ndarray], str]:
    if not blob.startswith(MAGIC):
        raise CheckpointError("bad magic; not a PYRX1 checkpoint")
    pos = len(MAGIC)

    def read_block(pos):
        if pos + 8 > len(blob):
            raise CheckpointError(f"truncated length field at byte {pos}")
        (n,) = _U64.unpack_from(blob, pos)
        if pos + 8 + n > len(blob):
            raise CheckpointError(f"truncated block at byte {pos + 8}")
        return blob[pos + 8 : pos + 8 + n].decode("utf-8"), pos + 8 + n

    manifest, pos = read_block(pos)
    meta, pos = read_block(pos)
    payload = memoryview(blob)[pos:]
    arrays = {}
    for line in filter(None, manifest.split("\n")):
        try:
            name, shape_s, off_s = line.split("\t")
            shape = tuple(int(v) for v in shape_s.split(",")) if shape_s else ()
            off = int(off_s)
        except ValueError as e:
            raise CheckpointError(f"malformed manifest line {line!r}") from e
        n = int(np.prod(shape, dtype=np.int64)) * 8
        if off + n > len(payload):
            raise CheckpointError(f"payload for {name!r} truncated")
        arrays[name] = np.frombuffer(payload[off : off + n], dtype="<f8").astype(np.float64).reshape(shape)
    return arrays, meta


def save(path, arrays: Mapping[str, np.ndarray], meta: str = "") -> None:
    path = Path(path)
    blob = encode(arrays, meta)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> tuple[dict[str, np.ndarray], str]:
    return decode(Path(path).read_bytes())
