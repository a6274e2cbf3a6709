"""Binary PGM (P5) and PPM (P6) for integer-level images [C, H, W]."""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np


class NetpbmError(ValueError):
    pass


_WS = b" \t\r\n\v\f"


def _header(blob: bytes) -> tuple[bytes, list[int], int]:
    """(magic, [width, height, maxval], payload offset)."""
    if len(blob) < 2:
        raise NetpbmError("truncated header at byte 0")
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"unsupported magic {magic!r} at byte 0 (need P5 or P6)")
    pos, fields = 2, []
    while len(fields) < 3:
        while pos < len(blob) and (blob[pos] in _WS or blob[pos] == ord("#")):
            if blob[pos] == ord("#"):
                end = blob.find(b"\n", pos)
                pos = len(blob) if end < 0 else end
            pos += 1
        start = pos
        while pos < len(blob) and blob[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            what = ("width", "height", "maxval")[len(fields)]
            if pos >= len(blob):
                raise NetpbmError(f"truncated header: missing {what} at byte {pos}")
            raise NetpbmError(f"malformed header: expected {what} at byte {pos}, found {blob[pos:pos + 1]!r}")
        fields.append(int(blob[start:pos]))
    if pos >= len(blob) or blob[pos] not in _WS:
        raise NetpbmError(f"malformed header: expected whitespace after maxval at byte {pos}")
    return magic, fields, pos + 1


def decode(blob: bytes, levels: Optional[int] = None) -> np.ndarray:
    magic, (w, h, maxval), off = _header(blob)
    if w <= 0 or h <= 0:
        raise NetpbmError(f"non-positive dimensions {w}x{h}")
    if not 0 < maxval < 65536:
        raise NetpbmError(f"maxval {maxval} outside 1..65535")
    if levels is not None and maxval != levels - 1:
        raise NetpbmError(f"maxval {maxval} does not match {levels} levels")
    C = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * C * dtype.itemsize
    if len(blob) - off < need:
        raise NetpbmError(f"truncated pixel data: expected {need} bytes from byte {off}, file ends at byte {len(blob)}")
    arr = np.frombuffer(blob, dtype=dtype, count=w * h * C, offset=off).astype(np.int64)
    if arr.size and arr.max() > maxval:
        bad = int(np.argmax(arr > maxval))
        raise NetpbmError(f"sample {arr[bad]} exceeds maxval {maxval} at byte {off + bad * dtype.itemsize}")
    return arr.reshape(h, w, C).transpose(2, 0, 1).copy()


def encode(image: np.ndarray, levels: int) -> bytes:
    img = np.asarray(image)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise NetpbmError(f"need [1|3, H, W] image, got shape {img.shape}")
    if not 2 <= levels <= 65536:
        raise NetpbmError(f"levels {levels} outside 2..65536")
    if img.size and (img.min() < 0 or img.max() >= levels):
        raise NetpbmError(f"intensities outside [0, {levels})")
    C, h, w = img.shape
    dtype = ">u2" if levels > 256 else "u1"
    head = f"{'P5' if C == 1 else 'P6'}\n{w} {h}\n{levels - 1}\n".encode("ascii")
    return head + np.ascontiguousarray(img.transpose(1, 2, 0)).astype(dtype).tobytes()


def read_image(path, levels: Optional[int] = None) -> np.ndarray:
    """Integer levels [C, H, W]; ``levels`` (if given) must equal maxval + 1."""
    path = Path(path)
    try:
        return decode(path.read_bytes(), levels)
    except NetpbmError as e:
        raise NetpbmError(f"{path}: {e}") from None


def write_image(path, image: np.ndarray, levels: int) -> None:
    Path(path).write_bytes(encode(image, levels))
