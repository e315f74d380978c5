"""Minimal PGM (P2/P5) image I/O.

Reading maps sample values to floats in [0, 1] by dividing by the file's
maxval; 16-bit binary samples are big-endian per the format.  Writing is
the only place quantization happens in this package: values are clamped
to [0, 1] and rounded half away from zero at maxval 255.  Parse errors
report the byte offset where the problem was found.
"""

from __future__ import annotations

import numpy as np


class PgmError(ValueError):
    pass


class _Tokenizer:
    """Whitespace/comment-aware header tokenizer over raw bytes."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _skip_separators(self):
        data, n = self.data, len(self.data)
        while self.pos < n:
            c = data[self.pos]
            if c in b" \t\r\n\x0b\x0c":
                self.pos += 1
            elif c == ord("#"):
                while self.pos < n and data[self.pos] not in b"\r\n":
                    self.pos += 1
            else:
                return

    def token(self) -> bytes:
        self._skip_separators()
        if self.pos >= len(self.data):
            raise PgmError(f"unexpected end of header at byte {self.pos}")
        start = self.pos
        data, n = self.data, len(self.data)
        while self.pos < n and data[self.pos] not in b" \t\r\n\x0b\x0c#":
            self.pos += 1
        return data[start : self.pos]

    def integer(self, what: str) -> int:
        start_before = self.pos
        tok = self.token()
        if not tok.isdigit():
            raise PgmError(
                f"bad {what} {tok!r} at byte {max(start_before, self.pos - len(tok))}"
            )
        return int(tok)


def read_pgm(path) -> np.ndarray:
    """Read a P2 or P5 file as float64 in [0, 1], shape (H, W)."""
    with open(path, "rb") as fh:
        data = fh.read()
    tok = _Tokenizer(data)
    magic = tok.token()
    if magic not in (b"P2", b"P5"):
        raise PgmError(f"bad magic {magic!r} at byte 0")
    width = tok.integer("width")
    height = tok.integer("height")
    maxval = tok.integer("maxval")
    if width < 1 or height < 1:
        raise PgmError(f"bad dimensions {width}x{height}")
    if not (1 <= maxval <= 65535):
        raise PgmError(f"bad maxval {maxval}")
    count = width * height

    if magic == b"P2":
        values = np.empty(count, dtype=np.float64)
        for i in range(count):
            at = tok.pos
            v = tok.integer("sample")
            if v > maxval:
                raise PgmError(f"sample {v} exceeds maxval at byte {at}")
            values[i] = v
    else:
        # exactly one separator byte between maxval and the payload
        tok.pos += 1
        bytes_per = 1 if maxval < 256 else 2
        need = count * bytes_per
        payload = data[tok.pos : tok.pos + need]
        if len(payload) < need:
            raise PgmError(
                f"truncated payload at byte {tok.pos + len(payload)}: "
                f"need {need} bytes, have {len(payload)}"
            )
        dtype = np.uint8 if bytes_per == 1 else np.dtype(">u2")
        values = np.frombuffer(payload, dtype=dtype).astype(np.float64)
        if values.max(initial=0.0) > maxval:
            raise PgmError(f"sample exceeds maxval in payload at byte {tok.pos}")

    return (values / maxval).reshape(height, width)


def write_pgm(path, img) -> None:
    """Write a float image in [0, 1] as binary 8-bit P5.

    Values are clamped, then quantized by round-half-away-from-zero; for
    clamped non-negative data that is floor(v*255 + 0.5).
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise PgmError("write_pgm expects a 2-D image")
    if not np.all(np.isfinite(arr)):
        raise PgmError("non-finite pixel values")
    clamped = np.clip(arr, 0.0, 1.0)
    q = np.floor(clamped * 255.0 + 0.5).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + q.tobytes())
