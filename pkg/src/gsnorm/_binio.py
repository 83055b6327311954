"""Little-endian struct helpers shared by the GSN* file formats."""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np


class FormatError(ValueError):
    """Malformed or unsupported file content."""


class TruncatedError(FormatError):
    """File shorter than its header declares."""

    def __init__(self, what: str, expected: int, actual: int):
        super().__init__(f"truncated {what}: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class Writer:
    def __init__(self, sink: BinaryIO):
        self.sink = sink
        self.count = 0

    def raw(self, data: bytes) -> None:
        self.sink.write(data)
        self.count += len(data)

    def pack(self, fmt: str, *values) -> None:
        self.raw(struct.pack("<" + fmt, *values))

    def string(self, text: str) -> None:
        data = text.encode("utf-8")
        if len(data) > 0xFFFF:
            raise ValueError(f"string too long for u16 length prefix: {len(data)} bytes")
        self.pack("H", len(data))
        self.raw(data)

    def array(self, values: np.ndarray, dtype: str) -> None:
        self.raw(np.ascontiguousarray(values, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())


class Reader:
    def __init__(self, source: BinaryIO):
        self.source = source

    def raw(self, n: int, what: str) -> bytes:
        data = self.source.read(n)
        if len(data) != n:
            raise TruncatedError(what, n, len(data))
        return data

    def unpack(self, fmt: str, what: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.raw(struct.calcsize(fmt), what))

    def one(self, fmt: str, what: str):
        return self.unpack(fmt, what)[0]

    def string(self, what: str) -> str:
        n = self.one("H", what + " length")
        return self.raw(n, what).decode("utf-8")

    def array(self, count: int, dtype: str, what: str) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        data = self.raw(count * dt.itemsize, what)
        return np.frombuffer(data, dtype=dt).astype(dt.newbyteorder("="))

    def header(self, magic: bytes, version: int = 1) -> None:
        got = self.source.read(len(magic))
        if got != magic:
            raise FormatError(f"bad magic: expected {magic!r}, got {got!r}")
        v = self.one("H", "version")
        if v != version:
            raise FormatError(f"unsupported {magic.decode()} version {v} (expected {version})")

    def expect_eof(self, what: str) -> None:
        if self.source.read(1):
            raise FormatError(f"trailing bytes after {what}")
