"""Little-endian record primitives shared by the run-file format and the
network frame protocol.

Strings are u16 byte length + UTF-8.  Readers raise ShortBuffer with the
offset at which bytes ran out; callers translate that into their own error
vocabulary (file truncation vs. incomplete network frame).
"""

from __future__ import annotations

import struct

import numpy as np

__all__ = ["ShortBuffer", "ByteReader", "ByteWriter"]


class ShortBuffer(Exception):
    """Buffer ended before a complete record; `offset` is where it ran out."""

    def __init__(self, offset: int, needed: int):
        super().__init__(f"buffer exhausted at byte {offset}, needed {needed} more")
        self.offset = offset
        self.needed = needed


class ByteWriter:
    def __init__(self) -> None:
        self._buf = bytearray()

    def u8(self, v: int) -> None:
        self._buf += struct.pack("<B", v)

    def u16(self, v: int) -> None:
        self._buf += struct.pack("<H", v)

    def u32(self, v: int) -> None:
        self._buf += struct.pack("<I", v)

    def u64(self, v: int) -> None:
        self._buf += struct.pack("<Q", v)

    def i64(self, v: int) -> None:
        self._buf += struct.pack("<q", v)

    def f64(self, v: float) -> None:
        self._buf += struct.pack("<d", v)

    def string(self, s: str) -> None:
        raw = s.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"string too long for u16 length: {len(raw)} bytes")
        self.u16(len(raw))
        self._buf += raw

    def raw(self, b: bytes) -> None:
        self._buf += b

    def f32_array(self, arr: np.ndarray) -> None:
        self._buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()

    def f64_array(self, arr: np.ndarray) -> None:
        self._buf += np.ascontiguousarray(arr, dtype="<f8").tobytes()

    def u32_array(self, arr: np.ndarray) -> None:
        self._buf += np.ascontiguousarray(arr, dtype="<u4").tobytes()

    def pad_to(self, alignment: int) -> None:
        rem = len(self._buf) % alignment
        if rem:
            self._buf += b"\x00" * (alignment - rem)

    def __len__(self) -> int:
        return len(self._buf)

    def getvalue(self) -> bytes:
        return bytes(self._buf)


class ByteReader:
    """Sequential reader over an in-memory buffer."""

    def __init__(self, buf: bytes, offset: int = 0, base_offset: int = 0):
        self._buf = buf
        self.offset = offset
        # reported in errors so offsets can be absolute within a larger file
        self.base_offset = base_offset

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self._buf):
            raise ShortBuffer(
                self.base_offset + len(self._buf),
                self.offset + n - len(self._buf),
            )
        out = self._buf[self.offset : self.offset + n]
        self.offset += n
        return out

    def _unpack(self, fmt: str, size: int):
        if self.offset + size > len(self._buf):
            raise ShortBuffer(
                self.base_offset + len(self._buf),
                self.offset + size - len(self._buf),
            )
        (v,) = struct.unpack_from(fmt, self._buf, self.offset)
        self.offset += size
        return v

    def u8(self) -> int:
        return self._unpack("<B", 1)

    def u16(self) -> int:
        return self._unpack("<H", 2)

    def u32(self) -> int:
        return self._unpack("<I", 4)

    def u64(self) -> int:
        return self._unpack("<Q", 8)

    def i64(self) -> int:
        return self._unpack("<q", 8)

    def f64(self) -> float:
        return self._unpack("<d", 8)

    def string(self) -> str:
        n = self.u16()
        return self.take(n).decode("utf-8")

    def f32_array(self, count: int) -> np.ndarray:
        # zero-copy view into the buffer; read-only because bytes is immutable
        raw = self._buf
        start = self.offset
        self.take(4 * count)
        if isinstance(raw, bytes):
            return np.frombuffer(raw, dtype="<f4", count=count, offset=start)
        return np.frombuffer(bytes(raw[start : start + 4 * count]), dtype="<f4")

    def f64_array(self, count: int) -> np.ndarray:
        raw = self._buf
        start = self.offset
        self.take(8 * count)
        if isinstance(raw, bytes):
            return np.frombuffer(raw, dtype="<f8", count=count, offset=start)
        return np.frombuffer(bytes(raw[start : start + 8 * count]), dtype="<f8")

    def u32_array(self, count: int) -> np.ndarray:
        raw = self._buf
        start = self.offset
        self.take(4 * count)
        if isinstance(raw, bytes):
            return np.frombuffer(raw, dtype="<u4", count=count, offset=start)
        return np.frombuffer(bytes(raw[start : start + 4 * count]), dtype="<u4")

    def skip(self, n: int) -> None:
        self.take(n)

    @property
    def remaining(self) -> int:
        return len(self._buf) - self.offset
