"""Binary file primitives shared by the artifact formats.

All multi-byte values are little-endian. Readers raise TruncatedFileError on
short reads and FileFormatError on magic mismatches, so callers can surface
distinct error classes.
"""

from __future__ import annotations

import struct
from typing import BinaryIO

import numpy as np

from .errors import FileFormatError, TruncatedFileError


def _make_crc32c_table() -> list[int]:
    poly = 0x82F63B78  # reflected Castagnoli polynomial
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ poly if c & 1 else c >> 1
        table.append(c)
    return table


_CRC_TABLE = _make_crc32c_table()


def crc32c(data: bytes, crc: int = 0) -> int:
    """CRC-32C (Castagnoli) of ``data``, continuing from ``crc``."""
    c = crc ^ 0xFFFFFFFF
    table = _CRC_TABLE
    for b in data:
        c = table[(c ^ b) & 0xFF] ^ (c >> 8)
    return c ^ 0xFFFFFFFF


def write_u32(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<I", value))


def write_u64(fh: BinaryIO, value: int) -> None:
    fh.write(struct.pack("<Q", value))


def write_f32_array(fh: BinaryIO, arr: np.ndarray) -> None:
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_exact(fh: BinaryIO, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise TruncatedFileError(f"truncated file while reading {what}")
    return data


def read_u32(fh: BinaryIO, what: str = "u32") -> int:
    return struct.unpack("<I", read_exact(fh, 4, what))[0]


def read_u64(fh: BinaryIO, what: str = "u64") -> int:
    return struct.unpack("<Q", read_exact(fh, 8, what))[0]


def read_f32_array(fh: BinaryIO, count: int, what: str = "f32 array") -> np.ndarray:
    data = read_exact(fh, 4 * count, what)
    return np.frombuffer(data, dtype="<f4").copy()


def check_magic(fh: BinaryIO, expected: bytes, what: str) -> None:
    got = read_exact(fh, len(expected), f"{what} magic")
    if got != expected:
        raise FileFormatError(
            f"bad magic for {what}: expected {expected!r}, got {got!r}"
        )
