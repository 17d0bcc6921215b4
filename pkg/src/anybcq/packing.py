"""Packed binary bit-planes.

Layout is normative for the model container: each plane stores, per row,
ceil(cols/32) little-endian 32-bit words; bit j of word w addresses column
w*32 + j. A stored 1 decodes to code +1 and a stored 0 to code -1. Padding
bits past the last column are always zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


def words_per_row(cols: int) -> int:
    return (cols + 31) // 32


def pack_signs(codes: np.ndarray) -> np.ndarray:
    """Pack a (..., cols) array of -1/+1 codes into (..., ceil(cols/32)) uint32."""
    codes = np.asarray(codes)
    cols = codes.shape[-1]
    wpr = words_per_row(cols)
    bits = np.zeros(codes.shape[:-1] + (wpr * 32,), dtype=np.uint8)
    bits[..., :cols] = codes > 0
    packed = np.packbits(bits, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u4").reshape(codes.shape[:-1] + (wpr,))


def unpack_signs(words: np.ndarray, cols: int) -> np.ndarray:
    """Inverse of pack_signs; returns int8 codes in {-1, +1}."""
    as_bytes = np.ascontiguousarray(words, dtype="<u4").view(np.uint8)
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little", count=cols)
    return (bits.astype(np.int8) << 1) - 1


@dataclass(frozen=True, eq=False)
class BitPlaneSet:
    """q packed binary planes over an (rows, cols) matrix.

    words has shape (planes, rows, words_per_row) and dtype uint32.
    """

    planes: int
    rows: int
    cols: int
    words: np.ndarray

    def __post_init__(self):
        if self.planes < 1:
            raise UsageError("plane count must be >= 1")
        expect = (self.planes, self.rows, words_per_row(self.cols))
        if self.words.shape != expect:
            raise UsageError(f"packed words shape {self.words.shape} != {expect}")

    @classmethod
    def from_codes(cls, codes: np.ndarray, cols: int | None = None) -> "BitPlaneSet":
        """Pack a (planes, rows, cols) array of -1/+1 codes."""
        codes = np.asarray(codes)
        if codes.ndim != 3:
            raise UsageError(f"codes must be 3-D, got shape {codes.shape}")
        q, rows, k = codes.shape
        return cls(q, rows, k, pack_signs(codes))

    def codes(self, plane: int | None = None) -> np.ndarray:
        """Unpack to -1/+1 int8: one (rows, cols) plane, or all (planes, rows, cols)."""
        if plane is None:
            return unpack_signs(self.words, self.cols)
        return unpack_signs(self.words[plane], self.cols)

    def prefix(self, p: int) -> "BitPlaneSet":
        """Zero-copy view over the first p planes."""
        if not 1 <= p <= self.planes:
            raise UsageError(f"prefix {p} out of range [1, {self.planes}]")
        return BitPlaneSet(p, self.rows, self.cols, self.words[:p])

    def plane_bytes(self) -> int:
        """Packed bytes of one plane."""
        return self.rows * words_per_row(self.cols) * 4

    def tobytes(self) -> bytes:
        return np.ascontiguousarray(self.words, dtype="<u4").tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitPlaneSet):
            return NotImplemented
        return (
            (self.planes, self.rows, self.cols) == (other.planes, other.rows, other.cols)
            and np.array_equal(self.words, other.words)
        )
