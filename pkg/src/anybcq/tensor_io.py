"""Dense-matrix file I/O and seeded test-matrix generation.

FMAT format (little-endian throughout):

    offset  size  field
    0       4     magic  b"FMAT"
    4       4     u32    version, currently 1
    8       1     u8     dtype code, 0 = 32-bit float
    9       3     reserved, must be zero
    12      8     u64    rows
    20      8     u64    cols
    28      -     rows*cols float32 values, row-major

Matrices are plain 2-D float32 numpy arrays; weight matrices are shaped
(rows, cols) and activation batches (samples, cols). Both use this format.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import (
    BadMagicError,
    BadVersionError,
    NonFiniteError,
    TruncatedError,
    UnsupportedDtypeError,
    UsageError,
)

FMAT_MAGIC = b"FMAT"
FMAT_VERSION = 1
FMAT_DTYPE_F32 = 0
FMAT_HEADER = struct.Struct("<4sIB3sQQ")  # 28 bytes


def validate_matrix(m: np.ndarray, name: str = "matrix") -> np.ndarray:
    """Check shape/finiteness and return the array as C-contiguous float32."""
    m = np.ascontiguousarray(m, dtype=np.float32)
    if m.ndim != 2:
        raise UsageError(f"{name} must be 2-D, got shape {m.shape}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise UsageError(f"{name} dimensions must be >= 1, got {m.shape}")
    if not np.isfinite(m).all():
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return m


def save_matrix(m: np.ndarray, path: str | os.PathLike) -> None:
    """Write a matrix as FMAT. Round-trips bit-exactly through load_matrix."""
    m = validate_matrix(m)
    header = FMAT_HEADER.pack(
        FMAT_MAGIC, FMAT_VERSION, FMAT_DTYPE_F32, b"\x00\x00\x00",
        m.shape[0], m.shape[1],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(m.astype("<f4", copy=False).tobytes())


def load_matrix(path: str | os.PathLike) -> np.ndarray:
    """Read an FMAT file into a float32 (rows, cols) array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < FMAT_HEADER.size:
        raise TruncatedError(f"{path}: file shorter than the {FMAT_HEADER.size}-byte header")
    magic, version, dtype, _reserved, rows, cols = FMAT_HEADER.unpack_from(raw)
    if magic != FMAT_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FMAT_VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    if dtype != FMAT_DTYPE_F32:
        raise UnsupportedDtypeError(f"{path}: unsupported dtype code {dtype}")
    if rows < 1 or cols < 1:
        raise TruncatedError(f"{path}: degenerate dims {rows}x{cols}")
    need = rows * cols * 4
    payload = raw[FMAT_HEADER.size:]
    if len(payload) < need:
        raise TruncatedError(
            f"{path}: payload holds {len(payload) // 4} values, header promises {rows * cols}"
        )
    m = np.frombuffer(payload[:need], dtype="<f4").reshape(rows, cols)
    if not np.isfinite(m).all():
        raise NonFiniteError(f"{path}: payload contains NaN or Inf")
    return np.ascontiguousarray(m, dtype=np.float32)


# Counter-based generator: value i of stream `seed` mixes seed + (i+1)*GOLDEN
# through the splitmix64 finalizer, so any language can reproduce it.
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix64(state: np.ndarray) -> np.ndarray:
    z = state
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def random_gaussian(rows: int, cols: int, seed: int) -> np.ndarray:
    """Seeded i.i.d. standard-normal matrix, identical across platforms.

    Stream value i is splitmix64(seed + (i+1)*GOLDEN) shifted to its top
    53 bits. Even stream positions feed the Box-Muller radius (mapped into
    (0, 1] so the log is safe), odd positions feed the angle, and each
    pair yields the cos/sin normals in order. The result is a pure
    function of (rows, cols, seed).
    """
    if rows < 1 or cols < 1:
        raise UsageError(f"dimensions must be >= 1, got {rows}x{cols}")
    total = rows * cols
    pairs = (total + 1) // 2
    ctr = np.arange(1, 2 * pairs + 1, dtype=np.uint64)
    z = _splitmix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + ctr * _GOLDEN)
    top = (z >> np.uint64(11)).astype(np.float64)
    u1 = (top[0::2] + 1.0) * (2.0 ** -53)
    u2 = top[1::2] * (2.0 ** -53)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    out = np.empty(2 * pairs, dtype=np.float64)
    out[0::2] = radius * np.cos(angle)
    out[1::2] = radius * np.sin(angle)
    return out[:total].astype(np.float32).reshape(rows, cols)
