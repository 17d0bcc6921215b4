"""ABCQ model container and memory-footprint accounting.

Container layout (little-endian):

    magic b"ABCQ", u32 version, u32 header_len, header JSON,
    planes ascending (each plane: rows x ceil(cols/32) uint32, row-major),
    scale sets ascending precision (each: plane-major, row-major,
    group-major, float32 or float16 per the header's scale_width),
    offsets ascending precision when asymmetric (rows x groups each),
    u32 CRC32 of every preceding byte.

The header JSON carries rows, cols, group_size, mode, p_lo, p_hi,
scale_width and a creator tag; it is emitted with sorted keys so identical
models serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .bcq import QuantConfig, ScaleTensor, group_count
from .errors import (
    BadMagicError,
    BadVersionError,
    ChecksumError,
    FileFormatError,
    TruncatedError,
    UsageError,
)
from .packing import BitPlaneSet, words_per_row
from .progressive import MultiPrecisionModel

ABCQ_MAGIC = b"ABCQ"
ABCQ_VERSION = 1
_PREFIX = struct.Struct("<4sII")
_CREATOR = "anybcq-0.1"

_SCALE_DTYPES = {2: "<f2", 4: "<f4"}


def serialize(model: MultiPrecisionModel, path, scale_width: int = 4) -> None:
    """Write the container. scale_width=4 round-trips scales bit-exactly;
    scale_width=2 stores float16 (the deployment width) and is lossy for
    scales that are not float16-representable."""
    if scale_width not in _SCALE_DTYPES:
        raise UsageError(f"scale_width must be one of {sorted(_SCALE_DTYPES)}")
    dtype = _SCALE_DTYPES[scale_width]
    header = {
        "rows": model.shape[0],
        "cols": model.shape[1],
        "group_size": model.config.group_size,
        "mode": model.config.mode,
        "cycles": model.config.cycles,
        "p_lo": model.p_lo,
        "p_hi": model.p_hi,
        "scale_width": scale_width,
        "creator": _CREATOR,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = bytearray()
    body += _PREFIX.pack(ABCQ_MAGIC, ABCQ_VERSION, len(head))
    body += head
    body += model.bitplanes.tobytes()
    for p in model.precisions:
        body += model.scale_sets[p].alpha.astype(dtype).tobytes()
    if model.config.asymmetric:
        for p in model.precisions:
            body += model.scale_sets[p].offset.astype(dtype).tobytes()
    body += struct.pack("<I", zlib.crc32(bytes(body)))
    with open(path, "wb") as fh:
        fh.write(bytes(body))


def _read_header(raw: bytes, path) -> tuple[dict, int]:
    if len(raw) < _PREFIX.size:
        raise TruncatedError(f"{path}: shorter than the fixed prefix")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != ABCQ_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != ABCQ_VERSION:
        raise BadVersionError(f"{path}: unsupported version {version}")
    if len(raw) < _PREFIX.size + header_len:
        raise TruncatedError(f"{path}: header extends past end of file")
    try:
        header = json.loads(raw[_PREFIX.size:_PREFIX.size + header_len])
    except ValueError as exc:
        raise FileFormatError(f"{path}: unreadable header ({exc})") from exc
    return header, _PREFIX.size + header_len


def deserialize(path) -> MultiPrecisionModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    header, offset = _read_header(raw, path)
    try:
        rows, cols = int(header["rows"]), int(header["cols"])
        group_size = int(header["group_size"])
        mode = str(header["mode"])
        cycles = int(header.get("cycles", 0))
        p_lo, p_hi = int(header["p_lo"]), int(header["p_hi"])
        scale_width = int(header["scale_width"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: header missing fields ({exc})") from exc
    if scale_width not in _SCALE_DTYPES:
        raise FileFormatError(f"{path}: unsupported scale width {scale_width}")
    dtype = _SCALE_DTYPES[scale_width]
    asym = mode == "asymmetric"
    groups = group_count(cols, group_size)
    wpr = words_per_row(cols)

    plane_bytes = p_hi * rows * wpr * 4
    scale_counts = [p * rows * groups for p in range(p_lo, p_hi + 1)]
    scale_bytes = sum(scale_counts) * scale_width
    offset_bytes = (p_hi - p_lo + 1) * rows * groups * scale_width if asym else 0
    expected = offset + plane_bytes + scale_bytes + offset_bytes + 4
    if len(raw) < expected:
        raise TruncatedError(f"{path}: {len(raw)} bytes, layout requires {expected}")
    if len(raw) > expected:
        raise FileFormatError(f"{path}: {len(raw) - expected} trailing bytes")
    stored_crc = struct.unpack_from("<I", raw, expected - 4)[0]
    if zlib.crc32(raw[: expected - 4]) != stored_crc:
        raise ChecksumError(f"{path}: checksum mismatch")

    pos = offset
    words = np.frombuffer(raw, dtype="<u4", count=p_hi * rows * wpr, offset=pos)
    words = words.reshape(p_hi, rows, wpr).copy()
    pos += plane_bytes
    scale_sets = {}
    for p in range(p_lo, p_hi + 1):
        count = p * rows * groups
        alpha = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
        alpha = alpha.astype(np.float32).reshape(p, rows, groups)
        pos += count * scale_width
        scale_sets[p] = alpha
    offsets = {}
    if asym:
        for p in range(p_lo, p_hi + 1):
            count = rows * groups
            off = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
            offsets[p] = off.astype(np.float32).reshape(rows, groups)
            pos += count * scale_width

    cfg = QuantConfig(group_size=group_size, mode=mode, cycles=cycles)
    tensors = {
        p: ScaleTensor(scale_sets[p], offsets.get(p), group_size)
        for p in range(p_lo, p_hi + 1)
    }
    planes = BitPlaneSet(p_hi, rows, cols, words)
    return MultiPrecisionModel(planes, tensors, p_lo, p_hi, cfg)


# ---------------------------------------------------------------------------
# footprint accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FootprintRow:
    precision: int
    scale_bytes: int
    binary_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.scale_bytes + self.binary_bytes


@dataclass(frozen=True)
class FootprintReport:
    """Per-precision standalone footprints plus the shared-binary total."""

    rows: int
    cols: int
    group_size: int
    mode: str
    scale_width: int
    per_precision: tuple[FootprintRow, ...]

    @property
    def multi_model_total(self) -> int:
        return sum(r.total_bytes for r in self.per_precision)

    @property
    def shared_scale_bytes(self) -> int:
        return sum(r.scale_bytes for r in self.per_precision)

    @property
    def shared_binary_bytes(self) -> int:
        return self.per_precision[-1].binary_bytes

    @property
    def shared_total(self) -> int:
        return self.shared_binary_bytes + self.shared_scale_bytes

    @property
    def reduction_vs_multi_model(self) -> float:
        return 1.0 - self.shared_total / self.multi_model_total


def footprint(
    rows: int,
    cols: int,
    group_size: int,
    p_lo: int,
    p_hi: int,
    mode: str = "symmetric",
    scale_width: int = 2,
) -> FootprintReport:
    """Memory accounting: packed binaries plus per-group scales.

    binary(p) = rows * ceil(cols/32) * 4 * p for a standalone p-bit model;
    scale(p) = rows * groups * p * scale_width, plus one offset row per
    group in asymmetric mode. The shared total counts the p_hi-plane binary
    once plus every precision's scales.
    """
    if rows < 1 or cols < 1 or group_size < 1:
        raise UsageError("rows, cols and group_size must be >= 1")
    if not 1 <= p_lo <= p_hi:
        raise UsageError(f"invalid precision range [{p_lo}, {p_hi}]")
    if scale_width not in _SCALE_DTYPES:
        raise UsageError(f"scale_width must be one of {sorted(_SCALE_DTYPES)}")
    groups = group_count(cols, group_size)
    offset_bytes = rows * groups * scale_width if mode == "asymmetric" else 0
    per = tuple(
        FootprintRow(
            precision=p,
            scale_bytes=rows * groups * p * scale_width + offset_bytes,
            binary_bytes=rows * words_per_row(cols) * 4 * p,
        )
        for p in range(p_lo, p_hi + 1)
    )
    return FootprintReport(rows, cols, group_size, mode, scale_width, per)


def model_footprint(model: MultiPrecisionModel, scale_width: int = 4) -> FootprintReport:
    rows, cols = model.shape
    return footprint(
        rows, cols, model.config.group_size, model.p_lo, model.p_hi,
        model.config.mode, scale_width,
    )


def container_overhead_bytes(path) -> int:
    """Bytes of a container not counted by footprint: prefix, header, CRC."""
    with open(path, "rb") as fh:
        raw = fh.read(_PREFIX.size)
    if len(raw) < _PREFIX.size:
        raise TruncatedError(f"{path}: shorter than the fixed prefix")
    _, _, header_len = _PREFIX.unpack(raw)
    return _PREFIX.size + header_len + 4


_GB = 1_000_000_000


def render_footprint_text(report: FootprintReport) -> str:
    """Aligned table: one row per standalone precision, then the
    multi-model sum and the shared-binary layout."""
    lines = [f"{'Bit':<12}{'Scale':>14}{'Binary':>14}{'Total':>14}"]

    def fmt(n: int) -> str:
        return f"{n / _GB:.6f}" if n >= 1_000_000 else str(n)

    unit = "GB" if report.multi_model_total >= 1_000_000 else "bytes"
    for row in report.per_precision:
        lines.append(
            f"{'BCQ' + str(row.precision):<12}{fmt(row.scale_bytes):>14}"
            f"{fmt(row.binary_bytes):>14}{fmt(row.total_bytes):>14}"
        )
    lines.append(
        f"{'Multi-model':<12}{fmt(report.shared_scale_bytes):>14}"
        f"{fmt(sum(r.binary_bytes for r in report.per_precision)):>14}"
        f"{fmt(report.multi_model_total):>14}"
    )
    lines.append(
        f"{'Proposed':<12}{fmt(report.shared_scale_bytes):>14}"
        f"{fmt(report.shared_binary_bytes):>14}{fmt(report.shared_total):>14}"
    )
    lines.append(f"(values in {unit}; scale width {report.scale_width} B; "
                 f"reduction vs multi-model {100 * report.reduction_vs_multi_model:.1f}%)")
    return "\n".join(lines)


def render_footprint_kv(report: FootprintReport) -> str:
    """Machine-readable key=value lines, byte counts only."""
    lines = [
        f"rows={report.rows}",
        f"cols={report.cols}",
        f"group_size={report.group_size}",
        f"mode={report.mode}",
        f"scale_width={report.scale_width}",
    ]
    for row in report.per_precision:
        pre = f"bcq{row.precision}"
        lines.append(f"{pre}.scale_bytes={row.scale_bytes}")
        lines.append(f"{pre}.binary_bytes={row.binary_bytes}")
        lines.append(f"{pre}.total_bytes={row.total_bytes}")
    lines.append(f"multi_model.total_bytes={report.multi_model_total}")
    lines.append(f"shared.scale_bytes={report.shared_scale_bytes}")
    lines.append(f"shared.binary_bytes={report.shared_binary_bytes}")
    lines.append(f"shared.total_bytes={report.shared_total}")
    lines.append(f"shared.reduction={report.reduction_vs_multi_model:.6f}")
    return "\n".join(lines)
