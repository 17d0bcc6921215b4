"""Bit-plane matrix-vector execution.

y = w_hat @ x is computed directly from packed planes at a per-call
precision p, touching only planes 1..p. Two paths:

  * naive - unpacks codes on the fly and accumulates signed activations
    per group; the readable reference.
  * lut   - precomputes, per chunk of `chunk_width` input elements, all
    2^chunk_width signed partial sums, then accumulates table entries
    indexed by the packed plane bytes. A numba kernel drives the aligned
    case; a vectorized numpy route covers the rest.

Every call returns exact traffic counters alongside the result: packed
plane bytes and scale bytes fetched scale linearly with p by construction.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bcq import group_bounds, group_count
from .errors import UsageError
from .parallel import row_chunks, thread_count
from .progressive import MultiPrecisionModel, precision_view

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


CHUNK_WIDTHS = (4, 8)


@dataclass
class GemvStats:
    plane_bytes_fetched: int
    scale_bytes_fetched: int
    lut_build_count: int
    elapsed_s: float


@dataclass(frozen=True, eq=False)
class LookupTable:
    """Signed partial sums of every chunk of the input vector.

    tables[c, t] = sum_j s_j(t) * x[c*chunk_width + j], with s_j(t) = +1
    when bit j of t is set and -1 otherwise; columns past the end of x
    contribute zero.
    """

    chunk_width: int
    tables: np.ndarray  # (chunks, 2^chunk_width) float32

    @classmethod
    def build(cls, x: np.ndarray, chunk_width: int) -> "LookupTable":
        if not 1 <= chunk_width <= 8:
            raise UsageError(f"chunk width must be in [1, 8], got {chunk_width}")
        x = np.asarray(x, dtype=np.float32).ravel()
        chunks = (len(x) + chunk_width - 1) // chunk_width
        padded = np.zeros(chunks * chunk_width, dtype=np.float32)
        padded[: len(x)] = x
        padded = padded.reshape(chunks, chunk_width)
        # doubling: prepend bit j as the [-x_j | +x_j] half split
        tables = np.zeros((chunks, 1), dtype=np.float32)
        for j in range(chunk_width):
            xj = padded[:, j: j + 1]
            tables = np.concatenate([tables - xj, tables + xj], axis=1)
        return cls(chunk_width, np.ascontiguousarray(tables))


@njit(cache=True, nogil=True)
def _lut_kernel(idx, table, alpha, chunk_lo, chunk_hi, p_use, row_lo, row_hi, out):
    for n in range(row_lo, row_hi):
        acc = 0.0
        for i in range(p_use):
            row = idx[i, n]
            for gi in range(chunk_lo.shape[0]):
                s = np.float32(0.0)
                for c in range(chunk_lo[gi], chunk_hi[gi]):
                    s += table[c, row[c]]
                acc += alpha[i, n, gi] * s
        out[n] = acc


class GemvEngine:
    """Executes GEMV against one immutable model at any servable precision.

    Caches the byte-chunk index view of the packed planes; the model itself
    is never modified, so one engine may serve concurrent calls at
    different precisions.
    """

    def __init__(self, model: MultiPrecisionModel, chunk_width: int = 8):
        if chunk_width not in CHUNK_WIDTHS:
            raise UsageError(f"chunk width must be one of {CHUNK_WIDTHS}")
        self.model = model
        self.chunk_width = chunk_width
        self.rows, self.cols = model.shape
        self.group_size = model.config.group_size
        self.groups = group_count(self.cols, self.group_size)
        self.chunks = (self.cols + chunk_width - 1) // chunk_width
        self._chunk_idx: np.ndarray | None = None
        # chunk boundaries land on group boundaries iff the group size is a
        # chunk multiple (single-group models are trivially aligned)
        self.aligned = self.group_size % chunk_width == 0 or self.groups == 1
        if self.aligned:
            lo = []
            hi = []
            per = self.group_size // chunk_width if self.groups > 1 else self.chunks
            for gi in range(self.groups):
                lo.append(gi * per)
                hi.append(min((gi + 1) * per, self.chunks) if gi < self.groups - 1
                          else self.chunks)
            self._chunk_lo = np.asarray(lo, dtype=np.int64)
            self._chunk_hi = np.asarray(hi, dtype=np.int64)

    def _indices(self) -> np.ndarray:
        """(planes, rows, chunks) uint8 table indices decoded from the planes."""
        if self._chunk_idx is None:
            words = self.model.bitplanes.words
            as_bytes = np.ascontiguousarray(words, dtype="<u4").view(np.uint8)
            as_bytes = as_bytes.reshape(words.shape[0], self.rows, -1)
            n_bytes = (self.cols + 7) // 8
            if self.chunk_width == 8:
                idx = as_bytes[:, :, :n_bytes]
            else:
                by = as_bytes[:, :, :n_bytes]
                idx = np.empty(by.shape[:2] + (2 * n_bytes,), dtype=np.uint8)
                idx[:, :, 0::2] = by & 0x0F
                idx[:, :, 1::2] = by >> 4
                idx = idx[:, :, : self.chunks]
            self._chunk_idx = np.ascontiguousarray(idx)
        return self._chunk_idx

    def _validate(self, p: int, x: np.ndarray) -> np.ndarray:
        if p not in self.model.precisions:
            raise UsageError(
                f"precision {p} outside [{self.model.p_lo}, {self.model.p_hi}]"
            )
        x = np.asarray(x, dtype=np.float64).ravel()
        if len(x) != self.cols:
            raise UsageError(f"input length {len(x)} != cols {self.cols}")
        return x

    def _stats(self, p: int, lut_builds: int, elapsed: float) -> GemvStats:
        wpr = self.model.bitplanes.words.shape[2]
        scale_bytes = p * self.rows * self.groups * 4
        if self.model.config.asymmetric:
            scale_bytes += self.rows * self.groups * 4
        return GemvStats(
            plane_bytes_fetched=p * self.rows * wpr * 4,
            scale_bytes_fetched=scale_bytes,
            lut_build_count=lut_builds,
            elapsed_s=elapsed,
        )

    def naive(self, p: int, x: np.ndarray) -> tuple[np.ndarray, GemvStats]:
        """Reference path: unpack each needed plane, multiply, group-sum."""
        x = self._validate(p, x)
        t0 = time.perf_counter()
        scales = self.model.scale_sets[p]
        alpha = scales.alpha.astype(np.float64)
        y = np.zeros(self.rows, dtype=np.float64)
        bounds = group_bounds(self.cols, self.group_size)
        for i in range(p):
            codes = self.model.bitplanes.codes(i)
            for gi, (lo, hi) in enumerate(bounds):
                partial = (codes[:, lo:hi] * x[lo:hi]).sum(axis=1)
                y += alpha[i, :, gi] * partial
        if scales.offset is not None:
            gx = np.array([x[lo:hi].sum() for lo, hi in bounds])
            y += scales.offset.astype(np.float64) @ gx
        return y, self._stats(p, 0, time.perf_counter() - t0)

    def lut(self, p: int, x: np.ndarray) -> tuple[np.ndarray, GemvStats]:
        """Table path: one table build per call, then index-and-accumulate."""
        x = self._validate(p, x)
        t0 = time.perf_counter()
        table = LookupTable.build(x, self.chunk_width)
        scales = self.model.scale_sets[p]
        alpha = np.ascontiguousarray(scales.alpha, dtype=np.float32)
        idx = self._indices()
        if self.aligned and _HAVE_NUMBA:
            y = np.empty(self.rows, dtype=np.float64)
            workers = thread_count()
            if workers > 1 and self.rows >= 2 * workers:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    futures = [
                        pool.submit(
                            _lut_kernel, idx, table.tables, alpha,
                            self._chunk_lo, self._chunk_hi, p, lo, hi, y,
                        )
                        for lo, hi in row_chunks(self.rows, workers)
                    ]
                    for f in futures:
                        f.result()
            else:
                _lut_kernel(
                    idx, table.tables, alpha, self._chunk_lo, self._chunk_hi,
                    p, 0, self.rows, y,
                )
        else:
            y = self._lut_numpy(p, x, table, idx, alpha)
        if scales.offset is not None:
            gx = np.array(
                [x[lo:hi].sum() for lo, hi in group_bounds(self.cols, self.group_size)]
            )
            y = y + scales.offset.astype(np.float64) @ gx
        return y, self._stats(p, 1, time.perf_counter() - t0)

    def _lut_numpy(self, p, x, table, idx, alpha) -> np.ndarray:
        """Vectorized table accumulation; group edges that do not land on a
        chunk boundary fall back to naive accumulation over those columns."""
        mu = self.chunk_width
        flat = table.tables.ravel()
        y = np.zeros(self.rows, dtype=np.float64)
        a64 = alpha.astype(np.float64)
        for gi, (lo, hi) in enumerate(group_bounds(self.cols, self.group_size)):
            c0 = (lo + mu - 1) // mu
            c1 = self.chunks if hi == self.cols else hi // mu
            if c1 > c0:
                ragged = [(lo, c0 * mu), (c1 * mu if hi < self.cols else hi, hi)]
            else:
                c0 = c1 = 0
                ragged = [(lo, hi)]
            for i in range(p):
                part = np.zeros(self.rows, dtype=np.float64)
                if c1 > c0:
                    gidx = idx[i, :, c0:c1].astype(np.intp)
                    gidx += np.arange(c0, c1, dtype=np.intp) << mu
                    part += flat[gidx].sum(axis=1, dtype=np.float64)
                for col_lo, col_hi in ragged:
                    if col_hi > col_lo:
                        codes = self.model.bitplanes.codes(i)[:, col_lo:col_hi]
                        part += (codes * x[col_lo:col_hi]).sum(axis=1)
                y += a64[i, :, gi] * part
        return y


def gemv_naive(model: MultiPrecisionModel, p: int, x: np.ndarray):
    return GemvEngine(model).naive(p, x)


def gemv_lut(model: MultiPrecisionModel, p: int, x: np.ndarray, chunk_width: int = 8):
    return GemvEngine(model, chunk_width).lut(p, x)


def dense_gemv_reference(w: np.ndarray, x: np.ndarray, group_size: int = 128) -> np.ndarray:
    """Dense float32 GEMV written in the naive path's per-group style; the
    timing baseline the packed paths are compared against."""
    w = np.asarray(w, dtype=np.float32)
    x = np.asarray(x, dtype=np.float32).ravel()
    y = np.zeros(w.shape[0], dtype=np.float32)
    for lo, hi in group_bounds(w.shape[1], group_size):
        y += (w[:, lo:hi] * x[lo:hi]).sum(axis=1)
    return y


def dequant_oracle(model: MultiPrecisionModel, p: int, x: np.ndarray) -> np.ndarray:
    """Dense-reconstruction product used to cross-check both engine paths."""
    from .bcq import dequantize

    dense = dequantize(precision_view(model, p), p).astype(np.float64)
    return dense @ np.asarray(x, dtype=np.float64).ravel()


# ---------------------------------------------------------------------------
# benchmarking
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchRow:
    rows: int
    cols: int
    path: str
    precision: int
    median_us: float
    min_us: float
    plane_bytes: int
    scale_bytes: int


def _time_calls(fn, repeats: int, warmup: int = 1) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    elapsed = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        elapsed.append(time.perf_counter() - t0)
    arr = np.asarray(elapsed)
    return float(np.median(arr) * 1e6), float(arr.min() * 1e6)


def bench(
    model: MultiPrecisionModel,
    precisions,
    x: np.ndarray,
    repeats: int = 32,
    paths=("naive", "lut"),
    include_dense: bool = False,
    dense_weights: np.ndarray | None = None,
) -> list[BenchRow]:
    """Median/min latency per (path, precision) with exact byte counters.

    One warm-up call per configuration is excluded from the timings.
    """
    if repeats < 1:
        raise UsageError("repeats must be >= 1")
    engine = GemvEngine(model)
    out = []
    rows, cols = model.shape
    for path in paths:
        if path not in ("naive", "lut"):
            raise UsageError(f"unknown path {path!r}")
        runner = engine.naive if path == "naive" else engine.lut
        for p in precisions:
            med, lo = _time_calls(lambda: runner(p, x), repeats)
            stats = engine._stats(p, 0, 0.0)
            out.append(BenchRow(rows, cols, path, p, med, lo,
                                stats.plane_bytes_fetched, stats.scale_bytes_fetched))
    if include_dense:
        if dense_weights is None:
            from .bcq import dequantize

            dense_weights = dequantize(precision_view(model, model.p_hi), model.p_hi)
        med, lo = _time_calls(
            lambda: dense_gemv_reference(dense_weights, x, model.config.group_size),
            repeats,
        )
        out.append(BenchRow(rows, cols, "dense", 32, med, lo, rows * cols * 4, 0))
    return out


def render_bench_text(rows: list[BenchRow]) -> str:
    header = (f"{'shape':<14}{'path':<8}{'p':>3}{'median_us':>12}"
              f"{'plane_bytes':>14}{'scale_bytes':>13}")
    lines = [header]
    for r in rows:
        lines.append(
            f"{str(r.rows) + 'x' + str(r.cols):<14}{r.path:<8}{r.precision:>3}"
            f"{r.median_us:>12.1f}{r.plane_bytes:>14}{r.scale_bytes:>13}"
        )
    return "\n".join(lines)


def render_bench_csv(rows: list[BenchRow]) -> str:
    lines = ["shape,path,p,median_us,plane_bytes,scale_bytes"]
    for r in rows:
        lines.append(
            f"{r.rows}x{r.cols},{r.path},{r.precision},"
            f"{r.median_us:.1f},{r.plane_bytes},{r.scale_bytes}"
        )
    return "\n".join(lines)
