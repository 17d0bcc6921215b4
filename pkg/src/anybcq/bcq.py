"""Fixed-precision binary-coded quantization.

A weight matrix is approximated as w ~ sum_i alpha_i * b_i (+ offset in
asymmetric mode), with b_i packed bit-planes and alpha_i real scales kept
per plane, per row, per group of `group_size` consecutive columns. Fitting
runs greedy initialization followed by alternating cycles of a per-group
least-squares scale update and a nearest-level code recalibration.

All fitting arithmetic is float64 internally; models store float32 scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError, UsageError
from .packing import BitPlaneSet
from .tensor_io import validate_matrix

MAX_PLANES = 16

# Rank threshold and ridge weight for degenerate normal equations, both
# relative to trace(gram)/dim. Exact duplicates between planes are the
# only way test-scale groups go deficient.
RANK_CUTOFF = 1e-10
RIDGE_SCALE = 1e-8


@dataclass(frozen=True)
class QuantConfig:
    group_size: int = 128
    mode: str = "symmetric"
    cycles: int = 20

    def __post_init__(self):
        if self.group_size < 1:
            raise UsageError(f"group_size must be >= 1, got {self.group_size}")
        if self.mode not in ("symmetric", "asymmetric"):
            raise UsageError(f"mode must be symmetric or asymmetric, got {self.mode!r}")
        if self.cycles < 0:
            raise UsageError(f"cycles must be >= 0, got {self.cycles}")

    @property
    def asymmetric(self) -> bool:
        return self.mode == "asymmetric"


@dataclass(frozen=True, eq=False)
class ScaleTensor:
    """Per-plane, per-row, per-group scales; offset present in asymmetric mode.

    alpha has shape (planes, rows, groups) float32; offset, when not None,
    has shape (rows, groups) float32.
    """

    alpha: np.ndarray
    offset: np.ndarray | None
    group_size: int

    def __post_init__(self):
        if self.alpha.ndim != 3:
            raise UsageError(f"alpha must be 3-D, got shape {self.alpha.shape}")
        if not np.isfinite(self.alpha).all():
            raise NonFiniteError("scales contain NaN or Inf")
        if self.offset is not None:
            if self.offset.shape != self.alpha.shape[1:]:
                raise UsageError(
                    f"offset shape {self.offset.shape} != {self.alpha.shape[1:]}"
                )
            if not np.isfinite(self.offset).all():
                raise NonFiniteError("offsets contain NaN or Inf")

    @property
    def planes(self) -> int:
        return self.alpha.shape[0]

    @property
    def rows(self) -> int:
        return self.alpha.shape[1]

    @property
    def groups(self) -> int:
        return self.alpha.shape[2]

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScaleTensor):
            return NotImplemented
        if self.group_size != other.group_size:
            return False
        if not np.array_equal(self.alpha, other.alpha):
            return False
        if (self.offset is None) != (other.offset is None):
            return False
        return self.offset is None or np.array_equal(self.offset, other.offset)


@dataclass(frozen=True, eq=False)
class QuantizedMatrix:
    bitplanes: BitPlaneSet
    scales: ScaleTensor
    config: QuantConfig

    def __post_init__(self):
        if self.bitplanes.planes != self.scales.planes:
            raise UsageError(
                f"{self.bitplanes.planes} planes but {self.scales.planes} scale planes"
            )
        if self.scales.rows != self.bitplanes.rows:
            raise UsageError("scale rows do not match plane rows")
        if self.scales.groups != group_count(self.bitplanes.cols, self.scales.group_size):
            raise UsageError("scale groups do not match cols/group_size")

    @property
    def planes(self) -> int:
        return self.bitplanes.planes

    @property
    def shape(self) -> tuple[int, int]:
        return self.bitplanes.rows, self.bitplanes.cols


def group_count(cols: int, group_size: int) -> int:
    return (cols + group_size - 1) // group_size


def group_bounds(cols: int, group_size: int) -> list[tuple[int, int]]:
    """Column ranges of each group; the final group may be ragged."""
    return [(lo, min(lo + group_size, cols)) for lo in range(0, cols, group_size)]


# ---------------------------------------------------------------------------
# float64 fitting internals (codes as int8 arrays, scales as float64)
# ---------------------------------------------------------------------------

def _dequant64(
    codes: np.ndarray,
    alpha: np.ndarray,
    offset: np.ndarray | None,
    group_size: int,
) -> np.ndarray:
    q, rows, cols = codes.shape
    recon = np.zeros((rows, cols), dtype=np.float64)
    for gi, (lo, hi) in enumerate(group_bounds(cols, group_size)):
        block = np.einsum(
            "ink,in->nk", codes[:, :, lo:hi].astype(np.float64), alpha[:, :, gi]
        )
        if offset is not None:
            block += offset[:, gi][:, None]
        recon[:, lo:hi] = block
    return recon


def _sq_error(w64: np.ndarray, recon: np.ndarray) -> float:
    diff = w64 - recon
    return float(np.dot(diff.ravel(), diff.ravel()))


def _greedy64(w64, q, cfg):
    rows, cols = w64.shape
    groups = group_count(cols, cfg.group_size)
    codes = np.empty((q, rows, cols), dtype=np.int8)
    alpha = np.zeros((q, rows, groups), dtype=np.float64)
    offset = None
    residual = w64.copy()
    if cfg.asymmetric:
        offset = np.empty((rows, groups), dtype=np.float64)
        for gi, (lo, hi) in enumerate(group_bounds(cols, cfg.group_size)):
            offset[:, gi] = w64[:, lo:hi].mean(axis=1)
            residual[:, lo:hi] -= offset[:, gi][:, None]
    for i in range(q):
        for gi, (lo, hi) in enumerate(group_bounds(cols, cfg.group_size)):
            block = residual[:, lo:hi]
            signs = np.where(block >= 0, 1, -1).astype(np.int8)
            # <r, sign(r)> / ||sign(r)||^2 collapses to mean |r| over the group
            scale = np.abs(block).mean(axis=1)
            codes[i, :, lo:hi] = signs
            alpha[i, :, gi] = scale
            block -= scale[:, None] * signs
    return codes, alpha, offset


def _solve_psd_batch(gram: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve symmetric-PSD systems, ridging numerically rank-deficient items.

    Returns (solutions, ridged_mask). Uses an eigendecomposition so exact
    duplicates (zero eigenvalues) are handled without crashing.
    """
    dim = gram.shape[-1]
    trace = np.einsum("...ii->...", gram)
    evals, evecs = np.linalg.eigh(gram)
    cutoff = RANK_CUTOFF * trace / dim
    ridged = evals[..., 0] <= cutoff
    lam = np.where(ridged, RIDGE_SCALE * trace / dim, 0.0)
    denom = evals + lam[..., None]
    # an all-zero system (e.g. zero activations) has rhs = 0 in every
    # direction; pinning the denominator yields the zero solution
    denom = np.where(denom > 0, denom, 1.0)
    proj = np.einsum("...ji,...j->...i", evecs, rhs)
    sol = np.einsum("...ij,...j->...i", evecs, proj / denom)
    return sol, ridged


def _ls64(w64, codes, cfg):
    """Per-group least squares over scales (and offset) with planes fixed."""
    q, rows, cols = codes.shape
    groups = group_count(cols, cfg.group_size)
    alpha = np.empty((q, rows, groups), dtype=np.float64)
    offset = np.empty((rows, groups), dtype=np.float64) if cfg.asymmetric else None
    ridged_any = False
    for gi, (lo, hi) in enumerate(group_bounds(cols, cfg.group_size)):
        design = codes[:, :, lo:hi].astype(np.float64)
        if cfg.asymmetric:
            ones = np.ones((1, rows, hi - lo), dtype=np.float64)
            design = np.concatenate([design, ones], axis=0)
        gram = np.einsum("ink,jnk->nij", design, design)
        rhs = np.einsum("ink,nk->ni", design, w64[:, lo:hi])
        sol, ridged = _solve_psd_batch(gram, rhs)
        ridged_any = ridged_any or bool(ridged.any())
        alpha[:, :, gi] = sol[:, :q].T
        if cfg.asymmetric:
            offset[:, gi] = sol[:, q]
    return alpha, offset, ridged_any


def _nearest_level_positions(block, lv_sorted):
    """Index into sorted level arrays of the level nearest each weight.

    Exact midpoints resolve toward the larger level. A coarse position from
    midpoint counting is refined by comparing true distances to both
    neighbors, which keeps the choice identical to exhaustive search even
    when the midpoint itself rounds.
    """
    rows, n_levels = lv_sorted.shape
    mids = (lv_sorted[:, :-1] + lv_sorted[:, 1:]) * 0.5
    if n_levels <= 256:
        pos = (block[:, :, None] >= mids[:, None, :]).sum(axis=2)
    else:
        pos = np.empty(block.shape, dtype=np.int64)
        for n in range(rows):
            pos[n] = np.searchsorted(mids[n], block[n], side="right")
    lo = np.maximum(pos - 1, 0)
    hi = np.minimum(pos + 1, n_levels - 1)
    cand = np.stack([hi, pos, lo], axis=-1)  # descending level order
    flat = cand.reshape(rows, -1)
    vals = np.take_along_axis(lv_sorted, flat, axis=1).reshape(cand.shape)
    dist = np.abs(block[:, :, None] - vals)
    best = dist.argmin(axis=2)  # first minimum, so ties pick the larger level
    return np.take_along_axis(cand, best[:, :, None], axis=2)[:, :, 0]


def _bs_codes64(w64, alpha, offset, group_size, out_codes=None):
    """Recalibrate codes: nearest of the 2^q signed scale combinations.

    Levels are accumulated in ascending plane order so an independent
    enumeration summing the same floats lands on identical values.
    """
    q, rows, groups = alpha.shape
    if q > MAX_PLANES:
        raise UsageError(f"recalibration limited to {MAX_PLANES} planes, got {q}")
    cols = w64.shape[1]
    codes = out_codes if out_codes is not None else np.empty((q, rows, cols), np.int8)
    n_levels = 1 << q
    pattern_bits = (np.arange(n_levels)[:, None] >> np.arange(q)[None, :]) & 1
    pattern_signs = (pattern_bits * 2 - 1).astype(np.float64)
    for gi, (lo, hi) in enumerate(group_bounds(cols, group_size)):
        levels = np.zeros((rows, n_levels), dtype=np.float64)
        if offset is not None:
            levels += offset[:, gi][:, None]
        for i in range(q):
            levels += alpha[i, :, gi][:, None] * pattern_signs[None, :, i]
        order = np.argsort(levels, axis=1, kind="stable")
        lv_sorted = np.take_along_axis(levels, order, axis=1)
        sel = _nearest_level_positions(w64[:, lo:hi], lv_sorted)
        patterns = np.take_along_axis(order, sel, axis=1)
        for i in range(q):
            codes[i, :, lo:hi] = (((patterns >> i) & 1) * 2 - 1).astype(np.int8)
    return codes


def _freeze(codes, alpha, offset, cfg) -> QuantizedMatrix:
    scales = ScaleTensor(
        alpha=alpha.astype(np.float32),
        offset=None if offset is None else offset.astype(np.float32),
        group_size=cfg.group_size,
    )
    return QuantizedMatrix(BitPlaneSet.from_codes(codes), scales, cfg)


def _thaw(qm: QuantizedMatrix):
    codes = qm.bitplanes.codes()
    alpha = qm.scales.alpha.astype(np.float64)
    offset = None if qm.scales.offset is None else qm.scales.offset.astype(np.float64)
    return codes, alpha, offset


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def greedy_init(w: np.ndarray, q: int, cfg: QuantConfig) -> QuantizedMatrix:
    """Residual-sign initialization: plane i+1 signs the running residual,
    its scale is the group mean absolute residual."""
    w = validate_matrix(w, "weights")
    if not 1 <= q <= MAX_PLANES:
        raise UsageError(f"plane count must be in [1, {MAX_PLANES}], got {q}")
    codes, alpha, offset = _greedy64(w.astype(np.float64), q, cfg)
    return _freeze(codes, alpha, offset, cfg)


def ls_update_scales(w: np.ndarray, qm: QuantizedMatrix) -> ScaleTensor:
    """Refit all scales (and offset) by per-group ordinary least squares
    against the original weights, planes fixed. Degenerate groups fall back
    to a small ridge instead of failing."""
    w = validate_matrix(w, "weights")
    if w.shape != qm.shape:
        raise UsageError(f"weights {w.shape} do not match model {qm.shape}")
    codes = qm.bitplanes.codes()
    alpha, offset, _ = _ls64(w.astype(np.float64), codes, qm.config)
    return ScaleTensor(
        alpha=alpha.astype(np.float32),
        offset=None if offset is None else offset.astype(np.float32),
        group_size=qm.config.group_size,
    )


def bs_recalibrate_codes(w: np.ndarray, scales: ScaleTensor) -> BitPlaneSet:
    """Reassign every code to the nearest representable level given fixed
    scales; per weight this is the optimum over all 2^q sign patterns."""
    w = validate_matrix(w, "weights")
    if w.shape[0] != scales.rows:
        raise UsageError(f"weights rows {w.shape[0]} != scale rows {scales.rows}")
    if group_count(w.shape[1], scales.group_size) != scales.groups:
        raise UsageError("weights cols do not match scale groups")
    alpha = scales.alpha.astype(np.float64)
    offset = None if scales.offset is None else scales.offset.astype(np.float64)
    codes = _bs_codes64(w.astype(np.float64), alpha, offset, scales.group_size)
    return BitPlaneSet.from_codes(codes)


def alternate_fit(
    w: np.ndarray,
    q: int,
    cfg: QuantConfig,
    trace: list[float] | None = None,
) -> QuantizedMatrix:
    """Greedy initialization plus `cfg.cycles` alternating refinement cycles
    (scale least squares, then code recalibration).

    When `trace` is a list it receives the total squared reconstruction
    error after initialization and after every half-step; the sequence is
    non-increasing.
    """
    w = validate_matrix(w, "weights")
    if not 1 <= q <= MAX_PLANES:
        raise UsageError(f"plane count must be in [1, {MAX_PLANES}], got {q}")
    w64 = w.astype(np.float64)
    codes, alpha, offset = _greedy64(w64, q, cfg)
    if trace is not None:
        trace.append(_sq_error(w64, _dequant64(codes, alpha, offset, cfg.group_size)))
    for _ in range(cfg.cycles):
        alpha, offset, _ = _ls64(w64, codes, cfg)
        if trace is not None:
            trace.append(_sq_error(w64, _dequant64(codes, alpha, offset, cfg.group_size)))
        _bs_codes64(w64, alpha, offset, cfg.group_size, out_codes=codes)
        if trace is not None:
            trace.append(_sq_error(w64, _dequant64(codes, alpha, offset, cfg.group_size)))
    return _freeze(codes, alpha, offset, cfg)


def dequantize(qm: QuantizedMatrix, p: int) -> np.ndarray:
    """Dense float32 reconstruction from the first p planes and their scales."""
    if not 1 <= p <= qm.planes:
        raise UsageError(f"precision {p} out of range [1, {qm.planes}]")
    codes, alpha, offset = _thaw(qm)
    recon = _dequant64(codes[:p], alpha[:p], offset, qm.config.group_size)
    return recon.astype(np.float32)


def reconstruction_error(w: np.ndarray, qm: QuantizedMatrix, p: int | None = None) -> float:
    """Squared Frobenius reconstruction error at precision p (default: all planes)."""
    w = validate_matrix(w, "weights")
    if w.shape != qm.shape:
        raise UsageError(f"weights {w.shape} do not match model {qm.shape}")
    p = qm.planes if p is None else p
    if not 1 <= p <= qm.planes:
        raise UsageError(f"precision {p} out of range [1, {qm.planes}]")
    codes, alpha, offset = _thaw(qm)
    recon = _dequant64(codes[:p], alpha[:p], offset, qm.config.group_size)
    return _sq_error(w.astype(np.float64), recon)


def relative_reconstruction_error(w: np.ndarray, qm: QuantizedMatrix, p: int | None = None) -> float:
    """reconstruction_error normalized by the squared Frobenius norm of w."""
    w = validate_matrix(w, "weights")
    denom = float(np.dot(w.ravel().astype(np.float64), w.ravel().astype(np.float64)))
    if denom == 0.0:
        return 0.0
    return reconstruction_error(w, qm, p) / denom
