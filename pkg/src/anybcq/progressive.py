"""Progressive precision expansion.

A multi-precision model shares one stack of bit-planes across all servable
precisions and keeps an independent scale set per precision. The base
precision is fitted with the alternating scheme from `bcq`; each higher
precision freezes the existing planes, derives one new plane from the
residual, and refits only its own scale set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bcq import (
    MAX_PLANES,
    QuantConfig,
    QuantizedMatrix,
    ScaleTensor,
    _dequant64,
    _greedy64,
    _ls64,
    _bs_codes64,
    group_count,
)
from .errors import UsageError
from .packing import BitPlaneSet
from .tensor_io import validate_matrix


@dataclass(frozen=True, eq=False)
class MultiPrecisionModel:
    """Shared bit-planes plus one scale set per precision in [p_lo, p_hi]."""

    bitplanes: BitPlaneSet
    scale_sets: dict[int, ScaleTensor]
    p_lo: int
    p_hi: int
    config: QuantConfig

    def __post_init__(self):
        if not 1 <= self.p_lo <= self.p_hi <= MAX_PLANES:
            raise UsageError(f"invalid precision range [{self.p_lo}, {self.p_hi}]")
        if self.bitplanes.planes != self.p_hi:
            raise UsageError(
                f"{self.bitplanes.planes} planes stored but p_hi={self.p_hi}"
            )
        expected = set(range(self.p_lo, self.p_hi + 1))
        if set(self.scale_sets) != expected:
            raise UsageError(f"scale sets {sorted(self.scale_sets)} != {sorted(expected)}")
        for p, scales in self.scale_sets.items():
            if scales.planes != p:
                raise UsageError(f"scale set {p} holds {scales.planes} plane scales")
            if scales.rows != self.bitplanes.rows:
                raise UsageError(f"scale set {p} row count mismatch")
            if scales.groups != group_count(self.bitplanes.cols, self.config.group_size):
                raise UsageError(f"scale set {p} group count mismatch")
            if scales.group_size != self.config.group_size:
                raise UsageError(f"scale set {p} group size mismatch")
            if (scales.offset is not None) != self.config.asymmetric:
                raise UsageError(f"scale set {p} offset does not match mode")

    @property
    def shape(self) -> tuple[int, int]:
        return self.bitplanes.rows, self.bitplanes.cols

    @property
    def precisions(self) -> range:
        return range(self.p_lo, self.p_hi + 1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MultiPrecisionModel):
            return NotImplemented
        return (
            (self.p_lo, self.p_hi, self.config) == (other.p_lo, other.p_hi, other.config)
            and self.bitplanes == other.bitplanes
            and self.scale_sets == other.scale_sets
        )


def precision_view(model: MultiPrecisionModel, p: int) -> QuantizedMatrix:
    """Zero-copy pairing of the first p planes with scale set p."""
    if p not in model.precisions:
        raise UsageError(f"precision {p} outside [{model.p_lo}, {model.p_hi}]")
    return QuantizedMatrix(model.bitplanes.prefix(p), model.scale_sets[p], model.config)


def _alternate64(w64, q, cfg):
    codes, alpha, offset = _greedy64(w64, q, cfg)
    for _ in range(cfg.cycles):
        alpha, offset, _ = _ls64(w64, codes, cfg)
        _bs_codes64(w64, alpha, offset, cfg.group_size, out_codes=codes)
    return codes, alpha, offset


def _scale_tensor(alpha, offset, cfg) -> ScaleTensor:
    return ScaleTensor(
        alpha=alpha.astype(np.float32),
        offset=None if offset is None else offset.astype(np.float32),
        group_size=cfg.group_size,
    )


def expand_step(w: np.ndarray, model: MultiPrecisionModel, p: int) -> MultiPrecisionModel:
    """Add precision p = model.p_hi + 1.

    Runs `cycles` rounds of: take the residual of the frozen planes under
    the current scale set, sign it into plane p, then least-squares refit
    all p scales of the new set. Existing planes and scale sets are reused
    unchanged; the returned model's planes below p are byte-identical to
    the input's (asserted).
    """
    w = validate_matrix(w, "weights")
    if w.shape != model.shape:
        raise UsageError(f"weights {w.shape} do not match model {model.shape}")
    if p != model.p_hi + 1:
        raise UsageError(f"next precision is {model.p_hi + 1}, got {p}")
    if p > MAX_PLANES:
        raise UsageError(f"precision {p} exceeds the {MAX_PLANES}-plane limit")
    cfg = model.config
    w64 = w.astype(np.float64)
    prev = model.scale_sets[model.p_hi]
    frozen = model.bitplanes.codes()
    alpha = np.concatenate(
        [prev.alpha.astype(np.float64), np.zeros((1,) + prev.alpha.shape[1:])], axis=0
    )
    offset = None if prev.offset is None else prev.offset.astype(np.float64)
    plane = np.ones(w.shape, dtype=np.int8)  # sign(0) convention; refined below
    for _ in range(cfg.cycles):
        residual = w64 - _dequant64(frozen, alpha[: p - 1], offset, cfg.group_size)
        plane = np.where(residual >= 0, 1, -1).astype(np.int8)
        stacked = np.concatenate([frozen, plane[None]], axis=0)
        alpha, offset, _ = _ls64(w64, stacked, cfg)

    words = np.concatenate(
        [model.bitplanes.words, BitPlaneSet.from_codes(plane[None]).words], axis=0
    )
    planes = BitPlaneSet(p, model.bitplanes.rows, model.bitplanes.cols, words)
    assert planes.words[: p - 1].tobytes() == model.bitplanes.words.tobytes(), (
        "frozen planes were modified during expansion"
    )
    scale_sets = dict(model.scale_sets)
    scale_sets[p] = _scale_tensor(alpha, offset, cfg)
    return MultiPrecisionModel(planes, scale_sets, model.p_lo, p, cfg)


def build_multiprecision(
    w: np.ndarray, p_lo: int, p_hi: int, cfg: QuantConfig
) -> MultiPrecisionModel:
    """Fit the base precision, then expand one bit at a time up to p_hi."""
    w = validate_matrix(w, "weights")
    if not 1 <= p_lo <= p_hi <= MAX_PLANES:
        raise UsageError(f"invalid precision range [{p_lo}, {p_hi}]")
    codes, alpha, offset = _alternate64(w.astype(np.float64), p_lo, cfg)
    model = MultiPrecisionModel(
        bitplanes=BitPlaneSet.from_codes(codes),
        scale_sets={p_lo: _scale_tensor(alpha, offset, cfg)},
        p_lo=p_lo,
        p_hi=p_lo,
        config=cfg,
    )
    for p in range(p_lo + 1, p_hi + 1):
        model = expand_step(w, model, p)
    return model


def precision_errors(w: np.ndarray, model: MultiPrecisionModel) -> dict[int, float]:
    """Relative squared reconstruction error at every servable precision."""
    from .bcq import relative_reconstruction_error

    return {
        p: relative_reconstruction_error(w, precision_view(model, p))
        for p in model.precisions
    }
