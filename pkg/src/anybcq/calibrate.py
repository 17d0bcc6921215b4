"""Activation-driven scale refinement.

With bit-planes fixed, the quantized output x @ w_hat(theta)^T is linear in
the scale set, so minimizing the output discrepancy against the
full-precision weights is a per-output-row least-squares problem. The
default solver computes that optimum in closed form; a gradient mode runs
plain full-batch descent on the per-sample mean of the same objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bcq import ScaleTensor, _dequant64, _solve_psd_batch, group_bounds
from .errors import UsageError
from .progressive import MultiPrecisionModel, precision_view
from .tensor_io import validate_matrix

GD_EPOCHS = 10
GD_LEARNING_RATE = 1e-4


@dataclass(frozen=True)
class RefineResult:
    scales: ScaleTensor
    loss_before: float
    loss_after: float
    solver: str
    ridge_fallback: bool


def calibration_loss(
    w: np.ndarray, model: MultiPrecisionModel, x: np.ndarray, p: int
) -> float:
    """|| x w^T - x w_hat^T ||_F^2 at precision p."""
    w = validate_matrix(w, "weights")
    x = validate_matrix(x, "activations")
    if x.shape[1] != w.shape[1]:
        raise UsageError(f"activations have {x.shape[1]} cols, weights {w.shape[1]}")
    view = precision_view(model, p)
    codes = view.bitplanes.codes()
    alpha = view.scales.alpha.astype(np.float64)
    offset = None if view.scales.offset is None else view.scales.offset.astype(np.float64)
    recon = _dequant64(codes, alpha, offset, view.config.group_size)
    diff = x.astype(np.float64) @ (w.astype(np.float64) - recon).T
    return float(np.dot(diff.ravel(), diff.ravel()))


def _features(codes: np.ndarray, x64: np.ndarray, group_size: int, asymmetric: bool):
    """Per-row design matrix F of shape (rows, samples, dims).

    Column layout: plane-major scale columns (plane i, group gi at
    i*groups + gi), then one offset column per group when asymmetric.
    """
    p, rows, cols = codes.shape
    samples = x64.shape[0]
    bounds = group_bounds(cols, group_size)
    groups = len(bounds)
    dims = p * groups + (groups if asymmetric else 0)
    feats = np.empty((rows, samples, dims), dtype=np.float64)
    for gi, (lo, hi) in enumerate(bounds):
        xg = x64[:, lo:hi]
        block = np.einsum("ink,sk->ins", codes[:, :, lo:hi].astype(np.float64), xg)
        for i in range(p):
            feats[:, :, i * groups + gi] = block[i]
        if asymmetric:
            feats[:, :, p * groups + gi] = xg.sum(axis=1)[None, :]
    return feats


def _theta_from_scales(scales: ScaleTensor) -> np.ndarray:
    p, rows, groups = scales.alpha.shape
    parts = [scales.alpha.astype(np.float64).transpose(1, 0, 2).reshape(rows, p * groups)]
    if scales.offset is not None:
        parts.append(scales.offset.astype(np.float64))
    return np.concatenate(parts, axis=1)


def _scales_from_theta(theta: np.ndarray, p: int, groups: int, group_size: int,
                       asymmetric: bool) -> ScaleTensor:
    rows = theta.shape[0]
    alpha = theta[:, : p * groups].reshape(rows, p, groups).transpose(1, 0, 2)
    offset = theta[:, p * groups:] if asymmetric else None
    return ScaleTensor(
        alpha=np.ascontiguousarray(alpha, dtype=np.float32),
        offset=None if offset is None else np.ascontiguousarray(offset, dtype=np.float32),
        group_size=group_size,
    )


def refine_scales(
    w: np.ndarray,
    model: MultiPrecisionModel,
    x: np.ndarray,
    p: int,
    solver: str = "exact",
    epochs: int = GD_EPOCHS,
    lr: float = GD_LEARNING_RATE,
) -> RefineResult:
    """Refit scale set p to minimize the calibration loss, planes fixed.

    solver="exact" solves each output row's least-squares problem in closed
    form (ridge fallback when the batch underdetermines it, reported via
    ridge_fallback). solver="gd" runs `epochs` full-batch gradient steps at
    rate `lr` on the per-sample mean loss and keeps the best iterate. In
    both modes the result never scores worse than the incumbent scales; the
    incumbent is kept if float32 rounding would regress it.
    """
    w = validate_matrix(w, "weights")
    x = validate_matrix(x, "activations")
    if w.shape != model.shape:
        raise UsageError(f"weights {w.shape} do not match model {model.shape}")
    if x.shape[1] != w.shape[1]:
        raise UsageError(f"activations have {x.shape[1]} cols, weights {w.shape[1]}")
    if p not in model.precisions:
        raise UsageError(f"precision {p} outside [{model.p_lo}, {model.p_hi}]")
    if solver not in ("exact", "gd"):
        raise UsageError(f"solver must be exact or gd, got {solver!r}")

    view = precision_view(model, p)
    cfg = view.config
    codes = view.bitplanes.codes()
    groups = view.scales.groups
    x64 = x.astype(np.float64)
    feats = _features(codes, x64, cfg.group_size, cfg.asymmetric)
    y_ref = w.astype(np.float64) @ x64.T  # (rows, samples)

    loss_before = calibration_loss(w, model, x, p)
    ridged = False
    if solver == "exact":
        gram = np.einsum("nsd,nse->nde", feats, feats)
        rhs = np.einsum("nsd,ns->nd", feats, y_ref)
        theta, ridged_mask = _solve_psd_batch(gram, rhs)
        ridged = bool(ridged_mask.any())
    else:
        theta = _theta_from_scales(view.scales)
        samples = x64.shape[0]
        resid = np.einsum("nsd,nd->ns", feats, theta) - y_ref
        best_loss = np.einsum("ns,ns->n", resid, resid)
        best_theta = theta.copy()
        for _ in range(epochs):
            grad = (2.0 / samples) * np.einsum("nsd,ns->nd", feats, resid)
            theta = theta - lr * grad
            resid = np.einsum("nsd,nd->ns", feats, theta) - y_ref
            loss_rows = np.einsum("ns,ns->n", resid, resid)
            better = loss_rows < best_loss
            best_loss = np.where(better, loss_rows, best_loss)
            best_theta[better] = theta[better]
        theta = best_theta

    refined = _scales_from_theta(theta, p, groups, cfg.group_size, cfg.asymmetric)
    loss_after = calibration_loss(w, apply_scales(model, p, refined), x, p)
    if loss_after >= loss_before:  # no strict improvement: keep the incumbent
        refined = view.scales
        loss_after = loss_before
    return RefineResult(refined, loss_before, loss_after, solver, ridged)


def apply_scales(model: MultiPrecisionModel, p: int, scales: ScaleTensor) -> MultiPrecisionModel:
    """New model with scale set p replaced; planes and other sets are shared."""
    if p not in model.precisions:
        raise UsageError(f"precision {p} outside [{model.p_lo}, {model.p_hi}]")
    scale_sets = dict(model.scale_sets)
    scale_sets[p] = scales
    return MultiPrecisionModel(model.bitplanes, scale_sets, model.p_lo, model.p_hi, model.config)
