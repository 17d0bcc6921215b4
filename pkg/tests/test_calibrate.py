import numpy as np
import pytest

from anybcq import (
    QuantConfig,
    UsageError,
    apply_scales,
    build_multiprecision,
    calibration_loss,
    ls_update_scales,
    precision_view,
    random_gaussian,
    refine_scales,
)


def make_setup(rows=16, cols=64, samples=96, seed=0, mode="symmetric", p_hi=3):
    w = random_gaussian(rows, cols, seed=seed)
    x = random_gaussian(samples, cols, seed=seed + 1000)
    cfg = QuantConfig(group_size=32, mode=mode, cycles=2)
    model = build_multiprecision(w, 2, p_hi, cfg)
    return w, x, model


def test_loss_zero_for_exact_model():
    rng = np.random.default_rng(1)
    s1 = np.where(rng.random((4, 32)) < 0.5, -1.0, 1.0)
    s2 = np.where(rng.random((4, 32)) < 0.5, -1.0, 1.0)
    w = (2.0 * s1 + s2).astype(np.float32)
    model = build_multiprecision(w, 2, 2, QuantConfig(group_size=32, cycles=2))
    x = random_gaussian(8, 32, seed=5)
    assert calibration_loss(w, model, x, 2) < 1e-18


def test_loss_zero_for_zero_batch():
    w, _, model = make_setup()
    x = np.zeros((4, 64), dtype=np.float32)
    assert calibration_loss(w, model, x, 2) == 0.0


def test_exact_refine_never_increases_loss():
    for seed in range(5):
        w, x, model = make_setup(seed=seed, mode="asymmetric" if seed % 2 else "symmetric")
        res = refine_scales(w, model, x, 2, solver="exact")
        assert res.loss_after <= res.loss_before
        refreshed = apply_scales(model, 2, res.scales)
        assert calibration_loss(w, refreshed, x, 2) == pytest.approx(res.loss_after, rel=1e-9)


def test_one_hot_activations_reduce_to_weight_ls():
    # identity-like batch: output error becomes weight reconstruction error
    w, _, model = make_setup(rows=8, cols=32, seed=3)
    x = np.eye(32, dtype=np.float32)
    res = refine_scales(w, model, x, 2, solver="exact")
    via_weights = ls_update_scales(w, precision_view(model, 2))
    assert np.allclose(res.scales.alpha, via_weights.alpha, atol=1e-5)


def test_exact_model_is_fixed_point():
    rng = np.random.default_rng(7)
    s1 = np.where(rng.random((6, 32)) < 0.5, -1.0, 1.0)
    s2 = np.where(rng.random((6, 32)) < 0.5, -1.0, 1.0)
    w = (2.0 * s1 + s2).astype(np.float32)
    model = build_multiprecision(w, 2, 2, QuantConfig(group_size=16, cycles=2))
    x = random_gaussian(64, 32, seed=9)
    res = refine_scales(w, model, x, 2, solver="exact")
    assert res.loss_after < 1e-15
    assert np.allclose(res.scales.alpha, model.scale_sets[2].alpha, atol=1e-5)


def test_solver_ordering_exact_beats_gd():
    w, x, model = make_setup(rows=64, cols=128, samples=256, seed=11)
    initial = calibration_loss(w, model, x, 2)
    exact = refine_scales(w, model, x, 2, solver="exact")
    gd = refine_scales(w, model, x, 2, solver="gd")
    assert exact.loss_after <= gd.loss_after + 1e-9
    assert gd.loss_after <= initial
    assert exact.solver == "exact" and gd.solver == "gd"


def test_gd_defaults_match_documented_schedule():
    from anybcq.calibrate import GD_EPOCHS, GD_LEARNING_RATE

    assert GD_EPOCHS == 10
    assert GD_LEARNING_RATE == 1e-4


def test_planes_untouched_by_refine():
    w, x, model = make_setup(seed=4)
    before = model.bitplanes.tobytes()
    res = refine_scales(w, model, x, 3, solver="exact")
    model2 = apply_scales(model, 3, res.scales)
    assert model.bitplanes.tobytes() == before
    assert model2.bitplanes.tobytes() == before


def test_precision_isolation():
    w, x, model = make_setup(seed=6, p_hi=4)
    losses = {p: calibration_loss(w, model, x, p) for p in (2, 3, 4)}
    res = refine_scales(w, model, x, 3, solver="exact")
    model2 = apply_scales(model, 3, res.scales)
    assert calibration_loss(w, model2, x, 2) == losses[2]
    assert calibration_loss(w, model2, x, 4) == losses[4]
    assert calibration_loss(w, model2, x, 3) <= losses[3]


def test_underdetermined_batch_flags_ridge():
    w, _, model = make_setup(rows=8, cols=64, seed=8)
    x = random_gaussian(2, 64, seed=12)  # far fewer samples than scale dims
    res = refine_scales(w, model, x, 2, solver="exact")
    assert res.ridge_fallback
    assert res.loss_after <= res.loss_before


def test_global_minimum_perturbation_check():
    w, x, model = make_setup(rows=8, cols=32, samples=64, seed=10)
    res = refine_scales(w, model, x, 2, solver="exact")
    refined = apply_scales(model, 2, res.scales)
    base = calibration_loss(w, refined, x, 2)
    alpha = res.scales.alpha
    for idx in np.ndindex(*alpha.shape):
        for eps in (1e-4, -1e-4):
            bumped = alpha.copy()
            bumped[idx] += eps
            from anybcq import ScaleTensor

            cand = apply_scales(refined, 2, ScaleTensor(bumped, res.scales.offset, 32))
            assert calibration_loss(w, cand, x, 2) >= base - 1e-8


def test_shape_validation():
    w, x, model = make_setup()
    with pytest.raises(UsageError):
        refine_scales(w, model, x[:, :32], 2)
    with pytest.raises(UsageError):
        refine_scales(w, model, x, 9)
    with pytest.raises(UsageError):
        refine_scales(w, model, x, 2, solver="sgd")


def test_zero_batch_refine_keeps_incumbent():
    w, _, model = make_setup(seed=13)
    x = np.zeros((4, 64), dtype=np.float32)
    res = refine_scales(w, model, x, 2, solver="exact")
    assert res.loss_before == res.loss_after == 0.0
    assert np.array_equal(res.scales.alpha, model.scale_sets[2].alpha)
