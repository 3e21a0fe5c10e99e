import numpy as np
import pytest

from deskdepth import losses as L
from deskdepth import tensor as T
from deskdepth.tensor import Tensor


def ssim_constant_closed_form(a, b):
    c1, c2 = 0.01**2, 0.03**2
    return ((2 * a * b + c1) * c2) / ((a * a + b * b + c1) * c2)


def test_pe_of_identical_images_is_zero():
    x = np.random.default_rng(0).random((2, 3, 9, 7))
    np.testing.assert_array_equal(L.pe(x, x).data, 0.0)


def test_ssim_constant_images():
    a = np.full((1, 3, 6, 6), 0.2)
    b = np.full((1, 3, 6, 6), 0.8)
    s = L.ssim(a, b).data
    expected = ssim_constant_closed_form(0.2, 0.8)
    assert expected == pytest.approx(0.4707, abs=1e-4)
    np.testing.assert_allclose(s, expected, rtol=1e-12)
    pe = L.pe(a, b).data
    np.testing.assert_allclose(pe, 0.85 / 2 * (1 - expected) + 0.15 * 0.6, rtol=1e-12)


def test_pe_alpha_zero_is_l1():
    rng = np.random.default_rng(1)
    a, b = rng.random((1, 3, 5, 5)), rng.random((1, 3, 5, 5))
    np.testing.assert_allclose(L.pe(a, b, alpha=0.0).data, np.abs(a - b).mean(axis=1, keepdims=True))


def test_min_reprojection_takes_elementwise_min():
    a = Tensor(np.array([[[[0.1, 0.5]]]]))
    b = Tensor(np.array([[[[0.3, 0.2]]]]))
    np.testing.assert_array_equal(L.min_reprojection([a, b]).data, [[[[0.1, 0.2]]]])


def test_static_triplet_masks_everything():
    rng = np.random.default_rng(2)
    img = rng.random((1, 3, 8, 8))
    pe_w = [L.pe(img, img), L.pe(img, img)]
    pe_s = [L.pe(img, img), L.pe(img, img)]
    mask = L.automask(pe_w, pe_s)
    np.testing.assert_array_equal(mask.data, 0.0)


def test_mask_surrogate_zero_exactly_where_mask_is_one():
    rng = np.random.default_rng(3)
    warped = Tensor(rng.random((2, 1, 6, 6)), requires_grad=True)
    static = rng.random((2, 1, 6, 6))
    mask = L.automask([warped], [static])
    surrogate, metric = L.mask_regularization(mask, warped, static)
    hinge = np.maximum(warped.data - static, 0.0)
    assert np.all(hinge[mask.data == 1] == 0.0)
    assert np.all(hinge[mask.data == 0] >= 0.0)
    assert metric == pytest.approx(float(np.mean(1 - mask.data)))
    T.backward(surrogate)
    assert np.all(warped.grad[mask.data == 1] == 0.0)


def test_smoothness_scale_invariant():
    rng = np.random.default_rng(4)
    disp = rng.uniform(0.1, 0.9, (2, 1, 10, 12))
    img = rng.random((2, 3, 10, 12))
    base = L.smoothness(disp, img).item()
    for k in (1e-3, 0.37, 5.0, 1e3):
        assert abs(L.smoothness(disp * k, img).item() - base) < 1e-12


def test_smoothness_zero_on_constant_disparity():
    img = np.random.default_rng(5).random((1, 3, 6, 6))
    assert L.smoothness(np.full((1, 1, 6, 6), 0.3), img).item() == 0.0


def test_augmentation_loss_examples():
    d = np.random.default_rng(6).uniform(1, 5, (1, 1, 4, 4))
    valid = np.ones_like(d)
    assert L.augmentation_loss(d, Tensor(d), valid).item() == 0.0
    assert L.augmentation_loss(d, Tensor(d + 0.5), valid).item() == pytest.approx(0.5, abs=1e-15)
    out = Tensor(d + np.where(np.arange(16).reshape(1, 1, 4, 4) % 2, 0.5, -0.5), requires_grad=True)
    valid[0, 0, 0, :2] = 0.0
    T.backward(L.augmentation_loss(d, out, valid))
    expected = np.sign(out.data - d) / valid.sum() * valid
    np.testing.assert_allclose(out.grad, expected, rtol=1e-15)
    with pytest.raises(ValueError):
        L.augmentation_loss(d, Tensor(d), np.zeros_like(d))


def test_total_loss_components_recombine():
    rng = np.random.default_rng(7)
    photo = [Tensor(rng.random((2, 1, 4, 4))) for _ in range(4)]
    smooth = [Tensor(rng.random(())) for _ in range(4)]
    mask = (rng.random((2, 1, 4, 4)) > 0.3).astype(float)
    w = L.LossWeights()
    total, bd = L.total_loss(photo, smooth, mask, w, aug_term=Tensor(0.4), reg_term=Tensor(0.02))
    assert abs(sum(bd.weighted.values()) - total.item()) < 1e-12
    assert bd.weighted["photometric"] == pytest.approx(np.mean([np.mean(mask * p.data) for p in photo]))


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        L.LossWeights(alpha_s=-1.0)


def test_loss_gradient_cases():
    from deskdepth import gradcheck as G

    reports = [r for name in ("ssim", "pe", "smoothness") for r in G.run_suite(name)]
    assert reports and all(r.passed for r in reports)
