import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskdepth import augment as A
from deskdepth import losses as L
from deskdepth import tensor as T


def test_all_probabilities_zero_gives_identity():
    cfg = A.AugConfig(p_flip=0, p_crop=0, p_affine=0, p_color=0, p_noise=0)
    assert A.sample_aug(np.random.default_rng(0), cfg, 64, 64) == A.AugParams()


def test_sampling_deterministic_under_seed():
    cfg = A.AugConfig()
    a = [A.sample_aug(np.random.default_rng(5), cfg, 64, 48) for _ in range(3)]
    assert a[0] == a[1] == a[2]


def test_thousand_samples_satisfy_invariants():
    rng = np.random.default_rng(1)
    cfg = A.AugConfig(p_flip=0.5, p_crop=0.7, p_affine=0.7, p_color=0.9, p_noise=0.5)
    for _ in range(1000):
        p = A.sample_aug(rng, cfg, 64, 48)  # construction validates det, gamma and noise bounds
        p.check_crop(64, 48)
        assert abs(np.linalg.det(np.asarray(p.affine)[:, :2])) > 0.1
        assert 0.5 <= p.gamma <= 2.0 and 0.0 <= p.noise_std <= 0.1
        if p.crop is not None:
            assert p.crop[2] >= 0.7 * 64 and p.crop[3] >= 0.7 * 48


def test_invalid_params_rejected():
    with pytest.raises(ValueError):
        A.AugParams(affine=((0.1, 0.0, 0.0), (0.0, 0.5, 0.0)))
    with pytest.raises(ValueError):
        A.AugParams(gamma=3.0)
    with pytest.raises(ValueError):
        A.AugParams(noise_std=0.2)
    with pytest.raises(ValueError):
        A.AugConfig(gamma_range=[0.2, 1.0])


def test_identity_geometric_is_noop():
    rng = np.random.default_rng(2)
    img, dep = rng.random((3, 8, 8)), rng.uniform(1, 9, (1, 8, 8))
    i2, d2, valid = A.apply_geometric(img, dep, A.AugParams())
    assert np.array_equal(i2, img) and np.array_equal(d2, dep) and valid.all()


def test_flip_twice_is_original():
    rng = np.random.default_rng(3)
    img, dep = rng.random((3, 6, 9)), rng.uniform(1, 9, (1, 6, 9))
    p = A.AugParams(flip_h=True)
    i1, d1, _ = A.apply_geometric(img, dep, p)
    np.testing.assert_array_equal(i1, img[:, :, ::-1])
    i2, d2, _ = A.apply_geometric(i1, d1, p)
    assert np.array_equal(i2, img) and np.array_equal(d2, dep)


def test_crop_of_linear_ramp_matches_closed_form():
    # depth(x, y) = 1 + x + 10 y on a 4x4 grid; crop (1, 1, 3, 3) resized back to 4x4
    ys, xs = np.mgrid[0:4, 0:4].astype(float)
    ramp = (1.0 + xs + 10.0 * ys)[None]
    img = np.repeat(ramp / 100.0, 3, axis=0)
    _, out, valid = A.apply_geometric(img, ramp, A.AugParams(crop=(1, 1, 3, 3)))
    # corner-aligned resize: output pixel i samples 1 + i * 2/3
    src = 1.0 + np.arange(4) * (2.0 / 3.0)
    expected = 1.0 + src[None, :] + 10.0 * src[:, None]
    np.testing.assert_allclose(out[0], expected, atol=1e-12)
    assert valid.all()


def test_geometric_pairing_with_coordinate_image():
    h, w = 12, 16
    ys, xs = np.mgrid[0:h, 0:w].astype(float)
    coords = np.stack([xs, ys, xs * ys])
    rng = np.random.default_rng(4)
    for _ in range(20):
        p = A.sample_aug(rng, A.AugConfig(p_crop=0.8, p_affine=0.8), w, h)
        i_out, d_out, _ = A.apply_geometric(coords, xs[None], p)
        # channel 0 of the image slot and the depth slot carry the same map
        assert np.array_equal(i_out[0:1], d_out)


def test_affine_out_of_frame_marked_invalid():
    p = A.AugParams(affine=((0.9, 0.0, 0.0), (0.0, 0.9, 0.0)))
    _, _, valid = A.apply_geometric(np.zeros((3, 16, 16)), np.ones((1, 16, 16)), p)
    assert not valid.all() and valid[0, 8, 8] == 1.0


def test_photometric_identity_and_brightness():
    img = np.random.default_rng(5).random((3, 5, 5))
    assert np.array_equal(A.apply_photometric(img, A.AugParams()), img)
    out = A.apply_photometric(np.full((3, 4, 4), 0.3), A.AugParams(brightness=2.0))
    np.testing.assert_allclose(out, 0.6, rtol=1e-15)


def test_photometric_output_clamped():
    img = np.random.default_rng(6).random((3, 8, 8))
    p = A.AugParams(brightness=1.2, jitter=(0.05, -0.05, 0.05), gamma=0.8, saturation=1.2, noise_std=0.05)
    out = A.apply_photometric(img, p, np.random.default_rng(0))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_noise_statistics():
    img = np.full((3, 60, 60), 0.5)  # 10800 pixels, far from the clamp
    out = A.apply_photometric(img, A.AugParams(noise_std=0.05), np.random.default_rng(7))
    noise = out - img
    assert abs(noise.mean()) < 0.05 * 0.05
    assert abs(noise.std() - 0.05) < 0.05 * 0.05


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_augmented_depth_is_gradient_stopped(seed):
    rng = np.random.default_rng(seed)
    first = T.Tensor(rng.uniform(1, 5, (1, 1, 8, 8)), requires_grad=True)
    second = T.Tensor(rng.uniform(1, 5, (1, 1, 8, 8)), requires_grad=True)
    p = A.sample_aug(rng, A.AugConfig(), 8, 8)
    _, d_true, valid = A.apply_geometric(rng.random((3, 8, 8)), first.data[0], p)
    T.backward(L.augmentation_loss(d_true[None], second, valid[None]))
    assert first.grad is None
    assert second.grad is not None
