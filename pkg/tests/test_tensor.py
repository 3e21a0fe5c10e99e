import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deskdepth import gradcheck as G
from deskdepth import tensor as T
from deskdepth.tensor import Tensor


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_add_broadcast_scalar_and_channel():
    x = leaf(np.ones((2, 3, 4, 4)))
    c = leaf(np.arange(3.0).reshape(1, 3, 1, 1))
    out = x + c + 2.0
    T.backward(T.sum(out))
    assert out.shape == (2, 3, 4, 4)
    np.testing.assert_array_equal(c.grad, np.full((1, 3, 1, 1), 32.0))


def test_rank_promotion_rejected():
    with pytest.raises(T.ShapeError):
        T.add(np.ones((2, 3)), np.ones(3))
    with pytest.raises(T.ShapeError):
        T.mul(np.ones((2, 3)), np.ones((2, 4)))


def test_backward_requires_scalar():
    x = leaf(np.ones((2, 2)))
    with pytest.raises(T.ShapeError):
        T.backward(x * 2.0)


def test_gradients_accumulate_until_zeroed():
    x = leaf([1.0, 2.0])
    T.backward(T.sum(x * 3.0))
    T.backward(T.sum(x * 3.0))
    np.testing.assert_array_equal(x.grad, [6.0, 6.0])
    x.zero_grad()
    assert x.grad is None


def test_shared_subexpression_gradient():
    x = leaf([2.0])
    y = x * x
    T.backward(T.sum(y + y))
    np.testing.assert_array_equal(x.grad, [8.0])


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with T.no_grad():
        y = x * 2.0
    assert not y.requires_grad and y.is_leaf


def test_debug_mode_division_by_zero():
    with T.debug_mode():
        with pytest.raises(T.NonFiniteError):
            T.div(np.ones(2), np.array([1.0, 0.0]))
    # outside debug mode the IEEE result is returned
    with np.errstate(divide="ignore"):
        assert np.isinf(T.div(np.ones(1), np.zeros(1)).data[0])


def test_min2_tie_goes_to_first_operand():
    a, b = leaf([1.0, 2.0]), leaf([1.0, 3.0])
    T.backward(T.sum(T.min2(a, b)))
    np.testing.assert_array_equal(a.grad, [1.0, 1.0])
    np.testing.assert_array_equal(b.grad, [0.0, 0.0])
    # one-sided differences agree with the convention: moving a down moves the min
    eps = 1e-6
    f = lambda av: np.minimum(av, 1.0)  # noqa: E731
    assert (f(1.0) - f(1.0 - eps)) / eps == pytest.approx(1.0)


def test_reduce_empty_axes_rejected():
    with pytest.raises(T.ShapeError):
        T.mean(np.zeros((0, 3)), axes=0)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((1, 2, 5, 5))
    k = rng.standard_normal((3, 2, 3, 3))
    out = T.conv2d(x, k, pad=1, stride=2).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 3, 3))
    for o in range(3):
        for i in range(3):
            for j in range(3):
                ref[0, o, i, j] = np.sum(xp[0, :, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * k[o])
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_resize_same_size_is_copy_and_nearest_upsample():
    x = np.arange(16.0).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(T.resize(x, 4, 4).data, x)
    up = T.upsample_nearest2x(x).data
    np.testing.assert_array_equal(up[0, 0, ::2, ::2], x[0, 0])
    np.testing.assert_array_equal(up[0, 0, 1::2, 1::2], x[0, 0])


def test_grid_sample_integer_coords_exact():
    rng = np.random.default_rng(1)
    src = rng.random((2, 3, 5, 6))
    grid = T.identity_grid(2, 5, 6)
    np.testing.assert_array_equal(T.grid_sample_bilinear(src, grid).data, src)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(2, 6), st.integers(2, 6), st.floats(-2, 2))
def test_sum_linearity(n, h, w, s):
    x = np.random.default_rng(n * 100 + h * 10 + w).standard_normal((n, 1, h, w))
    a = T.sum(Tensor(x) * s).item()
    assert a == pytest.approx(s * x.sum(), rel=1e-12, abs=1e-12)


def test_gradient_suite_passes_and_is_fast():
    reports = G.run_suite()
    assert len(reports) >= 30
    failed = [(r.name, r.max_rel_err) for r in reports if not r.passed]
    assert not failed
    assert sum(r.seconds for r in reports) < 120.0


def test_gradcheck_catches_sign_bug():
    """A test double with a flipped backward must be reported as failing."""

    def bad_square(x):
        x = T._as_tensor(x)
        return T._make(x.data**2, (x,), lambda g: (-2.0 * x.data * g,), "bad_square")

    case = G.GradCase("bad_square", lambda rng: (bad_square, [rng.standard_normal((2, 3))]), 1e-5)
    (report,) = G.run_suite(cases=[case])
    assert not report.passed


def test_filter_selects_cases():
    names = [r.name for r in G.run_suite("conv2d")]
    assert names and all("conv2d" in n for n in names)
