"""Central finite-difference verification of analytic gradients.

The suite in :data:`SUITE` is what ``deskdepth gradcheck`` runs; each entry
builds a scalar readout from freshly seeded random inputs and compares the
backward pass against central differences.
"""

from __future__ import annotations

import fnmatch
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T

EPS = 1e-6


@dataclass
class GradReport:
    name: str
    max_rel_err: float
    tolerance: float
    seconds: float = 0.0  # CPU time of this check
    per_input: list[float] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_err)) and self.max_rel_err < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor).

    The floor is 1e-3 of the largest numeric gradient magnitude (and never
    below 1e-10), so entries that are essentially zero are judged on an
    absolute scale instead of amplifying finite-difference noise.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), float(np.max(np.abs(analytic), initial=0.0)))
    floor = max(1e-3 * scale, 1e-10)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom, initial=0.0))


def numeric_grad(fn: Callable[[], float], arr: np.ndarray, eps: float = EPS, indices=None) -> np.ndarray:
    """Central differences of ``fn`` w.r.t. ``arr`` (mutated in place and restored)."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        fp = fn()
        flat[i] = orig - eps
        fm = fn()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def gradcheck(
    fn: Callable[..., T.Tensor],
    inputs: Sequence[np.ndarray],
    tolerance: float = 1e-5,
    eps: float = EPS,
    name: str = "op",
    readout_seed: int = 1234,
    max_entries: int | None = None,
) -> GradReport:
    """Compare backward() of ``sum(fn(*inputs) * R)`` with central differences.

    ``R`` is a fixed random readout so every output element contributes with a
    distinct weight.  ``max_entries`` limits the number of perturbed entries per
    input (chosen at random) for large inputs.
    """
    start = time.process_time()
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [T.Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    readout = np.random.default_rng(readout_seed).standard_normal(out.shape)
    loss = T.sum(T.mul(out, readout))
    T.backward(loss)

    def scalar() -> float:
        with T.no_grad():
            val = fn(*[T.Tensor(a) for a in arrays])
        return float(np.sum(val.data * readout))

    pick = np.random.default_rng(readout_seed + 1)
    errs = []
    for arr, leaf in zip(arrays, leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arr)
        # share memory so numeric_grad's perturbations are seen by scalar()
        indices = None
        if max_entries is not None and arr.size > max_entries:
            indices = pick.choice(arr.size, size=max_entries, replace=False)
        numeric = numeric_grad(scalar, arr, eps, indices)
        if indices is not None:
            analytic = analytic.reshape(-1)[indices]
            numeric = numeric.reshape(-1)[indices]
        errs.append(relative_error(analytic, numeric))
    return GradReport(name, max(errs) if errs else 0.0, tolerance, time.process_time() - start, errs)


# ---------------------------------------------------------------------------
# registered suite


@dataclass
class GradCase:
    name: str
    build: Callable[[np.random.Generator], tuple[Callable[..., T.Tensor], list[np.ndarray]]]
    tolerance: float
    max_entries: int | None = None


SUITE: list[GradCase] = []


def register(name: str, tolerance: float, max_entries: int | None = None):
    def deco(build):
        SUITE.append(GradCase(name, build, tolerance, max_entries))
        return build

    return deco


def run_suite(pattern: str | None = None, seed: int = 0, cases: Sequence[GradCase] | None = None) -> list[GradReport]:
    # importing these modules registers their composite cases
    from . import attention, geometry, losses  # noqa: F401

    reports = []
    for i, case in enumerate(cases if cases is not None else SUITE):
        if pattern and not fnmatch.fnmatch(case.name, f"*{pattern}*"):
            continue
        rng = np.random.default_rng([seed, i])
        fn, inputs = case.build(rng)
        reports.append(gradcheck(fn, inputs, case.tolerance, name=case.name, max_entries=case.max_entries))
    return reports


def format_table(reports: Sequence[GradReport]) -> str:
    width = max([len(r.name) for r in reports] + [4])
    lines = [f"{'op':<{width}}  {'max rel err':>12}  {'tol':>8}  {'cpu s':>7}  status"]
    for r in reports:
        status = "ok" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  {r.max_rel_err:12.3e}  {r.tolerance:8.0e}  {r.seconds:7.3f}  {status}")
    return "\n".join(lines)


def _positive(rng, shape, lo=0.5, hi=2.0):
    return rng.uniform(lo, hi, size=shape)


@register("add", 1e-5)
def _case_add(rng):
    return T.add, [rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((1, 3, 1, 1))]


@register("sub", 1e-5)
def _case_sub(rng):
    return T.sub, [rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 1, 4, 4))]


@register("mul", 1e-5)
def _case_mul(rng):
    return T.mul, [rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 1, 4, 4))]


@register("div", 1e-5)
def _case_div(rng):
    return T.div, [rng.standard_normal((2, 3, 4, 4)), _positive(rng, (2, 3, 4, 4))]


@register("abs", 1e-5)
def _case_abs(rng):
    return T.absolute, [rng.standard_normal((2, 3, 4, 4))]


@register("exp", 1e-5)
def _case_exp(rng):
    return T.exp, [rng.standard_normal((2, 3, 4, 4))]


@register("log", 1e-5)
def _case_log(rng):
    return T.log, [_positive(rng, (2, 3, 4, 4))]


@register("sqrt", 1e-5)
def _case_sqrt(rng):
    return T.sqrt, [_positive(rng, (2, 3, 4, 4))]


@register("min2", 1e-5)
def _case_min2(rng):
    return T.min2, [rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 3, 4, 4))]


@register("elu", 1e-5)
def _case_elu(rng):
    return T.elu, [rng.standard_normal((2, 3, 5, 5))]


@register("sigmoid", 1e-5)
def _case_sigmoid(rng):
    return T.sigmoid, [rng.standard_normal((2, 3, 5, 5)) * 3]


@register("relu", 1e-5)
def _case_relu(rng):
    return T.relu, [rng.standard_normal((2, 3, 5, 5))]


@register("reduce_mean", 1e-5)
def _case_mean(rng):
    return (lambda x: T.mean(x, axes=(2, 3), keepdims=True)), [rng.standard_normal((2, 3, 4, 5))]


@register("reduce_sum", 1e-5)
def _case_sum(rng):
    return (lambda x: T.sum(x, axes=1)), [rng.standard_normal((2, 3, 4, 5))]


@register("concat_channels", 1e-5)
def _case_concat(rng):
    return T.concat_channels, [rng.standard_normal((2, 3, 4, 4)), rng.standard_normal((2, 2, 4, 4))]


@register("slice", 1e-5)
def _case_slice(rng):
    return (lambda x: x[:, 1:3, ::2]), [rng.standard_normal((2, 4, 4, 4))]


@register("matmul", 1e-5)
def _case_matmul(rng):
    return T.matmul, [rng.standard_normal((3, 5)), rng.standard_normal((5, 4))]


@register("conv2d", 1e-5)
def _case_conv(rng):
    fn = lambda x, k, b: T.conv2d(x, k, b, stride=1, pad=1)  # noqa: E731
    return fn, [rng.standard_normal((2, 3, 5, 5)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)]


@register("conv2d_stride2", 1e-5)
def _case_conv_s2(rng):
    fn = lambda x, k, b: T.conv2d(x, k, b, stride=2, pad=1)  # noqa: E731
    return fn, [rng.standard_normal((2, 3, 8, 8)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)]


@register("conv2d_1x1", 1e-5)
def _case_conv_1x1(rng):
    fn = lambda x, k: T.conv2d(x, k)  # noqa: E731
    return fn, [rng.standard_normal((2, 3, 5, 5)), rng.standard_normal((2, 3, 1, 1))]


@register("pad_reflect", 1e-5)
def _case_pad(rng):
    return (lambda x: T.pad_reflect(x, 2)), [rng.standard_normal((2, 3, 5, 6))]


@register("avg_pool", 1e-5)
def _case_pool(rng):
    return (lambda x: T.avg_pool(x, 3)), [rng.standard_normal((2, 3, 6, 6))]


@register("resize_bilinear", 1e-4)
def _case_resize_bilinear(rng):
    return (lambda x: T.resize(x, 7, 11, "bilinear")), [rng.standard_normal((2, 3, 4, 5))]


@register("resize_nearest", 1e-5)
def _case_resize_nearest(rng):
    return (lambda x: T.resize(x, 8, 10, "nearest")), [rng.standard_normal((2, 3, 4, 5))]


@register("upsample_nearest2x", 1e-5)
def _case_up2(rng):
    return T.upsample_nearest2x, [rng.standard_normal((2, 3, 4, 4))]


@register("grid_sample_bilinear", 1e-4)
def _case_grid_sample(rng):
    n, c, h, w = 2, 3, 8, 8
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    # smooth source so the coordinate gradient is well conditioned
    src = np.stack(
        [np.sin(0.6 * xx + 0.3 * k) * np.cos(0.4 * yy - 0.2 * k) + 0.1 * k for k in range(n * c)]
    ).reshape(n, c, h, w)
    grid = rng.uniform(0.3, 6.7, size=(n, 2, h, w))
    return T.grid_sample_bilinear, [src + 0.05 * rng.standard_normal(src.shape), grid]
