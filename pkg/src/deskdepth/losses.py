"""Photometric reconstruction, auto-masking, smoothness and the combined objective."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .gradcheck import register
from .tensor import Tensor

C1 = 0.01**2
C2 = 0.03**2


@dataclass
class LossWeights:
    alpha_p: float = 1.0
    alpha_s: float = 0.001
    alpha_a: float = 0.1
    alpha_r: float = 0.001
    alpha: float = 0.85

    def __post_init__(self):
        for key, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"loss weight {key} must be nonnegative, got {value}")
        if self.alpha > 1:
            raise ValueError(f"SSIM/L1 blend alpha must lie in [0, 1], got {self.alpha}")


def _check_same(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise T.ShapeError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def ssim(a, b) -> Tensor:
    """Per-pixel SSIM over 3x3 reflect-padded windows."""
    a, b = T._as_tensor(a), T._as_tensor(b)
    _check_same(a, b, "ssim")
    a_p = T.pad_reflect(a, 1)
    b_p = T.pad_reflect(b, 1)
    mu_a = T.avg_pool(a_p, 3)
    mu_b = T.avg_pool(b_p, 3)
    sigma_a = T.avg_pool(a_p * a_p, 3) - mu_a * mu_a
    sigma_b = T.avg_pool(b_p * b_p, 3) - mu_b * mu_b
    sigma_ab = T.avg_pool(a_p * b_p, 3) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + C1) * (2.0 * sigma_ab + C2)
    den = (mu_a * mu_a + mu_b * mu_b + C1) * (sigma_a + sigma_b + C2)
    return num / den


def pe(a, b, alpha: float = 0.85) -> Tensor:
    """Photometric error map (N,1,H,W): SSIM/L1 blend averaged over channels."""
    a, b = T._as_tensor(a), T._as_tensor(b)
    _check_same(a, b, "pe")
    l1 = T.absolute(a - b)
    if alpha == 0:
        return T.mean(l1, axes=1, keepdims=True)
    err = (alpha / 2.0) * (1.0 - ssim(a, b)) + (1.0 - alpha) * l1
    return T.mean(err, axes=1, keepdims=True)


def min_reprojection(pe_maps: Sequence[Tensor]) -> Tensor:
    if not pe_maps:
        raise ValueError("min_reprojection needs at least one map")
    out = pe_maps[0]
    for m in pe_maps[1:]:
        _check_same(out, m, "min_reprojection")
        out = T.min2(out, m)
    return out


def automask(pe_warped: Sequence[Tensor], pe_static: Sequence[Tensor]) -> Tensor:
    """Binary mask: 1 where the best warp beats the best unwarped source (strictly)."""
    warped = _min_np(pe_warped)
    static = _min_np(pe_static)
    if warped.shape != static.shape:
        raise T.ShapeError(f"automask: shape mismatch {warped.shape} vs {static.shape}")
    return Tensor((warped < static).astype(np.float64))


def _min_np(maps: Sequence) -> np.ndarray:
    arrs = [m.data if isinstance(m, Tensor) else np.asarray(m) for m in maps]
    if not arrs:
        raise ValueError("need at least one map")
    return np.minimum.reduce(arrs)


def mask_regularization(mask, pe_warped_min, pe_static_min) -> tuple[Tensor, float]:
    """Hinge surrogate of |1 - mask| plus the literal mean(1 - mask) for logging.

    The surrogate ``mean(relu(warped - static))`` is zero exactly where the
    mask is 1 and pushes the warped error below the static one elsewhere.
    """
    mask = T._as_tensor(mask)
    pe_warped_min = T._as_tensor(pe_warped_min)
    static = pe_static_min.data if isinstance(pe_static_min, Tensor) else np.asarray(pe_static_min)
    if mask.shape != pe_warped_min.shape or static.shape != mask.shape:
        raise T.ShapeError("mask_regularization: shape mismatch")
    surrogate = T.mean(T.relu(pe_warped_min - Tensor(static)))
    metric = float(np.mean(1.0 - mask.data))
    return surrogate, metric


def _image_gradients_np(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = np.mean(np.abs(image[:, :, :, :-1] - image[:, :, :, 1:]), axis=1, keepdims=True)
    gy = np.mean(np.abs(image[:, :, :-1, :] - image[:, :, 1:, :]), axis=1, keepdims=True)
    return gx, gy


def smoothness(disp, image) -> Tensor:
    """Edge-aware first-order smoothness of mean-normalised disparity."""
    disp = T._as_tensor(disp)
    img = image.data if isinstance(image, Tensor) else np.asarray(image)
    if disp.shape[1] != 1 or disp.shape[2:] != img.shape[2:] or disp.shape[0] != img.shape[0]:
        raise T.ShapeError(f"smoothness: disparity {disp.shape} not aligned with image {img.shape}")
    m = T.mean(disp, axes=(2, 3), keepdims=True)
    if np.any(m.data <= 0):
        raise ValueError("smoothness: mean disparity must be positive")
    d = disp / m
    gx_img, gy_img = _image_gradients_np(img)
    dx = T.absolute(d[:, :, :, :-1] - d[:, :, :, 1:])
    dy = T.absolute(d[:, :, :-1, :] - d[:, :, 1:, :])
    return T.mean(dx * np.exp(-gx_img)) + T.mean(dy * np.exp(-gy_img))


def augmentation_loss(d_true, d_out, validity) -> Tensor:
    """Mean L1 between gradient-stopped target depth and second-pass depth over valid pixels."""
    d_out = T._as_tensor(d_out)
    target = d_true.data if isinstance(d_true, Tensor) else np.asarray(d_true)
    valid = validity.data if isinstance(validity, Tensor) else np.asarray(validity, dtype=np.float64)
    if target.shape != d_out.shape or valid.shape != d_out.shape:
        raise T.ShapeError(f"augmentation_loss: shapes {target.shape}, {d_out.shape}, {valid.shape}")
    n_valid = float(valid.sum())
    if n_valid == 0:
        raise ValueError("augmentation_loss: no valid pixels")
    return T.sum(T.absolute(d_out - Tensor(target)) * valid) / n_valid


@dataclass
class LossBreakdown:
    """Scalar pieces of the objective; weighted terms sum to ``total``."""

    photometric: float
    smoothness: float
    augmentation: float
    regularization: float
    mask_mean: float
    mask_metric: float
    weighted: dict
    total: float

    def to_dict(self) -> dict:
        return asdict(self)


def total_loss(
    photometric_maps: Sequence[Tensor],
    smooth_terms: Sequence[Tensor],
    mask,
    weights: LossWeights,
    aug_term: Tensor | None = None,
    reg_term: Tensor | None = None,
    mask_metric: float = 0.0,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted objective averaged over scales.

    ``photometric_maps`` holds one min-reprojection map per scale, all at input
    resolution; the single mask applies to every scale.  Terms whose weight is
    zero may be omitted.
    """
    if not photometric_maps:
        raise ValueError("total_loss: photometric maps are required")
    if weights.alpha_s > 0 and not smooth_terms:
        raise ValueError("total_loss: smoothness terms missing")
    if weights.alpha_a > 0 and aug_term is None:
        raise ValueError("total_loss: augmentation term missing")
    if weights.alpha_r > 0 and reg_term is None:
        raise ValueError("total_loss: mask regularization term missing")
    mask = T._as_tensor(mask)

    photo_terms = [T.mean(mask * m) for m in photometric_maps]
    l_p = _average(photo_terms)
    parts = {"photometric": T.mul(l_p, weights.alpha_p)}
    l_s = _average(smooth_terms) if smooth_terms else None
    if l_s is not None:
        parts["smoothness"] = T.mul(l_s, weights.alpha_s)
    if aug_term is not None:
        parts["augmentation"] = T.mul(aug_term, weights.alpha_a)
    if reg_term is not None:
        parts["regularization"] = T.mul(reg_term, weights.alpha_r)

    total = None
    for value in parts.values():
        total = value if total is None else total + value
    breakdown = LossBreakdown(
        photometric=l_p.item(),
        smoothness=l_s.item() if l_s is not None else 0.0,
        augmentation=aug_term.item() if aug_term is not None else 0.0,
        regularization=reg_term.item() if reg_term is not None else 0.0,
        mask_mean=float(mask.data.mean()),
        mask_metric=mask_metric,
        weighted={k: v.item() for k, v in parts.items()},
        total=total.item(),
    )
    return total, breakdown


def _average(terms: Sequence[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc if len(terms) == 1 else acc / float(len(terms))


@register("ssim", 1e-4)
def _case_ssim(rng):
    return ssim, [rng.uniform(0, 1, (2, 3, 6, 6)), rng.uniform(0, 1, (2, 3, 6, 6))]


@register("pe", 1e-4)
def _case_pe(rng):
    return pe, [rng.uniform(0, 1, (2, 3, 6, 6)), rng.uniform(0, 1, (2, 3, 6, 6))]


@register("smoothness", 1e-5)
def _case_smooth(rng):
    img = rng.uniform(0, 1, (2, 3, 6, 6))
    return (lambda d: smoothness(d, img)), [rng.uniform(0.2, 1.0, (2, 1, 6, 6))]
