"""Paired geometric and image-only photometric augmentation.

Geometric transforms act on image and depth through one composed inverse map
(flip, then crop-resize, then affine) sampled bilinearly, so both slots see the
exact same resampling.  Depth values are warped, never rescaled.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class AugParams:
    flip_h: bool = False
    crop: tuple | None = None  # (x, y, w, h) in pixels; None means the full frame
    affine: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))  # about the image centre, translation in pixels
    brightness: float = 1.0
    jitter: tuple = (0.0, 0.0, 0.0)
    gamma: float = 1.0
    saturation: float = 1.0
    noise_std: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.affine, dtype=np.float64)
        if a.shape != (2, 3):
            raise ValueError(f"affine must be 2x3, got {a.shape}")
        if abs(np.linalg.det(a[:, :2])) <= 0.1:
            raise ValueError("degenerate affine: |det| of the linear block must exceed 0.1")
        if not 0.5 <= self.gamma <= 2.0:
            raise ValueError(f"gamma {self.gamma} outside [0.5, 2]")
        if not 0.0 <= self.noise_std <= 0.1:
            raise ValueError(f"noise_std {self.noise_std} outside [0, 0.1]")
        if self.brightness <= 0:
            raise ValueError("brightness must be positive")
        if len(self.jitter) != 3:
            raise ValueError("jitter needs one offset per channel")
        if self.crop is not None:
            x, y, w, h = self.crop
            if min(w, h) < 1 or x < 0 or y < 0:
                raise ValueError(f"invalid crop {self.crop}")

    @property
    def is_geometric_identity(self) -> bool:
        return not self.flip_h and self.crop is None and self.affine == AugParams().affine

    def check_crop(self, width: int, height: int) -> None:
        if self.crop is None:
            return
        x, y, w, h = self.crop
        if x + w > width or y + h > height:
            raise ValueError(f"crop {self.crop} leaves the {width}x{height} image")


@dataclass
class AugConfig:
    p_flip: float = 0.5
    p_crop: float = 0.5
    crop_min: float = 0.7
    p_affine: float = 0.5
    scale_range: list = field(default_factory=lambda: [0.9, 1.2])
    skew_max: float = 0.1
    translate_max: float = 0.05  # fraction of the image size
    p_color: float = 0.8
    brightness_range: list = field(default_factory=lambda: [0.8, 1.2])
    jitter_max: float = 0.05
    gamma_range: list = field(default_factory=lambda: [0.8, 1.2])
    saturation_range: list = field(default_factory=lambda: [0.8, 1.2])
    p_noise: float = 0.5
    noise_max: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("p_flip", "p_crop", "p_affine", "p_color", "p_noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if not 0.0 < self.crop_min <= 1.0:
            raise ValueError("crop_min must be in (0, 1]")
        lo, hi = self.scale_range
        if not 0 < lo <= hi or lo * lo - self.skew_max**2 <= 0.1:
            raise ValueError("scale/skew ranges allow a degenerate affine")
        g_lo, g_hi = self.gamma_range
        if not 0.5 <= g_lo <= g_hi <= 2.0:
            raise ValueError("gamma range must lie inside [0.5, 2]")
        if not 0.0 <= self.noise_max <= 0.1:
            raise ValueError("noise_max must lie inside [0, 0.1]")
        if not 0 < self.brightness_range[0] <= self.brightness_range[1]:
            raise ValueError("brightness range must be positive and ordered")
        if self.saturation_range[0] > self.saturation_range[1]:
            raise ValueError("saturation range must be ordered")

    def to_dict(self) -> dict:
        return asdict(self)


def sample_aug(rng: np.random.Generator, config: AugConfig, width: int, height: int) -> AugParams:
    """Draw one parameter set; every decision consumes the rng in a fixed order."""
    c = config
    flip = bool(rng.random() < c.p_flip)

    crop = None
    if rng.random() < c.p_crop:
        cw = int(rng.integers(int(np.ceil(c.crop_min * width)), width + 1))
        ch = int(rng.integers(int(np.ceil(c.crop_min * height)), height + 1))
        crop = (int(rng.integers(0, width - cw + 1)), int(rng.integers(0, height - ch + 1)), cw, ch)

    affine = AugParams().affine
    if rng.random() < c.p_affine:
        sx, sy = rng.uniform(*c.scale_range, size=2)
        kx, ky = rng.uniform(-c.skew_max, c.skew_max, size=2)
        tx = rng.uniform(-c.translate_max, c.translate_max) * width
        ty = rng.uniform(-c.translate_max, c.translate_max) * height
        affine = ((float(sx), float(kx), float(tx)), (float(ky), float(sy), float(ty)))

    brightness, gamma, saturation, jitter = 1.0, 1.0, 1.0, (0.0, 0.0, 0.0)
    if rng.random() < c.p_color:
        gamma = float(rng.uniform(*c.gamma_range))
        brightness = float(rng.uniform(*c.brightness_range))
        jitter = tuple(float(v) for v in rng.uniform(-c.jitter_max, c.jitter_max, size=3))
        saturation = float(rng.uniform(*c.saturation_range))

    noise = float(rng.uniform(0.0, c.noise_max)) if rng.random() < c.p_noise else 0.0
    return AugParams(flip, crop, affine, brightness, jitter, gamma, saturation, noise)


def source_coordinates(p: AugParams, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    """Where each output pixel samples the original image, in absolute pixel coordinates."""
    p.check_crop(width, height)
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    if p.affine != AugParams().affine:
        a = np.asarray(p.affine)
        cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
        inv = np.linalg.inv(a[:, :2])
        dx = xs - cx - a[0, 2]
        dy = ys - cy - a[1, 2]
        xs, ys = cx + inv[0, 0] * dx + inv[0, 1] * dy, cy + inv[1, 0] * dx + inv[1, 1] * dy
    if p.crop is not None:
        x0, y0, cw, ch = p.crop
        # corner pixel centres map onto corner pixel centres, so a crop never samples outside
        xs = x0 + xs * ((cw - 1) / (width - 1))
        ys = y0 + ys * ((ch - 1) / (height - 1))
    if p.flip_h:
        xs = (width - 1) - xs
    return xs, ys


def _sample(maps: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    grid = np.stack([xs, ys])[None]
    with T.no_grad():
        return T.grid_sample_bilinear(maps[None], grid).data[0]


def apply_geometric(image, depth, p: AugParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Transform a (C,H,W) image and (1,H,W) depth identically.

    Returns ``(image_geo, depth_true, validity)``.  The depth label is a plain
    array (no graph), and ``validity`` marks pixels whose sample point fell
    inside the original frame.
    """
    img = np.asarray(image.data if isinstance(image, T.Tensor) else image, dtype=np.float64)
    dep = np.asarray(depth.data if isinstance(depth, T.Tensor) else depth, dtype=np.float64)
    if img.ndim != 3 or dep.ndim != 3 or img.shape[1:] != dep.shape[1:]:
        raise T.ShapeError(f"image {img.shape} and depth {dep.shape} are not aligned")
    _, h, w = img.shape
    if p.is_geometric_identity:
        return img.copy(), dep.copy(), np.ones((1, h, w))
    xs, ys = source_coordinates(p, w, h)
    tol = 1e-9
    valid = (xs >= -tol) & (xs <= w - 1 + tol) & (ys >= -tol) & (ys <= h - 1 + tol)
    both = _sample(np.concatenate([img, dep]), xs, ys)
    return both[:-dep.shape[0]], both[-dep.shape[0]:], valid[None].astype(np.float64)


def apply_photometric(image, p: AugParams, rng: np.random.Generator | None = None) -> np.ndarray:
    """gamma -> brightness -> jitter -> saturation -> noise, then clamp to [0, 1]."""
    out = np.array(image.data if isinstance(image, T.Tensor) else image, dtype=np.float64)
    if p.gamma != 1.0:
        out = np.power(np.clip(out, 0.0, None), p.gamma)
    if p.brightness != 1.0:
        out = out * p.brightness
    if any(p.jitter):
        out = out + np.asarray(p.jitter).reshape(3, 1, 1)
    if p.saturation != 1.0:
        luma = np.tensordot(_LUMA, out, axes=(0, 0))[None]
        out = luma + p.saturation * (out - luma)
    if p.noise_std > 0:
        if rng is None:
            raise ValueError("gaussian noise needs an rng")
        out = out + rng.normal(0.0, p.noise_std, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def augment_batch(images: np.ndarray, depths: np.ndarray, config: AugConfig, rng: np.random.Generator):
    """Sample, apply and stack per-item augmentations for a batch.

    Returns ``(images_aug, depths_true, validity, params)``.
    """
    n, _, h, w = images.shape
    outs, deps, masks, params = [], [], [], []
    for i in range(n):
        p = sample_aug(rng, config, w, h)
        img, dep, valid = apply_geometric(images[i], depths[i], p)
        outs.append(apply_photometric(img, p, rng))
        deps.append(dep)
        masks.append(valid)
        params.append(p)
    return np.stack(outs), np.stack(deps), np.stack(masks), params
