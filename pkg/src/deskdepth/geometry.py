"""Pinhole projection, axis-angle poses and differentiable inverse warping.

Conventions
-----------
* Pixel ``(row i, col j)`` has its center at absolute coordinate ``(x=j, y=i)``.
* A pose maps target-camera points into the source camera:
  ``X_s = R(rotation) @ X_t + translation``.  Warping therefore samples the
  source image at the projection of every target pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gradcheck import register
from .tensor import Tensor

D_MIN = 0.1
D_MAX = 100.0
POSE_SCALE = 0.01
_BEHIND_EPS = 1e-3
_FAR = -1.0e6
_SERIES_THETA = 1e-2


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}")

    @classmethod
    def default(cls, width: int = 64, height: int = 64) -> Intrinsics:
        """Centered camera with a focal length equal to the image width."""
        return cls(float(width), float(width), (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    def scaled(self, width: int, height: int) -> Intrinsics:
        """Intrinsics of the same camera rendered at another resolution."""
        sx = width / self.width
        sy = height / self.height
        return Intrinsics(
            self.fx * sx, self.fy * sy, (self.cx + 0.5) * sx - 0.5, (self.cy + 0.5) * sy - 0.5, width, height
        )

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_list(self) -> list[float]:
        return [self.fx, self.fy, self.cx, self.cy, self.width, self.height]

    @classmethod
    def from_list(cls, values) -> Intrinsics:
        fx, fy, cx, cy, w, h = values
        return cls(float(fx), float(fy), float(cx), float(cy), int(w), int(h))


@dataclass(frozen=True)
class Pose:
    """6-DoF rigid motion, target -> source; plain arrays (no graph)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if np.linalg.norm(self.rotation) >= np.pi:
            raise ValueError("axis-angle magnitude must be below pi")

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.zeros(3), np.zeros(3))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation])

    @classmethod
    def from_vector(cls, v) -> Pose:
        v = np.asarray(v, dtype=np.float64).reshape(6)
        return cls(v[:3], v[3:])


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


_GEN = np.stack([skew(e) for e in np.eye(3)])  # d skew(r) / d r_i


def _rodrigues_coeffs(theta: np.ndarray):
    """A = sin t / t, B = (1 - cos t) / t^2 and their derivatives divided by t."""
    t2 = theta * theta
    small = theta < _SERIES_THETA
    safe = np.where(small, 1.0, theta)
    s, c = np.sin(safe), np.cos(safe)
    a = np.where(small, 1.0 - t2 / 6.0 + t2 * t2 / 120.0 - t2**3 / 5040.0, s / safe)
    b = np.where(small, 0.5 - t2 / 24.0 + t2 * t2 / 720.0 - t2**3 / 40320.0, (1.0 - c) / safe**2)
    da = np.where(small, -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0, (safe * c - s) / safe**3)
    db = np.where(small, -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0, (safe * s - 2.0 * (1.0 - c)) / safe**4)
    return a, b, da, db


def axis_angle_to_matrix(r) -> Tensor:
    """Rodrigues map from (N, 3) axis-angle vectors to (N, 3, 3) rotations.

    Below |r| = 1e-2 the trigonometric coefficients switch to their Taylor
    series, so the map and its derivative stay accurate at the origin.
    """
    r = T._as_tensor(r)
    squeeze = r.ndim == 1
    rv = r.data.reshape(-1, 3)
    theta = np.linalg.norm(rv, axis=1)
    a, b, da, db = _rodrigues_coeffs(theta)
    k = np.einsum("nj,jab->nab", rv, _GEN)
    k2 = k @ k
    eye = np.eye(3)[None]
    out = eye + a[:, None, None] * k + b[:, None, None] * k2
    shape = r.shape

    def bw(g):
        g = g.reshape(-1, 3, 3)
        # dR/dr_i = (da r_i) K + A G_i + (db r_i) K^2 + B (G_i K + K G_i)
        gk = np.einsum("nab,nab->n", g, k)
        gk2 = np.einsum("nab,nab->n", g, k2)
        gr = (da * gk + db * gk2)[:, None] * rv
        g_gen = np.einsum("nab,iab->ni", g, _GEN)
        sym = np.einsum("nab,iac,ncb->ni", g, _GEN, k) + np.einsum("nab,nac,icb->ni", g, k, _GEN)
        gr = gr + a[:, None] * g_gen + b[:, None] * sym
        return (gr.reshape(shape),)

    out_t = T._make(out[0] if squeeze else out, (r,), lambda g: bw(g), "axis_angle")
    return out_t


def disparity_to_depth(sigmoid_out, d_min: float = D_MIN, d_max: float = D_MAX) -> Tensor:
    """Inverse-affine map from sigmoid output s in [0, 1] to depth in [d_min, d_max]."""
    if not 0 < d_min < d_max:
        raise ValueError(f"need 0 < d_min < d_max, got {d_min}, {d_max}")
    min_disp = 1.0 / d_max
    max_disp = 1.0 / d_min
    scaled = T.add(T.mul(sigmoid_out, max_disp - min_disp), min_disp)
    return T.div(1.0, scaled)


def depth_to_disparity_np(depth: np.ndarray, d_min: float = D_MIN, d_max: float = D_MAX) -> np.ndarray:
    return (1.0 / depth - 1.0 / d_max) / (1.0 / d_min - 1.0 / d_max)


def _rays(K: Intrinsics, h: int, w: int) -> np.ndarray:
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)])


def projection_grid(depth, rotation_matrix, translation, K: Intrinsics) -> Tensor:
    """Source-pixel coordinates of every target pixel, shape (N, 2, H, W).

    ``depth`` is (N,1,H,W), ``rotation_matrix`` (N,3,3) and ``translation``
    (N,3).  The camera point is formed as ``R @ ray + t / depth`` (the
    depth-normalised form), which makes the identity pose reproduce the pixel
    grid exactly.  Points at or behind the source camera map far outside the
    image and carry no gradient.
    """
    depth, rotation_matrix, translation = (T._as_tensor(v) for v in (depth, rotation_matrix, translation))
    n, _, h, w = depth.shape
    if rotation_matrix.shape != (n, 3, 3) or translation.shape != (n, 3):
        raise T.ShapeError(
            f"pose shapes {rotation_matrix.shape}, {translation.shape} do not match batch {n}"
        )
    rays = _rays(K, h, w).reshape(3, -1)
    d = depth.data.reshape(n, -1)
    inv_d = 1.0 / d
    R = rotation_matrix.data
    t = translation.data
    q = np.matmul(R, rays[None]) + t[:, :, None] * inv_d[:, None, :]
    qz = q[:, 2]
    front = qz * d > _BEHIND_EPS
    qz_safe = np.where(front, qz, 1.0)
    px = q[:, 0] / qz_safe
    py = q[:, 1] / qz_safe
    # x + fx (qx/qz - rx) keeps the identity pose bit-exact
    pix = np.arange(w, dtype=np.float64)[None, :].repeat(h, 0).reshape(-1)
    piy = np.arange(h, dtype=np.float64)[:, None].repeat(w, 1).reshape(-1)
    u = pix + K.fx * (px - rays[0])
    v = piy + K.fy * (py - rays[1])
    u = np.where(front, u, _FAR)
    v = np.where(front, v, _FAR)
    out = np.stack([u, v], axis=1).reshape(n, 2, h, w)

    def bw(g):
        gu = np.where(front, g[:, 0].reshape(n, -1), 0.0)
        gv = np.where(front, g[:, 1].reshape(n, -1), 0.0)
        dqx = gu * K.fx / qz_safe
        dqy = gv * K.fy / qz_safe
        dqz = -(gu * K.fx * px + gv * K.fy * py) / qz_safe
        dq = np.stack([dqx, dqy, dqz], axis=1)  # (n, 3, P)
        g_depth = g_rot = g_trans = None
        if rotation_matrix.requires_grad:
            g_rot = np.matmul(dq, rays.T[None])
        if translation.requires_grad:
            g_trans = np.einsum("nap,np->na", dq, inv_d)
        if depth.requires_grad:
            g_inv = np.einsum("nap,na->np", dq, t)
            g_depth = (-g_inv * inv_d * inv_d).reshape(n, 1, h, w)
        return g_depth, g_rot, g_trans

    return T._make(out, (depth, rotation_matrix, translation), bw, "projection_grid")


def pose_tensors(pose_vec) -> tuple[Tensor, Tensor]:
    """Split an (N, 6) pose tensor into (rotation matrices, translations)."""
    pose_vec = T._as_tensor(pose_vec)
    return axis_angle_to_matrix(pose_vec[:, 0:3]), pose_vec[:, 3:6]


def as_pose_tensor(poses) -> Tensor:
    if isinstance(poses, Tensor):
        return poses
    if isinstance(poses, Pose):
        return Tensor(poses.vector()[None])
    return Tensor(np.stack([p.vector() for p in poses]))


def warp(source, depth_t, pose, K: Intrinsics) -> Tensor:
    """Synthesize the target view by sampling ``source`` through depth and pose.

    ``pose`` is an (N, 6) tensor (axis-angle, translation), a :class:`Pose` or a
    sequence of poses.
    """
    pose_t = as_pose_tensor(pose)
    rot, trans = pose_tensors(pose_t)
    grid = projection_grid(depth_t, rot, trans, K)
    return T.grid_sample_bilinear(source, grid)


def quaternion_rotation(r: np.ndarray) -> np.ndarray:
    """Rotation matrix via the unit quaternion of axis-angle ``r`` (independent oracle)."""
    theta = np.linalg.norm(r)
    if theta == 0:
        return np.eye(3)
    axis = r / theta
    w = np.cos(theta / 2)
    x, y, z = np.sin(theta / 2) * axis
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


@register("axis_angle_to_matrix", 1e-5)
def _case_rodrigues(rng):
    r = rng.standard_normal((4, 3)) * 0.7
    r[0] = rng.standard_normal(3) * 1e-3  # series branch
    return axis_angle_to_matrix, [r]


@register("projection_grid", 1e-4)
def _case_projection(rng):
    K = Intrinsics.default(8, 8)
    depth = rng.uniform(2.0, 6.0, size=(2, 1, 8, 8))
    rot = np.stack([axis_angle_to_matrix(Tensor(rng.standard_normal(3) * 0.05)).data for _ in range(2)])
    trans = rng.standard_normal((2, 3)) * 0.3

    def fn(d, r, t):
        return projection_grid(d, r, t, K)

    return fn, [depth, rot, trans]


@register("warp", 1e-4)
def _case_warp(rng):
    K = Intrinsics.default(8, 8)
    yy, xx = np.meshgrid(np.arange(8), np.arange(8), indexing="ij")
    src = np.stack([np.sin(0.5 * xx + k) * np.cos(0.45 * yy + 0.5 * k) for k in range(6)]).reshape(2, 3, 8, 8)
    depth = rng.uniform(2.0, 5.0, size=(2, 1, 8, 8))
    pose = np.concatenate([rng.standard_normal((2, 3)) * 0.02, rng.standard_normal((2, 3)) * 0.2], axis=1)

    def fn(s, d, p):
        return warp(s, d, p, K)

    return fn, [src, depth, pose]
