"""Procedural planar scenes with exact ground-truth depth and egomotion.

Scenes are one or two textured planes.  Textures live on the surfaces (sums of
random-phase sinusoids in plane coordinates), so every view is rendered by
casting rays against the analytic geometry and evaluating the texture at the
hit point.  Warping a rendered source with the ground-truth depth and pose then
reproduces the target up to bilinear interpolation error.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import imageio
from .geometry import D_MAX, D_MIN, Intrinsics, Pose, quaternion_rotation

LAYOUTS = ("fronto", "slanted", "occlusion")
# image-space angular frequency range of the texture at the reference depth
_TEX_FREQ = (0.1, 0.3)
_TEX_COMPONENTS = 6
_REF_WIDTH = 64


@dataclass
class SceneSpec:
    """Geometry and texture parameters of one scene, in target-camera coordinates.

    ``plane_depth`` is the depth of the main plane on the optical axis;
    ``tilt`` is the tangent of the slant about the camera x axis (positive
    means the bottom of the image is closer, like a ground plane).  The
    occlusion layout adds a fronto-parallel rectangle at ``fg_depth`` whose
    extent is given in normalized image coordinates ``fg_rect`` =
    (x0, y0, x1, y1) in [0, 1].
    """

    layout: str = "fronto"
    plane_depth: float = 5.0
    tilt: float = 0.0
    fg_depth: float = 0.0
    fg_rect: tuple = (0.0, 0.0, 0.0, 0.0)
    texture_seed: int = 0
    width: int = 64
    height: int = 64
    focal: float = 64.0

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")
        self.fg_rect = tuple(float(v) for v in self.fg_rect)
        if not D_MIN <= self.plane_depth <= D_MAX:
            raise ValueError(f"plane depth {self.plane_depth} outside [{D_MIN}, {D_MAX}]")
        if self.layout == "slanted" and abs(self.tilt) * 0.5 * self.height / self.focal >= 0.9:
            raise ValueError("tilt too steep: the plane would reach the horizon inside the image")
        if self.layout == "occlusion":
            if not D_MIN <= self.fg_depth < self.plane_depth:
                raise ValueError("foreground depth must lie in front of the background plane")
            x0, y0, x1, y1 = self.fg_rect
            if not (0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1):
                raise ValueError(f"invalid foreground rectangle {self.fg_rect}")

    @property
    def intrinsics(self) -> Intrinsics:
        return Intrinsics(
            self.focal, self.focal, (self.width - 1) / 2.0, (self.height - 1) / 2.0, self.width, self.height
        )

    def at_resolution(self, width: int, height: int) -> SceneSpec:
        """Same scene seen by the same camera at another image size."""
        d = asdict(self)
        d.update(width=width, height=height, focal=self.focal * width / self.width)
        return SceneSpec(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fg_rect"] = list(self.fg_rect)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SceneSpec:
        return cls(**d)


@dataclass
class Triplet:
    """(source 1, target, source 2) with ground truth; images are (3, H, W)."""

    s1: np.ndarray
    t: np.ndarray
    s2: np.ndarray
    intrinsics: Intrinsics
    gt_depth: np.ndarray | None = None  # (1, H, W)
    pose_1: Pose | None = None
    pose_2: Pose | None = None
    validity: np.ndarray | None = None  # (2, 1, H, W): target pixel visible in source k
    spec: SceneSpec | None = None

    @property
    def size(self) -> tuple[int, int]:
        return self.t.shape[1], self.t.shape[2]

    @property
    def sources(self) -> list[np.ndarray]:
        return [self.s1, self.s2]

    @property
    def poses(self) -> list[Pose]:
        return [self.pose_1, self.pose_2]


# ---------------------------------------------------------------------------
# geometry of the layouts


@dataclass
class _Plane:
    normal: np.ndarray  # unit normal, n . X = offset
    offset: float
    origin: np.ndarray  # texture origin on the plane
    e1: np.ndarray
    e2: np.ndarray
    bounds: tuple | None = None  # (u0, v0, u1, v1) in plane coordinates
    texture: dict = field(default_factory=dict)


def _texture_params(rng: np.random.Generator, world_per_pixel: float, warm: bool) -> dict:
    k = _TEX_COMPONENTS
    freq = rng.uniform(*_TEX_FREQ, size=k) / world_per_pixel
    angle = rng.uniform(0, np.pi, size=k)
    phase = rng.uniform(0, 2 * np.pi, size=k)
    amp = rng.uniform(0.3, 1.0, size=k)
    amp *= 0.4 / amp.sum()
    tint = np.array([0.62, 0.48, 0.36]) if warm else np.array([0.38, 0.5, 0.6])
    tint = tint + rng.uniform(-0.05, 0.05, size=3)
    # per-channel mixing keeps channels correlated but not identical
    mix = 1.0 + rng.uniform(-0.25, 0.25, size=(3, k))
    return {
        "wx": freq * np.cos(angle),
        "wy": freq * np.sin(angle),
        "phase": phase,
        "amp": amp,
        "tint": tint,
        "mix": mix,
    }


def _eval_texture(tex: dict, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    waves = np.sin(u[..., None] * tex["wx"] + v[..., None] * tex["wy"] + tex["phase"]) * tex["amp"]
    out = tex["tint"][:, None] + np.einsum("ck,pk->cp", tex["mix"], waves.reshape(-1, waves.shape[-1]))
    return np.clip(out, 0.0, 1.0).reshape((3,) + u.shape)


def _planes(spec: SceneSpec) -> list[_Plane]:
    rng = np.random.default_rng(spec.texture_seed)
    # world units per pixel at a 64-px reference width, so the texture is resolution independent
    unit = spec.width / (_REF_WIDTH * spec.focal)
    px = spec.plane_depth * unit
    if spec.layout == "slanted":
        # depth along a ray with normalized y coordinate ry: Z = d / (1 + tilt * ry)
        n = np.array([0.0, spec.tilt, 1.0])
        norm = np.linalg.norm(n)
        normal = n / norm
        offset = spec.plane_depth / norm
        e1 = np.array([1.0, 0.0, 0.0])
        e2 = np.cross(normal, e1)
        # band-limit against the farthest visible depth, where foreshortening peaks
        far = spec.plane_depth / (1.0 - abs(spec.tilt) * 0.5 * spec.height / spec.focal)
        px = far * unit * (1.0 + spec.tilt**2) ** 0.5
    else:
        normal = np.array([0.0, 0.0, 1.0])
        offset = spec.plane_depth
        e1 = np.array([1.0, 0.0, 0.0])
        e2 = np.array([0.0, 1.0, 0.0])
    origin = normal * offset
    back = _Plane(normal, offset, origin, e1, e2, texture=_texture_params(rng, px, warm=False))
    planes = [back]
    if spec.layout == "occlusion":
        K = spec.intrinsics
        x0, y0, x1, y1 = spec.fg_rect
        d = spec.fg_depth
        # rectangle corners are given in target-image fractions, lifted to depth d
        ux0 = ((x0 * spec.width - 0.5) - K.cx) / K.fx * d
        ux1 = ((x1 * spec.width - 0.5) - K.cx) / K.fx * d
        vy0 = ((y0 * spec.height - 0.5) - K.cy) / K.fy * d
        vy1 = ((y1 * spec.height - 0.5) - K.cy) / K.fy * d
        fg = _Plane(
            np.array([0.0, 0.0, 1.0]),
            d,
            np.array([0.0, 0.0, d]),
            np.array([1.0, 0.0, 0.0]),
            np.array([0.0, 1.0, 0.0]),
            bounds=(ux0, vy0, ux1, vy1),
            texture=_texture_params(rng, d * unit, warm=True),
        )
        planes.append(fg)
    return planes


def _cast(planes: list[_Plane], center: np.ndarray, dirs: np.ndarray):
    """Nearest hit of rays ``center + s * dirs`` (dirs (3, P)); returns (s, plane index)."""
    best = np.full(dirs.shape[1], np.inf)
    which = np.full(dirs.shape[1], -1)
    for idx, pl in enumerate(planes):
        denom = pl.normal @ dirs
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (pl.offset - pl.normal @ center) / denom
        ok = np.isfinite(s) & (s > 1e-6)
        if pl.bounds is not None:
            hit = center[:, None] + s * dirs
            rel = hit - pl.origin[:, None]
            u, v = pl.e1 @ rel, pl.e2 @ rel
            u0, v0, u1, v1 = pl.bounds
            ok &= (u >= u0) & (u <= u1) & (v >= v0) & (v <= v1)
        closer = ok & (s < best)
        best = np.where(closer, s, best)
        which = np.where(closer, idx, which)
    return best, which


def _pixel_rays(K: Intrinsics, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    return np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)])


def render_view(spec: SceneSpec, pose: Pose | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Render (image (3,H,W), depth (1,H,W)) from a camera related to the target by ``pose``."""
    K = spec.intrinsics
    h, w = spec.height, spec.width
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    image, depth, _ = _render_at(spec, pose, xs.ravel(), ys.ravel())
    return image.reshape(3, h, w), depth.reshape(1, h, w)


def _render_at(spec: SceneSpec, pose: Pose | None, xs: np.ndarray, ys: np.ndarray):
    K = spec.intrinsics
    planes = _planes(spec)
    rays = _pixel_rays(K, xs, ys)
    if pose is None:
        R = np.eye(3)
        t = np.zeros(3)
    else:
        R = quaternion_rotation(pose.rotation)
        t = pose.translation
    # camera center and ray directions expressed in the target frame
    center = -R.T @ t
    dirs = R.T @ rays
    s, which = _cast(planes, center, dirs)
    if np.any(which < 0):
        raise ValueError("some rays miss every surface; the scene does not fill the view")
    image = np.empty((3, xs.size))
    hit = center[:, None] + s * dirs
    for idx, pl in enumerate(planes):
        sel = which == idx
        if not np.any(sel):
            continue
        rel = hit[:, sel] - pl.origin[:, None]
        image[:, sel] = _eval_texture(pl.texture, pl.e1 @ rel, pl.e2 @ rel)
    # rays have unit z in the camera frame, so the ray parameter is the depth
    return image, s, which


def gen_scene(spec: SceneSpec, seed: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Target-view texture image and depth map of a scene.

    ``seed`` overrides the spec's texture seed when given.
    """
    if seed is not None:
        spec = SceneSpec(**{**asdict(spec), "texture_seed": int(seed)})
    image, depth = render_view(spec)
    if depth.min() < D_MIN or depth.max() > D_MAX:
        raise ValueError(f"scene depth range [{depth.min()}, {depth.max()}] outside [{D_MIN}, {D_MAX}]")
    return image, depth


def texture_gradient_energy(image: np.ndarray) -> float:
    gx = np.diff(image, axis=-1)
    gy = np.diff(image, axis=-2)
    return float(np.mean(gx**2) + np.mean(gy**2))


def _validity(spec: SceneSpec, depth_t: np.ndarray, which_t: np.ndarray, pose: Pose) -> np.ndarray:
    """1 where the target pixel's surface point is seen by the source and all four
    bilinear neighbours of its source position lie on the same surface."""
    K = spec.intrinsics
    h, w = spec.height, spec.width
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    pts = _pixel_rays(K, xs.ravel(), ys.ravel()) * depth_t.ravel()
    R = quaternion_rotation(pose.rotation)
    q = R @ pts + pose.translation[:, None]
    z = q[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * q[0] / z + K.cx
        v = K.fy * q[1] / z + K.cy
    inside = (z > 1e-6) & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    valid = np.zeros(xs.size)
    if np.any(inside):
        ui, vi = u[inside], v[inside]
        _, depth_seen, _ = _render_at(spec, pose, ui, vi)
        ok = np.abs(depth_seen - z[inside]) < 1e-6 * np.maximum(1.0, z[inside])
        _, _, which_s = _render_at(spec, pose, xs.ravel(), ys.ravel())
        which_s = which_s.reshape(h, w)
        surf = which_t.ravel()[inside]
        x0, y0 = np.floor(ui).astype(int), np.floor(vi).astype(int)
        x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
        for yy, xx in ((y0, x0), (y0, x1), (y1, x0), (y1, x1)):
            ok &= which_s[yy, xx] == surf
        valid[inside] = ok.astype(float)
    return valid.reshape(1, h, w)


def render_triplet(spec: SceneSpec, pose_1: Pose, pose_2: Pose, min_in_frame: float = 0.9) -> Triplet:
    image_t, depth_t = gen_scene(spec)
    xs, ys = np.meshgrid(np.arange(spec.width, dtype=np.float64), np.arange(spec.height, dtype=np.float64))
    _, _, which_t = _render_at(spec, None, xs.ravel(), ys.ravel())
    sources = []
    validity = []
    for pose in (pose_1, pose_2):
        img, _ = render_view(spec, pose)
        val = _validity(spec, depth_t, which_t, pose)
        if _in_frame_fraction(spec, depth_t, pose) < min_in_frame:
            raise ValueError("pose moves more than the allowed share of pixels out of frame")
        sources.append(img)
        validity.append(val)
    return Triplet(
        s1=sources[0],
        t=image_t,
        s2=sources[1],
        intrinsics=spec.intrinsics,
        gt_depth=depth_t,
        pose_1=pose_1,
        pose_2=pose_2,
        validity=np.stack(validity),
        spec=spec,
    )


def _in_frame_fraction(spec: SceneSpec, depth_t: np.ndarray, pose: Pose) -> float:
    K = spec.intrinsics
    h, w = spec.height, spec.width
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    pts = _pixel_rays(K, xs.ravel(), ys.ravel()) * depth_t.ravel()
    q = quaternion_rotation(pose.rotation) @ pts + pose.translation[:, None]
    u = K.fx * q[0] / q[2] + K.cx
    v = K.fy * q[1] / q[2] + K.cy
    return float(np.mean((q[2] > 0) & (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)))


# ---------------------------------------------------------------------------
# sampling default scenes and motions


def sample_scene_spec(rng: np.random.Generator, width: int = 64, height: int = 64, layout: str | None = None) -> SceneSpec:
    if layout is None:
        layout = LAYOUTS[int(rng.choice(3, p=[0.2, 0.4, 0.4]))]
    focal = float(width)
    tex_seed = int(rng.integers(0, 2**31 - 1))
    if layout == "fronto":
        return SceneSpec("fronto", float(rng.uniform(6.0, 15.0)), texture_seed=tex_seed, width=width, height=height, focal=focal)
    if layout == "slanted":
        return SceneSpec(
            "slanted",
            float(rng.uniform(6.0, 12.0)),
            tilt=float(rng.uniform(0.8, 1.4)),
            texture_seed=tex_seed,
            width=width,
            height=height,
            focal=focal,
        )
    fw, fh = rng.uniform(0.3, 0.5, size=2)
    x0 = rng.uniform(0.1, 0.9 - fw)
    y0 = rng.uniform(0.1, 0.9 - fh)
    return SceneSpec(
        "occlusion",
        float(rng.uniform(12.0, 25.0)),
        fg_depth=float(rng.uniform(4.5, 7.0)),
        fg_rect=(float(x0), float(y0), float(x0 + fw), float(y0 + fh)),
        texture_seed=tex_seed,
        width=width,
        height=height,
        focal=focal,
    )


def sample_motion(rng: np.random.Generator) -> tuple[Pose, Pose]:
    """Lateral camera motion with small rotations; source 1 precedes, source 2 follows."""
    tx = rng.uniform(0.2, 0.8)
    poses = []
    for sign in (1.0, -1.0):
        rot = rng.uniform(-0.02, 0.02, size=3)
        trans = np.array([sign * tx, 0.0, 0.0]) + rng.uniform(-0.03, 0.03, size=3)
        poses.append(Pose(rot, trans))
    return poses[0], poses[1]


def make_triplet(seed: int, width: int = 64, height: int = 64, layout: str | None = None) -> Triplet:
    rng = np.random.default_rng(seed)
    spec = sample_scene_spec(rng, width, height, layout)
    _, depth = gen_scene(spec)
    # rejection-sample motions that keep enough of the target in both sources
    for _ in range(100):
        pose_1, pose_2 = sample_motion(rng)
        if min(_in_frame_fraction(spec, depth, p) for p in (pose_1, pose_2)) >= 0.9:
            return render_triplet(spec, pose_1, pose_2)
    raise RuntimeError(f"no admissible motion found for seed {seed}")


def rerender(triplet: Triplet, width: int, height: int) -> Triplet:
    """Render the same scene and motion at another resolution."""
    if triplet.spec is None:
        raise ValueError("triplet carries no scene spec to re-render")
    return render_triplet(triplet.spec.at_resolution(width, height), triplet.pose_1, triplet.pose_2)


def make_dataset(count: int, seed: int = 0, width: int = 64, height: int = 64) -> list[Triplet]:
    seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=count)
    return [make_triplet(int(s), width, height) for s in seeds]


def self_consistency_error(triplet: Triplet, border: int = 4) -> float:
    """Mean over interior pixels of the per-pixel minimum across sources of the
    channel-mean absolute error between the GT-warped source and the target.

    Only sources in which the pixel is valid (see ``Triplet.validity``) take
    part; pixels valid in no source are excluded.
    """
    from . import tensor as T
    from .geometry import warp

    h, w = triplet.size
    depth = T.Tensor(triplet.gt_depth[None])
    errs = []
    for src, pose in zip(triplet.sources, triplet.poses):
        with T.no_grad():
            out = warp(T.Tensor(src[None]), depth, pose, triplet.intrinsics).data[0]
        errs.append(np.mean(np.abs(out - triplet.t), axis=0))
    errs = np.stack(errs)
    if triplet.validity is not None:
        errs = np.where(triplet.validity[:, 0] > 0, errs, np.inf)
    err = errs.min(axis=0)
    keep = np.zeros((h, w), dtype=bool)
    keep[border : h - border, border : w - border] = True
    keep &= np.isfinite(err)
    return float(err[keep].mean())


# ---------------------------------------------------------------------------
# dataset directory layout


def _pose_list(p: Pose | None):
    return None if p is None else p.vector().tolist()


def write_triplet(triplet: Triplet, directory: Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    imageio.write_ppm(directory / "s1.ppm", triplet.s1)
    imageio.write_ppm(directory / "t.ppm", triplet.t)
    imageio.write_ppm(directory / "s2.ppm", triplet.s2)
    if triplet.gt_depth is not None:
        imageio.write_pfm(directory / "depth_t.pfm", triplet.gt_depth[0])
    meta = {
        "format_version": 1,
        "intrinsics": triplet.intrinsics.to_list(),
        "pose_1": _pose_list(triplet.pose_1),
        "pose_2": _pose_list(triplet.pose_2),
        "scene": triplet.spec.to_dict() if triplet.spec is not None else None,
    }
    (directory / "meta.json").write_text(json.dumps(meta, indent=2))


def read_triplet(directory: Path) -> Triplet:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text())
    depth_path = directory / "depth_t.pfm"
    gt = imageio.read_pfm(depth_path)[None].astype(np.float64) if depth_path.exists() else None
    spec = SceneSpec.from_dict(meta["scene"]) if meta.get("scene") else None
    pose_1 = Pose.from_vector(meta["pose_1"]) if meta.get("pose_1") else None
    pose_2 = Pose.from_vector(meta["pose_2"]) if meta.get("pose_2") else None
    return Triplet(
        s1=imageio.read_ppm(directory / "s1.ppm"),
        t=imageio.read_ppm(directory / "t.ppm"),
        s2=imageio.read_ppm(directory / "s2.ppm"),
        intrinsics=Intrinsics.from_list(meta["intrinsics"]),
        gt_depth=gt,
        pose_1=pose_1,
        pose_2=pose_2,
        spec=spec,
    )


def write_dataset(triplets: list[Triplet], out: Path, seed: int | None = None) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for i, trip in enumerate(triplets):
        name = f"scene_{i:04d}"
        write_triplet(trip, out / name)
        names.append(name)
    manifest = {"format_version": 1, "count": len(names), "seed": seed, "scenes": names}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


def read_dataset(root: Path) -> list[Triplet]:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("count") != len(manifest.get("scenes", [])):
        raise ValueError(f"manifest {manifest_path} is inconsistent: count does not match scene list")
    return [read_triplet(root / name) for name in manifest["scenes"]]
