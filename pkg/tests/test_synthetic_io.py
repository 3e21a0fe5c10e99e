import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from deskdepth import imageio as IO
from deskdepth import synthetic as S
from deskdepth.geometry import Pose


# ---------------------------------------------------------------------------
# PPM


def test_known_bytes_ppm(tmp_path):
    path = tmp_path / "k.ppm"
    pixels = bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 51, 102, 153])
    path.write_bytes(b"P6\n# hand made\n2 2\n255\n" + pixels)
    img = IO.read_ppm(path)
    assert img.shape == (3, 2, 2)
    np.testing.assert_array_equal(img[:, 0, 0], [1, 0, 0])
    np.testing.assert_array_equal(img[:, 0, 1], [0, 1, 0])
    np.testing.assert_array_equal(img[:, 1, 0], [0, 0, 1])
    np.testing.assert_array_equal(img[:, 1, 1], np.array([51, 102, 153]) / 255.0)


def test_ppm_round_trip_exact_after_quantization(tmp_path):
    img = np.random.default_rng(0).random((3, 5, 7))
    IO.write_ppm(tmp_path / "a.ppm", img)
    back = IO.read_ppm(tmp_path / "a.ppm")
    np.testing.assert_array_equal(back, IO.to_uint8(img) / 255.0)
    IO.write_ppm(tmp_path / "b.ppm", back)
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()


@pytest.mark.parametrize(
    "content",
    [
        b"P5\n2 2\n255\n" + bytes(4),
        b"P6\n2 2\n65535\n" + bytes(24),
        b"P6\n2 2\n255\n" + bytes(11),
        b"P6\n2\n",
        b"P6\nab 2\n255\n" + bytes(12),
    ],
)
def test_malformed_ppm_rejected(tmp_path, content):
    path = tmp_path / "bad.ppm"
    path.write_bytes(content)
    with pytest.raises(IO.FormatError):
        IO.read_ppm(path)


# ---------------------------------------------------------------------------
# PFM


@settings(max_examples=30, deadline=None)
@given(
    hnp.arrays(
        np.float32,
        hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=9),
        elements=st.floats(-1e6, 1e6, width=32, allow_nan=False),
    )
)
def test_pfm_round_trip_bit_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("pfm") / "d.pfm"
    IO.write_pfm(path, values)
    back = IO.read_pfm(path)
    assert back.dtype == np.float32
    assert back.tobytes() == values.tobytes()


def test_pfm_header_and_row_order(tmp_path):
    values = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    IO.write_pfm(tmp_path / "d.pfm", values)
    raw = (tmp_path / "d.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    # bottom row first, little endian
    assert raw[-16:] == np.array([3, 4, 1, 2], dtype="<f4").tobytes()


def test_pfm_scale_sign_selects_endianness(tmp_path):
    values = np.array([[1.5, -2.25, 7.0]], dtype=np.float32)
    (tmp_path / "le.pfm").write_bytes(b"Pf\n3 1\n-1.0\n" + values.astype("<f4").tobytes())
    (tmp_path / "be.pfm").write_bytes(b"Pf\n3 1\n1.0\n" + values.astype(">f4").tobytes())
    np.testing.assert_array_equal(IO.read_pfm(tmp_path / "le.pfm"), values)
    np.testing.assert_array_equal(IO.read_pfm(tmp_path / "be.pfm"), values)


@pytest.mark.parametrize(
    "content",
    [b"PF\n1 1\n-1.0\n" + bytes(12), b"Pf\n2 2\n-1.0\n" + bytes(15), b"Pf\n1 1\n0\n" + bytes(4)],
)
def test_malformed_pfm_rejected(tmp_path, content):
    path = tmp_path / "bad.pfm"
    path.write_bytes(content)
    with pytest.raises(IO.FormatError):
        IO.read_pfm(path)


# ---------------------------------------------------------------------------
# false colour


def test_colormap_table_shape():
    table = IO.colormap()
    assert table.shape == (256, 3) and table.dtype == np.uint8
    # dark to bright
    assert table[0].sum() < table[-1].sum()


def test_false_color_extremes_and_monotone_ramp():
    ramp = np.linspace(1.0, 9.0, 40).reshape(5, 8)
    img = IO.false_color(ramp)
    table = IO.colormap()
    assert img.shape == (3, 5, 8) and img.dtype == np.uint8
    np.testing.assert_array_equal(img[:, 0, 0], table[0])
    np.testing.assert_array_equal(img[:, -1, -1], table[-1])
    idx = IO.colormap_indices(ramp).ravel()
    assert np.all(np.diff(idx) >= 0)


def test_false_color_constant_warns(caplog):
    with caplog.at_level(logging.WARNING):
        img = IO.false_color(np.full((4, 4), 3.0))
    assert "constant" in caplog.text
    assert len({tuple(img[:, i, j]) for i in range(4) for j in range(4)}) == 1


def test_false_color_rejects_non_finite():
    with pytest.raises(ValueError):
        IO.false_color(np.array([[1.0, np.inf]]))


# ---------------------------------------------------------------------------
# scenes


def test_fronto_plane_constant_depth():
    image, depth = S.gen_scene(S.SceneSpec("fronto", 5.0, texture_seed=3))
    assert np.all(depth == 5.0)
    assert image.min() >= 0.0 and image.max() <= 1.0


def test_slanted_plane_matches_ray_plane_intersection():
    spec = S.SceneSpec("slanted", 8.0, tilt=1.1, width=65, height=65, focal=64.0, texture_seed=1)
    _, depth = S.gen_scene(spec)
    assert depth[0, 32, 32] == pytest.approx(8.0, rel=1e-14)
    # plane n = (0, tilt, 1) through (0, 0, d): along ray (rx, ry, 1) depth is d / (1 + tilt * ry)
    ry = (np.arange(65) - 32.0) / 64.0
    expected = 8.0 / (1.0 + 1.1 * ry)
    np.testing.assert_allclose(depth[0], np.broadcast_to(expected[:, None], (65, 65)), rtol=1e-13)


def test_depth_out_of_range_rejected():
    with pytest.raises(ValueError):
        S.SceneSpec("fronto", 500.0)
    with pytest.raises(ValueError):
        S.SceneSpec("occlusion", 10.0, fg_depth=12.0, fg_rect=(0.2, 0.2, 0.5, 0.5))
    with pytest.raises(ValueError):
        S.SceneSpec("slanted", 10.0, tilt=3.0)


def test_texture_gradient_energy_for_default_seeds():
    energies = [S.texture_gradient_energy(S.make_triplet(seed).t) for seed in range(40)]
    assert min(energies) > 1e-5


def test_identity_poses_give_identical_frames():
    spec = S.sample_scene_spec(np.random.default_rng(9))
    trip = S.render_triplet(spec, Pose(np.zeros(3), np.zeros(3)), Pose(np.zeros(3), np.zeros(3)))
    assert np.array_equal(trip.s1, trip.t) and np.array_equal(trip.s2, trip.t)


def test_disparity_law_shift_of_6_4_pixels():
    """tx = 0.5 at depth 5 with fx = 64: the point seen at target column x sits at x + 6.4 in the source."""
    spec = S.SceneSpec("fronto", 5.0, texture_seed=4)
    pose = Pose(np.zeros(3), np.array([0.5, 0.0, 0.0]))
    ys, xs = np.mgrid[0:64, 0:50].astype(float)
    target, _, _ = S._render_at(spec, None, xs.ravel(), ys.ravel())
    source, depth, _ = S._render_at(spec, pose, xs.ravel() + 6.4, ys.ravel())
    np.testing.assert_allclose(source, target, atol=1e-12)
    np.testing.assert_allclose(depth, 5.0, rtol=1e-14)


def test_excessive_motion_rejected():
    spec = S.SceneSpec("fronto", 5.0)
    far = Pose(np.zeros(3), np.array([3.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        S.render_triplet(spec, far, Pose(np.zeros(3), np.zeros(3)))


def test_generation_is_deterministic():
    a, b = S.make_triplet(123), S.make_triplet(123)
    for x, y in zip((a.s1, a.t, a.s2, a.gt_depth, a.validity), (b.s1, b.t, b.s2, b.gt_depth, b.validity)):
        assert np.array_equal(x, y)
    assert not np.array_equal(a.t, S.make_triplet(124).t)


def test_occlusion_layout_has_invalid_pixels():
    trip = S.make_triplet(0, layout="occlusion")
    assert trip.validity.min() == 0.0 and trip.validity.mean() > 0.5
    assert S.self_consistency_error(trip) < 1e-3


def test_rerender_keeps_geometry():
    trip = S.make_triplet(5)
    big = S.rerender(trip, 128, 128)
    assert big.t.shape == (3, 128, 128) and big.intrinsics.fx == 2 * trip.intrinsics.fx
    assert S.self_consistency_error(big) < 1e-3
    assert big.gt_depth.min() == pytest.approx(trip.gt_depth.min(), rel=0.1)


def test_dataset_layout_round_trip(tmp_path):
    trips = S.make_dataset(2, seed=3)
    manifest = S.write_dataset(trips, tmp_path / "ds", seed=3)
    assert manifest["count"] == 2
    scene = tmp_path / "ds" / "scene_0001"
    assert sorted(p.name for p in scene.iterdir()) == ["depth_t.pfm", "meta.json", "s1.ppm", "s2.ppm", "t.ppm"]
    meta = json.loads((scene / "meta.json").read_text())
    assert len(meta["intrinsics"]) == 6 and len(meta["pose_1"]) == 6
    back = S.read_dataset(tmp_path / "ds")
    for orig, read in zip(trips, back):
        np.testing.assert_array_equal(read.t, IO.to_uint8(orig.t) / 255.0)
        np.testing.assert_array_equal(read.gt_depth, orig.gt_depth.astype(np.float32))
        np.testing.assert_array_equal(read.pose_1.vector(), orig.pose_1.vector())


def test_missing_or_inconsistent_manifest(tmp_path):
    with pytest.raises(FileNotFoundError):
        S.read_dataset(tmp_path)
    (tmp_path / "manifest.json").write_text(json.dumps({"count": 3, "scenes": ["a"]}))
    with pytest.raises(ValueError):
        S.read_dataset(tmp_path)
