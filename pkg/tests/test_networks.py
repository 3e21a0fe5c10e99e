import numpy as np
import pytest

from deskdepth import checkpoint as ckpt
from deskdepth import gradcheck as G
from deskdepth import losses as L
from deskdepth import synthetic as S
from deskdepth import tensor as T
from deskdepth.geometry import warp
from deskdepth.networks import DepthPoseNet, NetworkConfig
from deskdepth.optim import Adam


@pytest.fixture(scope="module")
def net():
    return DepthPoseNet(NetworkConfig(), seed=0)


@pytest.fixture(scope="module")
def images():
    return np.random.default_rng(0).random((2, 3, 64, 64))


def test_encoder_stage_sizes(net, images):
    feats = net.encode(images)
    assert [f.shape[2] for f in feats] == [32, 16, 8, 4]
    assert [f.shape[1] for f in feats] == [16, 32, 64, 128]


def test_indivisible_input_rejected(net):
    with pytest.raises(T.ShapeError):
        net.encode(np.zeros((1, 3, 60, 64)))


def test_encoder_is_pure(net, images):
    a = net.encode(images)
    b = net.encode(images.copy())
    for fa, fb in zip(a, b):
        np.testing.assert_array_equal(fa.data, fb.data)


def test_decoder_outputs(net, images):
    disps = net.predict_disparity(images)
    assert [d.shape for d in disps] == [(2, 1, 64, 64), (2, 1, 32, 32), (2, 1, 16, 16), (2, 1, 8, 8)]
    for d in disps:
        assert np.all((d.data > 0) & (d.data < 1))


def test_disabling_attention_changes_only_deepest_decoder_input():
    on = DepthPoseNet(NetworkConfig(attention_enabled=True), seed=0)
    off = DepthPoseNet(NetworkConfig(attention_enabled=False), seed=0)
    diff = {k for k in on.params if k not in off.params or on.params[k].shape != off.params[k].shape}
    assert diff == {k for k in on.params if k.startswith("attention.")} | {"decoder.up3a.weight"}
    assert on.params["decoder.up3a.weight"].shape[1] == 2 * off.params["decoder.up3a.weight"].shape[1]


def test_stage1_receives_gradient_from_stage4(net, images):
    net.zero_grad()
    T.backward(T.sum(net.encode(images)[-1]))
    assert np.any(net.params["encoder.stage0.weight"].grad != 0)
    net.zero_grad()


def test_zeroed_pose_head_gives_identity(images):
    model = DepthPoseNet(NetworkConfig(), seed=1)
    model.params["pose.head.weight"].data[:] = 0.0
    feats = model.encode(images)[-1]
    np.testing.assert_array_equal(model.pose(feats[0:1], feats[1:2]).data, 0.0)


def test_pose_is_order_sensitive(net, images):
    feats = net.encode(images)[-1]
    a = net.pose(feats[0:1], feats[1:2]).data
    b = net.pose(feats[1:2], feats[0:1]).data
    assert not np.allclose(a, b)


def test_forward_full_outputs_and_shared_pyramid(net, images):
    target, s1, s2 = images[0:1], images[1:2], images[0:1][:, :, ::-1].copy()
    out = net.forward_full(target, [s1, s2], with_source_depth=True)
    assert len(out["poses"]) == 2 and len(out["disp"]) == 4
    assert len(out["source_depth"]) == 2
    # the depth decoder consumed slices of the very pyramid the pose head consumed
    for f_t, f in zip(out["target_features"], out["pyramid"]):
        assert f_t._parents[0] is f
    again = net.forward_full(target, [s1, s2])
    np.testing.assert_array_equal(again["disp"][0].data, out["disp"][0].data)


def test_pose_head_gradient_matches_finite_difference():
    trip = S.make_triplet(11, 32, 32)
    model = DepthPoseNet(NetworkConfig(), seed=2)
    depth = T.Tensor(trip.gt_depth[None])
    target = trip.t[None]
    head = model.params["pose.head.weight"]

    def loss():
        out = model.forward_full(target, [trip.s1[None]])
        w = warp(trip.s1[None], depth, out["poses"][0], trip.intrinsics)
        return T.mean(L.pe(w, target))

    model.zero_grad()
    T.backward(loss())
    analytic = head.grad.copy()
    numeric = np.zeros_like(analytic)
    with T.no_grad():
        for idx in np.ndindex(*head.shape):
            if idx[0] >= 4:
                continue
            old = head.data[idx]
            head.data[idx] = old + 1e-5
            up = loss().item()
            head.data[idx] = old - 1e-5
            down = loss().item()
            head.data[idx] = old
            numeric[idx] = (up - down) / 2e-5
    assert G.relative_error(analytic[:4], numeric[:4]) < 1e-3


def test_save_load_forward_bit_exact(tmp_path, images):
    model = DepthPoseNet(NetworkConfig(), seed=3)
    path = tmp_path / "m.dfck"
    ckpt.save(path, model.state_dict())
    other = DepthPoseNet(NetworkConfig(), seed=4)
    other.load_state_dict(ckpt.load(path))
    np.testing.assert_array_equal(model.predict_depth(images), other.predict_depth(images))


def test_every_parameter_gets_gradient_after_one_step():
    """Dead-parameter check; the relation weight starts at zero, so one update wakes theta and phi."""
    from deskdepth.config import TrainConfig
    from deskdepth.trainer import Batch, compute_loss

    cfg = TrainConfig()
    model = DepthPoseNet(cfg.model, seed=0)
    batch = Batch.from_triplets(S.make_dataset(2, seed=5))
    opt = Adam(1e-3)
    dead = None
    for step in range(2):
        model.zero_grad()
        total, _, _ = compute_loss(model, batch, cfg.loss, cfg.aug, np.random.default_rng(step))
        T.backward(total)
        dead = [k for k, p in model.params.items() if p.grad is None or not np.any(p.grad != 0)]
        opt.step(model.params)
    assert dead == []
