"""Shared conv encoder, 4-scale U-Net style depth decoder and pose sub-network."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .attention import AttentionParams, attach
from .geometry import D_MAX, D_MIN, POSE_SCALE, disparity_to_depth
from .tensor import Tensor

_MEAN = 0.45
_STD = 0.225


@dataclass
class NetworkConfig:
    encoder_channels: list = field(default_factory=lambda: [16, 32, 64, 128])
    decoder_channels: list = field(default_factory=lambda: [8, 16, 24, 32])
    pose_channels: int = 32
    scales: int = 4
    d_min: float = D_MIN
    d_max: float = D_MAX
    attention_enabled: bool = True

    def __post_init__(self):
        enc = list(self.encoder_channels)
        if any(b <= a for a, b in zip(enc, enc[1:])):
            raise ValueError(f"encoder channels must be strictly increasing, got {enc}")
        if len(self.decoder_channels) != len(enc):
            raise ValueError("decoder needs one width per encoder stage")
        if not 1 <= self.scales <= len(enc):
            raise ValueError(f"scales must be in [1, {len(enc)}], got {self.scales}")
        if not 0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")

    def to_dict(self) -> dict:
        return asdict(self)


def _kaiming(rng, out_c, in_c, k):
    std = np.sqrt(2.0 / (in_c * k * k))
    return rng.standard_normal((out_c, in_c, k, k)) * std


class DepthPoseNet:
    """Parameter container plus the forward functions of the three sub-networks.

    Parameters live in :attr:`params` (ordered, name -> trainable leaf); the
    name prefix before the first dot is the parameter group (``encoder``,
    ``decoder``, ``attention``, ``pose``).
    """

    def __init__(self, config: NetworkConfig | None = None, seed: int = 0):
        self.config = config or NetworkConfig()
        self.params: dict[str, Tensor] = {}
        self._build(np.random.default_rng(seed))

    # ------------------------------------------------------------------ setup
    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = Tensor(value, requires_grad=True, name=name)

    def _conv(self, rng, name: str, in_c: int, out_c: int, k: int = 3, scale: float = 1.0) -> None:
        self._add(f"{name}.weight", _kaiming(rng, out_c, in_c, k) * scale)
        self._add(f"{name}.bias", np.zeros(out_c))

    def _build(self, rng) -> None:
        cfg = self.config
        enc = list(cfg.encoder_channels)
        in_c = 3
        for i, c in enumerate(enc):
            self._conv(rng, f"encoder.stage{i}", in_c, c)
            in_c = c

        deep = enc[-1]
        if cfg.attention_enabled:
            att = AttentionParams.init(deep, rng)
            for key, tensor in att.named().items():
                tensor.name = f"attention.{key}"
                self.params[f"attention.{key}"] = tensor

        dec = list(cfg.decoder_channels)
        x_c = 2 * deep if cfg.attention_enabled else deep
        for level in range(len(enc) - 1, -1, -1):
            self._conv(rng, f"decoder.up{level}a", x_c, dec[level])
            skip = enc[level - 1] if level > 0 else 0
            self._conv(rng, f"decoder.up{level}b", dec[level] + skip, dec[level])
            if level < cfg.scales:
                self._conv(rng, f"decoder.disp{level}", dec[level], 1, scale=0.1)
            x_c = dec[level]

        pc = cfg.pose_channels
        self._conv(rng, "pose.squeeze", 2 * deep, pc, k=1)
        self._conv(rng, "pose.conv1", pc, pc)
        self._conv(rng, "pose.conv2", pc, pc)
        self._conv(rng, "pose.conv3", pc, pc)
        self._add("pose.head.weight", rng.standard_normal((pc, 6)) * np.sqrt(1.0 / pc))
        self._add("pose.head.bias", np.zeros((1, 6)))

    # -------------------------------------------------------------- accessors
    def group(self, name: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.params.items() if k.split(".", 1)[0] == name}

    @property
    def groups(self) -> list[str]:
        return sorted({k.split(".", 1)[0] for k in self.params})

    @property
    def attention_params(self) -> AttentionParams | None:
        if not self.config.attention_enabled:
            return None
        p = self.params
        return AttentionParams(
            p["attention.w_theta"], p["attention.w_phi"], p["attention.w_g"], p["attention.w_f"], p["attention.w_out"]
        )

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"state is missing parameters: {sorted(missing)[:5]}")
        for k, p in self.params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"parameter {k}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # ---------------------------------------------------------------- forward
    def _apply_conv(self, name: str, x: Tensor, stride: int = 1, act: bool = True) -> Tensor:
        w = self.params[f"{name}.weight"]
        k = w.shape[2]
        out = T.conv2d(x, w, self.params[f"{name}.bias"], stride=stride, pad=k // 2)
        return T.elu(out) if act else out

    def encode(self, image) -> list[Tensor]:
        """Feature pyramid; stage k has spatial size H / 2**(k+1)."""
        image = T._as_tensor(image)
        n_stage = len(self.config.encoder_channels)
        h, w = image.shape[2], image.shape[3]
        if h % 2**n_stage or w % 2**n_stage:
            raise T.ShapeError(f"input size {h}x{w} must be divisible by {2 ** n_stage}")
        x = (image - _MEAN) / _STD
        feats = []
        for i in range(n_stage):
            x = self._apply_conv(f"encoder.stage{i}", x, stride=2)
            feats.append(x)
        return feats

    def attend(self, deepest: Tensor) -> Tensor:
        return attach(deepest, self.attention_params)

    def decode(self, pyramid: list[Tensor], attended: Tensor | None = None) -> list[Tensor]:
        """Sigmoid disparities, finest first: index s has resolution H / 2**s."""
        n_stage = len(self.config.encoder_channels)
        if len(pyramid) != n_stage:
            raise T.ShapeError(f"expected {n_stage} pyramid stages, got {len(pyramid)}")
        x = attended if attended is not None else self.attend(pyramid[-1])
        outputs: dict[int, Tensor] = {}
        for level in range(n_stage - 1, -1, -1):
            x = self._apply_conv(f"decoder.up{level}a", x)
            x = T.upsample_nearest2x(x)
            if level > 0:
                x = T.concat_channels(x, pyramid[level - 1])
            x = self._apply_conv(f"decoder.up{level}b", x)
            if level < self.config.scales:
                outputs[level] = T.sigmoid(self._apply_conv(f"decoder.disp{level}", x, act=False))
        return [outputs[s] for s in range(self.config.scales)]

    def pose(self, feat_t: Tensor, feat_s: Tensor) -> Tensor:
        """(N, 6) pose, target -> source: axis-angle then translation."""
        if feat_t.shape != feat_s.shape:
            raise T.ShapeError(f"pose inputs differ: {feat_t.shape} vs {feat_s.shape}")
        x = T.concat_channels(feat_t, feat_s)
        x = self._apply_conv("pose.squeeze", x)
        x = self._apply_conv("pose.conv1", x)
        x = self._apply_conv("pose.conv2", x)
        x = self._apply_conv("pose.conv3", x)
        pooled = T.mean(x, axes=(2, 3))
        out = T.matmul(pooled, self.params["pose.head.weight"]) + self.params["pose.head.bias"]
        return out * POSE_SCALE

    def to_depth(self, disp) -> Tensor:
        return disparity_to_depth(disp, self.config.d_min, self.config.d_max)

    def predict_disparity(self, image) -> list[Tensor]:
        return self.decode(self.encode(image))

    def predict_depth(self, image) -> np.ndarray:
        """Finest-scale depth for a batch of images, no graph recorded."""
        with T.no_grad():
            return self.to_depth(self.predict_disparity(image)[0]).data

    def forward_full(self, target, sources, with_source_depth: bool = False) -> dict:
        """One shared-encoder pass over the target and its sources.

        Returns the target disparities/depths at every scale, one pose per
        source, the shared pyramid, and optionally source depths (diagnostic,
        computed without gradient).
        """
        target = T._as_tensor(target)
        n = target.shape[0]
        stacked = T.concat([target] + [T._as_tensor(s) for s in sources], axis=0)
        pyramid = self.encode(stacked)
        feats_t = [f[0:n] for f in pyramid]
        disps = self.decode(feats_t)
        deep = pyramid[-1]
        poses = [self.pose(deep[0:n], deep[(k + 1) * n : (k + 2) * n]) for k in range(len(sources))]
        out = {
            "disp": disps,
            "depth": [self.to_depth(d) for d in disps],
            "poses": poses,
            "pyramid": pyramid,
            "target_features": feats_t,
        }
        if with_source_depth:
            with T.no_grad():
                out["source_depth"] = [
                    self.to_depth(self.decode([f[(k + 1) * n : (k + 2) * n] for f in pyramid])[0])
                    for k in range(len(sources))
                ]
        return out
