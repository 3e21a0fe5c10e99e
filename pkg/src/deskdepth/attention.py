"""Relational self-attention on the deepest encoder feature map.

For positions i, j of a feature map X the block computes

    y_i = 1/N * sum_j  w_f . [theta(x_i), phi(x_j)] * g(x_j)

with theta, phi, g 1x1 convolutions to C/2 channels and w_f a single output
channel over the concatenated pair.  There is no softmax.  Because the pair
relation is linear in the concatenation, it splits into a query half and a key
half, giving the O(N) form used for training:

    y_i = (w_f1 . theta(x_i)) * mean_j g(x_j) + mean_j (w_f2 . phi(x_j)) g(x_j)

``brute_force_attention`` keeps the literal double loop as a reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .gradcheck import register
from .tensor import Tensor


@dataclass
class AttentionParams:
    w_theta: Tensor  # (C/2, C, 1, 1)
    w_phi: Tensor  # (C/2, C, 1, 1)
    w_g: Tensor  # (C/2, C, 1, 1)
    w_f: Tensor  # (1, C, 1, 1), first half pairs with theta, second with phi
    w_out: Tensor  # (C, C/2, 1, 1), lifts y back to C channels for the residual

    @classmethod
    def init(cls, channels: int, rng: np.random.Generator, scale: float = 0.1) -> AttentionParams:
        if channels % 2:
            raise ValueError("attention needs an even channel count")
        half = channels // 2

        def u(*shape):
            bound = scale / np.sqrt(shape[1])
            return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

        return cls(
            w_theta=u(half, channels, 1, 1),
            w_phi=u(half, channels, 1, 1),
            w_g=u(half, channels, 1, 1),
            w_f=Tensor(np.zeros((1, channels, 1, 1)), requires_grad=True),
            w_out=u(channels, half, 1, 1),
        )

    def named(self) -> dict[str, Tensor]:
        return {
            "w_theta": self.w_theta,
            "w_phi": self.w_phi,
            "w_g": self.w_g,
            "w_f": self.w_f,
            "w_out": self.w_out,
        }

    @property
    def channels(self) -> int:
        return self.w_theta.shape[1]


def _check(x: Tensor, params: AttentionParams) -> None:
    if x.ndim != 4 or x.shape[1] != params.channels:
        raise T.ShapeError(f"attention expects {params.channels} channels, got {x.shape}")
    if x.shape[2] * x.shape[3] < 1:
        raise T.ShapeError("attention needs at least one spatial position")


def relation_output(x, params: AttentionParams) -> Tensor:
    """Y (N, C/2, H, W): the attention aggregate before the output projection."""
    x = T._as_tensor(x)
    _check(x, params)
    half = params.w_theta.shape[0]
    theta = T.conv2d(x, params.w_theta)
    phi = T.conv2d(x, params.w_phi)
    g = T.conv2d(x, params.w_g)
    query = T.conv2d(theta, params.w_f[:, :half])
    key = T.conv2d(phi, params.w_f[:, half:])
    mean_g = T.mean(g, axes=(2, 3), keepdims=True)
    mean_kg = T.mean(key * g, axes=(2, 3), keepdims=True)
    return query * mean_g + mean_kg


def relational_self_attention(x, params: AttentionParams) -> Tensor:
    """Residual output X + W_out Y, same shape as X."""
    x = T._as_tensor(x)
    return x + T.conv2d(relation_output(x, params), params.w_out)


def brute_force_relation(x: np.ndarray, params: AttentionParams) -> np.ndarray:
    """Literal O(N^2) evaluation of Y; small inputs only."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    n, c, h, w = x.shape
    npos = h * w
    if npos > 256:
        raise ValueError("brute force attention is limited to 256 positions")
    half = params.w_theta.shape[0]
    wt = params.w_theta.data.reshape(half, c)
    wp = params.w_phi.data.reshape(half, c)
    wg = params.w_g.data.reshape(half, c)
    wf = params.w_f.data.reshape(c)
    out = np.zeros((n, half, npos))
    for b in range(n):
        feats = x[b].reshape(c, npos)
        for i in range(npos):
            theta_i = wt @ feats[:, i]
            acc = np.zeros(half)
            for j in range(npos):
                pair = np.concatenate([theta_i, wp @ feats[:, j]])
                acc += (wf @ pair) * (wg @ feats[:, j])
            out[b, :, i] = acc / npos
    return out.reshape(n, half, h, w)


def brute_force_attention(x, params: AttentionParams) -> np.ndarray:
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    y = brute_force_relation(x, params)
    c, half = params.w_out.shape[:2]
    proj = np.einsum("oc,nchw->nohw", params.w_out.data.reshape(c, half), y)
    return x + proj


def attach(x, params: AttentionParams | None) -> Tensor:
    """Concatenate attention output with the raw features: (N, 2C, H, W).

    With ``params=None`` (attention disabled) the raw features pass through.
    """
    x = T._as_tensor(x)
    if params is None:
        return x
    return T.concat_channels(relational_self_attention(x, params), x)


@register("relational_self_attention", 1e-5)
def _case_attention(rng):
    c = 4

    def fn(x, wt, wp, wg, wf, wo):
        return relational_self_attention(x, AttentionParams(wt, wp, wg, wf, wo))

    return fn, [
        rng.standard_normal((2, c, 3, 3)),
        rng.standard_normal((2, c, 1, 1)),
        rng.standard_normal((2, c, 1, 1)),
        rng.standard_normal((2, c, 1, 1)),
        rng.standard_normal((1, c, 1, 1)),
        rng.standard_normal((c, 2, 1, 1)),
    ]
