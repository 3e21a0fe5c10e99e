"""Adam with per-group freezing."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, Tensor], frozen=()) -> None:
        """One bias-corrected update of every parameter whose group is not frozen.

        Parameters without a gradient count as zero-gradient.  Frozen
        parameters and their moments are left exactly as they were.
        """
        frozen = set(frozen)
        for name, p in params.items():
            if p.grad is not None and p.grad.shape != p.shape:
                raise ValueError(f"{name}: gradient shape {p.grad.shape} does not match {p.shape}")
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"{name}: non-finite gradient")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            if name.split(".", 1)[0] in frozen:
                continue
            g = p.grad if p.grad is not None else np.zeros(p.shape)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros(p.shape)
                self.v[name] = np.zeros(p.shape)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"adam.t": np.array([float(self.t)])}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name].copy()
            out[f"adam.v.{name}"] = self.v[name].copy()
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["adam.t"][0])
        self.m = {k[len("adam.m.") :]: v.copy() for k, v in arrays.items() if k.startswith("adam.m.")}
        self.v = {k[len("adam.v.") :]: v.copy() for k, v in arrays.items() if k.startswith("adam.v.")}
        if set(self.m) != set(self.v):
            raise ValueError("optimizer state has unmatched moment buffers")
