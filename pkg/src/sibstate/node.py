"""Feature-refining flow: a learned dynamics field integrated by fixed-step RK4.

The field is autonomous and shape-preserving, so the integrated map can sit in
the middle of the encoder without changing any downstream dimensions. All
solver intermediates stay on the tape; gradients reach both the initial state
and the field parameters by backpropagating through the unrolled steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError
from .numerics import Tensor, conv2d, tanh
from .numerics.optim import ParamStore


@dataclass(frozen=True)
class NodeConfig:
    """Fixed-step solver settings over the unit pseudo-time interval.

    Two RK4 steps keep the desk-scale training loop affordable on one core;
    the step count is free to raise when compute allows, since the field is
    learned against whatever solver resolution is in effect.
    """

    n_steps: int = 2
    t0: float = 0.0
    t1: float = 1.0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not self.t1 > self.t0:
            raise ValueError("t1 must exceed t0")


class DynamicsNet:
    """Two-layer convolutional vector field, width-preserving on C x H x W.

    Both convolutions use a (1, k) kernel with symmetric width padding so the
    output shape always equals the input shape. The final layer starts at
    zero, making the freshly initialized flow an exact identity.
    """

    def __init__(
        self,
        store: ParamStore,
        rng: np.random.Generator,
        channels: int = 64,
        kernel_w: int = 3,
        prefix: str = "node",
    ):
        if kernel_w % 2 != 1:
            raise ValueError("dynamics kernel width must be odd to preserve shape")
        self.channels = channels
        self.kernel_w = kernel_w
        self.pad = (0, kernel_w // 2)
        bound = 1.0 / np.sqrt(channels * kernel_w)
        self.w1 = store.add(f"{prefix}.conv1.weight",
                            rng.uniform(-bound, bound, (channels, channels, 1, kernel_w)))
        self.b1 = store.add(f"{prefix}.conv1.bias", np.zeros(channels))
        self.w2 = store.add(f"{prefix}.conv2.weight",
                            np.zeros((channels, channels, 1, kernel_w)))
        self.b2 = store.add(f"{prefix}.conv2.bias", np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        h = tanh(conv2d(x, self.w1, self.b1, stride=(1, 1), padding=self.pad))
        return conv2d(h, self.w2, self.b2, stride=(1, 1), padding=self.pad)


def rk4_step(f: Callable[[Tensor], Tensor], x: Tensor, h: float) -> Tensor:
    """One classical Runge-Kutta step of size ``h`` for an autonomous field."""
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    k1 = f(x)
    k2 = f(x + (h / 2.0) * k1)
    k3 = f(x + (h / 2.0) * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(f: Callable[[Tensor], Tensor], x0: Tensor, config: NodeConfig) -> Tensor:
    """Integrate ``dx/dt = f(x)`` from t0 to t1 with ``n_steps`` RK4 steps."""
    h = (config.t1 - config.t0) / config.n_steps
    x = x0
    for step in range(config.n_steps):
        x = rk4_step(f, x, h)
        if not np.all(np.isfinite(x.data)):
            raise DivergenceError(
                f"non-finite state after solver step {step + 1}/{config.n_steps}")
    return x
