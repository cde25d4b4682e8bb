"""Named parameter store and the Adam update rule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .tensor import Tensor


@dataclass
class Parameter:
    value: Tensor
    m: np.ndarray
    v: np.ndarray


@dataclass
class ParamStore:
    """Named parameters with their Adam moment buffers and a shared step counter.

    Insertion order is the canonical parameter order used by checkpoints, so
    parameters must be registered in a deterministic sequence.
    """

    params: dict[str, Parameter] = field(default_factory=dict)
    step_count: int = 0

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self.params[name] = Parameter(t, np.zeros_like(t.data), np.zeros_like(t.data))
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name].value

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def n_values(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def tensors(self) -> list[Tensor]:
        return [p.value for p in self.params.values()]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.value.grad = None

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in values.items():
            p = self.params[name]
            if p.value.data.shape != arr.shape:
                raise ShapeError(f"parameter {name}: stored shape {arr.shape} "
                                 f"!= expected {p.value.data.shape}")
            p.value.data[...] = arr

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.value.data.copy() for name, p in self.params.items()}


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-6,
) -> None:
    """One Adam update with bias correction over every parameter in the store.

    Weight decay is decoupled: ``w <- w - lr*wd*w`` is applied before the Adam
    delta and never enters the moment estimates. Parameters whose gradient is
    unset are treated as having zero gradient (their weights still decay).
    """
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - math.pow(beta1, t)
    bc2 = 1.0 - math.pow(beta2, t)
    for p in store.params.values():
        w = p.value.data
        if weight_decay:
            w -= (lr * weight_decay) * w
        g = p.value.grad
        if g is None:
            g = np.zeros_like(w)
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        w -= lr * (p.m / bc1) / (np.sqrt(p.v / bc2) + eps)
