"""Finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Compare the tape gradient of ``f`` at ``x`` against central differences.

    ``f`` must be a pure function of ``x`` returning a scalar tensor. Returns
    the maximum over coordinates of ``|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)``.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    x.requires_grad = True
    x.grad = None
    f(x).backward()
    g_ad = x.grad if x.grad is not None else np.zeros_like(x.data)
    g_ad = g_ad.copy()

    g_fd = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    fd_flat = g_fd.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f(x).data)
            flat[i] = orig - eps
            down = float(f(x).data)
            flat[i] = orig
            fd_flat[i] = (up - down) / (2.0 * eps)

    denom = np.maximum(1e-8, np.abs(g_ad) + np.abs(g_fd))
    rel = np.abs(g_ad - g_fd) / denom
    return float(rel.max()) if rel.size else 0.0


def grad_check_many(
    f: Callable[[], Tensor], xs: Sequence[Tensor], eps: float = 1e-5
) -> float:
    """Like ``grad_check`` but for a closure over several live tensors.

    Runs one backward pass, then finite-differences every coordinate of every
    tensor in ``xs`` in place. Used to vet whole-model losses where the inputs
    are the registered parameters themselves.
    """
    for x in xs:
        x.grad = None
    f().backward()
    grads = [x.grad.copy() if x.grad is not None else np.zeros_like(x.data) for x in xs]

    worst = 0.0
    with no_grad():
        for x, g_ad in zip(xs, grads):
            flat = x.data.reshape(-1)
            g_flat = g_ad.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = float(f().data)
                flat[i] = orig - eps
                down = float(f().data)
                flat[i] = orig
                g_fd = (up - down) / (2.0 * eps)
                rel = abs(g_flat[i] - g_fd) / max(1e-8, abs(g_flat[i]) + abs(g_fd))
                worst = max(worst, rel)
    return worst
