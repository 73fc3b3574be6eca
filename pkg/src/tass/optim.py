"""Adam with bias correction, keyed by dotted parameter path."""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from tass.errors import DimensionError, NonFiniteGradientError
from tass.numcore import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray | None],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Apply one Adam update in place.

    Every gradient is validated before any parameter moves, so a non-finite
    gradient aborts the whole step. A missing gradient counts as zero.
    """
    resolved: dict[str, np.ndarray] = {}
    for path, p in params.items():
        g = grads.get(path)
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=p.data.dtype)
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {path} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(path)
        resolved[path] = g

    state.step += 1
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for path, p in params.items():
        g = resolved[path]
        m = state.m.get(path)
        v = state.v.get(path)
        if m is None or v is None:
            m, v = np.zeros_like(p.data), np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[path], state.v[path] = m, v
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


class Adam:
    """Stateful wrapper that reads gradients straight off the parameters."""

    def __init__(self, params: Mapping[str, Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def step(self, lr: float) -> None:
        grads = {path: p.grad for path, p in self.params.items()}
        adam_step(self.params, grads, self.state, lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
