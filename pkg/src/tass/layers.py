"""Trainable parameter containers and their seeded initialisation.

Weights are drawn uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)].
Every container exposes ``named_parameters()`` yielding dotted paths, which
are the keys used by the optimizer state and the checkpoint index.
"""

from __future__ import annotations

import math
from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

from tass import numcore as nc
from tass.numcore import Tensor

NamedParams = Iterator[tuple[str, Tensor]]


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


@dataclass
class Linear:
    weight: Tensor  # (fan_in, fan_out)
    bias: Tensor  # (fan_out,)

    @classmethod
    def init(cls, rng: np.random.Generator, fan_in: int, fan_out: int) -> Linear:
        return cls(_uniform(rng, (fan_in, fan_out), fan_in), _uniform(rng, (fan_out,), fan_in))

    def __call__(self, x: Tensor) -> Tensor:
        return nc.linear(x, self.weight, self.bias)

    def named_parameters(self, prefix: str) -> NamedParams:
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias


@dataclass
class MLP:
    """Two affine maps with one hidden tanh layer."""

    hidden: Linear
    out: Linear

    @classmethod
    def init(cls, rng: np.random.Generator, fan_in: int, width: int, fan_out: int) -> MLP:
        return cls(Linear.init(rng, fan_in, width), Linear.init(rng, width, fan_out))

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(nc.tanh(self.hidden(x)))

    def named_parameters(self, prefix: str) -> NamedParams:
        yield from self.hidden.named_parameters(f"{prefix}.hidden")
        yield from self.out.named_parameters(f"{prefix}.out")


@dataclass
class LSTM:
    """Single-layer, single-direction LSTM with hidden width equal to input width.

    ``gates`` maps [x_t; h_{t-1}] (2d) to the stacked input, forget, cell
    and output pre-activations (4d).
    """

    gates: Linear
    width: int

    @classmethod
    def init(cls, rng: np.random.Generator, width: int) -> LSTM:
        return cls(Linear.init(rng, 2 * width, 4 * width), width)

    def cell(self, x_t: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        d = self.width
        z = self.gates(nc.concat_lastdim(x_t, h))
        i = nc.sigmoid(nc.slice_lastdim(z, 0, d))
        f = nc.sigmoid(nc.slice_lastdim(z, d, 2 * d))
        g = nc.tanh(nc.slice_lastdim(z, 2 * d, 3 * d))
        o = nc.sigmoid(nc.slice_lastdim(z, 3 * d, 4 * d))
        c_next = nc.add(nc.mul(f, c), nc.mul(i, g))
        h_next = nc.mul(o, nc.tanh(c_next))
        return h_next, c_next

    def named_parameters(self, prefix: str) -> NamedParams:
        yield from self.gates.named_parameters(f"{prefix}.gates")


@dataclass
class MultiHeadAttention:
    w_q: Linear
    w_k: Linear
    w_v: Linear
    w_o: Linear
    n_heads: int

    @classmethod
    def init(cls, rng: np.random.Generator, width: int, n_heads: int) -> MultiHeadAttention:
        return cls(
            Linear.init(rng, width, width),
            Linear.init(rng, width, width),
            Linear.init(rng, width, width),
            Linear.init(rng, width, width),
            n_heads,
        )

    def named_parameters(self, prefix: str) -> NamedParams:
        yield from self.w_q.named_parameters(f"{prefix}.w_q")
        yield from self.w_k.named_parameters(f"{prefix}.w_k")
        yield from self.w_v.named_parameters(f"{prefix}.w_v")
        yield from self.w_o.named_parameters(f"{prefix}.w_o")


def count_parameters(named: NamedParams) -> int:
    return sum(t.size for _, t in named)
