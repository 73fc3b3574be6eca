"""Answer head and the composite training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tass import numcore as nc
from tass.errors import ConfigError, DimensionError
from tass.layers import Linear, NamedParams
from tass.models import AblationFlags
from tass.numcore import Tensor


@dataclass
class HeadParams:
    out: Linear  # d -> C

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, n_answers: int) -> HeadParams:
        return cls(Linear.init(rng, d, n_answers))

    @property
    def n_answers(self) -> int:
        return self.out.weight.shape[1]

    def named_parameters(self, prefix: str = "head") -> NamedParams:
        yield from self.out.named_parameters(f"{prefix}.out")


def answer_logits(f_avq: Tensor, f_q: Tensor, params: HeadParams, n_answers: int | None = None) -> Tensor:
    """Logits over the answer vocabulary from ``f_avq ⊙ f_q``; one row per sample."""
    if n_answers is not None and n_answers != params.n_answers:
        raise ConfigError(f"answer head has {params.n_answers} classes but the vocabulary has {n_answers}")
    if f_avq.shape != f_q.shape:
        raise DimensionError(f"answer_logits: fused feature {f_avq.shape} and question {f_q.shape} differ")
    e = nc.mul(f_avq, f_q)
    return nc.reshape(params.out(e), (-1, params.n_answers))


def predict(logits: Tensor) -> np.ndarray:
    return np.argmax(logits.data, axis=-1)


@dataclass
class LossBreakdown:
    total: Tensor
    qa: float
    cms: float = 0.0
    match: float = 0.0


def total_loss(
    l_qa: Tensor,
    l_cms: Tensor | None,
    l_match: Tensor | None,
    lambda_match: float,
    flags: AblationFlags | None = None,
) -> LossBreakdown:
    """L = L_qa + L_cms + lambda * L_s with ablated or absent terms left out."""
    flags = flags or AblationFlags()
    terms = [l_qa]
    cms = match = 0.0
    if l_cms is not None and not flags.no_cms:
        terms.append(l_cms)
        cms = l_cms.item()
    if l_match is not None and not flags.no_match_loss and lambda_match > 0:
        terms.append(nc.scalar_scale(l_match, lambda_match))
        match = l_match.item()
    total = terms[0] if len(terms) == 1 else nc.add_n(terms)
    return LossBreakdown(total=total, qa=l_qa.item(), cms=cms, match=match)
