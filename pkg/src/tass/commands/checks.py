"""Gradient verification behind ``gradcheck``."""

from __future__ import annotations

import time
from dataclasses import dataclass

from tass.gradcheck import run_gradcheck
from tass.numcore import GradCheckReport

DEFAULT_SEEDS = 10


@dataclass
class GradcheckSummary:
    reports: list[GradCheckReport]
    seeds: list[int]
    tolerance: float
    elapsed_s: float

    @property
    def failures(self) -> list[GradCheckReport]:
        return [r for r in self.reports if not r.passed]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> GradCheckReport | None:
        return max(self.reports, key=lambda r: r.max_rel_err, default=None)


def gradcheck_impl(
    tolerance: float = 1e-5,
    seed: int = 0,
    n_seeds: int = DEFAULT_SEEDS,
    probes: list[str] | None = None,
) -> GradcheckSummary:
    """Run every probe for seeds ``seed .. seed + n_seeds - 1``."""
    seeds = list(range(seed, seed + n_seeds))
    started = time.perf_counter()
    reports = run_gradcheck(seeds, tolerance, probes)
    return GradcheckSummary(reports, seeds, tolerance, time.perf_counter() - started)
