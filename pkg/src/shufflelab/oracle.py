"""Noisy gradient oracles.

The oracle returns grad f_i(x) + xi where xi is zero-mean with
E||xi||^2 = zeta^2 + P*||grad f(x)||^2.  The distribution is isotropic
Gaussian with per-coordinate variance (zeta^2 + P*||grad f(x)||^2)/d, so
the variance contract holds with equality.  The ``internal_sgd`` mode
realizes low-level with-replacement sampling on a two-level problem: a
query for top component i returns grad h_{i,j}(x) for a uniformly random
j, which is an unbiased oracle for grad f_i.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import FiniteSumProblem, TwoLevelProblem
from .rng import RngStream

MODES = ("exact", "gaussian", "internal_sgd")


class DivergenceError(RuntimeError):
    """Raised when an iterate has left the finite range."""


@dataclass(frozen=True)
class NoiseSpec:
    zeta: float = 0.0
    P: float = 0.0

    def __post_init__(self):
        if self.zeta < 0 or self.P < 0:
            raise ValueError("zeta and P must be non-negative")


def _generator(stream):
    if isinstance(stream, RngStream):
        return stream.generator()
    return stream  # already a Generator; tests reuse one across draws


class GradientOracle:
    def __init__(self, problem, mode: str = "exact", noise: NoiseSpec = NoiseSpec()):
        if mode not in MODES:
            raise ValueError(f"unknown oracle mode {mode!r}")
        if mode == "internal_sgd" and not isinstance(problem, TwoLevelProblem):
            raise ValueError("internal_sgd requires a two-level problem")
        self.problem = problem
        self.mode = mode
        self.noise = noise
        self._exact_view: FiniteSumProblem | None = None

    @property
    def component_count(self) -> int:
        if self.mode == "internal_sgd":
            return self.problem.top_count
        return self.problem.component_count

    def exact_view(self) -> FiniteSumProblem:
        """The finite-sum problem whose components the order indexes."""
        if self.mode == "internal_sgd":
            if self._exact_view is None:
                self._exact_view = self.problem.top_view()
            return self._exact_view
        return self.problem

    def with_problem(self, problem) -> "GradientOracle":
        if problem is self.problem:
            return self
        return GradientOracle(problem, self.mode, self.noise)

    def query(self, i: int, x: np.ndarray, stream) -> np.ndarray:
        if not np.all(np.isfinite(x)):
            raise DivergenceError("oracle queried at a non-finite point")
        if self.mode == "exact":
            return self.problem.component_grad(i, x)
        if self.mode == "internal_sgd":
            j = int(_generator(stream).integers(self.problem.low_count))
            return self.problem.low_grad(i, j, x)
        g = self.problem.component_grad(i, x)
        gf = self.problem.grad(x)
        var = self.noise.zeta**2 + self.noise.P * float(gf @ gf)
        xi = _generator(stream).normal(size=len(g)) * np.sqrt(var / len(g))
        return g + xi
