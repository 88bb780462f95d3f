"""Order-quality measures and the convergence-bound calculator.

The central object is the prefix-deviation curve of an update sequence r
at a point x:

    phi_sq[k] = || sum_{i<=k} (grad f_{r_i}(x) - grad f(x)) ||^2

Its maximum over k is the empirical order-quality constant sigma_star^2
(reported under the M_star = 0 convention: the pure max-prefix value,
with no gradient-proportional term split off).  Smaller is better; a
full permutation always telescopes back to zero at k = n.

All measures use exact component gradients, never noisy oracle output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .orders import two_level_k_shuffle
from .problems import TwoLevelProblem
from .rng import RngStream


@dataclass(frozen=True)
class PhiCurve:
    values: np.ndarray  # length n, entry k-1 holds phi_sq at prefix k
    order: np.ndarray
    x: np.ndarray


@dataclass(frozen=True)
class HeterogeneityEstimate:
    sigma_sq_hat: float
    M_hat: float
    probe_points: int


@dataclass(frozen=True)
class SampleBiasReport:
    max_ratio: float
    holds: bool


@dataclass(frozen=True)
class BoundInputs:
    F0: float
    L: float
    n: int
    T: int
    gamma: float
    zeta: float = 0.0
    P: float = 0.0
    M_star: float = 0.0
    sigma_star: float = 0.0

    def __post_init__(self):
        if self.F0 < 0:
            raise ValueError("F0 must be non-negative")
        if self.L <= 0:
            raise ValueError("L must be positive")
        if self.n < 1 or self.T < 1:
            raise ValueError("n and T must be at least 1")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.zeta < 0 or self.P < 0 or self.M_star < 0 or self.sigma_star < 0:
            raise ValueError("zeta, P, M_star, sigma_star must be non-negative")


def _component_deviations(problem, order: np.ndarray, x: np.ndarray) -> np.ndarray:
    order = np.asarray(order)
    count = problem.component_count
    if order.size and (order.min() < 0 or order.max() >= count):
        raise IndexError(f"order references components outside [0, {count})")
    qf = problem.quadratic_form()
    if qf is not None:
        # grad f_i - grad f == offsets[i] identically for this family
        _, offsets = qf
        return offsets[order]
    g = problem.grad(x)
    return np.stack([problem.component_grad(int(i), x) - g for i in order])


def phi_curve(problem, order: np.ndarray, x: np.ndarray) -> PhiCurve:
    """All n prefix-deviation norms of the sequence at x, via a running
    prefix sum (O(n*d) total)."""
    devs = _component_deviations(problem, order, x)
    prefix = np.cumsum(devs, axis=0)
    return PhiCurve(values=(prefix * prefix).sum(axis=1), order=np.asarray(order), x=x)


def sigma_star_empirical(problem, order: np.ndarray, x: np.ndarray) -> float:
    """max_k phi_sq[k]: the smallest sigma_star^2 for which the prefix
    bound holds at (order, x) with M_star = 0."""
    return float(phi_curve(problem, order, x).values.max())


def check_sample_bias(problem, order: np.ndarray, probe_points) -> SampleBiasReport:
    """Is ||mean deviation of the sequence||^2 <= (1/4)||grad f||^2 at
    every probe?  For a full permutation the left side is the deviation
    of the mean from itself, identically zero, so no numerics are run."""
    order = np.asarray(order)
    if sorted(order.tolist()) == list(range(problem.component_count)):
        return SampleBiasReport(max_ratio=0.0, holds=True)
    max_ratio = 0.0
    holds = True
    for x in probe_points:
        mean_dev = _component_deviations(problem, order, x).mean(axis=0)
        left = float(mean_dev @ mean_dev)
        g = problem.grad(x)
        right = 0.25 * float(g @ g)
        if left > right:
            holds = False
        if left == 0.0:
            ratio = 0.0
        elif right == 0.0:
            ratio = np.inf
        else:
            ratio = left / right
        max_ratio = max(max_ratio, ratio)
    return SampleBiasReport(max_ratio=max_ratio, holds=holds)


def estimate_heterogeneity(problem, probe_points) -> HeterogeneityEstimate:
    """Worst mean squared component deviation across the probes; the M
    term of the heterogeneity pair is fixed to zero by convention, so the
    reported value makes the bound hold at every probe by construction."""
    if not probe_points:
        raise ValueError("at least one probe point required")
    order = np.arange(problem.component_count)
    worst = 0.0
    for x in probe_points:
        devs = _component_deviations(problem, order, x)
        worst = max(worst, float((devs * devs).sum(axis=1).mean()))
    return HeterogeneityEstimate(sigma_sq_hat=worst, M_hat=0.0, probe_points=len(probe_points))


def max_admissible_gamma(L: float, n: int, M_star: float, P: float) -> float:
    return 1.0 / (8.0 * L * n * (M_star + P / n + 1.0))


def convergence_bound(inputs: BoundInputs) -> float:
    """Right-hand side of the epoch-averaged gradient-norm bound:

        8*F0/(n*T*gamma) + 16*gamma*L*zeta^2 + 32*gamma^2*L^2*sigma_star^2

    valid only under gamma < 1/(8*L*n*(M_star + P/n + 1)); violating
    step sizes are refused."""
    limit = max_admissible_gamma(inputs.L, inputs.n, inputs.M_star, inputs.P)
    if not inputs.gamma < limit:
        raise ValueError(
            f"gamma {inputs.gamma} violates the step-size condition; "
            f"largest admissible gamma is strictly below {limit}"
        )
    return (
        8.0 * inputs.F0 / (inputs.n * inputs.T * inputs.gamma)
        + 16.0 * inputs.gamma * inputs.L * inputs.zeta**2
        + 32.0 * inputs.gamma**2 * inputs.L**2 * inputs.sigma_star**2
    )


def two_level_sigma_star_mean(
    problem: TwoLevelProblem, K: int, x: np.ndarray, repeats: int, stream: RngStream
) -> float:
    """Mean sigma_star^2 over independent two-level K-shuffles of the
    flattened problem at x."""
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    flat = problem.flatten()
    total = 0.0
    for rep in range(repeats):
        order = two_level_k_shuffle(
            problem.top_count, problem.low_count, K, stream.child(rep)
        )
        total += sigma_star_empirical(flat, order, x)
    return total / repeats


def rr_phi_statistics(
    problem, x: np.ndarray, samples: int, stream: RngStream, batch: int = 2000
) -> tuple[np.ndarray, float]:
    """Monte Carlo over uniform random permutations: per-prefix mean of
    phi_sq and the mean of sigma_star^2.  Vectorized in batches."""
    n = problem.component_count
    devs = _component_deviations(problem, np.arange(n), x)
    gen = stream.generator()
    base = np.tile(np.arange(n), (batch, 1))
    phi_sum = np.zeros(n)
    star_sum = 0.0
    done = 0
    while done < samples:
        take = min(batch, samples - done)
        perms = gen.permuted(base[:take], axis=1)
        prefix = np.cumsum(devs[perms], axis=1)
        sq = (prefix * prefix).sum(axis=2)
        phi_sum += sq.sum(axis=0)
        star_sum += float(sq.max(axis=1).sum())
        done += take
    return phi_sum / samples, star_sum / samples
