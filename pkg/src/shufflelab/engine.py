"""Epoch-based gradient descent.

One run: for t = 1..T, ask the strategy for the epoch's update sequence
at the epoch-start iterate, then apply one oracle gradient step per
entry.  Metrics are recorded after every inner update; the target test
(steps-to-target) also runs after every inner update, because step
counts at sub-epoch resolution are the primary experimental output.

Two execution paths produce run summaries:

* the general path below, which supports every problem, oracle and
  strategy and records full traces;
* a compiled fast path for exact-oracle runs on quadratic-with-offset
  problems under block-capable strategies, used by the sweep harness
  where a single cell can cost ~1e7 inner steps.  It executes the same
  recurrence in the Hessian eigenbasis.

Path selection depends only on the run configuration, never on runtime
values, so identical configs always take identical paths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .measures import sigma_star_empirical
from .oracle import GradientOracle
from .orders import BLOCK_EPOCHS, Strategy, StrategySpec, make_strategy
from .rng import RngStream

TARGET_METRICS = ("param_norm", "grad_norm_sq", "f_gap")

# iterates beyond this multiple of (1 + ||x0||) count as diverged
DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class TargetSpec:
    metric: str
    threshold: float

    def __post_init__(self):
        if self.metric not in TARGET_METRICS:
            raise ValueError(f"unknown target metric {self.metric!r}")
        if self.threshold <= 0:
            raise ValueError("target threshold must be positive")


@dataclass(frozen=True)
class EngineSchedule:
    gamma: float
    epochs: int
    decay_epochs: tuple[int, ...] = ()
    decay_factor: float = 1.0
    target: TargetSpec | None = None
    steps_cap: int | None = None
    measure_sigma_star: bool = False

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not (0.0 < self.decay_factor <= 1.0):
            raise ValueError("decay_factor must lie in (0, 1]")
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)):
            raise ValueError("decay_epochs must be strictly increasing")
        if self.decay_epochs and self.decay_epochs[-1] > self.epochs:
            raise ValueError("decay epochs must not exceed the epoch count")
        if self.steps_cap is not None and self.steps_cap < 1:
            raise ValueError("steps_cap must be at least 1")

    def gamma_for_epoch(self, t: int) -> float:
        # decay listed for epoch e takes effect from epoch e+1 on
        passed = sum(1 for e in self.decay_epochs if e < t)
        return self.gamma * self.decay_factor**passed


@dataclass
class RunTrace:
    step_records: dict[str, np.ndarray] | None
    epoch_records: dict[str, np.ndarray] | None
    steps_to_target: int | None
    diverged: bool
    total_steps: int
    final_x: np.ndarray
    final_f: float
    final_grad_norm_sq: float


@dataclass(frozen=True)
class RunSummary:
    steps_to_target: int | None
    diverged: bool
    total_steps: int
    final_f: float
    final_grad_norm_sq: float
    used_fast_path: bool


def _as_strategy(strategy, problem, oracle: GradientOracle, seed: int) -> Strategy:
    if isinstance(strategy, StrategySpec):
        return make_strategy(
            strategy, oracle, seed, two_level_shape=getattr(problem, "two_level_shape", None)
        )
    return strategy


def run(
    problem,
    oracle: GradientOracle,
    strategy,
    schedule: EngineSchedule,
    x0: np.ndarray,
    seed: int,
    record_steps: bool = True,
    record_epochs: bool = True,
) -> RunTrace:
    """Execute the epoch loop; see the module docstring for semantics.

    When the run stops mid-epoch (target, divergence or cap) the partial
    epoch is still recorded, with V_t accumulated up to the stop.
    """
    strat = _as_strategy(strategy, problem, oracle, seed)
    target = schedule.target
    if target is not None and target.metric == "f_gap" and problem.optimum_value is None:
        raise ValueError("f_gap target requires a problem with a known optimum value")

    x = np.array(x0, dtype=float)
    limit = DIVERGENCE_FACTOR * (1.0 + float(np.linalg.norm(x)))
    cap = schedule.steps_cap if schedule.steps_cap is not None else math.inf
    opt_point = problem.optimum_point
    opt_value = problem.optimum_value
    exact_mode = oracle.mode == "exact"
    need_fg_each_step = record_steps or (
        target is not None and target.metric in ("grad_norm_sq", "f_gap")
    )

    sr: dict[str, list] | None = None
    if record_steps:
        sr = {k: [] for k in ("global_step", "epoch", "f", "grad_norm_sq", "dist_to_opt", "x_norm")}
    er: dict[str, list] | None = None
    if record_epochs:
        er = {
            k: []
            for k in (
                "epoch", "f", "grad_norm_sq", "dist_to_opt",
                "V_t", "sigma_star_sq", "grad_norm_sq_at_start",
            )
        }

    step = 0
    steps_to_target: int | None = None
    diverged = False
    stop = False

    for t in range(1, schedule.epochs + 1):
        prob_t = problem.at_epoch(t)
        o_t = oracle.with_problem(prob_t)
        gamma_t = schedule.gamma_for_epoch(t)
        x_start = x.copy()
        order = strat.order_for_epoch(x_start, t)

        star = math.nan
        if schedule.measure_sigma_star:
            star = sigma_star_empirical(o_t.exact_view(), order, x_start)
        g_start_sq = math.nan
        if record_epochs:
            gs = prob_t.grad(x_start)
            g_start_sq = float(gs @ gs)

        V = 0.0
        for i, comp in enumerate(order):
            diff = x - x_start
            V += float(diff @ diff)
            stream = None if exact_mode else RngStream(seed, "noise", (t, int(i)))
            g = o_t.query(int(comp), x, stream)
            x = x - gamma_t * g
            step += 1

            xn = float(np.linalg.norm(x))
            if need_fg_each_step:
                f_val = prob_t.value(x)
                gv = prob_t.grad(x)
                gsq = float(gv @ gv)
            else:
                f_val = gsq = math.nan
            if record_steps:
                sr["global_step"].append(step)
                sr["epoch"].append(t)
                sr["f"].append(f_val)
                sr["grad_norm_sq"].append(gsq)
                sr["dist_to_opt"].append(
                    float(np.linalg.norm(x - opt_point)) if opt_point is not None else math.nan
                )
                sr["x_norm"].append(xn)

            if target is not None and steps_to_target is None:
                if target.metric == "param_norm":
                    met = xn < target.threshold
                elif target.metric == "grad_norm_sq":
                    met = gsq < target.threshold
                else:
                    met = (f_val - opt_value) < target.threshold
                if met:
                    steps_to_target = step
                    stop = True
            if not stop and not (xn <= limit):
                diverged = True
                stop = True
            if not stop and step >= cap:
                stop = True
            if stop:
                break

        if record_epochs:
            er["epoch"].append(t)
            er["f"].append(prob_t.value(x) if not diverged else math.nan)
            gv = prob_t.grad(x) if not diverged else None
            er["grad_norm_sq"].append(float(gv @ gv) if gv is not None else math.nan)
            er["dist_to_opt"].append(
                float(np.linalg.norm(x - opt_point))
                if opt_point is not None and not diverged
                else math.nan
            )
            er["V_t"].append(V)
            er["sigma_star_sq"].append(star)
            er["grad_norm_sq_at_start"].append(g_start_sq)
        if stop:
            break

    finite = bool(np.all(np.isfinite(x)))
    final_f = problem.value(x) if finite else math.nan
    if finite:
        gv = problem.grad(x)
        final_gsq = float(gv @ gv)
    else:
        final_gsq = math.nan

    return RunTrace(
        step_records={k: np.asarray(v) for k, v in sr.items()} if sr is not None else None,
        epoch_records={k: np.asarray(v) for k, v in er.items()} if er is not None else None,
        steps_to_target=steps_to_target,
        diverged=diverged,
        total_steps=step,
        final_x=x,
        final_f=final_f,
        final_grad_norm_sq=final_gsq,
    )


def paired_run(
    problem,
    oracle: GradientOracle,
    strategies,
    schedule: EngineSchedule,
    x0: np.ndarray,
    seed: int,
    record_steps: bool = True,
    record_epochs: bool = True,
) -> list[RunTrace]:
    """Run several strategies under identical seed-derived noise streams.

    Noise is keyed by (epoch, step position), not by component or by how
    the strategy spends randomness, so strategy is the only difference."""
    return [
        run(problem, oracle, s, schedule, x0, seed, record_steps, record_epochs)
        for s in strategies
    ]


# ---------------------------------------------------------------------------
# fast path


@numba.njit(cache=True, nogil=True)
def _quadratic_block(y, rho, gb, orders, start_step, thr2, div2, cap):  # pragma: no cover
    # per step, in the eigenbasis: y <- rho*y - gb[c]; statuses:
    # 0 block done, 1 target met, 2 diverged, 3 cap reached
    rows, n = orders.shape
    d = y.shape[0]
    step = start_step
    for e in range(rows):
        for i in range(n):
            c = orders[e, i]
            nrm2 = 0.0
            for j in range(d):
                y[j] = rho[j] * y[j] - gb[c, j]
                nrm2 += y[j] * y[j]
            step += 1
            if nrm2 < thr2:
                return step, 1
            if not (nrm2 <= div2):
                return step, 2
            if step >= cap:
                return step, 3
    return step, 0


def _fast_eligible(problem, oracle, strategy, schedule) -> bool:
    return (
        isinstance(strategy, StrategySpec)
        and strategy.kind != "greedy"
        and oracle.mode == "exact"
        and problem.quadratic_form() is not None
        and (schedule.target is None or schedule.target.metric == "param_norm")
        and (not schedule.decay_epochs or schedule.decay_factor == 1.0)
        and not schedule.measure_sigma_star
    )


def _run_fast(problem, oracle, spec, schedule, x0, seed) -> RunSummary:
    H, offsets = problem.quadratic_form()
    eigvals, eigvecs = np.linalg.eigh(H)
    x0 = np.asarray(x0, dtype=float)
    y = eigvecs.T @ x0
    rho = np.ascontiguousarray(1.0 - schedule.gamma * eigvals)
    gb = np.ascontiguousarray(schedule.gamma * (offsets @ eigvecs))
    thr2 = schedule.target.threshold**2 if schedule.target is not None else -1.0
    div2 = (DIVERGENCE_FACTOR * (1.0 + float(np.linalg.norm(x0)))) ** 2
    cap = schedule.steps_cap if schedule.steps_cap is not None else np.iinfo(np.int64).max

    strat = _as_strategy(spec, problem, oracle, seed)
    step = 0
    status = 0
    epochs_left = schedule.epochs
    block_index = 0
    while epochs_left > 0:
        block = strat.orders_block(block_index)
        if epochs_left < block.shape[0]:
            block = block[:epochs_left]
        step, status = _quadratic_block(y, rho, gb, block, step, thr2, div2, cap)
        if status != 0:
            break
        epochs_left -= block.shape[0]
        block_index += 1

    diverged = status == 2
    steps_to_target = step if status == 1 else None
    if diverged:
        final_f = final_gsq = math.nan
    else:
        final_f = float(0.5 * np.sum(eigvals * y * y))
        final_gsq = float(np.sum((eigvals * y) ** 2))
    return RunSummary(
        steps_to_target=steps_to_target,
        diverged=diverged,
        total_steps=step,
        final_f=final_f,
        final_grad_norm_sq=final_gsq,
        used_fast_path=True,
    )


def steps_to_target_run(
    problem, oracle: GradientOracle, strategy, schedule: EngineSchedule, x0, seed: int
) -> RunSummary:
    """Summary-only run; takes the compiled path whenever the config
    allows it, otherwise the general engine with recording disabled."""
    if _fast_eligible(problem, oracle, strategy, schedule):
        return _run_fast(problem, oracle, strategy, schedule, x0, seed)
    trace = run(
        problem, oracle, strategy, schedule, x0, seed, record_steps=False, record_epochs=False
    )
    return RunSummary(
        steps_to_target=trace.steps_to_target,
        diverged=trace.diverged,
        total_steps=trace.total_steps,
        final_f=trace.final_f,
        final_grad_norm_sq=trace.final_grad_norm_sq,
        used_fast_path=False,
    )
