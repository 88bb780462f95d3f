"""Experiment orchestration.

The pieces behind the CLI subcommands: learning-rate grid tuning, the
two-level vs standard shuffling sweep over (sigma_top, m) cells, the
greedy-vs-reshuffling demonstration on the signed example, the
same-class batching comparison, and order measurement reports.

All orchestration is deterministic: task lists are built in a fixed
nested order and a worker pool only changes *when* tasks execute, never
the order results are assembled in.
"""

from __future__ import annotations

import dataclasses
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from statistics import median

import numpy as np

from .config import DEFAULT_LR_GRID, ConfigError, SweepConfig
from .engine import EngineSchedule, RunSummary, TargetSpec, run, steps_to_target_run
from .measures import (
    check_sample_bias,
    estimate_heterogeneity,
    phi_curve,
    rr_phi_statistics,
    sigma_star_empirical,
)
from .oracle import GradientOracle
from .orders import StrategySpec, greedy_order
from .problems import make_band_quadratic, make_sameclass_classification, make_signed_example
from .rng import RngStream

WORKERS_ENV_VAR = "SHUFFLELAB_WORKERS"


class NumericError(RuntimeError):
    """The requested computation has no usable result (e.g. every
    learning rate diverged)."""


def resolve_workers(flag_value: int | None, config_value: int | None) -> int:
    """Worker count with flags > environment > config file precedence."""
    if flag_value is not None:
        value = flag_value
    else:
        env = os.environ.get(WORKERS_ENV_VAR)
        if env is not None and env.strip():
            try:
                value = int(env)
            except ValueError:
                raise ConfigError(f"{WORKERS_ENV_VAR}={env!r} is not an integer") from None
        elif config_value is not None:
            value = config_value
        else:
            value = 1
    if value < 1:
        raise ConfigError(f"worker count must be at least 1, got {value}")
    return value


def _map_tasks(fn, tasks, workers: int) -> list:
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _score(summary: RunSummary) -> float:
    # never-reached and diverged runs must never beat a run that got there
    if summary.diverged or summary.steps_to_target is None:
        return math.inf
    return float(summary.steps_to_target)


def grid_runs(
    problem,
    oracle: GradientOracle,
    spec: StrategySpec,
    schedule_template: EngineSchedule,
    lr_grid,
    seeds,
    x0: np.ndarray,
    workers: int = 1,
) -> dict[tuple[float, int], RunSummary]:
    """One steps-to-target run per (lr, seed); the tuner and the sweep
    both score from this table, so tuned-grid runs are never repeated."""
    tasks = [(lr, seed) for lr in lr_grid for seed in seeds]

    def one(task):
        lr, seed = task
        sched = dataclasses.replace(schedule_template, gamma=lr)
        return steps_to_target_run(problem, oracle, spec, sched, x0, seed)

    results = _map_tasks(one, tasks, workers)
    return dict(zip(tasks, results))


@dataclass(frozen=True)
class TuneResult:
    best_lr: float
    median_steps: float
    per_lr: tuple[tuple[float, float], ...]  # (lr, median score), grid order


def _tune_from_table(table, lr_grid, seeds) -> TuneResult:
    per_lr = tuple(
        (lr, float(median(_score(table[(lr, seed)]) for seed in seeds))) for lr in lr_grid
    )
    best_lr, best = min(per_lr, key=lambda p: (p[1], p[0]))
    if math.isinf(best):
        raise NumericError(
            "no admissible step size: every grid point diverged or missed the target"
        )
    return TuneResult(best_lr=best_lr, median_steps=best, per_lr=per_lr)


def tune_lr(
    problem,
    oracle: GradientOracle,
    spec: StrategySpec,
    schedule_template: EngineSchedule,
    lr_grid=None,
    seeds=(1, 2, 3),
    x0: np.ndarray | None = None,
    workers: int = 1,
) -> TuneResult:
    """Best learning rate by median steps-to-target across seeds;
    never-reached and diverged count as +inf, ties go to the smaller lr."""
    if schedule_template.target is None:
        raise ConfigError("tuning requires an engine target")
    grid = list(lr_grid) if lr_grid else list(DEFAULT_LR_GRID)
    if x0 is None:
        x0 = np.ones(problem.dimension)
    table = grid_runs(problem, oracle, spec, schedule_template, grid, seeds, x0, workers)
    return _tune_from_table(table, grid, seeds)


# ---------------------------------------------------------------------------
# two-level sweep

RESULTS_COLUMNS = (
    "sigma_top", "m", "K", "strategy", "lr", "seed",
    "steps_to_target", "final_grad_norm_sq", "diverged",
)


@dataclass
class SweepReport:
    results_rows: list[tuple]
    ratio_header: list[str]
    ratio_rows: list[list]
    cells: list[dict]
    errors: list[str]


def sweep_two_level(
    sweep: SweepConfig,
    seeds=(1, 2, 3),
    lr_grid=None,
    workers: int = 1,
) -> SweepReport:
    """Tune and compare two-level vs standard shuffling over the grid.

    For each (sigma_top, m) cell and each strategy the full lr grid runs
    on all seeds; the ratio matrix divides the two strategies' median
    steps at their own best lr.  Row order in results.csv is fixed:
    sigma_top, m, strategy (standard first), lr, seed, all in grid order.
    """
    grid = list(lr_grid) if lr_grid else list(DEFAULT_LR_GRID)
    seeds = list(seeds)
    strategies: list[tuple[str, int | None]] = [("standard_combined", None)]
    strategies += [("two_level_k", K) for K in sweep.K_values]
    ratio_K = sweep.K_values[0]

    cells = {}
    for st in sweep.sigma_top_grid:
        for m in sweep.m_grid:
            flat = make_band_quadratic(sweep.d, sweep.lam, st, sweep.sigma_low, m).flatten()
            cells[(st, m)] = (flat, GradientOracle(flat))

    target = TargetSpec(metric="param_norm", threshold=sweep.target_norm)
    # start far out on the second-lowest curvature mode: it is exactly
    # mean-zero, so the run cannot random-walk along the all-ones shift
    # direction into the target ball before sustained accuracy is reached,
    # and the long single-mode descent dominates the order-luck in the
    # final crossing, keeping steps-to-target estimates tight
    x0 = np.sin(2.0 * np.pi * np.arange(1, sweep.d + 1) / (sweep.d + 1))
    x0 *= 1e3 * math.sqrt(sweep.d) / np.linalg.norm(x0)
    errors: list[str] = []

    tasks = []
    for st in sweep.sigma_top_grid:
        for m in sweep.m_grid:
            epochs = -(-sweep.steps_cap // (2 * m))  # enough epochs that the cap binds
            for kind, K in strategies:
                for lr in grid:
                    for seed in seeds:
                        tasks.append((st, m, kind, K, lr, seed, epochs))

    def one(task):
        st, m, kind, K, lr, seed, epochs = task
        flat, oracle = cells[(st, m)]
        sched = EngineSchedule(
            gamma=lr, epochs=epochs, target=target, steps_cap=sweep.steps_cap
        )
        spec = StrategySpec(kind=kind, K=K)
        try:
            return steps_to_target_run(flat, oracle, spec, sched, x0, seed)
        except Exception as err:  # recorded per row; the sweep must not abort
            return err

    outcomes = _map_tasks(one, tasks, workers)

    table: dict[tuple, RunSummary] = {}
    rows = []
    for task, out in zip(tasks, outcomes):
        st, m, kind, K, lr, seed, _epochs = task
        if isinstance(out, Exception):
            errors.append(f"sigma_top={st} m={m} {kind} lr={lr} seed={seed}: {out}")
            out = RunSummary(
                steps_to_target=None, diverged=True, total_steps=0,
                final_f=math.nan, final_grad_norm_sq=math.nan, used_fast_path=False,
            )
        table[(st, m, kind, K, lr, seed)] = out
        rows.append(
            (st, m, K, kind, lr, seed, out.steps_to_target, out.final_grad_norm_sq,
             out.diverged)
        )

    cell_summaries = []
    medians: dict[tuple, float] = {}
    for st in sweep.sigma_top_grid:
        for m in sweep.m_grid:
            for kind, K in strategies:
                sub = {(lr, seed): table[(st, m, kind, K, lr, seed)]
                       for lr in grid for seed in seeds}
                try:
                    tuned = _tune_from_table(sub, grid, seeds)
                    best_lr, med = tuned.best_lr, tuned.median_steps
                except NumericError as err:
                    errors.append(f"sigma_top={st} m={m} {kind} K={K}: {err}")
                    best_lr, med = math.nan, math.inf
                medians[(st, m, kind, K)] = med
                cell_summaries.append(
                    {"sigma_top": st, "m": m, "strategy": kind, "K": K,
                     "best_lr": best_lr, "median_steps": med}
                )

    ratio_header = ["sigma_top"] + [str(m) for m in sweep.m_grid]
    ratio_rows = []
    for st in sweep.sigma_top_grid:
        row: list = [st]
        for m in sweep.m_grid:
            two = medians[(st, m, "two_level_k", ratio_K)]
            std = medians[(st, m, "standard_combined", None)]
            if math.isinf(two) and math.isinf(std):
                row.append(math.nan)
            else:
                row.append(two / std)
        ratio_rows.append(row)

    return SweepReport(
        results_rows=rows, ratio_header=ratio_header, ratio_rows=ratio_rows,
        cells=cell_summaries, errors=errors,
    )


# ---------------------------------------------------------------------------
# greedy demonstration on the signed example


def greedy_demo(
    N: int,
    sigma: float,
    seeds=(1, 2, 3, 4, 5),
    rr_samples: int = 10_000,
    lr_grid=None,
    target_norm: float = 0.005,
    steps_cap: int = 10**6,
    workers: int = 1,
) -> dict:
    """Greedy order quality and end-to-end speed against reshuffling.

    Reports the greedy order's sigma_star^2 (exactly sigma^2 on this
    problem), the reshuffling average over random permutations, and
    median steps-to-target for both at a shared learning rate tuned for
    reshuffling, so the baseline gets its own best setting.
    """
    problem = make_signed_example(N, sigma)
    oracle = GradientOracle(problem)
    probe = np.ones(1)

    g_order = greedy_order(oracle, probe, RngStream(int(seeds[0]), "greedy", (1,)))
    greedy_star = sigma_star_empirical(problem, g_order, probe)
    _, rr_star_mean = rr_phi_statistics(
        problem, probe, rr_samples, RngStream(int(seeds[0]), "rr-stats")
    )

    x0 = np.ones(1)
    epochs = -(-steps_cap // N)
    template = EngineSchedule(
        gamma=1.0, epochs=epochs,
        target=TargetSpec(metric="param_norm", threshold=target_norm),
        steps_cap=steps_cap,
    )
    grid = list(lr_grid) if lr_grid else list(DEFAULT_LR_GRID)
    tuned = tune_lr(
        problem, oracle, StrategySpec(kind="rr"), template, grid, seeds, x0, workers
    )
    shared = dataclasses.replace(template, gamma=tuned.best_lr)

    def steps_for(spec: StrategySpec) -> list:
        out = _map_tasks(
            lambda seed: steps_to_target_run(problem, oracle, spec, shared, x0, seed),
            list(seeds), workers,
        )
        return [s.steps_to_target for s in out]

    rr_steps = steps_for(StrategySpec(kind="rr"))
    greedy_steps = steps_for(StrategySpec(kind="greedy"))

    def med(steps) -> float:
        return float(median(math.inf if s is None else s for s in steps))

    rr_med, greedy_med = med(rr_steps), med(greedy_steps)
    return {
        "N": N,
        "sigma": sigma,
        "greedy_sigma_star_sq": greedy_star,
        "rr_mean_sigma_star_sq": rr_star_mean,
        "rr_sigma_star_samples": rr_samples,
        "greedy_order": [int(i) + 1 for i in g_order],
        "shared_lr": tuned.best_lr,
        "target_norm": target_norm,
        "rr_steps": rr_steps,
        "greedy_steps": greedy_steps,
        "rr_median_steps": rr_med,
        "greedy_median_steps": greedy_med,
        "steps_ratio": greedy_med / rr_med if rr_med not in (0.0, math.inf) else math.nan,
    }


# ---------------------------------------------------------------------------
# same-class batching demonstration

SAMECLASS_STRATEGIES = (
    ("rr", StrategySpec(kind="rr")),
    ("greedy", StrategySpec(kind="greedy")),
    ("greedy_slow", StrategySpec(kind="greedy", update_every=10)),
)


def sameclass_demo(
    classes: int = 3,
    per_class: int = 40,
    dim: int = 6,
    batch_size: int = 8,
    data_seed: int = 0,
    separation: float = 6.0,
    label_noise: float = 0.2,
    gamma: float = 0.2,
    epochs: int = 20,
    seeds=(1, 2, 3),
    workers: int = 1,
) -> dict:
    """Final loss per strategy under same-class vs standard batching.

    Same-class batches maximize inter-component heterogeneity, which is
    where order selection can pay off; standard (cross-class) batches
    are the low-heterogeneity control.  Label noise keeps per-batch
    gradients alive near the optimum so the contrast survives training.

    Reported f and grad values are time-averages over the final epoch:
    the last iterate of an epoch telescopes away most of the
    order-induced wobble, while the average over the pass retains it."""
    sched = EngineSchedule(gamma=gamma, epochs=epochs)
    tasks = []
    problems = {}
    for batching in ("sameclass", "standard"):
        problems[batching] = make_sameclass_classification(
            classes, per_class, dim, batch_size, data_seed,
            separation=separation, batching=batching, label_noise=label_noise,
        )
        for label, spec in SAMECLASS_STRATEGIES:
            for seed in seeds:
                tasks.append((batching, label, spec, seed))

    def one(task):
        batching, _label, spec, seed = task
        problem = problems[batching]
        x0 = np.zeros(problem.dimension)
        trace = run(problem, GradientOracle(problem), spec, sched, x0, seed,
                    record_steps=True, record_epochs=False)
        n = problem.component_count
        return (
            float(np.mean(trace.step_records["f"][-n:])),
            float(np.mean(trace.step_records["grad_norm_sq"][-n:])),
        )

    outcomes = _map_tasks(one, tasks, workers)

    rows = []
    means: dict[tuple[str, str], float] = {}
    for batching in ("sameclass", "standard"):
        for label, _spec in SAMECLASS_STRATEGIES:
            picked = [
                out for task, out in zip(tasks, outcomes)
                if task[0] == batching and task[1] == label
            ]
            mean_f = float(np.mean([p[0] for p in picked]))
            mean_g = float(np.mean([p[1] for p in picked]))
            means[(batching, label)] = mean_f
            rows.append(
                {"batching": batching, "strategy": label,
                 "mean_final_f": mean_f, "mean_final_grad_norm_sq": mean_g}
            )

    gaps = {
        batching: means[(batching, "rr")] - means[(batching, "greedy")]
        for batching in ("sameclass", "standard")
    }
    return {
        "rows": rows,
        "rr_minus_greedy_f": gaps,
        "classes": classes, "per_class": per_class, "dim": dim,
        "batch_size": batch_size, "data_seed": data_seed,
        "separation": separation, "label_noise": label_noise,
        "gamma": gamma, "epochs": epochs,
    }


# ---------------------------------------------------------------------------
# order measurement


def measure_order(problem, order: np.ndarray, probe: np.ndarray | None = None) -> dict:
    """Phi curve plus the summary quantities for one order at one probe."""
    if probe is None:
        probe = np.ones(problem.dimension)
    curve = phi_curve(problem, order, probe)
    bias = check_sample_bias(problem, order, [probe])
    het = estimate_heterogeneity(problem, [probe])
    return {
        "phi_rows": [(k + 1, float(v)) for k, v in enumerate(curve.values)],
        "summary": {
            "sigma_star_sq": float(np.max(curve.values)),
            "sample_bias_max_ratio": bias.max_ratio,
            "sigma_sq_hat": het.sigma_sq_hat,
        },
    }
