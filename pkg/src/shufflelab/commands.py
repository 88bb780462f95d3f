"""Command implementations shared by the HTTP service and (through it)
the CLI.  Each command maps a validated configuration to a result
bundle: a summary dict, printable one-line summaries, and named artifact
bodies.  Commands never touch the filesystem; persisting artifacts is
the client's job.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import harness
from .artifacts import csv_body, json_body, order_file_body
from .config import ConfigError, ExperimentConfig, build_run_pieces, runnable_problem
from .engine import run
from .orders import make_strategy

TRACE_COLUMNS = ("global_step", "epoch", "f", "grad_norm_sq", "dist_to_opt", "x_norm")
EPOCH_COLUMNS = ("epoch", "f", "grad_norm_sq", "V_t", "sigma_star_sq")


@dataclass
class CommandResult:
    summary: dict
    summary_lines: list[str]
    artifacts: dict[str, str]


def _resolve_x0(cfg: ExperimentConfig, problem) -> np.ndarray:
    d = problem.dimension
    raw = cfg.engine.x0 if cfg.engine is not None else None
    if raw is None:
        # quadratic families start from all-ones; classification starts at
        # zero weights (uniform predictions)
        if cfg.problem is not None and cfg.problem.kind == "sameclass_classification":
            return np.zeros(d)
        return np.ones(d)
    if isinstance(raw, (int, float)):
        return np.full(d, float(raw))
    x0 = np.asarray(raw, dtype=float)
    if x0.shape != (d,):
        raise ConfigError(f"engine.x0 has length {x0.size}, problem dimension is {d}")
    return x0


def _fmt(v) -> str:
    if v is None:
        return "never"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def run_command(cfg: ExperimentConfig) -> CommandResult:
    problem, oracle, spec, sched = build_run_pieces(cfg)
    x0 = _resolve_x0(cfg, problem)
    multi = len(cfg.seeds) > 1
    artifacts: dict[str, str] = {}
    per_seed = []
    lines = []
    for seed in cfg.seeds:
        trace = run(problem, oracle, spec, sched, x0, seed)
        sr, er = trace.step_records, trace.epoch_records
        trace_rows = zip(*(sr[c] for c in TRACE_COLUMNS))
        epoch_rows = zip(*(er[c] for c in EPOCH_COLUMNS))
        suffix = f"_seed{seed}" if multi else ""
        artifacts[f"trace{suffix}.csv"] = csv_body(TRACE_COLUMNS, trace_rows)
        artifacts[f"epochs{suffix}.csv"] = csv_body(EPOCH_COLUMNS, epoch_rows)
        per_seed.append({
            "seed": seed,
            "steps_to_target": trace.steps_to_target,
            "diverged": trace.diverged,
            "total_steps": trace.total_steps,
            "final_f": trace.final_f,
            "final_grad_norm_sq": trace.final_grad_norm_sq,
        })
        target_part = (
            f"steps_to_target={_fmt(trace.steps_to_target)} " if sched.target is not None else ""
        )
        lines.append(
            f"run seed={seed} strategy={spec.kind} steps={trace.total_steps} "
            f"{target_part}final_f={_fmt(trace.final_f)} diverged={str(trace.diverged).lower()}"
        )
    summary = {"runs": per_seed, "strategy": spec.kind}
    artifacts["summary.json"] = json_body(summary)
    return CommandResult(summary=summary, summary_lines=lines, artifacts=artifacts)


def tune_command(cfg: ExperimentConfig) -> CommandResult:
    problem, oracle, spec, sched = build_run_pieces(cfg)
    if sched.target is None:
        raise ConfigError("tune requires engine.target")
    x0 = _resolve_x0(cfg, problem)
    workers = harness.resolve_workers(None, cfg.workers)
    result = harness.tune_lr(
        problem, oracle, spec, sched, cfg.lr_grid, cfg.seeds, x0, workers
    )
    summary = {
        "best_lr": result.best_lr,
        "median_steps": result.median_steps,
        "per_lr": [{"lr": lr, "median_steps": s} for lr, s in result.per_lr],
        "strategy": spec.kind,
        "seeds": list(cfg.seeds),
    }
    line = (
        f"tune strategy={spec.kind} best_lr={_fmt(result.best_lr)} "
        f"median_steps={_fmt(result.median_steps)}"
    )
    return CommandResult(summary, [line], {"tune.json": json_body(summary)})


def sweep_command(cfg: ExperimentConfig) -> CommandResult:
    if cfg.sweep is None:
        raise ConfigError("sweep requires a 'sweep' section")
    workers = harness.resolve_workers(None, cfg.workers)
    report = harness.sweep_two_level(cfg.sweep, cfg.seeds, cfg.lr_grid, workers)
    artifacts = {
        "results.csv": csv_body(harness.RESULTS_COLUMNS, report.results_rows),
        "ratio.csv": csv_body(report.ratio_header, report.ratio_rows),
    }
    summary = {"cells": report.cells, "errors": report.errors,
               "rows": len(report.results_rows)}
    artifacts["sweep.json"] = json_body(summary)
    finite = [
        v for row in report.ratio_rows for v in row[1:]
        if isinstance(v, float) and math.isfinite(v)
    ]
    span = f"[{min(finite):.3g}, {max(finite):.3g}]" if finite else "n/a"
    line = (
        f"sweep rows={len(report.results_rows)} cells={len(report.cells)} "
        f"ratio_range={span} errors={len(report.errors)}"
    )
    return CommandResult(summary, [line], artifacts)


def greedy_command(cfg: ExperimentConfig) -> CommandResult:
    if cfg.problem is None or cfg.problem.kind != "signed_example":
        raise ConfigError("greedy demo requires problem.kind: signed_example")
    workers = harness.resolve_workers(None, cfg.workers)
    report = harness.greedy_demo(
        cfg.problem.N, cfg.problem.sigma, cfg.seeds, lr_grid=cfg.lr_grid, workers=workers
    )
    artifacts = {
        "greedy.json": json_body(report),
        "greedy_order.txt": "\n".join(str(i) for i in report["greedy_order"]) + "\n",
    }
    line = (
        f"greedy N={report['N']} sigma={_fmt(report['sigma'])} "
        f"sigma_star_sq={_fmt(report['greedy_sigma_star_sq'])} "
        f"rr_mean={_fmt(report['rr_mean_sigma_star_sq'])} "
        f"median_steps greedy={_fmt(report['greedy_median_steps'])} "
        f"rr={_fmt(report['rr_median_steps'])}"
    )
    return CommandResult(report, [line], artifacts)


def sameclass_command(cfg: ExperimentConfig) -> CommandResult:
    if cfg.problem is None or cfg.problem.kind != "sameclass_classification":
        raise ConfigError("sameclass demo requires problem.kind: sameclass_classification")
    if cfg.engine is None:
        raise ConfigError("sameclass demo requires an 'engine' section (gamma, epochs)")
    p = cfg.problem
    workers = harness.resolve_workers(None, cfg.workers)
    report = harness.sameclass_demo(
        classes=p.classes, per_class=p.per_class, dim=p.dim, batch_size=p.batch_size,
        data_seed=p.seed, separation=p.separation, label_noise=p.label_noise,
        gamma=cfg.engine.gamma, epochs=cfg.engine.epochs,
        seeds=cfg.seeds, workers=workers,
    )
    header = ("batching", "strategy", "mean_final_f", "mean_final_grad_norm_sq")
    rows = [
        (r["batching"], r["strategy"], r["mean_final_f"], r["mean_final_grad_norm_sq"])
        for r in report["rows"]
    ]
    artifacts = {
        "sameclass.csv": csv_body(header, rows),
        "sameclass.json": json_body(report),
    }
    gaps = report["rr_minus_greedy_f"]
    line = (
        f"sameclass rr_minus_greedy_f sameclass={_fmt(gaps['sameclass'])} "
        f"standard={_fmt(gaps['standard'])}"
    )
    return CommandResult(report, [line], artifacts)


def measure_command(cfg: ExperimentConfig, order_one_based: list[int] | None) -> CommandResult:
    if cfg.problem is None:
        raise ConfigError("measure requires a 'problem' section")
    base = cfg.problem.build()
    problem = runnable_problem(base, cfg.oracle)
    if cfg.oracle.mode == "internal_sgd":
        raise ConfigError("measure uses exact gradients; internal_sgd is not meaningful here")
    count = problem.component_count
    if order_one_based is not None:
        bad = [v for v in order_one_based if not 1 <= v <= count]
        if bad:
            raise ConfigError(f"order entries outside 1..{count}: {bad[:5]}")
        order = np.asarray([v - 1 for v in order_one_based], dtype=np.int64)
        source = "order_file"
    elif cfg.strategy is not None:
        oracle = cfg.oracle.build(problem)
        strat = make_strategy(
            cfg.strategy.to_spec(), oracle, int(cfg.seeds[0]),
            two_level_shape=getattr(problem, "two_level_shape", None),
        )
        order = strat.order_for_epoch(np.ones(problem.dimension), 1)
        source = f"strategy:{cfg.strategy.kind}"
    else:
        raise ConfigError("measure needs an order file or a 'strategy' section")

    report = harness.measure_order(problem, order)
    summary = dict(report["summary"], order_source=source, order_length=len(order))
    artifacts = {
        "phi.csv": csv_body(("k", "phi_sq"), report["phi_rows"]),
        "measure.json": json_body(summary),
    }
    line = (
        f"measure {source} sigma_star_sq={_fmt(summary['sigma_star_sq'])} "
        f"sample_bias_max_ratio={_fmt(summary['sample_bias_max_ratio'])} "
        f"sigma_sq_hat={_fmt(summary['sigma_sq_hat'])}"
    )
    return CommandResult(summary, [line], artifacts)
