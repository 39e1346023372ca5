"""Command-line experiment harness.

Reproduces the experimental protocol around the solver: single robust
runs, budget sweeps crossed with scenario-count sensitivity, marginal
cost of robustness, and plot-ready CSV outputs. Exit code 0 on full
success, 2 when some sweep points failed, 1 on fatal errors.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fixtures
from .ccg_engine import CcgConfig, CcgTrace, run_ccg, solve_extensive_stochastic, write_trace_csv
from .domain_model import (
    PlanningInstance,
    load_instance,
    save_instance,
    with_budget,
    with_scenarios,
    with_years,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SweepSpec:
    """Grid of runs: every budget crossed with every scenario count and seed."""

    budgets: tuple[float, ...]
    scenario_counts: tuple[int, ...] = (0,)  # 0 = keep the instance's own set
    seeds: tuple[int, ...] = (0,)
    out_dir: str | None = None


@dataclass(frozen=True)
class SweepRow:
    budget: float
    scenarios: int
    seed: int
    objective: float
    pv_kw: float
    bess_kwh: tuple[float, ...]
    selected_tech: str
    iterations: int
    converged: bool
    wall_seconds: float
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


@dataclass
class SweepResult:
    rows: list[SweepRow] = field(default_factory=list)
    tech_ids: tuple[str, ...] = ()
    years: int = 1

    @property
    def failures(self) -> list[SweepRow]:
        return [r for r in self.rows if r.failed]


def subset_scenarios(instance: PlanningInstance, scenarios: int, seed: int) -> PlanningInstance:
    """Restrict to ``scenarios`` members of the scenario set, chosen by seed."""
    total = instance.pv.count
    if scenarios in (0, total):
        return instance
    if scenarios > total:
        raise ValueError(f"requested {scenarios} scenarios but instance has {total}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(total, size=scenarios, replace=False)
    return with_scenarios(instance, picked)


def _run_point(args) -> tuple[SweepRow, CcgTrace | None]:
    instance, budget, scenarios, seed, config = args
    started = time.perf_counter()
    try:
        variant = with_budget(subset_scenarios(instance, scenarios, seed), budget)
        trace = run_ccg(variant, config)
        stage = trace.first_stage
        tech = stage.selected_tech if stage is not None else None
        row = SweepRow(
            budget=budget,
            scenarios=scenarios or instance.pv.count,
            seed=seed,
            objective=trace.objective,
            pv_kw=stage.pv_kw if stage else math.nan,
            bess_kwh=tuple(float(v) for v in stage.bess_kwh) if stage else (),
            selected_tech=instance.batteries[tech].id if tech is not None else "",
            iterations=trace.iterations,
            converged=trace.converged,
            wall_seconds=time.perf_counter() - started,
        )
        return row, trace
    except Exception as exc:
        logger.exception("sweep point budget=%s scenarios=%s failed", budget, scenarios)
        row = SweepRow(
            budget=budget,
            scenarios=scenarios or instance.pv.count,
            seed=seed,
            objective=math.nan,
            pv_kw=math.nan,
            bess_kwh=(),
            selected_tech="",
            iterations=0,
            converged=False,
            wall_seconds=time.perf_counter() - started,
            error=str(exc),
        )
        return row, None


def run_sweep(
    instance: PlanningInstance,
    spec: SweepSpec,
    config: CcgConfig = CcgConfig(),
    jobs: int = 1,
) -> SweepResult:
    """One run per (budget, scenario count, seed); failures are recorded, not raised."""
    hours = instance.grid.hours_per_day
    for budget in spec.budgets:
        if not 0 <= budget <= hours:
            raise ValueError(f"budget {budget} outside [0, {hours}]")
    for count in spec.scenario_counts:
        if count < 0:  # 0 keeps the instance's own scenario set
            raise ValueError(f"scenario count {count} must be positive")
    points = [
        (instance, budget, scenarios, seed, config)
        for scenarios in spec.scenario_counts
        for seed in spec.seeds
        for budget in spec.budgets
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_point, points))
    else:
        outcomes = [_run_point(p) for p in points]
    rows = [row for row, _ in outcomes]
    rows.sort(key=lambda r: (r.scenarios, r.seed, r.budget))
    return SweepResult(
        rows=rows, tech_ids=tuple(b.id for b in instance.batteries), years=instance.grid.years
    )


def marginal_cost_of_robustness(result: SweepResult) -> list[tuple[float, float]]:
    """First difference of the objective along a contiguous budget grid.

    Requires a single (scenario count, seed) series; raises when a grid
    point is missing or failed.
    """
    groups = {(r.scenarios, r.seed) for r in result.rows}
    if len(groups) != 1:
        raise ValueError("marginal cost needs a sweep at a single scenario count and seed")
    rows = sorted(result.rows, key=lambda r: r.budget)
    budgets = [r.budget for r in rows]
    expected = [budgets[0] + k for k in range(len(budgets))]
    if not np.allclose(budgets, expected):
        raise ValueError(f"budget grid {budgets} is not contiguous")
    for row in rows:
        if row.failed:
            raise ValueError(f"budget {row.budget} failed: {row.error}")
    return [
        (rows[k].budget, rows[k].objective - rows[k - 1].objective) for k in range(1, len(rows))
    ]


# -- reporting ----------------------------------------------------------


def write_sweep_csv(result: SweepResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["budget", "scenarios", "seed", "objective", "pv_kw"]
        header += [f"bess_kwh[{tid}]" for tid in result.tech_ids]
        header += ["selected_tech", "iterations", "converged", "wall_seconds", "error"]
        writer.writerow(header)
        for r in result.rows:
            bess = list(r.bess_kwh) + [math.nan] * (len(result.tech_ids) - len(r.bess_kwh))
            writer.writerow(
                [repr(r.budget), r.scenarios, r.seed, repr(r.objective), repr(r.pv_kw)]
                + [repr(v) for v in bess]
                + [r.selected_tech, r.iterations, int(r.converged), f"{r.wall_seconds:.3f}", r.error]
            )


def write_xy_csv(path, x_name: str, y_name: str, pairs) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([x_name, y_name])
        for x, y in pairs:
            writer.writerow([repr(float(x)), repr(float(y))])


def report(result: SweepResult, out_dir, traces: dict[str, CcgTrace] | None = None) -> str:
    """Write the CSV bundle plus a readable summary; return the summary text."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []
    if not result.rows:
        lines.append("no runs")
    else:
        write_sweep_csv(result, out / "sweep.csv")
        ok = [r for r in result.rows if not r.failed]
        lines.append(f"{len(ok)} runs completed, {len(result.failures)} failed")
        if ok:
            first_group = min({(r.scenarios, r.seed) for r in ok})
            series = sorted(
                (r for r in ok if (r.scenarios, r.seed) == first_group), key=lambda r: r.budget
            )
            write_xy_csv(
                out / "objective_vs_budget.csv",
                "budget",
                "objective",
                [(r.budget, r.objective) for r in series],
            )
            write_xy_csv(
                out / "pv_kw_vs_budget.csv", "budget", "pv_kw", [(r.budget, r.pv_kw) for r in series]
            )
            write_xy_csv(
                out / "bess_kwh_vs_budget.csv",
                "budget",
                "bess_kwh",
                [(r.budget, sum(r.bess_kwh)) for r in series],
            )
            write_xy_csv(
                out / "runtime_vs_budget.csv",
                "budget",
                "seconds",
                [(r.budget, r.wall_seconds) for r in series],
            )
            try:
                mcr = marginal_cost_of_robustness(
                    SweepResult(rows=series, tech_ids=result.tech_ids, years=result.years)
                )
                write_xy_csv(out / "mcr_vs_budget.csv", "budget", "mcr", mcr)
            except ValueError:
                pass  # non-contiguous grid: no marginal-cost series
            for r in ok:
                per_day = r.objective / max(result.years, 1)
                battery = (
                    f"bess {sum(r.bess_kwh):.3f} kWh ({r.selected_tech})"
                    if r.selected_tech
                    else "no battery"
                )
                lines.append(
                    f"budget={r.budget:g} scenarios={r.scenarios} seed={r.seed}: "
                    f"objective {r.objective:.4f} ({per_day:.4f}/representative day), "
                    f"pv {r.pv_kw:.3f} kW, {battery}, "
                    f"{r.iterations} iterations{'' if r.converged else ' (NOT converged)'}"
                )
        if result.failures:
            lines.append("failures:")
            for r in result.failures:
                lines.append(
                    f"  budget={r.budget:g} scenarios={r.scenarios} seed={r.seed}: {r.error}"
                )
    if traces:
        for label, trace in traces.items():
            write_trace_csv(trace, out / f"trace_{label}.csv")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text, encoding="utf-8")
    return text


# -- entry point ---------------------------------------------------------


def _parse_budgets(args) -> list[float]:
    if args.budget_sweep:
        spec = args.budget_sweep
        if ":" in spec:
            parts = [float(p) for p in spec.split(":")]
            start, stop = parts[0], parts[1]
            step = parts[2] if len(parts) > 2 else 1.0
            out = []
            value = start
            while value <= stop + 1e-9:
                out.append(round(value, 9))
                value += step
            return out
        return [float(p) for p in spec.split(",")]
    return [args.budget]


def _load(path_arg: str, years: int | None) -> PlanningInstance:
    if path_arg == "fixture:desk":
        instance = fixtures.desk_instance()
    elif path_arg == "fixture:tiny":
        instance = fixtures.tiny_instance()
    else:
        instance = load_instance(path_arg)
    if years is not None:
        instance = with_years(instance, years)
    return instance


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pvbess",
        description="Robust-stochastic PV plus battery storage sizing experiments",
    )
    parser.add_argument("instance", help="instance JSON path, or fixture:desk / fixture:tiny")
    parser.add_argument("--budget", type=float, default=0.0, help="uncertainty budget (hours/year)")
    parser.add_argument(
        "--budget-sweep",
        help="sweep specification: comma list '0,2,4' or range 'start:stop[:step]'",
    )
    parser.add_argument(
        "--scenarios",
        help="comma list of scenario-set sizes to subset (default: instance's own set)",
    )
    parser.add_argument("--years", type=int, help="restrict the horizon to the first N years")
    parser.add_argument("--epsilon", type=float, default=1e-4, help="relative gap tolerance")
    parser.add_argument("--max-iters", type=int, default=40)
    parser.add_argument("--seed", default="0", help="comma list of seeds for scenario subsetting")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument(
        "--oracle", action="store_true", help="use the brute-force adversary (tiny instances)"
    )
    parser.add_argument(
        "--extensive",
        action="store_true",
        help="solve the scenario extensive form at nominal demand instead of the full loop",
    )
    parser.add_argument("--jobs", type=int, default=1, help="parallel sweep workers")
    parser.add_argument(
        "--full-rebuild", action="store_true", help="rebuild the master from scratch each iteration"
    )
    parser.add_argument("--write-instance", help="also dump the loaded instance as canonical JSON")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        instance = _load(args.instance, args.years)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.write_instance:
        save_instance(instance, args.write_instance)

    out = Path(args.out)
    config = CcgConfig(
        epsilon=args.epsilon,
        max_iterations=args.max_iters,
        adversary="bruteforce" if args.oracle else "dual",
        full_rebuild=args.full_rebuild,
    )

    try:
        if args.extensive:
            decision, objective = solve_extensive_stochastic(instance, instance.demand.nominal)
            out.mkdir(parents=True, exist_ok=True)
            tech = decision.selected_tech
            years = instance.grid.years
            battery = (
                f"bess {decision.bess_kwh.sum():.4f} kWh ({instance.batteries[tech].id})"
                if tech is not None
                else "no battery"
            )
            text = (
                f"extensive form at nominal demand: objective {objective:.6f} "
                f"({objective / years:.6f}/representative day)\n"
                f"pv {decision.pv_kw:.4f} kW, {battery}\n"
            )
            (out / "summary.txt").write_text(text, encoding="utf-8")
            print(text, end="")
            return 0

        budgets = _parse_budgets(args)
        scenario_counts = (
            tuple(int(s) for s in args.scenarios.split(",")) if args.scenarios else (0,)
        )
        seeds = tuple(int(s) for s in str(args.seed).split(","))
        spec = SweepSpec(
            budgets=tuple(budgets),
            scenario_counts=scenario_counts,
            seeds=seeds,
            out_dir=str(out),
        )
        if len(budgets) == 1 and len(scenario_counts) == 1 and len(seeds) == 1:
            row, trace = _run_point(
                (instance, budgets[0], scenario_counts[0], seeds[0], config)
            )
            result = SweepResult(
                rows=[row], tech_ids=tuple(b.id for b in instance.batteries), years=instance.grid.years
            )
            text = report(result, out, traces={"run": trace} if trace else None)
            print(text, end="")
            return 2 if result.failures else 0
        result = run_sweep(instance, spec, config, jobs=args.jobs)
        text = report(result, out)
        print(text, end="")
        return 2 if result.failures else 0
    except Exception as exc:
        logger.exception("fatal")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
