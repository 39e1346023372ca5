"""Column-and-constraint generation loop for the tri-level sizing problem.

Alternates the investment master with the adversarial subproblem, keeping
a lower bound from the master and an upper bound from the true worst-case
cost of each candidate design, until the relative gap closes. A scenario
extensive form (the zero-budget reference) and a brute-force adversary
variant provide independent cross-checks.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .deterministic_planner import (
    FirstStageDecision,
    LinkedVar,
    add_first_stage_variables,
    add_operational_block,
    operational_cost_coeffs,
)
from .domain_model import PlanningInstance
from .harso_master import MasterState, add_cut_block, init_master, rebuild_master, solve_master
from .robust_subproblem import (
    FixedFirstStage,
    WorstCaseDemand,
    enumerate_worst_case,
    solve_dual_sp,
)
from .solver_bridge import MINIMIZE, ModelHandle, solve

logger = logging.getLogger(__name__)

UB_RELATIVE_GUARD = 1e-9


@dataclass(frozen=True)
class CcgConfig:
    """Loop controls: tolerance, iteration cap, per-solve limits, variants."""

    epsilon: float = 1e-4
    max_iterations: int = 40
    mip_gap: float = 1e-9
    master_time_limit: float | None = None
    subproblem_time_limit: float | None = None
    full_rebuild: bool = False
    seed_nominal_block: bool = False
    adversary: str = "dual"  # "dual" | "bruteforce"
    theta_lower: float | None = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.adversary not in ("dual", "bruteforce"):
            raise ValueError(f"unknown adversary {self.adversary!r}")


@dataclass(frozen=True)
class CcgRecord:
    iteration: int
    lower_bound: float
    upper_bound: float
    gap: float
    z_master: float
    z_subproblem: float
    theta: float
    master_seconds: float
    subproblem_seconds: float


@dataclass
class CcgTrace:
    """Per-iteration bound history plus the final solution bundle."""

    records: list[CcgRecord] = field(default_factory=list)
    converged: bool = False
    objective: float = math.inf  # final upper bound
    first_stage: FirstStageDecision | None = None
    worst_cases: list[WorstCaseDemand] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.records)


def _gap(lower: float, upper: float, epsilon: float) -> float:
    if abs(upper) > UB_RELATIVE_GUARD:
        return abs(1.0 - lower / upper)
    # Upper bound at zero: fall back to the absolute gap.
    absolute = abs(upper - lower)
    return absolute if absolute > epsilon else 0.0


def run_ccg(instance: PlanningInstance, config: CcgConfig = CcgConfig()) -> CcgTrace:
    """Run the decomposition until the bound gap closes or iterations run out.

    Each iteration solves the master (lower bound), freezes its first stage
    for the adversary, appends the recourse block of the returned worst-case
    demand, and tightens the upper bound with the candidate design's true
    worst-case cost.
    """
    state: MasterState = init_master(instance, theta_lower=config.theta_lower)
    if config.seed_nominal_block:
        nominal = instance.demand.nominal
        add_cut_block(
            state,
            WorstCaseDemand(
                realization=nominal,
                v_plus=np.zeros(nominal.shape, dtype=int),
                v_minus=np.zeros(nominal.shape, dtype=int),
                objective=math.nan,
            ),
        )

    trace = CcgTrace()
    lower, upper = -math.inf, math.inf
    best_stage: FirstStageDecision | None = None

    for iteration in range(1, config.max_iterations + 1):
        if config.full_rebuild and iteration > 1:
            state = rebuild_master(state)
        started = time.perf_counter()
        try:
            decision, theta, z_master = solve_master(
                state, mip_gap=config.mip_gap, time_limit=config.master_time_limit
            )
        except Exception as exc:
            raise RuntimeError(f"master solve failed at iteration {iteration}: {exc}") from exc
        master_seconds = time.perf_counter() - started
        bound = state.last_proven_bound if math.isfinite(state.last_proven_bound) else z_master
        # Running max: a time-limited later master may prove a weaker bound
        # than an earlier exact one; every proven bound stays globally valid.
        lower = max(lower, bound)

        fixed = FixedFirstStage.from_decision(decision)
        started = time.perf_counter()
        try:
            if config.adversary == "bruteforce":
                worst, z_sub = enumerate_worst_case(instance, fixed)
            else:
                worst, _, z_sub = solve_dual_sp(
                    instance,
                    fixed,
                    mip_gap=config.mip_gap,
                    time_limit=config.subproblem_time_limit,
                )
        except Exception as exc:
            raise RuntimeError(f"adversary solve failed at iteration {iteration}: {exc}") from exc
        subproblem_seconds = time.perf_counter() - started

        add_cut_block(state, worst)
        trace.worst_cases.append(worst)

        candidate = z_master - theta + z_sub  # incumbent investment plus true worst-case recourse
        if candidate < upper:
            upper = candidate
            best_stage = decision
        gap = _gap(lower, upper, config.epsilon)
        trace.records.append(
            CcgRecord(
                iteration=iteration,
                lower_bound=lower,
                upper_bound=upper,
                gap=gap,
                z_master=z_master,
                z_subproblem=z_sub,
                theta=theta,
                master_seconds=master_seconds,
                subproblem_seconds=subproblem_seconds,
            )
        )
        logger.info(
            "iteration %d: LB=%.6f UB=%.6f gap=%.3g", iteration, lower, upper, gap
        )
        if gap <= config.epsilon:
            trace.converged = True
            break

    trace.objective = upper
    trace.first_stage = best_stage
    return trace


def run_ccg_bruteforce(instance: PlanningInstance, config: CcgConfig = CcgConfig()) -> CcgTrace:
    """Same loop with the exhaustive-enumeration adversary (tiny instances only)."""
    return run_ccg(instance, replace(config, adversary="bruteforce"))


def solve_extensive_stochastic(
    instance: PlanningInstance,
    fixed_demand: np.ndarray,
    *,
    mip_gap: float = 1e-9,
    time_limit: float | None = None,
) -> tuple[FirstStageDecision, float]:
    """Monolithic scenario MILP at a fixed demand (the zero-budget reference).

    Identical to the deterministic model except the recourse is scenario
    indexed and operational cost is probability weighted.
    """
    fixed_demand = np.asarray(fixed_demand, dtype=float)
    model = ModelHandle("extensive_stochastic")
    pv_cap, bess_cap, select, w = add_first_stage_variables(model, instance, n_s=instance.pv.count)
    block = add_operational_block(
        model,
        instance,
        demand=fixed_demand,
        pv_profiles=instance.pv.profiles,
        pv_capacity=LinkedVar(pv_cap),
        bess_capacity=[LinkedVar(int(v)) for v in bess_cap],
        selected=[LinkedVar(int(v)) for v in select],
        charge_mode=w,
        charge_mode_linked=True,
    )
    objective = [(pv_cap, instance.config.pv_invest_cost)]
    objective += [(int(bess_cap[j]), bat.invest_cost) for j, bat in enumerate(instance.batteries)]
    objective += operational_cost_coeffs(instance, instance.pv.probabilities, block)
    model.set_objective(MINIMIZE, objective)
    outcome = solve(model, mip_gap=mip_gap, time_limit=time_limit)
    if outcome.status != "optimal":
        raise RuntimeError(f"extensive solve ended with status {outcome.status}: {outcome.message}")

    x = outcome.primal
    decision = FirstStageDecision(
        pv_kw=float(x[pv_cap]),
        bess_kwh=x[bess_cap].copy(),
        selected=np.rint(x[select]).astype(int),
        charge_mode=np.rint(x[w]).astype(int),
    )
    return decision, outcome.objective


def write_trace_csv(trace: CcgTrace, path, include_times: bool = True) -> None:
    """Persist the bound history as CSV.

    Value columns serialize via ``repr`` and reproduce byte-for-byte across
    runs; wall-time columns never can, so determinism comparisons write
    with ``include_times=False``.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = ["iter", "lb", "ub", "gap", "z_mp", "z_sp", "theta"]
        if include_times:
            header += ["t_mp_sec", "t_sp_sec"]
        writer.writerow(header)
        for rec in trace.records:
            row = [
                rec.iteration,
                repr(rec.lower_bound),
                repr(rec.upper_bound),
                repr(rec.gap),
                repr(rec.z_master),
                repr(rec.z_subproblem),
                repr(rec.theta),
            ]
            if include_times:
                row += [f"{rec.master_seconds:.6f}", f"{rec.subproblem_seconds:.6f}"]
            writer.writerow(row)
