"""Master problem of the column-and-constraint generation decomposition.

Holds the investment variables, the shared charging-mode binaries, and one
full recourse block per identified worst-case demand, each tied to the
epigraph variable theta through a primal cut. Blocks are appended to the
live model between solves; a from-scratch rebuild path exists for
determinism checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .deterministic_planner import (
    BlockVars,
    FirstStageDecision,
    LinkedVar,
    add_operational_block,
    operational_cost_coeffs,
)
from .domain_model import PlanningInstance
from .robust_subproblem import WorstCaseDemand
from .solver_bridge import GREATER_EQUAL, MINIMIZE, ModelHandle, solve

logger = logging.getLogger(__name__)


@dataclass
class CutBlock:
    """One iteration's recourse block: its frozen demand, variables, and cut row."""

    iteration: int
    demand: np.ndarray  # (Y, T)
    vars: BlockVars
    cut_row: int


@dataclass
class MasterState:
    """Mutable master model plus the ids needed to grow and read it."""

    instance: PlanningInstance
    model: ModelHandle
    pv_cap: int
    bess_cap: np.ndarray  # (J,)
    select: np.ndarray  # (J,)
    charge_mode: np.ndarray  # (J, S, Y, T)
    theta: int
    theta_lower: float
    blocks: list[CutBlock] = field(default_factory=list)
    last_proven_bound: float = float("nan")  # dual bound of the latest solve


def default_theta_lower(instance: PlanningInstance) -> float:
    """Valid lower bound on the operational cost: revenue from selling at full tilt.

    Hourly sales can never exceed the PV cap plus the largest battery power
    rate (grid round-trips cost at least as much as they earn), so the
    all-hours sale of that power dominates any achievable revenue.
    """
    max_rate = max(bat.power_rate for bat in instance.batteries)
    sellable = instance.config.pv_cap_max + max_rate
    rho = instance.pv.probabilities
    total = 0.0
    for s in range(instance.pv.count):
        for _y in range(instance.grid.years):
            for t in range(instance.grid.hours_per_day):
                total += rho[s] * instance.tariff.sell_price[t] * sellable
    return -total


def init_master(instance: PlanningInstance, theta_lower: float | None = None) -> MasterState:
    """First-stage-only master: investment variables, coupling rows, bounded theta."""
    n_j = len(instance.batteries)
    n_s = instance.pv.count
    years, hours = instance.grid.years, instance.grid.hours_per_day
    cfg = instance.config
    if theta_lower is None:
        theta_lower = default_theta_lower(instance)

    model = ModelHandle("ccg_master")
    pv_cap = model.add_variable(0.0, name="pv_cap")
    bess_cap = np.array([model.add_variable(0.0, name=f"bess_cap[{j}]") for j in range(n_j)])
    select = np.array(
        [model.add_variable(0.0, 1.0, integral=True, name=f"select[{j}]") for j in range(n_j)]
    )
    charge_mode = np.empty((n_j, n_s, years, hours), dtype=int)
    for j in range(n_j):
        for s in range(n_s):
            for y in range(years):
                for t in range(hours):
                    charge_mode[j, s, y, t] = model.add_variable(
                        0.0, 1.0, integral=True, name=f"w[{j},{s},{y},{t}]"
                    )
    theta = model.add_variable(theta_lower, name="theta")

    model.add_constraint([(pv_cap, 1.0)], "<=", cfg.pv_cap_max, name="pvmax")
    for j in range(n_j):
        for s in range(n_s):
            for y in range(years):
                for t in range(hours):
                    model.add_constraint(
                        [(int(charge_mode[j, s, y, t]), 1.0), (int(select[j]), -1.0)],
                        "<=",
                        0.0,
                        name=f"wsel[{j},{s},{y},{t}]",
                    )
        model.add_constraint(
            [(int(bess_cap[j]), 1.0), (int(select[j]), -cfg.bess_cap_max)],
            "<=",
            0.0,
            name=f"bessmax[{j}]",
        )
    model.add_constraint([(int(select[j]), 1.0) for j in range(n_j)], "<=", 1.0, name="onetech")

    objective = [(pv_cap, cfg.pv_invest_cost), (theta, 1.0)]
    objective += [(int(bess_cap[j]), bat.invest_cost) for j, bat in enumerate(instance.batteries)]
    model.set_objective(MINIMIZE, objective)

    return MasterState(
        instance=instance,
        model=model,
        pv_cap=pv_cap,
        bess_cap=bess_cap,
        select=select,
        charge_mode=charge_mode,
        theta=theta,
        theta_lower=theta_lower,
    )


def add_cut_block(state: MasterState, worst_case: WorstCaseDemand) -> MasterState:
    """Append the recourse block for one worst-case demand plus its primal cut.

    A repeated demand realization is accepted (the model stays correct, the
    block is just redundant) and logged as a convergence signal.
    """
    instance = state.instance
    demand = np.asarray(worst_case.realization, dtype=float)
    for block in state.blocks:
        if np.array_equal(block.demand, demand):
            logger.warning(
                "cut block %d repeats the demand realization of block %d",
                len(state.blocks) + 1,
                block.iteration,
            )
            break

    k = len(state.blocks) + 1
    block_vars = add_operational_block(
        state.model,
        instance,
        demand=demand,
        pv_profiles=instance.pv.profiles,
        pv_capacity=LinkedVar(state.pv_cap),
        bess_capacity=[LinkedVar(int(v)) for v in state.bess_cap],
        selected=[LinkedVar(int(v)) for v in state.select],
        charge_mode=state.charge_mode,
        charge_mode_linked=True,
        prefix=f"k{k}_",
    )
    coeffs = [(state.theta, 1.0)]
    coeffs += [
        (vid, -coef)
        for vid, coef in operational_cost_coeffs(instance, instance.pv.probabilities, block_vars)
    ]
    cut_row = state.model.add_constraint(coeffs, GREATER_EQUAL, 0.0, name=f"cut[{k}]")
    state.blocks.append(CutBlock(iteration=k, demand=demand, vars=block_vars, cut_row=cut_row))
    return state


def solve_master(
    state: MasterState,
    *,
    mip_gap: float = 1e-9,
    time_limit: float | None = None,
) -> tuple[FirstStageDecision, float, float]:
    """Solve the current master; return (first stage, theta value, objective).

    The objective is the incumbent's value. The solver's proven dual bound,
    which stays a valid decomposition lower bound even when a time limit
    leaves a residual gap, is stashed on ``state.last_proven_bound``.
    """
    outcome = solve(state.model, mip_gap=mip_gap, time_limit=time_limit)
    if outcome.status not in ("optimal", "limit"):
        raise RuntimeError(f"master solve ended with status {outcome.status}: {outcome.message}")
    if outcome.status == "limit" and not np.all(np.isfinite(outcome.primal)):
        raise RuntimeError(f"master hit its limit without an incumbent: {outcome.message}")
    x = outcome.primal
    decision = FirstStageDecision(
        pv_kw=float(x[state.pv_cap]),
        bess_kwh=x[state.bess_cap].copy(),
        selected=np.rint(x[state.select]).astype(int),
        charge_mode=np.rint(x[state.charge_mode]).astype(int),
    )
    state.last_proven_bound = (
        outcome.objective_bound if np.isfinite(outcome.objective_bound) else outcome.objective
    )
    return decision, float(x[state.theta]), outcome.objective


def rebuild_master(state: MasterState) -> MasterState:
    """Reconstruct the master from scratch in canonical order (determinism mode)."""
    fresh = init_master(state.instance, theta_lower=state.theta_lower)
    for block in state.blocks:
        add_cut_block(
            fresh,
            WorstCaseDemand(
                realization=block.demand,
                v_plus=np.zeros_like(block.demand, dtype=int),
                v_minus=np.zeros_like(block.demand, dtype=int),
                objective=float("nan"),
            ),
        )
    return fresh
