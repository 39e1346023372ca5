"""Deterministic sizing MILP and its fixed-capacity self-consumption variant.

The operational constraint set (power balance, PV availability, battery
state-of-charge dynamics and caps) is factored into
:func:`add_operational_block` so the same rows back the deterministic
model, the scenario extensive form, the recourse blocks of the
decomposition master, and the primal adversarial subproblem. First-stage
quantities enter each row either as linked model variables or as frozen
numbers, selected per call site.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .domain_model import PlanningInstance
from .solver_bridge import (
    EQUAL,
    GREATER_EQUAL,
    LESS_EQUAL,
    MINIMIZE,
    ModelHandle,
    SolveOutcome,
    solve,
)

logger = logging.getLogger(__name__)


class InfeasibleModelError(RuntimeError):
    """Solve failed with an infeasible model; carries an elastic-relaxation diagnosis."""

    def __init__(self, message: str, location: tuple | None = None):
        super().__init__(message)
        self.location = location


@dataclass(frozen=True)
class LinkedVar:
    """Marks a first-stage quantity as a model variable rather than a number."""

    vid: int


@dataclass(frozen=True)
class FirstStageDecision:
    """Investment outcome: capacities, technology choice, charging-mode schedule.

    ``charge_mode`` is (techs, scenarios, years, hours) for scenario-indexed
    models and (techs, 1, years, hours) for the deterministic one.
    """

    pv_kw: float
    bess_kwh: np.ndarray  # (J,)
    selected: np.ndarray  # (J,) of 0/1
    charge_mode: np.ndarray  # (J, S, Y, T) of 0/1

    @property
    def selected_tech(self) -> int | None:
        chosen = np.flatnonzero(self.selected)
        return int(chosen[0]) if chosen.size else None


@dataclass(frozen=True)
class DispatchPlan:
    """Operational schedule. All arrays keep the scenario axis (S=1 when deterministic)."""

    pv_output: np.ndarray  # (S, Y, T) kW
    grid_buy: np.ndarray  # (S, Y, T) kW
    grid_sell: np.ndarray  # (S, Y, T) kW
    charge: np.ndarray  # (J, S, Y, T) kW
    discharge: np.ndarray  # (J, S, Y, T) kW
    soc: np.ndarray  # (J, S, Y, T) kWh


@dataclass(frozen=True)
class BlockVars:
    """Variable ids of one operational block, shaped like the quantities they model."""

    pv_output: np.ndarray
    grid_buy: np.ndarray
    grid_sell: np.ndarray
    charge: np.ndarray
    discharge: np.ndarray
    soc: np.ndarray
    balance_rows: np.ndarray
    slack_pos: np.ndarray | None = None
    slack_neg: np.ndarray | None = None
    soc_slack: np.ndarray | None = None


def _cap_term(coeffs: list, rhs: float, cap, coef: float) -> float:
    """Fold ``coef * cap`` into a row: onto the LHS when linked, the RHS when fixed."""
    if isinstance(cap, LinkedVar):
        coeffs.append((cap.vid, -coef))
        return rhs
    return rhs + coef * float(cap)


def add_operational_block(
    model: ModelHandle,
    instance: PlanningInstance,
    *,
    demand: np.ndarray,  # (Y, T) fixed realization
    pv_profiles: np.ndarray,  # (S, Y, T)
    pv_capacity,  # LinkedVar | float
    bess_capacity,  # per-tech sequence of LinkedVar | float
    selected,  # per-tech sequence of LinkedVar | float
    charge_mode,  # (J, S, Y, T) array of variable ids, or float 0/1 values
    charge_mode_linked: bool,
    soh_override: np.ndarray | None = None,  # (J, Y), e.g. all-ones
    prefix: str = "",
    elastic: bool = False,
) -> BlockVars:
    """Append one full operational block (recourse variables plus rows).

    With ``elastic`` set, nonnegative slack variables are added to the power
    balance and the state-of-charge window rows so an infeasible fixed stage
    can be diagnosed by minimizing total slack.
    """
    grid = instance.grid
    years, hours = grid.years, grid.hours_per_day
    n_s = pv_profiles.shape[0]
    n_j = len(instance.batteries)
    if demand.shape != (years, hours):
        raise ValueError(f"demand shape {demand.shape} != ({years},{hours})")
    if pv_profiles.shape[1:] != (years, hours):
        raise ValueError(f"pv_profiles shape {pv_profiles.shape} inconsistent with grid")

    def grid3(name):
        ids = np.empty((n_s, years, hours), dtype=int)
        for s in range(n_s):
            for y in range(years):
                for t in range(hours):
                    ids[s, y, t] = model.add_variable(0.0, name=f"{prefix}{name}[{s},{y},{t}]")
        return ids

    def grid4(name):
        ids = np.empty((n_j, n_s, years, hours), dtype=int)
        for j in range(n_j):
            for s in range(n_s):
                for y in range(years):
                    for t in range(hours):
                        ids[j, s, y, t] = model.add_variable(0.0, name=f"{prefix}{name}[{j},{s},{y},{t}]")
        return ids

    pv_out = grid3("pg")
    buy = grid3("pbuy")
    sell = grid3("psell")
    ch = grid4("ch")
    ds = grid4("ds")
    soc = grid4("soc")
    slack_pos = grid3("sbal_pos") if elastic else None
    slack_neg = grid3("sbal_neg") if elastic else None
    soc_slack = grid4("ssoc") if elastic else None

    balance_rows = np.empty((n_s, years, hours), dtype=int)
    for s in range(n_s):
        for y in range(years):
            for t in range(hours):
                coeffs = [(pv_out[s, y, t], 1.0), (buy[s, y, t], 1.0), (sell[s, y, t], -1.0)]
                for j in range(n_j):
                    coeffs += [(ds[j, s, y, t], 1.0), (ch[j, s, y, t], -1.0)]
                if elastic:
                    coeffs += [(slack_pos[s, y, t], 1.0), (slack_neg[s, y, t], -1.0)]
                balance_rows[s, y, t] = model.add_constraint(
                    coeffs, EQUAL, demand[y, t], name=f"{prefix}bal[{s},{y},{t}]"
                )
                coeffs = [(pv_out[s, y, t], 1.0)]
                rhs = _cap_term(coeffs, 0.0, pv_capacity, pv_profiles[s, y, t])
                model.add_constraint(coeffs, LESS_EQUAL, rhs, name=f"{prefix}pvcap[{s},{y},{t}]")

    for j, bat in enumerate(instance.batteries):
        eff = bat.efficiency
        soh = soh_override[j] if soh_override is not None else bat.soh_by_year
        for s in range(n_s):
            for y in range(years):
                for t in range(hours):
                    if t == hours - 1:  # final hour pinned to the end-of-day level
                        coeffs = [(soc[j, s, y, t], 1.0)]
                        rhs = _cap_term(coeffs, 0.0, bess_capacity[j], bat.soc_final_frac)
                    elif t == 0:
                        coeffs = [
                            (soc[j, s, y, t], 1.0),
                            (ch[j, s, y, t], -eff),
                            (ds[j, s, y, t], 1.0 / eff),
                        ]
                        rhs = _cap_term(coeffs, 0.0, bess_capacity[j], bat.soc_initial_frac)
                    else:
                        coeffs = [
                            (soc[j, s, y, t], 1.0),
                            (soc[j, s, y, t - 1], -1.0),
                            (ch[j, s, y, t], -eff),
                            (ds[j, s, y, t], 1.0 / eff),
                        ]
                        rhs = 0.0
                    model.add_constraint(coeffs, EQUAL, rhs, name=f"{prefix}socdef[{j},{s},{y},{t}]")

                    coeffs = [(soc[j, s, y, t], 1.0)]
                    if elastic:
                        coeffs.append((soc_slack[j, s, y, t], 1.0))
                    rhs = _cap_term(coeffs, 0.0, bess_capacity[j], soh[y] * bat.soc_min_frac)
                    model.add_constraint(coeffs, GREATER_EQUAL, rhs, name=f"{prefix}socmin[{j},{s},{y},{t}]")

                    coeffs = [(soc[j, s, y, t], 1.0)]
                    if elastic:
                        coeffs.append((soc_slack[j, s, y, t], -1.0))
                    rhs = _cap_term(coeffs, 0.0, bess_capacity[j], soh[y] * bat.soc_max_frac)
                    model.add_constraint(coeffs, LESS_EQUAL, rhs, name=f"{prefix}socmax[{j},{s},{y},{t}]")

                    w = charge_mode[j, s, y, t]
                    if charge_mode_linked:
                        coeffs = [(ch[j, s, y, t], 1.0), (int(w), -bat.power_rate)]
                        model.add_constraint(coeffs, LESS_EQUAL, 0.0, name=f"{prefix}chcap[{j},{s},{y},{t}]")
                        coeffs = [(ds[j, s, y, t], 1.0), (int(w), bat.power_rate)]
                        rhs = _cap_term(coeffs, 0.0, selected[j], bat.power_rate)
                        model.add_constraint(coeffs, LESS_EQUAL, rhs, name=f"{prefix}dscap[{j},{s},{y},{t}]")
                    else:
                        model.add_constraint(
                            [(ch[j, s, y, t], 1.0)],
                            LESS_EQUAL,
                            bat.power_rate * float(w),
                            name=f"{prefix}chcap[{j},{s},{y},{t}]",
                        )
                        coeffs = [(ds[j, s, y, t], 1.0)]
                        rhs = _cap_term(coeffs, -bat.power_rate * float(w), selected[j], bat.power_rate)
                        model.add_constraint(coeffs, LESS_EQUAL, rhs, name=f"{prefix}dscap[{j},{s},{y},{t}]")

    return BlockVars(
        pv_output=pv_out,
        grid_buy=buy,
        grid_sell=sell,
        charge=ch,
        discharge=ds,
        soc=soc,
        balance_rows=balance_rows,
        slack_pos=slack_pos,
        slack_neg=slack_neg,
        soc_slack=soc_slack,
    )


def operational_cost_coeffs(
    instance: PlanningInstance, probabilities: np.ndarray, block: BlockVars
) -> list[tuple[int, float]]:
    """Probability-weighted operational cost terms over one block's variables."""
    tariff = instance.tariff
    cfg = instance.config
    coeffs: list[tuple[int, float]] = []
    n_s, years, hours = block.pv_output.shape
    for s in range(n_s):
        rho = float(probabilities[s])
        for y in range(years):
            for t in range(hours):
                coeffs.append((int(block.grid_buy[s, y, t]), rho * tariff.buy_price[t]))
                coeffs.append((int(block.grid_sell[s, y, t]), -rho * tariff.sell_price[t]))
                coeffs.append((int(block.pv_output[s, y, t]), rho * cfg.pv_op_cost))
    for j, bat in enumerate(instance.batteries):
        for s in range(n_s):
            rho = float(probabilities[s])
            for y in range(years):
                for t in range(hours):
                    coeffs.append((int(block.discharge[j, s, y, t]), rho * bat.op_cost))
    return coeffs


def operational_cost_value(
    instance: PlanningInstance, probabilities: np.ndarray, plan: DispatchPlan
) -> float:
    """Evaluate the operational cost expression on a concrete dispatch."""
    tariff = instance.tariff
    cfg = instance.config
    rho = np.asarray(probabilities, dtype=float)[:, None, None]
    total = float(
        np.sum(rho * (tariff.buy_price * plan.grid_buy - tariff.sell_price * plan.grid_sell))
    )
    total += cfg.pv_op_cost * float(np.sum(rho * plan.pv_output))
    for j, bat in enumerate(instance.batteries):
        total += bat.op_cost * float(np.sum(rho[None] * plan.discharge[j]))
    return total


# -- deterministic sizing model ----------------------------------------


@dataclass
class DeterministicModel:
    """The built sizing MILP plus the ids needed to read a solution back."""

    model: ModelHandle
    pv_cap: int
    bess_cap: np.ndarray  # (J,)
    select: np.ndarray  # (J,)
    charge_mode: np.ndarray  # (J, 1, Y, T)
    block: BlockVars


def add_first_stage_variables(model: ModelHandle, instance: PlanningInstance, n_s: int):
    """Investment variables plus the capacity/selection coupling rows."""
    n_j = len(instance.batteries)
    years, hours = instance.grid.years, instance.grid.hours_per_day
    cfg = instance.config
    pv_cap = model.add_variable(0.0, name="pv_cap")
    bess_cap = np.array([model.add_variable(0.0, name=f"bess_cap[{j}]") for j in range(n_j)])
    select = np.array(
        [model.add_variable(0.0, 1.0, integral=True, name=f"select[{j}]") for j in range(n_j)]
    )
    w = np.empty((n_j, n_s, years, hours), dtype=int)
    for j in range(n_j):
        for s in range(n_s):
            for y in range(years):
                for t in range(hours):
                    w[j, s, y, t] = model.add_variable(
                        0.0, 1.0, integral=True, name=f"w[{j},{s},{y},{t}]"
                    )
    model.add_constraint([(pv_cap, 1.0)], LESS_EQUAL, cfg.pv_cap_max, name="pvmax")
    for j in range(n_j):
        for s in range(n_s):
            for y in range(years):
                for t in range(hours):
                    model.add_constraint(
                        [(w[j, s, y, t], 1.0), (select[j], -1.0)],
                        LESS_EQUAL,
                        0.0,
                        name=f"wsel[{j},{s},{y},{t}]",
                    )
        model.add_constraint(
            [(bess_cap[j], 1.0), (select[j], -cfg.bess_cap_max)],
            LESS_EQUAL,
            0.0,
            name=f"bessmax[{j}]",
        )
    model.add_constraint([(select[j], 1.0) for j in range(n_j)], LESS_EQUAL, 1.0, name="onetech")
    return pv_cap, bess_cap, select, w


def build_deterministic(
    instance: PlanningInstance, demand: np.ndarray, pv_profile: np.ndarray
) -> DeterministicModel:
    """Assemble the single-profile sizing MILP: investment plus one operational day per year."""
    demand = np.asarray(demand, dtype=float)
    pv_profile = np.asarray(pv_profile, dtype=float)
    model = ModelHandle("deterministic_sizing")
    pv_cap, bess_cap, select, w = add_first_stage_variables(model, instance, n_s=1)
    block = add_operational_block(
        model,
        instance,
        demand=demand,
        pv_profiles=pv_profile[None],
        pv_capacity=LinkedVar(pv_cap),
        bess_capacity=[LinkedVar(int(v)) for v in bess_cap],
        selected=[LinkedVar(int(v)) for v in select],
        charge_mode=w,
        charge_mode_linked=True,
    )
    objective = [(pv_cap, instance.config.pv_invest_cost)]
    objective += [(int(bess_cap[j]), bat.invest_cost) for j, bat in enumerate(instance.batteries)]
    objective += operational_cost_coeffs(instance, np.array([1.0]), block)
    model.set_objective(MINIMIZE, objective)
    return DeterministicModel(model, pv_cap, bess_cap, select, w, block)


def extract_first_stage(outcome: SolveOutcome, built: DeterministicModel) -> FirstStageDecision:
    x = outcome.primal
    return FirstStageDecision(
        pv_kw=float(x[built.pv_cap]),
        bess_kwh=x[built.bess_cap].copy(),
        selected=np.rint(x[built.select]).astype(int),
        charge_mode=np.rint(x[built.charge_mode]).astype(int),
    )


def extract_dispatch(outcome: SolveOutcome, block: BlockVars) -> DispatchPlan:
    x = outcome.primal
    return DispatchPlan(
        pv_output=x[block.pv_output],
        grid_buy=x[block.grid_buy],
        grid_sell=x[block.grid_sell],
        charge=x[block.charge],
        discharge=x[block.discharge],
        soc=x[block.soc],
    )


def solve_deterministic(
    instance: PlanningInstance,
    demand: np.ndarray,
    pv_profile: np.ndarray,
    *,
    mip_gap: float = 1e-9,
    time_limit: float | None = None,
) -> tuple[FirstStageDecision, DispatchPlan, float]:
    built = build_deterministic(instance, demand, pv_profile)
    outcome = solve(built.model, mip_gap=mip_gap, time_limit=time_limit)
    if outcome.status == "infeasible":
        raise diagnose_infeasibility(
            instance,
            demand=np.asarray(demand, dtype=float),
            pv_profiles=np.asarray(pv_profile, dtype=float)[None],
            pv_capacity=instance.config.pv_cap_max,
            bess_capacity=np.zeros(len(instance.batteries)),
            selected=np.zeros(len(instance.batteries)),
            charge_mode=np.zeros((len(instance.batteries), 1, instance.grid.years, instance.grid.hours_per_day)),
        )
    if outcome.status != "optimal":
        raise RuntimeError(f"deterministic solve ended with status {outcome.status}: {outcome.message}")
    return (
        extract_first_stage(outcome, built),
        extract_dispatch(outcome, built.block),
        outcome.objective,
    )


def solve_self_consumption(
    instance: PlanningInstance,
    demand: np.ndarray,
    pv_profile: np.ndarray,
    fixed_pv_kw: float,
    fixed_bess_kwh: float,
    tech,
    *,
    mip_gap: float = 1e-9,
    time_limit: float | None = None,
) -> np.ndarray:
    """Dispatch-only solve at frozen capacities, degradation switched off.

    Returns the hourly state-of-charge trace (years, hours) used to feed an
    external aging simulator before any degradation data exists.
    """
    from dataclasses import replace as dc_replace

    demand = np.asarray(demand, dtype=float)
    pv_profile = np.asarray(pv_profile, dtype=float)
    single = dc_replace(instance, batteries=(tech,))
    years, hours = instance.grid.years, instance.grid.hours_per_day
    model = ModelHandle("self_consumption")
    w = np.empty((1, 1, years, hours), dtype=int)
    for y in range(years):
        for t in range(hours):
            w[0, 0, y, t] = model.add_variable(0.0, 1.0, integral=True, name=f"w[0,{y},{t}]")
    block = add_operational_block(
        model,
        single,
        demand=demand,
        pv_profiles=pv_profile[None],
        pv_capacity=float(fixed_pv_kw),
        bess_capacity=[float(fixed_bess_kwh)],
        selected=[1.0],
        charge_mode=w,
        charge_mode_linked=True,
        soh_override=np.ones((1, years)),
    )
    model.set_objective(MINIMIZE, operational_cost_coeffs(single, np.array([1.0]), block))
    outcome = solve(model, mip_gap=mip_gap, time_limit=time_limit)
    if outcome.status == "infeasible":
        raise diagnose_infeasibility(
            single,
            demand=demand,
            pv_profiles=pv_profile[None],
            pv_capacity=float(fixed_pv_kw),
            bess_capacity=np.array([float(fixed_bess_kwh)]),
            selected=np.array([1.0]),
            charge_mode=np.rint(np.zeros((1, 1, years, hours))),
            soh_override=np.ones((1, years)),
        )
    if outcome.status != "optimal":
        raise RuntimeError(f"self-consumption solve ended with status {outcome.status}: {outcome.message}")
    return outcome.primal[block.soc][0, 0]


def diagnose_infeasibility(
    instance: PlanningInstance,
    *,
    demand: np.ndarray,
    pv_profiles: np.ndarray,
    pv_capacity: float,
    bess_capacity: np.ndarray,
    selected: np.ndarray,
    charge_mode: np.ndarray,
    soh_override: np.ndarray | None = None,
) -> InfeasibleModelError:
    """Re-solve with elastic balance and state-of-charge windows; name the worst slack.

    Balance rows alone can never be binding-infeasible (grid import is
    uncapped), so the window rows are relaxed too; the largest slack points
    at the conflicting index.
    """
    model = ModelHandle("elastic_diagnosis")
    block = add_operational_block(
        model,
        instance,
        demand=demand,
        pv_profiles=pv_profiles,
        pv_capacity=pv_capacity,
        bess_capacity=list(np.asarray(bess_capacity, dtype=float)),
        selected=list(np.asarray(selected, dtype=float)),
        charge_mode=np.asarray(charge_mode, dtype=float),
        charge_mode_linked=False,
        soh_override=soh_override,
        elastic=True,
    )
    coeffs = [(int(v), 1.0) for v in block.slack_pos.ravel()]
    coeffs += [(int(v), 1.0) for v in block.slack_neg.ravel()]
    coeffs += [(int(v), 1.0) for v in block.soc_slack.ravel()]
    model.set_objective(MINIMIZE, coeffs)
    outcome = solve(model)
    if outcome.status != "optimal":
        return InfeasibleModelError(
            "model infeasible and elastic relaxation failed; "
            "check state-of-charge boundary fractions against the degradation window"
        )
    bal = outcome.primal[block.slack_pos] + outcome.primal[block.slack_neg]
    socs = outcome.primal[block.soc_slack]
    if bal.max(initial=0.0) >= socs.max(initial=0.0):
        s, y, t = np.unravel_index(int(np.argmax(bal)), bal.shape)
        return InfeasibleModelError(
            f"infeasible: power balance short by {bal[s, y, t]:.6g} kW at scenario {s}, year {y}, hour {t}",
            location=(int(s), int(y), int(t)),
        )
    j, s, y, t = np.unravel_index(int(np.argmax(socs)), socs.shape)
    return InfeasibleModelError(
        f"infeasible: state-of-charge window violated by {socs[j, s, y, t]:.6g} kWh "
        f"for battery {j}, scenario {s}, year {y}, hour {t}",
        location=(int(j), int(s), int(y), int(t)),
    )


def export_soc_trace(soc: np.ndarray, path) -> None:
    """Write an hourly state-of-charge trace as (year, hour, soc_kwh) CSV."""
    soc = np.asarray(soc, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["year", "hour", "soc_kwh"])
        for y in range(soc.shape[0]):
            for t in range(soc.shape[1]):
                writer.writerow([y + 1, t, repr(float(soc[y, t]))])
