"""Adversarial stage of the decomposition.

For a frozen first stage the operational recourse problem is a pure LP, so
its worst-case demand can be found by maximizing the LP dual merged with
the budgeted uncertainty set. The bilinear products between deviation
binaries and balance duals are linearized exactly with index-specific
Big-M constants taken from the dual's own bounds. The primal recourse LP
doubles as an independent verification oracle (strong duality must hold),
and a brute-force vertex enumerator covers tiny instances.

The dual is obtained by mechanical transposition of the primal recourse
LP; see docs/dual_derivation.md for the row-by-row derivation.
"""

from __future__ import annotations

import csv
import itertools
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .deterministic_planner import (
    DispatchPlan,
    FirstStageDecision,
    add_operational_block,
    diagnose_infeasibility,
    extract_dispatch,
    operational_cost_coeffs,
)
from .domain_model import PlanningInstance, TimeGrid
from .solver_bridge import GREATER_EQUAL, LESS_EQUAL, MAXIMIZE, MINIMIZE, ModelHandle, solve

logger = logging.getLogger(__name__)

ENUMERATION_BUDGET = 100_000


class FixedStageInfeasibleError(RuntimeError):
    """The frozen first stage admits no feasible dispatch (dual unbounded)."""

    def __init__(self, message: str, location: tuple | None = None):
        super().__init__(message)
        self.location = location


class EnumerationBudgetError(ValueError):
    """Brute-force vertex enumeration would exceed its pattern budget."""


@dataclass(frozen=True)
class FixedFirstStage:
    """First-stage snapshot passed from the master to the adversary."""

    pv_kw: float
    bess_kwh: np.ndarray  # (J,)
    selected: np.ndarray  # (J,) of 0/1
    charge_mode: np.ndarray  # (J, S, Y, T) of 0/1

    @staticmethod
    def from_decision(decision: FirstStageDecision) -> "FixedFirstStage":
        return FixedFirstStage(
            pv_kw=decision.pv_kw,
            bess_kwh=np.asarray(decision.bess_kwh, dtype=float),
            selected=np.asarray(decision.selected, dtype=float),
            charge_mode=np.asarray(decision.charge_mode, dtype=float),
        )


@dataclass(frozen=True)
class WorstCaseDemand:
    """An extreme-point demand realization chosen by the adversary."""

    realization: np.ndarray  # (Y, T) kWh
    v_plus: np.ndarray  # (Y, T) of 0/1
    v_minus: np.ndarray  # (Y, T) of 0/1
    objective: float  # adversarial operational cost


@dataclass(frozen=True)
class DualSolution:
    """Dual multipliers of the recourse LP at the adversarial optimum."""

    balance: np.ndarray  # (S, Y, T), free
    pv_cap: np.ndarray  # (S, Y, T), <= 0
    soc_link: np.ndarray  # (J, S, Y, T), free
    soc_floor: np.ndarray  # (J, S, Y, T), >= 0
    soc_ceil: np.ndarray  # (J, S, Y, T), <= 0
    charge_cap: np.ndarray  # (J, S, Y, T), <= 0
    discharge_cap: np.ndarray  # (J, S, Y, T), <= 0


@dataclass
class DualSpModel:
    """Built adversarial MILP plus variable ids for solution readback."""

    model: ModelHandle
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d_minus: np.ndarray
    d_plus: np.ndarray
    f: np.ndarray
    g: np.ndarray
    p_plus: np.ndarray
    p_minus: np.ndarray
    v_plus: np.ndarray
    v_minus: np.ndarray


def _check_dimensions(instance: PlanningInstance, fixed: FixedFirstStage) -> None:
    n_j = len(instance.batteries)
    n_s = instance.pv.count
    years, hours = instance.grid.years, instance.grid.hours_per_day
    want = (n_j, n_s, years, hours)
    if fixed.charge_mode.shape != want:
        raise ValueError(f"fixed.charge_mode shape {fixed.charge_mode.shape} != {want}")
    if fixed.bess_kwh.shape != (n_j,) or fixed.selected.shape != (n_j,):
        raise ValueError("fixed first stage battery arrays inconsistent with catalog size")


def build_dual_sp(instance: PlanningInstance, fixed: FixedFirstStage) -> DualSpModel:
    """Assemble the max-sense adversarial MILP.

    Balance duals are boxed by the grid prices (scaled by scenario weight),
    which also supplies the exact per-index Big-M for the deviation-times-
    dual products. Budget rows cap how many hours may deviate per year.
    """
    _check_dimensions(instance, fixed)
    grid = instance.grid
    years, hours = grid.years, grid.hours_per_day
    n_s = instance.pv.count
    n_j = len(instance.batteries)
    rho = instance.pv.probabilities
    buy = instance.tariff.buy_price
    sell = instance.tariff.sell_price
    nominal = instance.demand.nominal
    delta = instance.demand.deviation
    budget = instance.demand.budget

    model = ModelHandle("adversarial_dual")

    def new3(name, lb, ub):
        ids = np.empty((n_s, years, hours), dtype=int)
        for s in range(n_s):
            for y in range(years):
                for t in range(hours):
                    lo = lb(s, t) if callable(lb) else lb
                    hi = ub(s, t) if callable(ub) else ub
                    ids[s, y, t] = model.add_variable(lo, hi, name=f"{name}[{s},{y},{t}]")
        return ids

    def new4(name, lb, ub):
        ids = np.empty((n_j, n_s, years, hours), dtype=int)
        for j in range(n_j):
            for s in range(n_s):
                for y in range(years):
                    for t in range(hours):
                        ids[j, s, y, t] = model.add_variable(lb, ub, name=f"{name}[{j},{s},{y},{t}]")
        return ids

    a = new3("a", lambda s, t: rho[s] * sell[t], lambda s, t: rho[s] * buy[t])
    b = new3("b", -math.inf, 0.0)
    c = new4("c", -math.inf, math.inf)
    d_minus = new4("dm", 0.0, math.inf)
    d_plus = new4("dp", -math.inf, 0.0)
    f = new4("f", -math.inf, 0.0)
    g = new4("g", -math.inf, 0.0)
    p_plus = new3("pplus", 0.0, lambda s, t: rho[s] * buy[t])
    p_minus = new3("pminus", 0.0, lambda s, t: rho[s] * buy[t])

    v_plus = np.empty((years, hours), dtype=int)
    v_minus = np.empty((years, hours), dtype=int)
    for y in range(years):
        for t in range(hours):
            v_plus[y, t] = model.add_variable(0.0, 1.0, integral=True, name=f"vplus[{y},{t}]")
            v_minus[y, t] = model.add_variable(0.0, 1.0, integral=True, name=f"vminus[{y},{t}]")

    # Dual feasibility, one row per primal recourse variable.
    last = hours - 1
    for s in range(n_s):
        for y in range(years):
            for t in range(hours):
                model.add_constraint(
                    [(a[s, y, t], 1.0), (b[s, y, t], 1.0)],
                    LESS_EQUAL,
                    rho[s] * instance.config.pv_op_cost,
                    name=f"dual_pg[{s},{y},{t}]",
                )
    for j, bat in enumerate(instance.batteries):
        eff = bat.efficiency
        for s in range(n_s):
            for y in range(years):
                for t in range(hours):
                    coeffs = [(a[s, y, t], -1.0), (f[j, s, y, t], 1.0)]
                    if t < last:
                        coeffs.append((c[j, s, y, t], -eff))
                    model.add_constraint(coeffs, LESS_EQUAL, 0.0, name=f"dual_ch[{j},{s},{y},{t}]")

                    coeffs = [(a[s, y, t], 1.0), (g[j, s, y, t], 1.0)]
                    if t < last:
                        coeffs.append((c[j, s, y, t], 1.0 / eff))
                    model.add_constraint(
                        coeffs, LESS_EQUAL, rho[s] * bat.op_cost, name=f"dual_ds[{j},{s},{y},{t}]"
                    )

                    coeffs = [
                        (c[j, s, y, t], 1.0),
                        (d_minus[j, s, y, t], 1.0),
                        (d_plus[j, s, y, t], 1.0),
                    ]
                    if t < last - 1:  # soc[t] also enters the next recursion row
                        coeffs.append((c[j, s, y, t + 1], -1.0))
                    model.add_constraint(coeffs, LESS_EQUAL, 0.0, name=f"dual_soc[{j},{s},{y},{t}]")

    # Exact linearization of v*a products via index-specific Big-M.
    for s in range(n_s):
        for y in range(years):
            for t in range(hours):
                big_m = rho[s] * buy[t]
                for tag, p, v in (("p", p_plus, v_plus), ("m", p_minus, v_minus)):
                    pid, vid, aid = int(p[s, y, t]), int(v[y, t]), int(a[s, y, t])
                    model.add_constraint(
                        [(pid, 1.0), (vid, -big_m)], LESS_EQUAL, 0.0, name=f"lin{tag}_cap[{s},{y},{t}]"
                    )
                    model.add_constraint(
                        [(pid, 1.0), (aid, -1.0), (vid, -big_m)],
                        GREATER_EQUAL,
                        -big_m,
                        name=f"lin{tag}_lo[{s},{y},{t}]",
                    )
                    model.add_constraint(
                        [(pid, 1.0), (aid, -1.0), (vid, big_m)],
                        LESS_EQUAL,
                        big_m,
                        name=f"lin{tag}_hi[{s},{y},{t}]",
                    )
                    model.add_constraint(
                        [(pid, 1.0), (vid, big_m)], GREATER_EQUAL, 0.0, name=f"lin{tag}_nn[{s},{y},{t}]"
                    )

    # Budget of uncertainty: per-year deviation count cap, one side per hour.
    for y in range(years):
        coeffs = [(int(v_plus[y, t]), 1.0) for t in range(hours)]
        coeffs += [(int(v_minus[y, t]), 1.0) for t in range(hours)]
        model.add_constraint(coeffs, LESS_EQUAL, budget, name=f"budget[{y}]")
        for t in range(hours):
            model.add_constraint(
                [(int(v_plus[y, t]), 1.0), (int(v_minus[y, t]), 1.0)],
                LESS_EQUAL,
                1.0,
                name=f"oneside[{y},{t}]",
            )

    objective: list[tuple[int, float]] = []
    for s in range(n_s):
        for y in range(years):
            for t in range(hours):
                objective.append((int(a[s, y, t]), nominal[y, t]))
                objective.append((int(p_plus[s, y, t]), delta[y, t]))
                objective.append((int(p_minus[s, y, t]), -delta[y, t]))
                objective.append((int(b[s, y, t]), fixed.pv_kw * instance.pv.profiles[s, y, t]))
    for j, bat in enumerate(instance.batteries):
        cap = float(fixed.bess_kwh[j])
        nu = float(fixed.selected[j])
        for s in range(n_s):
            for y in range(years):
                objective.append((int(c[j, s, y, 0]), bat.soc_initial_frac * cap))
                objective.append((int(c[j, s, y, last]), bat.soc_final_frac * cap))
                soh = bat.soh_by_year[y]
                for t in range(hours):
                    objective.append((int(d_minus[j, s, y, t]), soh * cap * bat.soc_min_frac))
                    objective.append((int(d_plus[j, s, y, t]), soh * cap * bat.soc_max_frac))
                    w_hat = float(fixed.charge_mode[j, s, y, t])
                    objective.append((int(f[j, s, y, t]), bat.power_rate * w_hat))
                    objective.append((int(g[j, s, y, t]), bat.power_rate * (nu - w_hat)))
    model.set_objective(MAXIMIZE, objective)

    return DualSpModel(model, a, b, c, d_minus, d_plus, f, g, p_plus, p_minus, v_plus, v_minus)


def solve_dual_sp(
    instance: PlanningInstance,
    fixed: FixedFirstStage,
    *,
    mip_gap: float = 1e-9,
    time_limit: float | None = None,
) -> tuple[WorstCaseDemand, DualSolution, float]:
    """Solve the adversarial MILP; return the worst-case demand and dual multipliers.

    An unbounded dual means the frozen first stage has no feasible dispatch;
    the error carries the elastic diagnosis of the offending index.
    """
    built = build_dual_sp(instance, fixed)
    outcome = solve(built.model, mip_gap=mip_gap, time_limit=time_limit)
    if outcome.status == "unbounded" or (
        outcome.status == "limit" and "unbounded" in outcome.message.lower()
    ):
        diagnosis = diagnose_infeasibility(
            instance,
            demand=instance.demand.nominal,
            pv_profiles=instance.pv.profiles,
            pv_capacity=fixed.pv_kw,
            bess_capacity=fixed.bess_kwh,
            selected=fixed.selected,
            charge_mode=fixed.charge_mode,
        )
        raise FixedStageInfeasibleError(
            f"adversarial problem unbounded: fixed first stage is infeasible ({diagnosis})",
            location=diagnosis.location,
        )
    if outcome.status != "optimal":
        raise RuntimeError(f"adversarial solve ended with status {outcome.status}: {outcome.message}")

    x = outcome.primal
    v_plus = np.rint(x[built.v_plus]).astype(int)
    v_minus = np.rint(x[built.v_minus]).astype(int)
    realization = instance.demand.nominal + instance.demand.deviation * (v_plus - v_minus)
    worst = WorstCaseDemand(
        realization=realization,
        v_plus=v_plus,
        v_minus=v_minus,
        objective=outcome.objective,
    )
    duals = DualSolution(
        balance=x[built.a],
        pv_cap=x[built.b],
        soc_link=x[built.c],
        soc_floor=x[built.d_minus],
        soc_ceil=x[built.d_plus],
        charge_cap=x[built.f],
        discharge_cap=x[built.g],
    )
    return worst, duals, outcome.objective


def solve_primal_sp(
    instance: PlanningInstance,
    fixed: FixedFirstStage,
    demand_realization: np.ndarray,
    *,
    time_limit: float | None = None,
) -> tuple[DispatchPlan, float]:
    """Recourse LP at a fixed demand realization (verification oracle).

    Every first-stage quantity is frozen, so the model is a pure LP. Grid
    purchase is uncapped, which keeps the balance rows feasible for any
    nonnegative demand; infeasibility can only come from the frozen
    state-of-charge schedule and is reported with its location.
    """
    _check_dimensions(instance, fixed)
    demand_realization = np.asarray(demand_realization, dtype=float)
    model = ModelHandle("primal_recourse")
    block = add_operational_block(
        model,
        instance,
        demand=demand_realization,
        pv_profiles=instance.pv.profiles,
        pv_capacity=float(fixed.pv_kw),
        bess_capacity=list(fixed.bess_kwh),
        selected=list(fixed.selected),
        charge_mode=fixed.charge_mode,
        charge_mode_linked=False,
    )
    model.set_objective(
        MINIMIZE, operational_cost_coeffs(instance, instance.pv.probabilities, block)
    )
    outcome = solve(model, time_limit=time_limit)
    if outcome.status == "infeasible":
        diagnosis = diagnose_infeasibility(
            instance,
            demand=demand_realization,
            pv_profiles=instance.pv.profiles,
            pv_capacity=fixed.pv_kw,
            bess_capacity=fixed.bess_kwh,
            selected=fixed.selected,
            charge_mode=fixed.charge_mode,
        )
        raise FixedStageInfeasibleError(str(diagnosis), location=diagnosis.location)
    if outcome.status != "optimal":
        raise RuntimeError(f"recourse solve ended with status {outcome.status}: {outcome.message}")
    return extract_dispatch(outcome, block), outcome.objective


# -- brute-force oracle --------------------------------------------------


def vertex_count(hours: int, budget: int) -> int:
    """Number of deviation patterns per year: sum over k <= budget of C(T,k)*2^k."""
    return sum(math.comb(hours, k) * 2**k for k in range(min(budget, hours) + 1))


def _year_slice(instance: PlanningInstance, fixed: FixedFirstStage, y: int):
    grid = TimeGrid(instance.grid.hours_per_day, 1)
    instance_y = replace(
        instance,
        grid=grid,
        pv=replace(instance.pv, profiles=instance.pv.profiles[:, y : y + 1]),
        demand=replace(
            instance.demand,
            nominal=instance.demand.nominal[y : y + 1],
            deviation=instance.demand.deviation[y : y + 1],
        ),
        batteries=tuple(
            replace(bat, soh_by_year=bat.soh_by_year[y : y + 1]) for bat in instance.batteries
        ),
    )
    fixed_y = replace(fixed, charge_mode=fixed.charge_mode[:, :, y : y + 1, :])
    return instance_y, fixed_y


def _year_patterns(hours: int, budget: int):
    """All (v_plus, v_minus) vectors with at most ``budget`` deviating hours."""
    for k in range(min(budget, hours) + 1):
        for positions in itertools.combinations(range(hours), k):
            for signs in itertools.product((1, -1), repeat=k):
                v_plus = np.zeros(hours, dtype=int)
                v_minus = np.zeros(hours, dtype=int)
                for pos, sign in zip(positions, signs):
                    if sign > 0:
                        v_plus[pos] = 1
                    else:
                        v_minus[pos] = 1
                yield v_plus, v_minus


def enumerate_worst_case(
    instance: PlanningInstance,
    fixed: FixedFirstStage,
    *,
    max_patterns: int = ENUMERATION_BUDGET,
) -> tuple[WorstCaseDemand, float]:
    """Exhaustive adversary for small horizons.

    Years are independent in the recourse LP once the first stage is
    frozen, so each year's worst vertex is found separately and the results
    are composed. Ties are broken toward the lexicographically smallest
    deviation pattern, making the oracle fully reproducible.
    """
    _check_dimensions(instance, fixed)
    hours, years = instance.grid.hours_per_day, instance.grid.years
    budget = int(math.floor(instance.demand.budget + 1e-9))
    count = vertex_count(hours, budget)
    if count > max_patterns:
        raise EnumerationBudgetError(
            f"per-year vertex count {count} exceeds enumeration budget {max_patterns}"
        )

    v_plus = np.zeros((years, hours), dtype=int)
    v_minus = np.zeros((years, hours), dtype=int)
    for y in range(years):
        instance_y, fixed_y = _year_slice(instance, fixed, y)
        nominal = instance_y.demand.nominal
        delta = instance_y.demand.deviation
        best_cost = None
        best_key = None
        best = None
        for vp, vm in _year_patterns(hours, budget):
            realization = nominal + delta * (vp - vm)[None, :]
            _, cost = solve_primal_sp(instance_y, fixed_y, realization)
            key = tuple(np.stack([vp, vm], axis=1).ravel())
            if best is None:
                best_cost, best_key, best = cost, key, (vp, vm)
                continue
            tol = 1e-9 * max(1.0, abs(best_cost))
            if cost > best_cost + tol or (abs(cost - best_cost) <= tol and key < best_key):
                best_cost, best_key, best = cost, key, (vp, vm)
        v_plus[y], v_minus[y] = best

    realization = instance.demand.nominal + instance.demand.deviation * (v_plus - v_minus)
    _, total = solve_primal_sp(instance, fixed, realization)
    worst = WorstCaseDemand(
        realization=realization, v_plus=v_plus, v_minus=v_minus, objective=total
    )
    return worst, total


def write_worst_case_csv(instance: PlanningInstance, worst: WorstCaseDemand, path) -> None:
    """Debug dump of a worst-case demand next to its nominal profile."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["year", "hour", "nominal", "realization", "v_plus", "v_minus"])
        years, hours = worst.realization.shape
        for y in range(years):
            for t in range(hours):
                writer.writerow(
                    [
                        y + 1,
                        t,
                        repr(instance.demand.nominal[y, t]),
                        repr(worst.realization[y, t]),
                        int(worst.v_plus[y, t]),
                        int(worst.v_minus[y, t]),
                    ]
                )
