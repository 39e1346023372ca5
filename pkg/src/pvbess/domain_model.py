"""Typed problem data for PV-battery sizing under hybrid uncertainty.

Every quantity the optimizer consumes lives here as an immutable dataclass:
the hourly/yearly grid, tariffs, stochastic PV scenarios, the budgeted
demand uncertainty set, the battery catalog with degradation curves, and
system-wide caps. Construction is permissive; :func:`validate` reports
every broken invariant as data so loaders can present them all at once.

Array layout convention across the package: demand-like matrices are
``(years, hours)``, PV scenario tensors ``(scenarios, years, hours)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

DEFAULT_HOURS_PER_DAY = 24
DEFAULT_SOC_BOUNDARY_FRAC = 0.25  # typical stabilized overnight level

PROBABILITY_TOL = 1e-9


class InstanceError(ValueError):
    """Raised by loaders when an instance fails validation."""

    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("invalid planning instance:\n" + "\n".join(f"- {v}" for v in violations))


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Planning horizon: one representative day per year, hourly resolution."""

    hours_per_day: int = DEFAULT_HOURS_PER_DAY
    years: int = 1


@dataclass(frozen=True)
class Tariff:
    """Hourly grid purchase and feed-in prices (currency/kWh)."""

    buy_price: np.ndarray
    sell_price: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "buy_price", _frozen_array(self.buy_price))
        object.__setattr__(self, "sell_price", _frozen_array(self.sell_price))


@dataclass(frozen=True)
class PvScenarioSet:
    """Per-scenario daily PV output profiles, per kW installed, in [0, 1].

    ``profiles`` has shape (scenarios, years, hours); ``probabilities``
    holds one strictly positive weight per scenario, summing to 1.
    """

    profiles: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "profiles", _frozen_array(self.profiles))
        object.__setattr__(self, "probabilities", _frozen_array(self.probabilities))

    @property
    def count(self) -> int:
        return self.profiles.shape[0]


@dataclass(frozen=True)
class DemandUncertainty:
    """Interval demand uncertainty with a per-year deviation budget.

    Any realization takes values nominal +/- deviation elementwise, with at
    most ``budget`` deviating hours per year.
    """

    nominal: np.ndarray
    deviation: np.ndarray
    budget: float

    def __post_init__(self):
        object.__setattr__(self, "nominal", _frozen_array(self.nominal))
        object.__setattr__(self, "deviation", _frozen_array(self.deviation))


@dataclass(frozen=True)
class BatteryTech:
    """One candidate battery technology.

    ``soh_by_year`` is the state-of-health fraction applied to usable
    capacity in each year; second-life units start below 1.0.
    """

    id: str
    invest_cost: float  # currency per kWh installed
    op_cost: float  # currency per kWh discharged
    soh_by_year: np.ndarray
    soc_min_frac: float
    soc_max_frac: float
    efficiency: float
    power_rate: float  # kW cap on charging and on discharging
    soc_initial_frac: float = DEFAULT_SOC_BOUNDARY_FRAC
    soc_final_frac: float = DEFAULT_SOC_BOUNDARY_FRAC

    def __post_init__(self):
        object.__setattr__(self, "soh_by_year", _frozen_array(self.soh_by_year))


@dataclass(frozen=True)
class SystemConfig:
    """Investment cost coefficients and installation caps."""

    pv_invest_cost: float  # currency per kW
    pv_op_cost: float  # currency per kWh generated
    pv_cap_max: float  # kW
    bess_cap_max: float  # kWh


@dataclass(frozen=True)
class PlanningInstance:
    """Complete immutable problem data bundle."""

    grid: TimeGrid
    tariff: Tariff
    pv: PvScenarioSet
    demand: DemandUncertainty
    batteries: tuple[BatteryTech, ...]
    config: SystemConfig

    def __post_init__(self):
        object.__setattr__(self, "batteries", tuple(self.batteries))


def validate(instance: PlanningInstance) -> list[str]:
    """Check every invariant; return one description per violation.

    Pure and side-effect free: violations are data, not exceptions, so a
    loader can report all of them in one pass.
    """
    out: list[str] = []
    grid = instance.grid
    hours, years = grid.hours_per_day, grid.years

    if hours < 2:
        out.append(f"grid.hours_per_day {hours} < 2 (state-of-charge recursion needs two periods)")
    if years < 1:
        out.append(f"grid.years {years} < 1")

    tariff = instance.tariff
    for label, vec in (("buy_price", tariff.buy_price), ("sell_price", tariff.sell_price)):
        if vec.shape != (hours,):
            out.append(f"tariff.{label} length {vec.shape} != hours_per_day {hours}")
        elif np.any(vec < 0):
            out.append(f"tariff.{label} has negative entries")
    if tariff.buy_price.shape == tariff.sell_price.shape == (hours,):
        bad = np.flatnonzero(tariff.buy_price < tariff.sell_price - 1e-12)
        if bad.size:
            out.append(
                f"tariff.buy_price < sell_price at hours {bad.tolist()} (admits unbounded grid arbitrage)"
            )

    pv = instance.pv
    if pv.profiles.ndim != 3:
        out.append(f"pv.profiles must be (scenarios, years, hours), got shape {pv.profiles.shape}")
    else:
        s, y, t = pv.profiles.shape
        if (y, t) != (years, hours):
            out.append(f"pv.profiles shape {pv.profiles.shape} inconsistent with grid ({years},{hours})")
        if np.any(pv.profiles < 0) or np.any(pv.profiles > 1):
            out.append("pv.profiles entries outside [0, 1]")
        if pv.probabilities.shape != (s,):
            out.append(f"pv.probabilities length {pv.probabilities.shape} != scenario count {s}")
        else:
            if np.any(pv.probabilities <= 0):
                out.append("pv.probabilities must be strictly positive")
            total = float(pv.probabilities.sum())
            if abs(total - 1.0) > PROBABILITY_TOL:
                out.append(f"probabilities sum {total:.10g} != 1")

    dem = instance.demand
    for label, mat in (("nominal", dem.nominal), ("deviation", dem.deviation)):
        if mat.shape != (years, hours):
            out.append(f"demand.{label} shape {mat.shape} != ({years},{hours})")
    if dem.nominal.shape == dem.deviation.shape:
        if np.any(dem.deviation < 0):
            out.append("demand.deviation has negative entries")
        if np.any(dem.nominal - dem.deviation < -1e-12):
            out.append("demand nominal - deviation < 0 somewhere (demand would go negative)")
    if not 0 <= dem.budget <= hours:
        out.append(f"demand.budget {dem.budget} outside [0, hours_per_day]: budget exceeds hours_per_day")

    if not instance.batteries:
        out.append("batteries list is empty")
    seen_ids: set[str] = set()
    for bat in instance.batteries:
        tag = f"battery {bat.id!r}"
        if bat.id in seen_ids:
            out.append(f"{tag}: duplicate id")
        seen_ids.add(bat.id)
        if not 0 < bat.efficiency <= 1:
            out.append(f"{tag}: efficiency {bat.efficiency} outside (0, 1]")
        if not 0 <= bat.soc_min_frac < bat.soc_max_frac <= 1:
            out.append(f"{tag}: soc fraction window [{bat.soc_min_frac}, {bat.soc_max_frac}] invalid")
        for label, frac in (("soc_initial_frac", bat.soc_initial_frac), ("soc_final_frac", bat.soc_final_frac)):
            if not bat.soc_min_frac <= frac <= bat.soc_max_frac:
                out.append(f"{tag}: {label} {frac} outside [{bat.soc_min_frac}, {bat.soc_max_frac}]")
        if bat.invest_cost < 0 or bat.op_cost < 0:
            out.append(f"{tag}: negative cost")
        if bat.power_rate < 0:
            out.append(f"{tag}: negative power_rate")
        soh = bat.soh_by_year
        if soh.shape != (years,):
            out.append(f"{tag}: soh_by_year length {soh.shape} != years {years}")
        else:
            if np.any(soh <= 0) or np.any(soh > 1):
                out.append(f"{tag}: soh_by_year entries outside (0, 1]")
            if np.any(np.diff(soh) > 1e-12):
                out.append(f"{tag}: soh_by_year increases over years (degradation must be nonincreasing)")

    cfg = instance.config
    if min(cfg.pv_invest_cost, cfg.pv_op_cost) < 0:
        out.append("config: negative PV cost")
    if cfg.pv_cap_max <= 0 or cfg.bess_cap_max <= 0:
        out.append("config: installation caps must be positive")

    return out


# -- serialization ------------------------------------------------------


def instance_to_dict(instance: PlanningInstance) -> dict:
    return {
        "grid": {"hours_per_day": instance.grid.hours_per_day, "years": instance.grid.years},
        "tariff": {
            "buy_price": instance.tariff.buy_price.tolist(),
            "sell_price": instance.tariff.sell_price.tolist(),
        },
        "pv": {
            "profiles": instance.pv.profiles.tolist(),
            "probabilities": instance.pv.probabilities.tolist(),
        },
        "demand": {
            "nominal": instance.demand.nominal.tolist(),
            "deviation": instance.demand.deviation.tolist(),
            "budget": instance.demand.budget,
        },
        "batteries": [
            {
                "id": b.id,
                "invest_cost": b.invest_cost,
                "op_cost": b.op_cost,
                "soh_by_year": b.soh_by_year.tolist(),
                "soc_min_frac": b.soc_min_frac,
                "soc_max_frac": b.soc_max_frac,
                "efficiency": b.efficiency,
                "power_rate": b.power_rate,
                "soc_initial_frac": b.soc_initial_frac,
                "soc_final_frac": b.soc_final_frac,
            }
            for b in instance.batteries
        ],
        "config": {
            "pv_invest_cost": instance.config.pv_invest_cost,
            "pv_op_cost": instance.config.pv_op_cost,
            "pv_cap_max": instance.config.pv_cap_max,
            "bess_cap_max": instance.config.bess_cap_max,
        },
    }


def instance_from_dict(data: dict) -> PlanningInstance:
    pv = data["pv"]
    profiles = np.array(pv["profiles"], dtype=float)
    probabilities = pv.get("probabilities")
    if probabilities is None:  # omitted -> uniform weights
        probabilities = np.full(profiles.shape[0], 1.0 / profiles.shape[0])
    return PlanningInstance(
        grid=TimeGrid(**data["grid"]),
        tariff=Tariff(**data["tariff"]),
        pv=PvScenarioSet(profiles=profiles, probabilities=probabilities),
        demand=DemandUncertainty(**data["demand"]),
        batteries=tuple(BatteryTech(**b) for b in data["batteries"]),
        config=SystemConfig(**data["config"]),
    )


def instance_to_json(instance: PlanningInstance) -> str:
    """Canonical serialization: sorted keys, two-space indent, trailing newline."""
    return json.dumps(instance_to_dict(instance), sort_keys=True, indent=2) + "\n"


def instance_from_json(text: str) -> PlanningInstance:
    return instance_from_dict(json.loads(text))


def save_instance(instance: PlanningInstance, path) -> None:
    Path(path).write_text(instance_to_json(instance), encoding="utf-8")


def load_instance(path) -> PlanningInstance:
    """Load and validate an instance file; raise InstanceError on any violation."""
    instance = instance_from_json(Path(path).read_text(encoding="utf-8"))
    violations = validate(instance)
    if violations:
        raise InstanceError(violations)
    return instance


def with_budget(instance: PlanningInstance, budget: float) -> PlanningInstance:
    """Copy of the instance with a different uncertainty budget."""
    return replace(instance, demand=replace(instance.demand, budget=float(budget)))


def with_scenarios(instance: PlanningInstance, indices) -> PlanningInstance:
    """Copy restricted to the given scenario indices, probabilities renormalized."""
    idx = np.asarray(sorted(indices), dtype=int)
    probs = instance.pv.probabilities[idx]
    return replace(
        instance,
        pv=PvScenarioSet(profiles=instance.pv.profiles[idx], probabilities=probs / probs.sum()),
    )


def with_years(instance: PlanningInstance, years: int) -> PlanningInstance:
    """Copy restricted to the first ``years`` of the horizon."""
    if not 1 <= years <= instance.grid.years:
        raise ValueError(f"years {years} outside [1, {instance.grid.years}]")
    return replace(
        instance,
        grid=TimeGrid(instance.grid.hours_per_day, years),
        pv=replace(instance.pv, profiles=instance.pv.profiles[:, :years]),
        demand=replace(
            instance.demand,
            nominal=instance.demand.nominal[:years],
            deviation=instance.demand.deviation[:years],
        ),
        batteries=tuple(replace(b, soh_by_year=b.soh_by_year[:years]) for b in instance.batteries),
    )
