"""Data pipeline feeding the optimizer.

Produces each model input from raw material: compound-growth demand
projections, ARMA-noised PV scenario sets, demand uncertainty intervals
extracted from hourly ensembles, and per-technology degradation tables
ingested from CSV. Also owns the CSV formats shared with external tools.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .domain_model import BatteryTech, DemandUncertainty, PvScenarioSet, TimeGrid

ARMA_BURN_IN = 256


@dataclass(frozen=True)
class DemandForecast:
    """Hourly base-year demand profile plus a compound annual growth rate."""

    base_profile: np.ndarray  # kWh per hour
    growth_rate: float  # fraction per year, > -1
    horizon: int  # years projected

    def __post_init__(self):
        arr = np.array(self.base_profile, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "base_profile", arr)


@dataclass(frozen=True)
class ArmaSpec:
    """ARMA noise process driving PV scenario variability.

    ``night_hours`` are hour indices forced to zero output regardless of
    noise (no generation without sun).
    """

    ar_coeffs: tuple[float, ...] = (0.7,)
    ma_coeffs: tuple[float, ...] = (0.2,)
    noise_std: float = 0.1
    seed: int = 0
    night_hours: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "ar_coeffs", tuple(float(c) for c in self.ar_coeffs))
        object.__setattr__(self, "ma_coeffs", tuple(float(c) for c in self.ma_coeffs))
        object.__setattr__(self, "night_hours", frozenset(int(h) for h in self.night_hours))


def is_stationary(spec: ArmaSpec) -> bool:
    """True when all roots of the AR characteristic polynomial lie outside the unit circle."""
    if not spec.ar_coeffs:
        return True
    poly = np.concatenate([[1.0], -np.asarray(spec.ar_coeffs)])
    roots = np.roots(poly[::-1])  # roots of 1 - phi_1 z - ... - phi_p z^p
    return bool(np.all(np.abs(roots) > 1.0 + 1e-12))


def project_demand(forecast: DemandForecast) -> np.ndarray:
    """Compound-growth projection: demand[y, t] = base[t] * (1 + r)^(y + 1).

    Year index 0 is the first projected year.
    """
    if forecast.growth_rate <= -1:
        raise ValueError(f"growth_rate {forecast.growth_rate} must exceed -1")
    if np.any(forecast.base_profile < 0):
        raise ValueError("base_profile has negative entries")
    years = np.arange(1, forecast.horizon + 1)
    factors = (1.0 + forecast.growth_rate) ** years
    return np.outer(factors, forecast.base_profile)


def fit_growth_rate(anchors) -> float:
    """Fit the compound growth rate to (year, demand) anchor points.

    Least squares on log-demand against year; with exactly two anchors this
    reduces to the closed-form (d1/d0)^(1/(y1-y0)) - 1.
    """
    anchors = [(float(y), float(d)) for y, d in anchors]
    if len(anchors) < 2:
        raise ValueError("need at least two anchors")
    years = np.array([y for y, _ in anchors])
    demands = np.array([d for _, d in anchors])
    if np.any(np.diff(years) <= 0):
        raise ValueError("anchor years must be strictly increasing")
    if np.any(demands <= 0):
        raise ValueError("anchor demands must be positive")
    slope = np.polyfit(years, np.log(demands), 1)[0]
    return float(math.expm1(slope))


def arma_path(spec: ArmaSpec, length: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """Sample a zero-mean ARMA path of the given length after burn-in."""
    if not is_stationary(spec):
        raise ValueError(f"ARMA spec is non-stationary: ar_coeffs={spec.ar_coeffs}")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    p, q = len(spec.ar_coeffs), len(spec.ma_coeffs)
    total = length + ARMA_BURN_IN
    shocks = rng.normal(0.0, spec.noise_std, size=total) if spec.noise_std > 0 else np.zeros(total)
    path = np.zeros(total)
    for k in range(total):
        value = shocks[k]
        for i, phi in enumerate(spec.ar_coeffs, start=1):
            if k - i >= 0:
                value += phi * path[k - i]
        for i, theta in enumerate(spec.ma_coeffs, start=1):
            if k - i >= 0:
                value += theta * shocks[k - i]
        path[k] = value
    return path[ARMA_BURN_IN:]


def sample_pv_scenarios(spec: ArmaSpec, seasonal_shapes, grid: TimeGrid) -> PvScenarioSet:
    """Build the stochastic PV scenario set from seasonal base shapes.

    Each scenario perturbs its daily shape multiplicatively with an ARMA
    noise path spanning the whole horizon, clips into [0, 1], and zeroes
    the configured night hours. Scenario s uses the derived seed
    ``spec.seed XOR s`` so scenarios can be drawn independently.
    """
    shapes = np.asarray(seasonal_shapes, dtype=float)
    if shapes.ndim != 2 or shapes.shape[1] != grid.hours_per_day:
        raise ValueError(f"seasonal_shapes must be (scenarios, {grid.hours_per_day}), got {shapes.shape}")
    if np.any(shapes < 0) or np.any(shapes > 1):
        raise ValueError("seasonal_shapes entries outside [0, 1]")
    count, hours = shapes.shape
    years = grid.years
    profiles = np.empty((count, years, hours))
    night = sorted(spec.night_hours)
    for s in range(count):
        rng = np.random.default_rng(spec.seed ^ s)
        noise = arma_path(spec, years * hours, rng).reshape(years, hours)
        profiles[s] = np.clip(shapes[s][None, :] * (1.0 + noise), 0.0, 1.0)
        if night:
            profiles[s][:, night] = 0.0
    probabilities = np.full(count, 1.0 / count)
    return PvScenarioSet(profiles=profiles, probabilities=probabilities)


def extract_demand_intervals(hourly_history_per_year, budget: float = 0.0) -> DemandUncertainty:
    """Summarize an hourly demand ensemble into nominal and deviation matrices.

    ``hourly_history_per_year`` is one (days, hours) array per year. Nominal
    is the hourly mean; the deviation is the larger one-sided range, so the
    symmetric interval brackets every observation.
    """
    nominal_rows, deviation_rows = [], []
    hours = None
    for y, history in enumerate(hourly_history_per_year):
        arr = np.asarray(history, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.size == 0:
            raise ValueError(f"year {y} has no observations")
        if hours is None:
            hours = arr.shape[1]
        elif arr.shape[1] != hours:
            raise ValueError(f"year {y} hour count {arr.shape[1]} != {hours}")
        mean = arr.mean(axis=0)
        spread = np.maximum(mean - arr.min(axis=0), arr.max(axis=0) - mean)
        nominal_rows.append(mean)
        deviation_rows.append(spread)
    return DemandUncertainty(
        nominal=np.array(nominal_rows),
        deviation=np.array(deviation_rows),
        budget=float(budget),
    )


def ingest_degradation(source) -> dict[str, np.ndarray]:
    """Read per-technology (tech, year, soh) rows into degradation vectors.

    ``source`` is a CSV path or an iterable of row tuples. Per technology,
    years must run contiguously from 1 and state of health must stay in
    (0, 1] and never increase; violations are rejected.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = [(r["tech"], int(r["year"]), float(r["soh"])) for r in reader]
    else:
        rows = [(str(t), int(y), float(v)) for t, y, v in source]

    grouped: dict[str, list[tuple[int, float]]] = {}
    for tech, year, soh in rows:
        grouped.setdefault(tech, []).append((year, soh))

    tables: dict[str, np.ndarray] = {}
    for tech, pairs in grouped.items():
        pairs.sort()
        years = [y for y, _ in pairs]
        if years != list(range(1, len(years) + 1)):
            raise ValueError(f"degradation table for {tech!r}: years must be contiguous from 1, got {years}")
        soh = np.array([v for _, v in pairs])
        if np.any(soh <= 0) or np.any(soh > 1):
            raise ValueError(f"degradation table for {tech!r}: soh outside (0, 1]")
        rising = np.flatnonzero(np.diff(soh) > 1e-12)
        if rising.size:
            y = int(rising[0]) + 1
            raise ValueError(f"degradation table for {tech!r}: soh rises year {y} -> {y + 1}")
        tables[tech] = soh
    return tables


def apply_degradation(batteries, tables: dict[str, np.ndarray]) -> tuple[BatteryTech, ...]:
    """Return the battery catalog with soh_by_year replaced from ingested tables."""
    updated = []
    for bat in batteries:
        if bat.id in tables:
            updated.append(replace(bat, soh_by_year=tables[bat.id]))
        else:
            updated.append(bat)
    return tuple(updated)


# -- CSV formats --------------------------------------------------------
# All files carry a header row; numeric fields use '.' decimals.


def load_base_demand_csv(path) -> np.ndarray:
    """Read (hour, kwh) rows into an hourly base profile."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = {int(r["hour"]): float(r["kwh"]) for r in csv.DictReader(fh)}
    return np.array([rows[h] for h in sorted(rows)])


def load_tariff_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read (hour, buy, sell) rows into price vectors."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = {int(r["hour"]): (float(r["buy"]), float(r["sell"])) for r in csv.DictReader(fh)}
    hours = sorted(rows)
    return np.array([rows[h][0] for h in hours]), np.array([rows[h][1] for h in hours])


def load_pv_shapes_csv(path) -> np.ndarray:
    """Read (scenario, hour, frac) rows into a (scenarios, hours) shape matrix."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(int(r["scenario"]), int(r["hour"]), float(r["frac"])) for r in csv.DictReader(fh)]
    scenarios = sorted({s for s, _, _ in rows})
    hours = sorted({h for _, h, _ in rows})
    mat = np.zeros((len(scenarios), len(hours)))
    for s, h, v in rows:
        mat[scenarios.index(s), hours.index(h)] = v
    return mat


def write_demand_intervals_csv(demand: DemandUncertainty, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["year", "hour", "nominal", "deviation"])
        years, hours = demand.nominal.shape
        for y in range(years):
            for t in range(hours):
                writer.writerow([y + 1, t, repr(float(demand.nominal[y, t])), repr(float(demand.deviation[y, t]))])


def load_demand_intervals_csv(path, budget: float = 0.0) -> DemandUncertainty:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(int(r["year"]), int(r["hour"]), float(r["nominal"]), float(r["deviation"])) for r in csv.DictReader(fh)]
    years = max(y for y, _, _, _ in rows)
    hours = max(t for _, t, _, _ in rows) + 1
    nominal = np.zeros((years, hours))
    deviation = np.zeros((years, hours))
    for y, t, nom, dev in rows:
        nominal[y - 1, t] = nom
        deviation[y - 1, t] = dev
    return DemandUncertainty(nominal=nominal, deviation=deviation, budget=float(budget))


def write_pv_scenarios_csv(pv: PvScenarioSet, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario", "year", "hour", "value"])
        s_count, years, hours = pv.profiles.shape
        for s in range(s_count):
            for y in range(years):
                for t in range(hours):
                    writer.writerow([s, y + 1, t, repr(float(pv.profiles[s, y, t]))])


def load_pv_scenarios_csv(path, probabilities=None) -> PvScenarioSet:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(int(r["scenario"]), int(r["year"]), int(r["hour"]), float(r["value"])) for r in csv.DictReader(fh)]
    s_count = max(s for s, _, _, _ in rows) + 1
    years = max(y for _, y, _, _ in rows)
    hours = max(t for _, _, t, _ in rows) + 1
    profiles = np.zeros((s_count, years, hours))
    for s, y, t, v in rows:
        profiles[s, y - 1, t] = v
    if probabilities is None:
        probabilities = np.full(s_count, 1.0 / s_count)
    return PvScenarioSet(profiles=profiles, probabilities=np.asarray(probabilities, dtype=float))


def assemble_instance(
    tariff_csv,
    pv_scenarios_csv,
    demand_intervals_csv,
    degradation_csv,
    batteries,
    config,
    budget: float = 0.0,
):
    """Assemble a validated planning instance from the individual CSV files.

    ``batteries`` is the catalog of technologies whose ``soh_by_year``
    entries are overwritten from the degradation table (matched by id).
    """
    from .domain_model import InstanceError, PlanningInstance, Tariff, TimeGrid, validate

    buy, sell = load_tariff_csv(tariff_csv)
    pv = load_pv_scenarios_csv(pv_scenarios_csv)
    demand = load_demand_intervals_csv(demand_intervals_csv, budget=budget)
    catalog = apply_degradation(batteries, ingest_degradation(degradation_csv))
    instance = PlanningInstance(
        grid=TimeGrid(hours_per_day=len(buy), years=demand.nominal.shape[0]),
        tariff=Tariff(buy_price=buy, sell_price=sell),
        pv=pv,
        demand=demand,
        batteries=catalog,
        config=config,
    )
    violations = validate(instance)
    if violations:
        raise InstanceError(violations)
    return instance
