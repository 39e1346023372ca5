"""Bundled problem instances for tests, demos, and the CLI.

The desk instance is a household-scale case with four candidate battery
technologies (one second-life unit with reduced starting health) whose
cost magnitudes are amortized to the representative-day horizon, so the
investment/operation trade-off is live. Tiny instances keep the vertex
enumeration oracle affordable.
"""

from __future__ import annotations

import numpy as np

from .domain_model import (
    BatteryTech,
    DemandUncertainty,
    PlanningInstance,
    PvScenarioSet,
    SystemConfig,
    Tariff,
    TimeGrid,
)
from .robust_subproblem import FixedFirstStage
from .scenario_forge import DemandForecast, project_demand


def _bell(hours: int, center: float, width: float, peak: float) -> np.ndarray:
    t = np.arange(hours)
    return peak * np.exp(-0.5 * ((t - center) / width) ** 2)


def desk_instance(budget: float = 5.0) -> PlanningInstance:
    """Desk-scale household case: 24 hours, 3 years, 4 PV scenarios, 4 batteries.

    Hour-to-hour price wiggle breaks dispatch ties (keeps the MILP search
    shallow), and the demand uncertainty is widest in the evening, where
    only storage can respond; daytime hours carry smaller intervals that
    extra PV covers once the budget is large enough to reach them.
    """
    hours, years = 24, 3
    grid = TimeGrid(hours, years)

    t = np.arange(hours)
    buy = np.full(hours, 0.18)
    buy[:7] = 0.07  # clearly below amortized PV energy cost: storage charges off-peak
    buy[18:23] = 0.28
    buy[23] = 0.12
    buy = buy + 0.004 * np.sin(2.1 * t) + 0.0015 * t / hours
    sell = np.full(hours, 0.05) + 0.002 * np.sin(1.3 * t + 0.5)
    sell[23] = 0.012  # late-night feed-in dip: below every battery's operating cost
    tariff = Tariff(buy_price=buy, sell_price=np.minimum(sell, buy - 0.01))

    base = np.array(
        [
            0.30, 0.28, 0.26, 0.25, 0.25, 0.30,  # night
            0.55, 0.90, 0.85, 0.60, 0.55, 0.60,  # morning
            0.70, 0.65, 0.55, 0.50, 0.60, 0.90,  # afternoon
            1.60, 1.90, 1.80, 1.40, 0.90, 0.50,  # evening peak
        ]
    )
    nominal = project_demand(DemandForecast(base_profile=base, growth_rate=0.04, horizon=years))
    spread = np.full(hours, 0.15)
    spread[18:24] = 0.55  # evening intervals dominate; the sun is already down
    spread = spread * (1.0 + 0.06 * ((t * 7) % 24) / 24.0)  # strict ranking between hours
    deviation = nominal * spread[None, :]

    shapes = np.stack(
        [
            _bell(hours, 13.0, 3.2, 0.95),  # summer
            _bell(hours, 13.0, 2.9, 0.75),  # spring
            _bell(hours, 12.5, 2.6, 0.55),  # autumn
            _bell(hours, 12.5, 2.2, 0.35),  # winter
        ]
    )
    shapes[:, :7] = 0.0
    shapes[:, 18:] = 0.0  # sunset before the evening demand peak
    season_drift = np.array([1.0, 0.99, 0.98])  # mild interannual dimming
    profiles = shapes[:, None, :] * season_drift[None, :, None]
    pv = PvScenarioSet(profiles=profiles, probabilities=np.full(4, 0.25))

    common = dict(
        soc_min_frac=0.10,
        soc_max_frac=0.95,
        efficiency=0.95,
        power_rate=2.0,
        soc_initial_frac=0.25,
        soc_final_frac=0.25,
    )
    batteries = (
        BatteryTech(
            id="lfp_fl", invest_cost=0.24, op_cost=0.020,
            soh_by_year=np.array([1.00, 0.97, 0.94]), **common,
        ),
        BatteryTech(
            id="lmo_sl", invest_cost=0.18, op_cost=0.060,
            soh_by_year=np.array([0.70, 0.62, 0.54]), **common,
        ),
        BatteryTech(
            id="nmc_fl", invest_cost=0.30, op_cost=0.024,
            soh_by_year=np.array([1.00, 0.96, 0.92]), **common,
        ),
        BatteryTech(
            id="nmc_lto_fl", invest_cost=0.40, op_cost=0.016,
            soh_by_year=np.array([1.00, 0.99, 0.98]), **common,
        ),
    )

    config = SystemConfig(pv_invest_cost=1.10, pv_op_cost=0.01, pv_cap_max=15.0, bess_cap_max=30.0)
    return PlanningInstance(
        grid=grid,
        tariff=tariff,
        pv=pv,
        demand=DemandUncertainty(nominal=nominal, deviation=deviation, budget=float(budget)),
        batteries=batteries,
        config=config,
    )


def tiny_instance(
    hours: int = 4,
    years: int = 1,
    scenarios: int = 2,
    techs: int = 1,
    budget: float = 1.0,
) -> PlanningInstance:
    """Small deterministic-data instance within the enumeration oracle's budget."""
    grid = TimeGrid(hours, years)
    t = np.arange(hours)
    buy = 0.15 + 0.10 * (t >= hours // 2)
    sell = np.full(hours, 0.04)
    tariff = Tariff(buy_price=buy, sell_price=sell)

    profiles = np.zeros((scenarios, years, hours))
    for s in range(scenarios):
        peak = 0.9 - 0.3 * s / max(scenarios - 1, 1)
        profiles[s] = np.tile(_bell(hours, hours / 2 - 0.5, hours / 5, peak), (years, 1))
    pv = PvScenarioSet(profiles=profiles, probabilities=np.full(scenarios, 1.0 / scenarios))

    base = 0.8 + 0.4 * np.sin(np.pi * (t + 1) / hours)
    nominal = np.vstack([base * (1.05**y) for y in range(1, years + 1)])
    deviation = 0.4 * nominal

    batteries = tuple(
        BatteryTech(
            id=f"bat{j}",
            invest_cost=0.10 + 0.05 * j,
            op_cost=0.01 + 0.005 * j,
            soh_by_year=np.linspace(1.0, 0.9, years) if years > 1 else np.array([1.0]),
            soc_min_frac=0.10,
            soc_max_frac=0.90,
            efficiency=0.92,
            power_rate=1.5,
            soc_initial_frac=0.25,
            soc_final_frac=0.25,
        )
        for j in range(techs)
    )
    config = SystemConfig(pv_invest_cost=0.30, pv_op_cost=0.005, pv_cap_max=4.0, bess_cap_max=8.0)
    return PlanningInstance(
        grid=grid,
        tariff=tariff,
        pv=pv,
        demand=DemandUncertainty(nominal=nominal, deviation=deviation, budget=float(budget)),
        batteries=batteries,
        config=config,
    )


def random_tiny_instance(rng: np.random.Generator) -> PlanningInstance:
    """Randomized small instance with feasibility-safe battery parameters.

    Boundary state-of-charge fractions are kept inside every year's
    degradation window so any frozen first stage admits a dispatch.
    """
    hours = int(rng.integers(3, 7))
    years = int(rng.integers(1, 3))
    scenarios = int(rng.integers(1, 3))
    techs = int(rng.integers(1, 3))
    grid = TimeGrid(hours, years)

    sell = rng.uniform(0.0, 0.08, size=hours)
    buy = sell + rng.uniform(0.02, 0.25, size=hours)
    tariff = Tariff(buy_price=buy, sell_price=sell)

    profiles = np.clip(rng.uniform(0.0, 1.0, size=(scenarios, years, hours)), 0.0, 1.0)
    profiles[:, :, 0] = 0.0  # one guaranteed dark hour
    probabilities = rng.uniform(0.2, 1.0, size=scenarios)
    probabilities /= probabilities.sum()
    pv = PvScenarioSet(profiles=profiles, probabilities=probabilities)

    nominal = rng.uniform(0.3, 2.0, size=(years, hours))
    deviation = nominal * rng.uniform(0.0, 0.8, size=(years, hours))
    budget = float(rng.integers(0, hours + 1))

    batteries = []
    for j in range(techs):
        soh = np.sort(rng.uniform(0.55, 1.0, size=years))[::-1]
        batteries.append(
            BatteryTech(
                id=f"bat{j}",
                invest_cost=float(rng.uniform(0.05, 0.4)),
                op_cost=float(rng.uniform(0.0, 0.05)),
                soh_by_year=soh,
                soc_min_frac=float(rng.uniform(0.0, 0.15)),
                soc_max_frac=float(rng.uniform(0.85, 1.0)),
                efficiency=float(rng.uniform(0.85, 1.0)),
                power_rate=float(rng.uniform(0.5, 3.0)),
                soc_initial_frac=0.25,
                soc_final_frac=0.25,
            )
        )

    config = SystemConfig(
        pv_invest_cost=float(rng.uniform(0.1, 1.0)),
        pv_op_cost=float(rng.uniform(0.0, 0.02)),
        pv_cap_max=float(rng.uniform(2.0, 6.0)),
        bess_cap_max=float(rng.uniform(3.0, 10.0)),
    )
    return PlanningInstance(
        grid=grid,
        tariff=tariff,
        pv=pv,
        demand=DemandUncertainty(nominal=nominal, deviation=deviation, budget=budget),
        batteries=tuple(batteries),
        config=config,
    )


def random_fixed_stage(instance: PlanningInstance, rng: np.random.Generator) -> FixedFirstStage:
    """Random but master-consistent first-stage snapshot for adversary tests."""
    n_j = len(instance.batteries)
    n_s = instance.pv.count
    years, hours = instance.grid.years, instance.grid.hours_per_day
    selected = np.zeros(n_j)
    bess = np.zeros(n_j)
    if rng.random() < 0.8:  # sometimes no battery at all
        j = int(rng.integers(0, n_j))
        selected[j] = 1.0
        bess[j] = float(rng.uniform(0.0, instance.config.bess_cap_max))
    charge_mode = np.zeros((n_j, n_s, years, hours))
    for j in range(n_j):
        if selected[j]:
            charge_mode[j] = (rng.random(size=(n_s, years, hours)) < 0.5).astype(float)
    return FixedFirstStage(
        pv_kw=float(rng.uniform(0.0, instance.config.pv_cap_max)),
        bess_kwh=bess,
        selected=selected,
        charge_mode=charge_mode,
    )

