"""Adversarial subproblem: duality, Big-M exactness, oracle agreement."""

from dataclasses import replace

import numpy as np
import pytest

from pvbess import fixtures
from pvbess.domain_model import with_budget
from pvbess.robust_subproblem import (
    EnumerationBudgetError,
    FixedStageInfeasibleError,
    FixedFirstStage,
    build_dual_sp,
    enumerate_worst_case,
    solve_dual_sp,
    solve_primal_sp,
    vertex_count,
    write_worst_case_csv,
)
from pvbess.solver_bridge import solve


def _zero_stage(instance) -> FixedFirstStage:
    n_j = len(instance.batteries)
    shape = (n_j, instance.pv.count, instance.grid.years, instance.grid.hours_per_day)
    return FixedFirstStage(
        pv_kw=0.0,
        bess_kwh=np.zeros(n_j),
        selected=np.zeros(n_j),
        charge_mode=np.zeros(shape),
    )


def test_vertex_count_formula():
    assert vertex_count(4, 2) == 33
    assert vertex_count(3, 3) == 27
    assert vertex_count(4, 0) == 1


def test_big_m_equals_weighted_buy_price(tiny):
    """Balance duals are boxed by rho_s * buy price; the box edge is the Big-M."""
    from pvbess.domain_model import PvScenarioSet

    pv = PvScenarioSet(
        profiles=np.repeat(tiny.pv.profiles, 2, axis=0)[:4],
        probabilities=np.full(4, 0.25),
    )
    tariff = replace(tiny.tariff, buy_price=np.full(tiny.grid.hours_per_day, 0.20))
    instance = replace(tiny, pv=pv, tariff=tariff)
    built = build_dual_sp(instance, _zero_stage(instance))
    vid = built.p_plus[0, 0, 0]
    var = built.model.variables[int(vid)]
    assert var.ub == pytest.approx(0.25 * 0.20)
    a_var = built.model.variables[int(built.a[0, 0, 0])]
    assert a_var.ub == pytest.approx(0.05)


def test_zero_budget_reproduces_nominal_demand(tiny):
    instance = with_budget(tiny, 0.0)
    fixed = _zero_stage(instance)
    worst, _, z_sp = solve_dual_sp(instance, fixed)
    np.testing.assert_array_equal(worst.v_plus, 0)
    np.testing.assert_array_equal(worst.v_minus, 0)
    np.testing.assert_array_equal(worst.realization, instance.demand.nominal)
    _, z_lp = solve_primal_sp(instance, fixed, instance.demand.nominal)
    assert z_sp == pytest.approx(z_lp, rel=1e-6, abs=1e-9)


def test_dual_matches_bruteforce_on_toy(tiny):
    """T=4, Y=1, S=1, budget 2: exhaustive max over all 33 vertex patterns."""
    instance = with_budget(fixtures.tiny_instance(hours=4, years=1, scenarios=1, techs=1), 2.0)
    fixed = fixtures.random_fixed_stage(instance, np.random.default_rng(3))
    _, _, z_dual = solve_dual_sp(instance, fixed)
    worst, z_enum = enumerate_worst_case(instance, fixed)
    assert z_dual == pytest.approx(z_enum, rel=1e-5)
    assert worst.v_plus.sum() + worst.v_minus.sum() <= 2


def test_full_budget_zero_assets_buys_peak_everything(tiny):
    """No assets and an unconstrained budget: cost is the full worst-case purchase."""
    instance = with_budget(tiny, float(tiny.grid.hours_per_day))
    fixed = _zero_stage(instance)
    _, _, z_sp = solve_dual_sp(instance, fixed)
    rho = instance.pv.probabilities
    peak = instance.demand.nominal + instance.demand.deviation
    expected = sum(
        rho[s] * instance.tariff.buy_price[t] * peak[y, t]
        for s in range(instance.pv.count)
        for y in range(instance.grid.years)
        for t in range(instance.grid.hours_per_day)
    )
    assert z_sp == pytest.approx(expected, rel=1e-6)


def test_costless_full_coverage_makes_adversary_powerless(tiny):
    """PV everywhere, zero operating cost, zero feed-in value: worst case still costs nothing."""
    from pvbess.domain_model import PvScenarioSet, SystemConfig, Tariff

    hours = tiny.grid.hours_per_day
    instance = replace(
        tiny,
        pv=PvScenarioSet(
            profiles=np.ones_like(tiny.pv.profiles), probabilities=tiny.pv.probabilities
        ),
        tariff=Tariff(buy_price=tiny.tariff.buy_price, sell_price=np.zeros(hours)),
        config=SystemConfig(
            pv_invest_cost=0.3, pv_op_cost=0.0, pv_cap_max=50.0, bess_cap_max=8.0
        ),
    )
    instance = with_budget(instance, 2.0)
    fixed = replace(_zero_stage(instance), pv_kw=50.0)
    _, _, z_sp = solve_dual_sp(instance, fixed)
    assert z_sp == pytest.approx(0.0, abs=1e-8)


def test_strong_duality_random_stages(rng):
    for _ in range(10):
        instance = fixtures.random_tiny_instance(rng)
        fixed = fixtures.random_fixed_stage(instance, rng)
        worst, _, z_sp = solve_dual_sp(instance, fixed)
        _, z_lp = solve_primal_sp(instance, fixed, worst.realization)
        assert abs(z_lp - z_sp) <= 1e-5 * max(1.0, abs(z_sp))


def test_monotone_in_budget(tiny2, rng):
    fixed = fixtures.random_fixed_stage(tiny2, rng)
    values = []
    for budget in range(tiny2.grid.hours_per_day + 1):
        _, _, z = solve_dual_sp(with_budget(tiny2, float(budget)), fixed)
        values.append(z)
    for lo, hi in zip(values, values[1:]):
        assert hi >= lo - 1e-7


def test_big_m_linearization_exact(tiny2, rng):
    """At the optimum the auxiliaries equal the products they replace."""
    fixed = fixtures.random_fixed_stage(tiny2, rng)
    built = build_dual_sp(tiny2, fixed)
    outcome = solve(built.model, mip_gap=1e-9)
    assert outcome.status == "optimal"
    x = outcome.primal
    v_plus = np.rint(x[built.v_plus])
    v_minus = np.rint(x[built.v_minus])
    for s in range(tiny2.pv.count):
        err_p = x[built.p_plus[s]] - x[built.a[s]] * v_plus
        err_m = x[built.p_minus[s]] - x[built.a[s]] * v_minus
        assert np.abs(err_p).max() <= 1e-6
        assert np.abs(err_m).max() <= 1e-6


def test_worst_case_is_extreme_point(tiny2, rng):
    fixed = fixtures.random_fixed_stage(tiny2, rng)
    worst, _, _ = solve_dual_sp(tiny2, fixed)
    nominal = tiny2.demand.nominal
    delta = tiny2.demand.deviation
    candidates = np.stack([nominal - delta, nominal, nominal + delta])
    hit = np.any(np.isclose(worst.realization[None], candidates, atol=1e-12), axis=0)
    assert hit.all()
    assert np.all(worst.v_plus + worst.v_minus <= 1)
    assert np.all((worst.v_plus + worst.v_minus).sum(axis=1) <= tiny2.demand.budget)


def test_dual_solution_satisfies_dual_feasibility(tiny2, rng):
    """Recomputed dual rows hold within tolerance at the reported multipliers."""
    fixed = fixtures.random_fixed_stage(tiny2, rng)
    worst, duals, _ = solve_dual_sp(tiny2, fixed)
    rho = tiny2.pv.probabilities
    buy, sell = tiny2.tariff.buy_price, tiny2.tariff.sell_price
    hours = tiny2.grid.hours_per_day
    tol = 1e-6
    for s in range(tiny2.pv.count):
        for y in range(tiny2.grid.years):
            for t in range(hours):
                a = duals.balance[s, y, t]
                assert rho[s] * sell[t] - tol <= a <= rho[s] * buy[t] + tol
                assert a + duals.pv_cap[s, y, t] <= rho[s] * tiny2.config.pv_op_cost + tol
                for j, bat in enumerate(tiny2.batteries):
                    c = duals.soc_link[j, s, y, t]
                    f = duals.charge_cap[j, s, y, t]
                    g = duals.discharge_cap[j, s, y, t]
                    if t < hours - 1:
                        assert -a - bat.efficiency * c + f <= tol
                        assert a + c / bat.efficiency + g <= rho[s] * bat.op_cost + tol
                    else:
                        assert -a + f <= tol
                        assert a + g <= rho[s] * bat.op_cost + tol
                    chain = (
                        duals.soc_link[j, s, y, t]
                        + duals.soc_floor[j, s, y, t]
                        + duals.soc_ceil[j, s, y, t]
                    )
                    if t < hours - 2:
                        chain -= duals.soc_link[j, s, y, t + 1]
                    assert chain <= tol


def test_infeasible_fixed_stage_reported_with_hint(tiny):
    """Degradation squeezes the window below the boundary level: dual goes unbounded."""
    crushed = replace(tiny.batteries[0], soh_by_year=np.array([0.2]))
    instance = replace(tiny, batteries=(crushed,))
    fixed = FixedFirstStage(
        pv_kw=0.0,
        bess_kwh=np.array([4.0]),
        selected=np.array([1.0]),
        charge_mode=np.ones((1, instance.pv.count, 1, instance.grid.hours_per_day)),
    )
    with pytest.raises(FixedStageInfeasibleError) as err:
        solve_dual_sp(instance, fixed)
    assert err.value.location is not None


def test_enumeration_budget_guard(desk):
    fixed = _zero_stage(desk)
    with pytest.raises(EnumerationBudgetError):
        enumerate_worst_case(with_budget(desk, 10.0), fixed)


def test_enumeration_tie_break_prefers_nominal(tiny):
    """All-zero deviations: every pattern ties at cost zero, nominal wins."""
    from pvbess.domain_model import DemandUncertainty

    dem = DemandUncertainty(
        nominal=tiny.demand.nominal, deviation=np.zeros_like(tiny.demand.deviation), budget=2.0
    )
    instance = replace(tiny, demand=dem)
    worst, _ = enumerate_worst_case(instance, _zero_stage(instance))
    assert worst.v_plus.sum() == worst.v_minus.sum() == 0


def test_worst_case_csv_dump(tmp_path, tiny, rng):
    fixed = fixtures.random_fixed_stage(tiny, rng)
    worst, _, _ = solve_dual_sp(tiny, fixed)
    path = tmp_path / "worst.csv"
    write_worst_case_csv(tiny, worst, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "year,hour,nominal,realization,v_plus,v_minus"
    assert len(lines) == 1 + tiny.grid.years * tiny.grid.hours_per_day
