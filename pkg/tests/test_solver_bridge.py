"""Bridge contract: construction errors, solve statuses, duals, self-duality."""

import math

import pytest

from pvbess.solver_bridge import (
    MAXIMIZE,
    MINIMIZE,
    ModelError,
    ModelHandle,
    constraint_violation,
    dual_objective,
    solve,
)


def test_first_variable_gets_id_zero():
    m = ModelHandle()
    assert m.add_variable(0.0, math.inf) == 0
    assert m.add_variable(0.0, 1.0, integral=True, name="flag") == 1
    assert m.variable_by_name("flag") == 1


def test_reversed_bounds_rejected():
    m = ModelHandle()
    with pytest.raises(ModelError):
        m.add_variable(3.0, 2.0)


def test_duplicate_names_rejected():
    m = ModelHandle()
    m.add_variable(name="x")
    with pytest.raises(ModelError):
        m.add_variable(name="x")
    m.add_constraint([], "<=", 1.0, name="row")
    with pytest.raises(ModelError):
        m.add_constraint([], "<=", 1.0, name="row")


def test_constraint_with_unknown_variable_rejected():
    m = ModelHandle()
    m.add_variable()
    with pytest.raises(ModelError):
        m.add_constraint([(5, 1.0)], "<=", 1.0)


def test_simple_sum_constraint_accepted():
    m = ModelHandle()
    x = m.add_variable()
    y = m.add_variable()
    cid = m.add_constraint([(x, 1.0), (y, 1.0)], "<=", 5.0, name="roof")
    assert cid == 0
    assert m.constraint_by_name("roof") == 0


def test_vacuous_row_makes_model_infeasible():
    m = ModelHandle()
    m.add_variable()
    m.add_constraint([], "<=", -1.0)
    m.set_objective(MINIMIZE, [])
    assert solve(m).status == "infeasible"


def test_one_variable_lp_objective_and_dual():
    m = ModelHandle()
    x = m.add_variable()
    floor = m.add_constraint([(x, 1.0)], ">=", 3.0)
    m.set_objective(MINIMIZE, [(x, 1.0)])
    out = solve(m, want_duals=True)
    assert out.status == "optimal"
    assert out.objective == pytest.approx(3.0, abs=1e-9)
    assert out.duals[floor] == pytest.approx(1.0, abs=1e-9)


def test_integrality_rounds_up_through_floor():
    m = ModelHandle()
    x = m.add_variable(0.0, 5.0, integral=True)
    m.add_constraint([(x, 1.0)], ">=", 4.2)
    m.set_objective(MAXIMIZE, [(x, 1.0)])
    out = solve(m)
    assert out.status == "optimal"
    assert out.objective == pytest.approx(5.0, abs=1e-9)
    assert out.primal[x] == pytest.approx(5.0, abs=1e-7)


def test_conflicting_bounds_infeasible():
    m = ModelHandle()
    x = m.add_variable(0.0)
    m.add_constraint([(x, 1.0)], "<=", -1.0)
    m.set_objective(MINIMIZE, [])
    assert solve(m).status == "infeasible"


def test_unbounded_detected():
    m = ModelHandle()
    x = m.add_variable(0.0)
    m.set_objective(MAXIMIZE, [(x, 1.0)])
    assert solve(m).status == "unbounded"


def test_objective_required():
    m = ModelHandle()
    m.add_variable()
    with pytest.raises(ModelError):
        solve(m)


def _random_lp(rng, n=8, rows=6):
    m = ModelHandle()
    ids = [m.add_variable(0.0, float(rng.uniform(1.0, 5.0))) for _ in range(n)]
    x_feasible = rng.uniform(0.0, 1.0, size=n)
    for r in range(rows):
        coeffs = [(i, float(rng.normal())) for i in rng.choice(n, size=4, replace=False)]
        lhs = sum(c * x_feasible[i] for i, c in coeffs)
        sense = ("<=", ">=", "=")[r % 3]
        slack = {"<=": 0.5, ">=": -0.5, "=": 0.0}[sense]
        m.add_constraint(coeffs, sense, lhs + slack)
    m.set_objective(MINIMIZE, [(i, float(rng.normal())) for i in ids])
    return m


def test_lp_strong_duality_self_check(rng):
    """Dual objective (rhs'y plus bound terms) must match the primal objective."""
    for _ in range(25):
        m = _random_lp(rng)
        out = solve(m, want_duals=True)
        if out.status != "optimal":
            continue
        gap = abs(dual_objective(m, out) - out.objective)
        assert gap <= 1e-5 * max(1.0, abs(out.objective))


def test_lp_complementary_slackness(rng):
    for _ in range(10):
        m = _random_lp(rng)
        out = solve(m, want_duals=True)
        if out.status != "optimal":
            continue
        for con in m.constraints:
            lhs = sum(c * out.primal[v] for v, c in con.coeffs)
            assert abs(out.duals[con.index] * (lhs - con.rhs)) <= 1e-6


def test_optimal_point_feasible_within_tolerance(rng):
    for _ in range(10):
        m = _random_lp(rng)
        out = solve(m)
        if out.status == "optimal":
            assert constraint_violation(m, out.primal) <= 1e-6


def test_resolve_is_reproducible(rng):
    m = _random_lp(rng)
    first = solve(m)
    second = solve(m)
    assert first.status == second.status
    if first.status == "optimal":
        assert abs(first.objective - second.objective) <= 1e-9


def test_lp_text_export_sections():
    m = ModelHandle("demo")
    x = m.add_variable(0.0, 2.0, name="pg[0,1]")
    y = m.add_variable(0.0, 1.0, integral=True, name="w")
    m.add_constraint([(x, 1.0), (y, -2.0)], "<=", 0.5, name="cap")
    m.set_objective(MINIMIZE, [(x, 1.5), (y, 1.0)])
    text = m.to_lp_text()
    for section in ("Minimize", "Subject To", "Bounds", "General", "End"):
        assert section in text
    assert "pg(0_1)" in text  # names sanitized for the LP format
