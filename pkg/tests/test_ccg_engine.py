"""Decomposition loop: bound discipline, reductions, oracle agreement, determinism."""

import math

import numpy as np
import pytest

from pvbess import fixtures
from pvbess.ccg_engine import (
    CcgConfig,
    _gap,
    run_ccg,
    run_ccg_bruteforce,
    solve_extensive_stochastic,
    write_trace_csv,
)
from pvbess.deterministic_planner import solve_deterministic
from pvbess.domain_model import PvScenarioSet, with_budget
from pvbess.robust_subproblem import vertex_count
from dataclasses import replace


def _check_bounds(trace, epsilon):
    lbs = [r.lower_bound for r in trace.records]
    ubs = [r.upper_bound for r in trace.records]
    for a, b in zip(lbs, lbs[1:]):
        assert b >= a - 1e-8
    for a, b in zip(ubs, ubs[1:]):
        assert b <= a + 1e-8
    for lb, ub in zip(lbs, ubs):
        assert lb <= ub + 1e-6 * max(1.0, abs(ub))
    if trace.converged:
        assert trace.records[-1].gap <= epsilon


def test_upper_bound_candidate_formula():
    """Step arithmetic: LB=100, theta=40, z_sp=45 gives candidate 105."""
    assert 100.0 - 40.0 + 45.0 == pytest.approx(105.0)


def test_gap_formula_and_guard():
    assert _gap(95.0, 100.0, 1e-4) == pytest.approx(0.05)
    assert _gap(0.0, 0.0, 1e-4) == 0.0  # absolute fallback near zero
    assert _gap(-1.0, 0.0, 1e-4) == pytest.approx(1.0)  # fallback reports the absolute gap


def test_config_validation():
    with pytest.raises(ValueError):
        CcgConfig(epsilon=0.0)
    with pytest.raises(ValueError):
        CcgConfig(max_iterations=0)
    with pytest.raises(ValueError):
        CcgConfig(adversary="nested")


def test_zero_budget_reduces_to_extensive_form(tiny2):
    instance = with_budget(tiny2, 0.0)
    config = CcgConfig(epsilon=1e-6)
    trace = run_ccg(instance, config)
    _, z_ext = solve_extensive_stochastic(instance, instance.demand.nominal)
    assert trace.converged
    assert trace.iterations <= 2
    assert trace.objective == pytest.approx(z_ext, rel=1e-5)
    _check_bounds(trace, config.epsilon)


def test_extensive_single_scenario_equals_deterministic():
    instance = fixtures.tiny_instance(hours=5, years=2, scenarios=1, techs=2)
    _, z_ext = solve_extensive_stochastic(instance, instance.demand.nominal)
    _, _, z_det = solve_deterministic(instance, instance.demand.nominal, instance.pv.profiles[0])
    assert z_ext == pytest.approx(z_det, rel=1e-9)


def test_extensive_invariant_to_scenario_duplication(tiny):
    single = fixtures.tiny_instance(hours=4, years=1, scenarios=1, techs=1)
    dup = replace(
        single,
        pv=PvScenarioSet(
            profiles=np.repeat(single.pv.profiles, 3, axis=0),
            probabilities=np.full(3, 1.0 / 3.0),
        ),
    )
    _, z_one = solve_extensive_stochastic(single, single.demand.nominal)
    _, z_dup = solve_extensive_stochastic(dup, dup.demand.nominal)
    assert z_dup == pytest.approx(z_one, rel=1e-8)


def test_dual_and_bruteforce_adversaries_agree():
    instance = with_budget(fixtures.tiny_instance(hours=4, years=1, scenarios=2, techs=1), 1.0)
    config = CcgConfig(epsilon=1e-7)
    trace_dual = run_ccg(instance, config)
    trace_brute = run_ccg_bruteforce(instance, config)
    assert trace_dual.converged and trace_brute.converged
    assert trace_dual.objective == pytest.approx(trace_brute.objective, rel=1e-5)
    _check_bounds(trace_dual, config.epsilon)
    _check_bounds(trace_brute, config.epsilon)


def test_budget_chain_zero_full_and_monotone():
    instance = fixtures.tiny_instance(hours=4, years=1, scenarios=2, techs=1)
    config = CcgConfig(epsilon=1e-7)
    z0 = run_ccg(with_budget(instance, 0.0), config).objective
    z0_brute = run_ccg_bruteforce(with_budget(instance, 0.0), config).objective
    _, z_ext = solve_extensive_stochastic(instance, instance.demand.nominal)
    assert z0 == pytest.approx(z_ext, rel=1e-5)
    assert z0_brute == pytest.approx(z_ext, rel=1e-5)

    z_full = run_ccg(with_budget(instance, 4.0), config).objective
    z_full_brute = run_ccg_bruteforce(with_budget(instance, 4.0), config).objective
    assert z_full == pytest.approx(z_full_brute, rel=1e-5)
    assert z_full >= z0 - 1e-8


def test_upper_bound_tracks_candidate_minimum(tiny2):
    instance = with_budget(tiny2, 2.0)
    trace = run_ccg(instance, CcgConfig(epsilon=1e-7))
    candidates = [r.lower_bound - r.theta + r.z_subproblem for r in trace.records]
    running = np.minimum.accumulate(candidates)
    for record, expected in zip(trace.records, running):
        assert record.upper_bound == pytest.approx(expected, rel=1e-12)


def test_iterations_bounded_by_vertex_count():
    instance = with_budget(fixtures.tiny_instance(hours=3, years=1, scenarios=1, techs=1), 2.0)
    trace = run_ccg(instance, CcgConfig(epsilon=1e-9, max_iterations=30))
    assert trace.converged
    per_year = vertex_count(3, 2)
    assert trace.iterations <= per_year**instance.grid.years + 1


def test_nonconvergence_flagged(tiny2):
    instance = with_budget(tiny2, 3.0)
    trace = run_ccg(instance, CcgConfig(epsilon=1e-12, max_iterations=1))
    assert not trace.converged
    assert trace.iterations == 1
    assert trace.objective < math.inf  # still reports the best candidate found


def test_seeded_nominal_block_converges_to_same_objective(tiny2):
    instance = with_budget(tiny2, 1.0)
    base = run_ccg(instance, CcgConfig(epsilon=1e-7))
    seeded = run_ccg(instance, CcgConfig(epsilon=1e-7, seed_nominal_block=True))
    assert seeded.objective == pytest.approx(base.objective, rel=1e-6)


def test_full_rebuild_trace_is_byte_identical(tmp_path, tiny2):
    """Same seeds, rebuild mode: value columns of the trace reproduce exactly."""
    instance = with_budget(tiny2, 2.0)
    config = CcgConfig(epsilon=1e-7, full_rebuild=True)
    paths = []
    for run in range(2):
        trace = run_ccg(instance, config)
        path = tmp_path / f"trace{run}.csv"
        write_trace_csv(trace, path, include_times=False)
        paths.append(path.read_bytes())
    assert paths[0] == paths[1]


def test_trace_csv_layout(tmp_path, tiny):
    trace = run_ccg(with_budget(tiny, 1.0), CcgConfig(epsilon=1e-6))
    path = tmp_path / "trace.csv"
    write_trace_csv(trace, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iter,lb,ub,gap,z_mp,z_sp,theta,t_mp_sec,t_sp_sec"
    assert len(lines) == 1 + trace.iterations
