"""Domain type invariants, the validator, and canonical serialization."""

from dataclasses import replace

import numpy as np
import pytest

from pvbess import fixtures
from pvbess.domain_model import (
    InstanceError,
    PvScenarioSet,
    instance_from_json,
    instance_to_json,
    load_instance,
    save_instance,
    validate,
    with_budget,
    with_scenarios,
    with_years,
)


def test_bundled_fixtures_are_clean(tiny, tiny2, desk):
    for instance in (tiny, tiny2, desk):
        assert validate(instance) == []


def test_probability_sum_violation_reported(tiny):
    bad = replace(
        tiny, pv=PvScenarioSet(profiles=tiny.pv.profiles, probabilities=np.array([0.5, 0.6]))
    )
    messages = validate(bad)
    assert any("probabilities sum 1.1" in m for m in messages)


def test_budget_over_horizon_reported(tiny):
    bad = with_budget(tiny, 30.0)
    assert any("budget exceeds hours_per_day" in m for m in validate(bad))


def test_buy_below_sell_reported(tiny):
    tariff = replace(tiny.tariff, sell_price=tiny.tariff.buy_price + 0.01)
    assert any("arbitrage" in m for m in validate(replace(tiny, tariff=tariff)))


def test_negative_deviation_and_negative_demand_reported(tiny):
    dem = replace(tiny.demand, deviation=-tiny.demand.deviation)
    assert any("negative entries" in m for m in validate(replace(tiny, demand=dem)))
    dem = replace(tiny.demand, deviation=tiny.demand.nominal * 2.0)
    assert any("demand would go negative" in m for m in validate(replace(tiny, demand=dem)))


def test_rising_soh_reported(tiny2):
    bat = tiny2.batteries[0]
    bad = replace(bat, soh_by_year=np.array([0.9, 1.0]))
    messages = validate(replace(tiny2, batteries=(bad, tiny2.batteries[1])))
    assert any("soh_by_year increases" in m for m in messages)


def test_validate_is_pure(tiny):
    first = validate(tiny)
    second = validate(tiny)
    assert first == second == []
    assert not tiny.demand.nominal.flags.writeable  # inputs stay frozen


def test_arrays_not_writable(desk):
    with pytest.raises(ValueError):
        desk.pv.profiles[0, 0, 0] = 2.0


def test_canonical_json_round_trip(desk):
    text = instance_to_json(desk)
    again = instance_to_json(instance_from_json(text))
    assert text == again


def test_save_load_round_trip(tmp_path, desk):
    path = tmp_path / "instance.json"
    save_instance(desk, path)
    loaded = load_instance(path)
    assert instance_to_json(loaded) == instance_to_json(desk)


def test_load_rejects_invalid(tmp_path, tiny):
    bad = with_budget(tiny, 99.0)
    path = tmp_path / "bad.json"
    save_instance(bad, path)
    with pytest.raises(InstanceError) as err:
        load_instance(path)
    assert any("budget" in v for v in err.value.violations)


def test_probabilities_default_uniform(tiny):
    import json

    data = json.loads(instance_to_json(tiny))
    del data["pv"]["probabilities"]
    loaded = instance_from_json(json.dumps(data))
    np.testing.assert_allclose(loaded.pv.probabilities, [0.5, 0.5])


def test_with_scenarios_renormalizes(desk):
    sub = with_scenarios(desk, [0, 2])
    assert sub.pv.count == 2
    assert sub.pv.probabilities.sum() == pytest.approx(1.0)
    np.testing.assert_array_equal(sub.pv.profiles[1], desk.pv.profiles[2])


def test_with_years_slices_consistently(desk):
    short = with_years(desk, 2)
    assert validate(short) == []
    assert short.grid.years == 2
    assert short.demand.nominal.shape == (2, 24)
    assert short.batteries[0].soh_by_year.shape == (2,)
    with pytest.raises(ValueError):
        with_years(desk, 99)
