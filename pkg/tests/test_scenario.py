import json

import numpy as np
import pytest

from dsmpc.scenario import (
    ScenarioConfig,
    ScenarioError,
    builtin_scenario,
    controller_params,
    lane_factor,
    load_scenario,
    nominal_demand,
    realized_ratios,
    sample_parameters,
    side_links,
)


def test_nominal_ratio_row_zero(fig1):
    real = sample_parameters(fig1, builtin_scenario("scenario1"), 0, np.random.default_rng(0), perturb=False)
    assert real.road_ratios["10"] == pytest.approx({"left": 0.2, "right": 0.2, "straight": 0.6})


def test_band_demand():
    scn = builtin_scenario("scenario1")
    assert [nominal_demand(scn, m) for m in (0, 20, 39, 40)] == [1000, 1250, 1250, 1150]
    assert nominal_demand(scn, 500) == 800  # last band repeats
    assert nominal_demand(builtin_scenario("scenario3"), 20) == pytest.approx(1750)


def test_left_perturbation_moves_to_straight(fig1):
    scn = builtin_scenario("scenario1")
    r = realized_ratios(fig1, scn, "1", d_left=-0.1)
    assert r["9"] == pytest.approx(0.05)
    assert r["13"] + r["14"] == pytest.approx(0.75)
    assert r["5"] + r["6"] == pytest.approx(0.2)


def test_ratios_clamp_and_renormalize(fig1):
    scn = builtin_scenario("scenario1", ratio_table={0: (0.05, 0.2, 0.75), 1: (0.2, 0.2, 0.6), 2: (0.05, 0.2, 0.75), 3: (0.2, 0.2, 0.6)})
    r = realized_ratios(fig1, scn, "1", d_left=-0.1)
    assert r["9"] == 0.0
    assert sum(r.values()) == pytest.approx(1.0)


def test_missing_turns_share_the_mass(fig1):
    scn = builtin_scenario("scenario1")
    r = realized_ratios(fig1, scn, "4")  # straight and right only
    assert sum(r.values()) == pytest.approx(1.0)
    assert r["7"] == pytest.approx(0.7 / 0.85)
    assert r["10"] == pytest.approx(r["11"])


def test_every_row_sums_to_one(fig1):
    rng = np.random.default_rng(5)
    for minute in range(5):
        real = sample_parameters(fig1, builtin_scenario("scenario3"), minute, rng)
        for z, row in real.ratios.items():
            assert sum(row.values()) == pytest.approx(1.0, abs=1e-12)
            assert min(row.values()) >= 0


def test_lane_factor():
    assert lane_factor(3) == 1.0
    assert lane_factor(5) == 1.25
    assert lane_factor(1) == pytest.approx(1 / 3)


def test_side_links(fig1):
    assert side_links(fig1, builtin_scenario("scenario1")) == ()
    assert set(side_links(fig1, builtin_scenario("scenario3"))) == {"7", "19"}
    with pytest.raises(ScenarioError):
        side_links(fig1, builtin_scenario("scenario3", side_inflow_links=("nope",)))


def test_moments_match_sampling(fig1):
    """Controller means and variances agree with the sampler within Monte Carlo error."""
    scn = builtin_scenario("scenario3")
    params = controller_params(fig1, scn, 30, 1)
    rng = np.random.default_rng(1)
    draws = [sample_parameters(fig1, scn, 30, rng) for _ in range(10_000)]
    n = len(draws)
    for z in ("1", "7", "10", "19", "25"):
        exo = np.array([d.exo[z] for d in draws])
        p = params.get(("e", z, 0))
        assert abs(exo.mean() - p.mean) <= 5 * np.sqrt(p.variance / n)
        assert exo.var() == pytest.approx(p.variance, rel=0.05)
    # fully available turns: ratios are affine in the perturbations, so moments are exact
    for w in ("9", "13", "5"):
        vals = np.array([d.ratios["1"][w] for d in draws])
        p = params.get(("r", "1", w, 0))
        assert vals.mean() == pytest.approx(p.mean, abs=5 * np.sqrt(max(p.variance, 1e-12) / n))
        assert vals.var() == pytest.approx(p.variance, rel=0.05)


def test_correlated_movements(fig1):
    params = controller_params(fig1, builtin_scenario("scenario1"), 0, 1)
    # two movements of the same turn move together
    assert params.cov(("r", "1", "13", 0), ("r", "1", "14", 0)) > 0
    # left and straight trade off
    assert params.cov(("r", "1", "9", 0), ("r", "1", "13", 0)) < 0


def test_nominal_params_have_zero_variance(fig1):
    params = controller_params(fig1, builtin_scenario("scenario2"), 0, 2, nominal=True)
    assert all(p.variance == 0 for ps in params.exo.values() for p in ps)
    assert not params.correlations


def test_scenario_files(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"preset": "scenario2", "seed": 4}))
    scn = load_scenario(path)
    assert scn.scaling == 1.25 and scn.seed == 4
    path.write_text(json.dumps(builtin_scenario("scenario3").to_dict()))
    assert load_scenario(path) == builtin_scenario("scenario3")
    path.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(ScenarioError, match="unknown"):
        load_scenario(path)


@pytest.mark.parametrize(
    "kw",
    [
        {"ratio_table": {0: (0.5, 0.5, 0.5), 1: (0, 0, 1), 2: (0, 0, 1), 3: (0, 0, 1)}},
        {"side_inflow": (5, 1)},
        {"steps": -1},
        {"ratio_delta": -0.1},
    ],
)
def test_invalid_scenarios(kw):
    with pytest.raises(ScenarioError):
        ScenarioConfig(**kw)


def test_unknown_builtin():
    with pytest.raises(ScenarioError):
        builtin_scenario("scenario9")
