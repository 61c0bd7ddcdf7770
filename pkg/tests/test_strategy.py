from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diftgame.errors import EmptyCut, InvalidTheta, NoQualifyingPath, StrategyError
from diftgame.flownet import build_flow_network, enumerate_attack_paths, solve_min_cut
from diftgame.game import NoiseModel, PayoffParams, compile_model
from diftgame.graph import InfoFlowGraph
from diftgame.simulator import ExperimentConfig, simulate
from diftgame.strategy import (
    AdversaryStrategy,
    BenignPaths,
    DefenderStrategy,
    benign_paths,
    detection_prob,
    equalizing_group_weights,
    expected_path_cost,
    expected_payoffs_closed_form,
    false_positive_prob,
    fp_probability,
    nash_adversary,
    nash_defender,
    placement_defender,
    theta_bound,
)

from .conftest import dags


def test_exfil_nash_defender(exfil):
    d = nash_defender(solve_min_cut(exfil), 3)
    assert d.theta == 0.5
    assert d.trap_prob == {2: 0.5, 11: 0.5}
    assert d.p(16) == 0.0


def test_single_flow_single_node():
    assert nash_defender(["b"], 1).trap_prob == {"b": 1.0}


def test_single_flow_on_exfil_gives_theta_one(exfil):
    assert nash_defender(solve_min_cut(exfil), 1).theta == 1.0


def test_empty_cut():
    with pytest.raises(EmptyCut):
        nash_defender([], 2)


def test_theta_above_bound():
    with pytest.raises(InvalidTheta):
        placement_defender([2, 11], 3, theta=0.6)


def test_theta_bound():
    assert theta_bound(3, 2) == 0.5
    assert theta_bound(2, 5) == 0.5
    assert theta_bound(1, 4) == 1.0


def test_probability_range_enforced():
    with pytest.raises(StrategyError):
        DefenderStrategy({"a": 1.5})


def test_diamond_nash_adversary(diamond):
    paths = enumerate_attack_paths(build_flow_network(diamond))
    adv = nash_adversary(paths, solve_min_cut(diamond))
    assert adv.path_dist == ((("e", "a", "d"), 0.5), (("e", "b", "d"), 0.5))


def test_exfil_nash_adversary_is_uniform_over_13(exfil):
    paths = enumerate_attack_paths(build_flow_network(exfil))
    adv = nash_adversary(paths, solve_min_cut(exfil))
    assert len(adv.path_dist) == 13
    assert all(p == pytest.approx(1 / 13) for _, p in adv.path_dist)


def test_no_qualifying_path_for_redundant_cut():
    g = InfoFlowGraph.create("sabct", [("s", "a"), ("a", "b"), ("b", "c"), ("c", "t")], {"s"}, {"t"})
    paths = enumerate_attack_paths(build_flow_network(g))
    with pytest.raises(NoQualifyingPath):
        nash_adversary(paths, {"a", "b", "c"})


def test_group_weights_are_spread_inside_groups(exfil):
    paths = enumerate_attack_paths(build_flow_network(exfil))
    adv = nash_adversary(paths, {2, 11}, weights={2: 0.25, 11: 0.75})
    mass = {2: 0.0, 11: 0.0}
    for w, p in adv.path_dist:
        mass[2 if 2 in w else 11] += p
    assert mass == pytest.approx({2: 0.25, 11: 0.75})


def test_adversary_distribution_must_sum_to_one():
    with pytest.raises(StrategyError):
        AdversaryStrategy(((("a",), 0.3),))


def test_adversary_sampling_frequencies():
    adv = AdversaryStrategy(((("a",), 0.2), (("b",), 0.8)))
    rng = random.Random(3)
    n = 50_000
    k = sum(adv.sample_index(rng) == 0 for _ in range(n))
    assert abs(k / n - 0.2) < 0.01


@pytest.mark.parametrize(
    "path, probs, fn, expected",
    [
        (["x", "v"], {"v": 0.5}, 0.2, 0.4),
        (["x", "y"], {"v": 0.5}, 0.2, 0.0),
        (["v", "w"], {"v": 0.5, "w": 0.5}, 0.0, 0.75),
    ],
)
def test_detection_prob(path, probs, fn, expected):
    assert detection_prob(path, DefenderStrategy(probs), fn) == pytest.approx(expected)


@pytest.mark.parametrize(
    "path, probs, fp, expected",
    [
        (["x"], {"v": 0.5}, 0.2, 0.0),
        (["v"], {"v": 0.5}, 0.2, 0.1),
        (["v", "w"], {"v": 0.5, "w": 1.0}, 0.0, 0.0),
    ],
)
def test_false_positive_prob(path, probs, fp, expected):
    assert false_positive_prob(path, DefenderStrategy(probs), fp) == pytest.approx(expected)


@settings(max_examples=100)
@given(
    st.lists(st.one_of(st.just(0.0), st.floats(1e-6, 1)), min_size=1, max_size=5),
    st.floats(0, 0.98),
    st.floats(0.001, 0.01),
)
def test_detection_strictly_decreases_in_fn(ps, fn, dfn):
    strat = DefenderStrategy({i: p for i, p in enumerate(ps)})
    path = list(range(len(ps)))
    lo, hi = detection_prob(path, strat, fn + dfn), detection_prob(path, strat, fn)
    if any(p > 0 for p in ps):
        assert lo < hi
    else:
        assert lo == hi == 0.0
    assert 0.0 <= lo <= 1.0


@settings(max_examples=40, deadline=None)
@given(dags(4, 9), st.integers(1, 3), st.floats(0, 0.5))
def test_equal_detection_on_qualifying_paths(g, W, fn):
    cut = solve_min_cut(g)
    d = nash_defender(cut, W)
    adv = nash_adversary(enumerate_attack_paths(build_flow_network(g)), cut)
    for path in adv.paths:
        assert detection_prob(path, d, fn) == pytest.approx(d.theta * (1 - fn), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(dags(4, 9), st.integers(1, 3))
def test_nash_defender_depends_only_on_cut_membership(g, W):
    cut = solve_min_cut(g)
    d = nash_defender(cut, W)
    relabel = {v: f"n{v}" for v in g.nodes}
    d2 = nash_defender({relabel[v] for v in cut.trap_nodes}, W)
    assert {relabel[v]: p for v, p in d.trap_prob.items()} == d2.trap_prob
    assert d.worst_state_mass(W) <= 1.0 + 1e-12


def test_closed_form_certain_detection():
    g = InfoFlowGraph.create("abc", [("a", "b"), ("b", "c")], {"a"}, {"c"}, {"a": 1, "b": 1e-12, "c": 1})
    m = compile_model(g, 1)
    cf = expected_payoffs_closed_form(
        DefenderStrategy({"b": 1.0}), AdversaryStrategy.pure("abc"), m, NoiseModel(), PayoffParams()
    )
    assert cf.U_A == -1000.0
    assert cf.U_D == pytest.approx(1000.0)


def test_closed_form_certain_evasion():
    g = InfoFlowGraph.create("abc", [("a", "b"), ("b", "c")], {"a"}, {"c"})
    m = compile_model(g, 1)
    cf = expected_payoffs_closed_form(
        DefenderStrategy({}), AdversaryStrategy.pure("abc"), m, NoiseModel(fp=0.3), PayoffParams()
    )
    assert (cf.U_D, cf.U_A) == (-1000.0, 1000.0)


def test_expected_cost_stops_after_a_hit():
    cost = {"a": 1.0, "b": 10.0}
    strat = DefenderStrategy({"a": 1.0, "b": 1.0})
    assert expected_path_cost(["a", "b"], strat, 0.0, cost) == 1.0
    assert expected_path_cost(["a", "b"], strat, 0.5, cost) == pytest.approx(1.0 + 0.5 * 10.0)


def test_fp_probability():
    assert fp_probability(0.1, 1) == 0.0
    assert fp_probability(0.1, 3) == pytest.approx(1 - 0.81)


def test_benign_paths_account_for_all_mass(exfil):
    bp = benign_paths(compile_model(exfil, 3))
    assert math.fsum(bp.masses.values()) + bp.discarded == pytest.approx(1.0, abs=1e-9)
    assert bp.discarded < 1e-3


def test_equalizing_weights_without_noise_follow_costs(diamond):
    m = compile_model(diamond, 1)
    params = PayoffParams()
    w = equalizing_group_weights(solve_min_cut(diamond), m, NoiseModel(), params)
    assert math.fsum(w.values()) == pytest.approx(1.0)
    A = params.alpha_D - params.beta_D
    assert A * w["a"] - diamond.cost["a"] == pytest.approx(A * w["b"] - diamond.cost["b"])


def test_closed_form_matches_simulation_on_chain():
    """Half-trapped chain with FN=0.2: U_D = 0.4 alpha + 0.6 beta - spend."""
    g = InfoFlowGraph.create("abc", [("a", "b"), ("b", "c")], {"a"}, {"c"}, {"a": 5, "b": 2, "c": 7})
    m = compile_model(g, 1)
    d = DefenderStrategy({"b": 0.5}, 0.5)
    adv = AdversaryStrategy.pure("abc")
    noise = NoiseModel(fn=0.2)
    cf = expected_payoffs_closed_form(d, adv, m, noise, PayoffParams())
    assert cf.p_T == pytest.approx(0.4)
    assert cf.cost == pytest.approx(1.0)
    est = simulate(ExperimentConfig(10_000, 11, 1, noise, PayoffParams(), d, adv), m)
    assert abs(est.mean_D - cf.U_D) <= 3 * est.stderr_D
    assert abs(est.mean_A - cf.U_A) <= 3 * est.stderr_A


def test_simulated_cost_fallback_is_flagged(diamond):
    m = compile_model(diamond, 2)
    d = nash_defender(["a", "b"], 2)
    adv = AdversaryStrategy.uniform(enumerate_attack_paths(build_flow_network(diamond)))
    cf = expected_payoffs_closed_form(d, adv, m, NoiseModel(), PayoffParams(), fallback_trials=500)
    assert cf.cost_simulated
    budget = expected_payoffs_closed_form(d, adv, m, NoiseModel(), PayoffParams(), cost_model="budget")
    assert budget.cost == pytest.approx(0.5 * 1 + 0.5 * 2)
    assert not budget.cost_simulated


def test_strategy_serialization(exfil):
    d = nash_defender(solve_min_cut(exfil), 3)
    assert d.to_dict() == {"theta": 0.5, "trap_prob": {"2": 0.5, "11": 0.5}}
    adv = AdversaryStrategy.pure([1, 2, 3])
    assert adv.to_dict() == {"path_dist": [{"path": [1, 2, 3], "p": 1.0}]}


def test_empty_benign_paths_give_no_false_positives():
    assert BenignPaths({}, 0.0).expected_fp({"a": 1.0}, 0.5) == 0.0
