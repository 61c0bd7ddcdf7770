from __future__ import annotations

import math

import pytest

from diftgame.errors import ConfigMismatch, EmptyCut, InvalidTheta
from diftgame.flownet import build_flow_network, enumerate_attack_paths, solve_min_cut
from diftgame.game import NoiseModel, PayoffParams, compile_model
from diftgame.graph import InfoFlowGraph
from diftgame.simulator import (
    CSV_COLUMNS,
    ExperimentConfig,
    compare_placements,
    cost_series,
    cost_sweep,
    episode_seed,
    episode_trace,
    play_episode,
    plot_series,
    rows_to_csv,
    simulate,
    sweep_theta,
)
from diftgame.strategy import AdversaryStrategy, DefenderStrategy, nash_adversary, nash_defender

PARAMS = PayoffParams()
TINY = 1e-9


def _chain(cost_b: float = TINY) -> InfoFlowGraph:
    return InfoFlowGraph.create("abc", [("a", "b"), ("b", "c")], {"a"}, {"c"}, {"a": 1, "b": cost_b, "c": 1})


def _config(g, trap, W=1, trials=1000, seed=7, noise=NoiseModel(), adversary=None):
    adv = adversary or AdversaryStrategy.uniform(enumerate_attack_paths(build_flow_network(g)))
    return ExperimentConfig(trials, seed, W, noise, PARAMS, DefenderStrategy(trap), adv)


def test_certain_detection():
    g = _chain()
    est = simulate(_config(g, {"b": 1.0}), g)
    assert est.mean_D == PARAMS.alpha_D - TINY
    assert est.mean_A == PARAMS.alpha_A
    assert est.counts["trapped"] == 1000


def test_certain_evasion():
    g = _chain()
    est = simulate(_config(g, {}), g)
    assert (est.mean_D, est.mean_A) == (PARAMS.beta_D, PARAMS.beta_A)
    assert est.stderr_D == 0.0
    assert est.counts["reached"] == 1000


def test_half_trap_with_false_negatives():
    g = _chain()
    est = simulate(_config(g, {"b": 0.5}, trials=10_000, noise=NoiseModel(fn=0.2)), g)
    expected = 0.4 * PARAMS.alpha_D + 0.6 * PARAMS.beta_D
    assert abs(est.mean_D - expected) <= 3 * est.stderr_D


def test_counts_sum_to_trials(exfil):
    cut = solve_min_cut(exfil)
    adv = nash_adversary(enumerate_attack_paths(build_flow_network(exfil)), cut)
    cfg = ExperimentConfig(2000, 3, 3, NoiseModel(0.2, 0.2), PARAMS, nash_defender(cut, 3), adv)
    est = simulate(cfg, exfil)
    assert sum(est.counts.values()) == 2000
    assert sum(n for n, _ in est.per_path.values()) == 2000


def test_seed_determinism(exfil):
    cut = solve_min_cut(exfil)
    adv = nash_adversary(enumerate_attack_paths(build_flow_network(exfil)), cut)
    cfg = ExperimentConfig(3000, 99, 3, NoiseModel(0.2, 0.2), PARAMS, nash_defender(cut, 3), adv)
    model = compile_model(exfil, 3)
    a = simulate(cfg, model)
    b = simulate(cfg, model)
    assert a == b
    other = simulate(ExperimentConfig(3000, 100, 3, cfg.noise, PARAMS, cfg.defender, adv), model)
    assert other != a


def test_parallel_run_matches_serial(diamond):
    cfg = _config(diamond, {"a": 0.5, "b": 0.5}, W=2, trials=4000, noise=NoiseModel(0.1, 0.2))
    model = compile_model(diamond, 2)
    assert simulate(cfg, model, workers=2) == simulate(cfg, model, workers=1)


def test_episode_seeds_differ():
    assert len({episode_seed(1, i) for i in range(1000)}) == 1000
    assert episode_seed(1, 0) != episode_seed(2, 0)


def test_config_mismatch_on_unknown_trap(diamond):
    with pytest.raises(ConfigMismatch):
        simulate(_config(diamond, {"zz": 0.5}), diamond)


def test_config_mismatch_on_foreign_path(diamond):
    adv = AdversaryStrategy.pure(["e", "d"])
    with pytest.raises(ConfigMismatch):
        simulate(_config(diamond, {"a": 0.5}, adversary=adv), diamond)


def test_config_mismatch_on_model_width(diamond):
    with pytest.raises(ConfigMismatch):
        simulate(_config(diamond, {"a": 0.5}, W=2), compile_model(diamond, 1))


def test_trials_must_be_positive(diamond):
    with pytest.raises(ValueError):
        _config(diamond, {}, trials=0)


def test_trace_payoffs_add_up(exfil):
    cut = solve_min_cut(exfil)
    adv = nash_adversary(enumerate_attack_paths(build_flow_network(exfil)), cut)
    cfg = ExperimentConfig(50, 5, 3, NoiseModel(0.2, 0.2), PARAMS, nash_defender(cut, 3), adv)
    model = compile_model(exfil, 3)
    for i in range(50):
        trace = episode_trace(model, cfg, i)
        outcome = play_episode(model, cfg, i)
        assert math.fsum(r["payoff_D"] for r in trace) == pytest.approx(outcome.payoff_D)
        assert all(set(r) >= {"t", "turn", "action", "state", "payoff_D", "payoff_A"} for r in trace)
        assert trace[-1]["outcome"] == outcome.outcome


def test_sweep_grid_has_12_rows(exfil):
    cut = solve_min_cut(exfil)
    adv = nash_adversary(enumerate_attack_paths(build_flow_network(exfil)), cut)
    cfg = ExperimentConfig(50, 1, 3, NoiseModel(), PARAMS, nash_defender(cut, 3), adv, "MinCut")
    rows = sweep_theta(cfg, exfil, [0.5, 0.4, 0.2])
    assert len(rows) == 12
    assert {(r.fp, r.fn) for r in rows} == {(0.0, 0.0), (0.0, 0.2), (0.2, 0.0), (0.2, 0.2)}


def test_sweep_rejects_theta_above_bound(exfil):
    cut = solve_min_cut(exfil)
    adv = nash_adversary(enumerate_attack_paths(build_flow_network(exfil)), cut)
    cfg = ExperimentConfig(50, 1, 3, NoiseModel(), PARAMS, nash_defender(cut, 3), adv)
    with pytest.raises(InvalidTheta):
        sweep_theta(cfg, exfil, [0.6])


def test_mincut_placement_equals_nash_run(exfil):
    cut = solve_min_cut(exfil)
    adv = nash_adversary(enumerate_attack_paths(build_flow_network(exfil)), cut)
    cfg = ExperimentConfig(1000, 4, 3, NoiseModel(0.2, 0.2), PARAMS, nash_defender(cut, 3), adv)
    rows = compare_placements(cfg, exfil, {"MinCut": cut.trap_nodes}, cells=[(0.2, 0.2)])
    assert rows[0].estimate == simulate(cfg, exfil)


def test_empty_placement(exfil):
    cut = solve_min_cut(exfil)
    adv = nash_adversary(enumerate_attack_paths(build_flow_network(exfil)), cut)
    cfg = ExperimentConfig(10, 4, 3, NoiseModel(), PARAMS, nash_defender(cut, 3), adv)
    with pytest.raises(EmptyCut):
        compare_placements(cfg, exfil, {"Nothing": []})


def test_csv_and_plot_export(exfil):
    cut = solve_min_cut(exfil)
    adv = nash_adversary(enumerate_attack_paths(build_flow_network(exfil)), cut)
    cfg = ExperimentConfig(20, 1, 3, NoiseModel(), PARAMS, nash_defender(cut, 3), adv, "MinCut")
    rows = sweep_theta(cfg, exfil, [0.5, 0.2], cells=[(0.0, 0.0)])
    text = rows_to_csv(rows)
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 3
    series = plot_series(rows)["series"]
    assert list(series) == ["MinCut|FP=0.0|FN=0.0"]
    assert [p["theta"] for p in series["MinCut|FP=0.0|FN=0.0"]] == [0.5, 0.2]


def test_cost_sweep_scales_costs():
    g = _chain(cost_b=2.0)
    cfg = _config(g, {"b": 1.0}, trials=100)
    rows = cost_sweep(cfg, g, {"b": 0.5}, [1.0, 4.0], {"Game": ["b"]})
    assert [r.label for r in rows] == ["Game@c=1.0", "Game@c=4.0"]
    assert rows[0].estimate.mean_cost == pytest.approx(0.5)
    assert rows[1].estimate.mean_cost == pytest.approx(2.0)
    series = cost_series(rows)["series"]["Game"]
    assert [p["c"] for p in series] == [1.0, 4.0]
