"""Monte Carlo estimation of game payoffs and the case-study experiments."""

from __future__ import annotations

import csv
import hashlib
import io
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

from .errors import ConfigMismatch, InvalidTheta
from .game import (
    NOOP,
    TRAPPED,
    GameModel,
    MoveTo,
    NoiseModel,
    PayoffParams,
    Reason,
    Turn,
    absorbing_reason,
    action_to_json,
    adversary_actions,
    compile_model,
    defender_actions,
    initial_state,
    sample_defender_action,
    state_to_json,
    step_adversary,
    step_defender,
    terminal_payoffs,
)
from .graph import InfoFlowGraph, NodeId, sorted_nodes
from .strategy import AdversaryStrategy, DefenderStrategy, placement_defender, theta_bound

CSV_COLUMNS = [
    "label", "theta", "FP", "FN", "trials",
    "mean_D", "stderr_D", "mean_A", "stderr_A",
    "n_trapped", "n_reached", "n_dropped", "n_fp", "n_horizon",
]

OUTCOMES = ("trapped", "reached", "dropped", "fp", "horizon")


def episode_seed(master: int, index: int) -> int:
    """Independent 64-bit stream seed for one episode."""
    h = hashlib.blake2b(f"{master}:{index}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


@dataclass(frozen=True)
class ExperimentConfig:
    trials: int
    seed: int
    W: int
    noise: NoiseModel
    params: PayoffParams
    defender: DefenderStrategy
    adversary: AdversaryStrategy
    label: str = ""

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.W < 1:
            raise ValueError("W must be at least 1")


class EpisodeOutcome(NamedTuple):
    outcome: str
    payoff_D: float
    payoff_A: float
    cost: float
    path_index: int
    steps: int


@dataclass(frozen=True)
class PayoffEstimate:
    trials: int
    mean_D: float
    stderr_D: float
    mean_A: float
    stderr_A: float
    mean_cost: float
    counts: dict[str, int]
    # path index -> (episodes on that path, episodes where the malicious flow was trapped)
    per_path: dict[int, tuple[int, int]] = field(default_factory=dict)

    def detection_rate(self, path_index: int) -> tuple[float, float]:
        """Empirical detection frequency on one path and its standard error."""
        n, k = self.per_path.get(path_index, (0, 0))
        if n == 0:
            return float("nan"), float("nan")
        p = k / n
        return p, math.sqrt(p * (1 - p) / n)


def check_config(config: ExperimentConfig, g: InfoFlowGraph) -> None:
    """Raise ConfigMismatch if strategies refer to nodes or edges ``g`` lacks."""
    for v in config.defender.trap_prob:
        if v not in g.nodes:
            raise ConfigMismatch(f"trap node {v!r} is not in the graph")
    for path in config.adversary.paths:
        if not path:
            raise ConfigMismatch("empty attack path")
        if path[0] not in g.entries:
            raise ConfigMismatch(f"path {list(path)} does not start at an entry")
        if path[-1] not in g.destinations:
            raise ConfigMismatch(f"path {list(path)} does not end at a destination")
        for u, w in zip(path, path[1:]):
            if (u, w) not in g.edges:
                raise ConfigMismatch(f"path {list(path)} uses missing edge {u!r}->{w!r}")


def play_episode(
    model: GameModel,
    config: ExperimentConfig,
    index: int,
    trace: list | None = None,
) -> EpisodeOutcome:
    rng = random.Random(episode_seed(config.seed, index))
    k = config.adversary.sample_index(rng)
    path = config.adversary.path_dist[k][0]
    trap = config.defender.trap_prob
    noise = config.noise
    s = initial_state(config.W)
    spend = []
    hop = 0
    while True:
        reason = absorbing_reason(model, s)
        if reason is not None:
            break
        if s.turn is Turn.ADVERSARY:
            action = MoveTo(path[hop])
            hop += 1
            nxt = step_adversary(model, s, action, rng)
            pay_d = 0.0
        else:
            action = sample_defender_action(model, s, trap, rng)
            pay_d = 0.0 if action is NOOP else -model.cost[action.node]
            if pay_d:
                spend.append(-pay_d)
            nxt = step_defender(model, s, action, noise, rng)
        if trace is not None:
            trace.append(
                {
                    "t": s.step,
                    "turn": s.turn.value,
                    "action": action_to_json(action),
                    "state": state_to_json(s),
                    "payoff_D": pay_d,
                    "payoff_A": 0.0,
                }
            )
        s = nxt
    term_d, term_a = terminal_payoffs(model, s, config.params)
    if reason is Reason.TRAPPED_FLOW:
        outcome = "trapped" if s.positions[0] is TRAPPED else "fp"
    elif reason is Reason.REACHED:
        outcome = "reached"
    elif reason is Reason.ALL_DROPPED:
        outcome = "dropped"
    else:
        outcome = "horizon"
    cost = math.fsum(spend)
    if trace is not None:
        trace.append(
            {
                "t": s.step,
                "turn": s.turn.value,
                "action": None,
                "state": state_to_json(s),
                "payoff_D": term_d,
                "payoff_A": term_a,
                "outcome": outcome,
            }
        )
    return EpisodeOutcome(outcome, term_d - cost, term_a, cost, k, s.step)


def _run_chunk(args: tuple) -> list[EpisodeOutcome]:
    model, config, start, stop = args
    return [play_episode(model, config, i) for i in range(start, stop)]


def _mean_stderr(xs: Sequence[float]) -> tuple[float, float]:
    n = len(xs)
    mean = math.fsum(xs) / n
    if n < 2:
        return mean, 0.0
    var = math.fsum((x - mean) ** 2 for x in xs) / (n - 1)
    return mean, math.sqrt(var / n)


def aggregate(outcomes: Sequence[EpisodeOutcome]) -> PayoffEstimate:
    """Combine episodes; exact summation makes the result order independent."""
    mean_d, se_d = _mean_stderr([o.payoff_D for o in outcomes])
    mean_a, se_a = _mean_stderr([o.payoff_A for o in outcomes])
    counts = {name: 0 for name in OUTCOMES}
    per_path: dict[int, list[int]] = {}
    for o in outcomes:
        counts[o.outcome] += 1
        slot = per_path.setdefault(o.path_index, [0, 0])
        slot[0] += 1
        slot[1] += o.outcome == "trapped"
    return PayoffEstimate(
        trials=len(outcomes),
        mean_D=mean_d,
        stderr_D=se_d,
        mean_A=mean_a,
        stderr_A=se_a,
        mean_cost=math.fsum(o.cost for o in outcomes) / len(outcomes),
        counts=counts,
        per_path={k: (v[0], v[1]) for k, v in sorted(per_path.items())},
    )


def simulate(
    config: ExperimentConfig,
    model: GameModel | InfoFlowGraph,
    workers: int = 1,
) -> PayoffEstimate:
    """Monte Carlo payoff estimate; bit-reproducible for a fixed seed.

    Every episode draws from its own stream keyed by (seed, episode index),
    so the result does not depend on ``workers``.
    """
    if isinstance(model, InfoFlowGraph):
        model = compile_model(model, config.W)
    if model.W != config.W:
        raise ConfigMismatch(f"model compiled for W={model.W}, config has W={config.W}")
    check_config(config, model.graph)
    n = config.trials
    if workers <= 1 or n < 2000:
        outcomes = [play_episode(model, config, i) for i in range(n)]
    else:
        step = -(-n // (workers * 4))
        chunks = [(model, config, a, min(a + step, n)) for a in range(0, n, step)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = [o for part in pool.map(_run_chunk, chunks) for o in part]
    return aggregate(outcomes)


def episode_trace(model: GameModel, config: ExperimentConfig, index: int = 0) -> list[dict]:
    trace: list[dict] = []
    play_episode(model, config, index, trace)
    return trace


def play_random_episode(model: GameModel, noise: NoiseModel, rng: random.Random) -> tuple[Reason, int]:
    """Both players pick uniformly among their legal actions."""
    s = initial_state(model.W)
    while True:
        reason = absorbing_reason(model, s)
        if reason is not None:
            return reason, s.step
        if s.turn is Turn.ADVERSARY:
            acts = adversary_actions(model, s)
            s = step_adversary(model, s, acts[int(rng.random() * len(acts))], rng)
        else:
            acts = defender_actions(model, s)
            s = step_defender(model, s, acts[int(rng.random() * len(acts))], noise, rng)


# ---------------------------------------------------------------------------
# Experiment tables


class Row(NamedTuple):
    label: str
    theta: float
    fp: float
    fn: float
    estimate: PayoffEstimate

    def as_csv(self) -> list[Any]:
        e = self.estimate
        c = e.counts
        return [
            self.label, repr(self.theta), repr(self.fp), repr(self.fn), e.trials,
            repr(e.mean_D), repr(e.stderr_D), repr(e.mean_A), repr(e.stderr_A),
            c["trapped"], c["reached"], c["dropped"], c["fp"], c["horizon"],
        ]


NOISE_CELLS = ((0.0, 0.0), (0.0, 0.2), (0.2, 0.0), (0.2, 0.2))  # (FP, FN)


def _cells(cells: Iterable[tuple[float, float]] | None) -> list[tuple[float, float]]:
    return list(cells) if cells is not None else list(NOISE_CELLS)


def sweep_theta(
    config: ExperimentConfig,
    model: GameModel | InfoFlowGraph,
    thetas: Sequence[float],
    cells: Iterable[tuple[float, float]] | None = None,
    workers: int = 1,
) -> list[Row]:
    """Re-run ``config`` with its trap set at each theta and noise cell."""
    traps = config.defender.support()
    bound = theta_bound(config.W, len(traps))
    for th in thetas:
        if th > bound + 1e-12:
            raise InvalidTheta(f"theta={th} exceeds 1/min(W, r) = {bound}")
    if isinstance(model, InfoFlowGraph):
        model = compile_model(model, config.W)
    rows = []
    for fp, fn in _cells(cells):
        for th in thetas:
            cfg = replace(
                config,
                noise=NoiseModel(fn=fn, fp=fp),
                defender=placement_defender(traps, config.W, th),
            )
            rows.append(Row(config.label, th, fp, fn, simulate(cfg, model, workers)))
    return rows


def compare_placements(
    config: ExperimentConfig,
    model: GameModel | InfoFlowGraph,
    placements: Mapping[str, Iterable[NodeId]],
    cells: Iterable[tuple[float, float]] | None = None,
    workers: int = 1,
) -> list[Row]:
    """Estimate payoffs when trapping each node set at 1/min(W, |set|)."""
    if isinstance(model, InfoFlowGraph):
        model = compile_model(model, config.W)
    strategies = {name: placement_defender(nodes, config.W) for name, nodes in placements.items()}
    rows = []
    for fp, fn in _cells(cells):
        for name, strat in strategies.items():
            cfg = replace(config, noise=NoiseModel(fn=fn, fp=fp), defender=strat, label=name)
            rows.append(Row(name, strat.theta, fp, fn, simulate(cfg, model, workers)))
    return rows


def cost_sweep(
    config: ExperimentConfig,
    g: InfoFlowGraph,
    q: Mapping[NodeId, float],
    scales: Sequence[float],
    placements: Mapping[str, Iterable[NodeId]],
    workers: int = 1,
) -> list[Row]:
    """Payoffs under costs ``c * q(v)`` for every scale ``c``.

    Nodes missing from ``q`` keep their cost from the graph, times ``c``.
    """
    rows = []
    for c in scales:
        scaled = g.with_costs({v: c * q.get(v, g.cost[v]) for v in g.node_ids()})
        model = compile_model(scaled, config.W)
        for name, nodes in placements.items():
            strat = placement_defender(nodes, config.W)
            cfg = replace(config, defender=strat, label=f"{name}@c={c!r}")
            rows.append(
                Row(cfg.label, strat.theta, config.noise.fp, config.noise.fn, simulate(cfg, model, workers))
            )
    return rows


def rows_to_csv(rows: Iterable[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow(row.as_csv())
    return buf.getvalue()


def plot_series(rows: Iterable[Row], key: str = "theta") -> dict[str, Any]:
    """Plot-ready series: one list of points per (label, noise cell)."""
    series: dict[str, list] = {}
    for r in rows:
        name = f"{r.label}|FP={r.fp!r}|FN={r.fn!r}"
        series.setdefault(name, []).append(
            {
                key: r.theta,
                "mean_D": r.estimate.mean_D,
                "stderr_D": r.estimate.stderr_D,
                "mean_A": r.estimate.mean_A,
                "stderr_A": r.estimate.stderr_A,
            }
        )
    return {"series": series}


def cost_series(rows: Iterable[Row]) -> dict[str, Any]:
    """Payoff-versus-c series from :func:`cost_sweep` rows."""
    series: dict[str, list] = {}
    for r in rows:
        name, _, c = r.label.partition("@c=")
        series.setdefault(name, []).append(
            {"c": float(c), "mean_D": r.estimate.mean_D, "stderr_D": r.estimate.stderr_D}
        )
    return {"series": series}


def sorted_trap_list(strat: DefenderStrategy) -> list[NodeId]:
    return sorted_nodes(strat.support())
