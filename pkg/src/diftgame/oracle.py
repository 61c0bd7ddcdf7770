"""Exhaustive oracles: exact game values, best responses and equilibrium checks.

Everything here enumerates, so it is limited to small instances.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any, Sequence

import numpy as np

from .errors import InstanceTooLarge
from .flownet import build_flow_network, classify_paths_by_cut, enumerate_attack_paths, min_cut, split_nodes
from .game import (
    NOOP,
    Analyze,
    GameModel,
    GameState,
    Mark,
    MoveTo,
    NoiseModel,
    PayoffParams,
    Turn,
    absorbing_reason,
    adversary_transition_support,
    compile_model,
    defender_transition_support,
    initial_state,
    reachable_states,
    terminal_payoffs,
)
from .graph import InfoFlowGraph, NodeId, sorted_nodes
from .strategy import (
    AdversaryStrategy,
    BenignPaths,
    DefenderStrategy,
    benign_paths,
    detection_prob,
    equalizing_group_weights,
    expected_payoffs_closed_form,
    nash_adversary,
    nash_defender,
)

MAX_NODES = 10
MAX_FLOWS = 2
MAX_PATHS = 50
MAX_GRID_POINTS = 5_000_000


class Side(enum.Enum):
    DEFENDER = "defender"
    ADVERSARY = "adversary"


# ---------------------------------------------------------------------------
# Exact game value by dynamic programming


def exact_payoffs(
    model: GameModel,
    defender: DefenderStrategy,
    adversary: AdversaryStrategy,
    noise: NoiseModel,
    params: PayoffParams,
) -> tuple[float, float]:
    """Expected (defender, adversary) payoffs of the game, with no sampling.

    Sums stage and terminal payoffs over every branch of the transition
    supports, so it is exponential in W and meant for tiny graphs.
    """

    def solve(path: tuple) -> tuple[float, float]:
        @lru_cache(maxsize=None)
        def value(s: GameState, hop: int) -> tuple[float, float]:
            if absorbing_reason(model, s) is not None:
                return terminal_payoffs(model, s, params)
            vd, va = [], []
            if s.turn is Turn.ADVERSARY:
                support = adversary_transition_support(model, s, MoveTo(path[hop]))
                for t, pr in support.items():
                    d, a = value(t, hop + 1)
                    vd.append(pr * d)
                    va.append(pr * a)
            else:
                for action, pa in _defender_policy(model, s, defender):
                    stage = 0.0 if action is NOOP else -model.cost[action.node]
                    for t, pr in defender_transition_support(model, s, action, noise).items():
                        d, a = value(t, hop)
                        vd.append(pa * pr * (stage + d))
                        va.append(pa * pr * a)
            return math.fsum(vd), math.fsum(va)

        return value(initial_state(model.W), 0)

    ud, ua = [], []
    for path, pi in adversary.path_dist:
        d, a = solve(tuple(path))
        ud.append(pi * d)
        ua.append(pi * a)
    return math.fsum(ud), math.fsum(ua)


def _defender_policy(model: GameModel, s: GameState, strat: DefenderStrategy) -> list:
    cands = sorted_nodes(
        p for p in s.positions if not isinstance(p, Mark) and p not in model.entries and strat.p(p) > 0
    )
    acts = [(Analyze(v), strat.p(v)) for v in cands]
    rest = 1.0 - math.fsum(p for _, p in acts)
    if rest > 1e-15:
        acts.append((NOOP, rest))
    return acts


# ---------------------------------------------------------------------------
# Best responses


@dataclass(frozen=True)
class BestResponse:
    side: Side
    payoff: float
    defender: DefenderStrategy | None = None
    adversary: AdversaryStrategy | None = None
    evaluated: int = 0


def co_present_sets(model: GameModel, nodes: Sequence[NodeId]) -> set[frozenset]:
    """Sets of ``nodes`` that occupy a reachable defender state together."""
    keep = set(nodes)
    out = set()
    for s in reachable_states(model):
        if s.turn is Turn.DEFENDER and absorbing_reason(model, s) is None:
            here = frozenset(p for p in s.positions if p in keep)
            if len(here) > 1:
                out.add(here)
    return out


def _check_size(model: GameModel, n_paths: int) -> None:
    if model.graph.n > MAX_NODES or model.W > MAX_FLOWS or n_paths > MAX_PATHS:
        raise InstanceTooLarge(
            f"oracle limits are N<={MAX_NODES}, W<={MAX_FLOWS}, paths<={MAX_PATHS}; "
            f"got N={model.graph.n}, W={model.W}, paths={n_paths}"
        )


def _grid(k: int, step: float, first: float | None = None) -> np.ndarray:
    vals = np.round(np.arange(0.0, 1.0 + step / 2, step), 12)
    if k == 0:
        return np.zeros((1, 0))
    cols = [vals] * k
    if first is not None:
        cols[0] = np.array([first])
    mesh = np.meshgrid(*cols, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def defender_payoff_matrix(
    P: np.ndarray,
    nodes: Sequence[NodeId],
    adversary: AdversaryStrategy,
    model: GameModel,
    noise: NoiseModel,
    params: PayoffParams,
    benign: BenignPaths,
    cost_model: str = "budget",
) -> np.ndarray:
    """Closed-form defender payoff for each row of trap probabilities ``P``.

    Column j of ``P`` is the trap probability of ``nodes[j]``; every other
    node is untrapped.
    """
    col = {v: j for j, v in enumerate(nodes)}
    miss = 1.0 - P

    def hit(node_set) -> np.ndarray:
        idx = [col[v] for v in node_set if v in col]
        if not idx:
            return np.zeros(P.shape[0])
        return 1.0 - np.prod(miss[:, idx], axis=1)

    by_set: dict[frozenset, float] = {}
    for path, pi in adversary.path_dist:
        key = frozenset(v for v in path if v in col)
        by_set[key] = by_set.get(key, 0.0) + pi
    p_T = sum(pi * hit(s) for s, pi in by_set.items()) * (1.0 - noise.fn)
    if model.W > 1 and noise.fp > 0:
        fp_sets: dict[frozenset, float] = {}
        for s, m in benign.masses.items():
            key = frozenset(v for v in s if v in col)
            fp_sets[key] = fp_sets.get(key, 0.0) + m
        e_f = noise.fp * sum(m * hit(s) for s, m in fp_sets.items())
        p_FP = 1.0 - (1.0 - e_f) ** (model.W - 1)
    else:
        p_FP = 0.0
    c = np.array([model.cost[v] for v in nodes])
    if cost_model == "budget":
        spend = P @ c
    elif cost_model == "expected" and model.W == 1:
        spend = np.zeros(P.shape[0])
        for path, pi in adversary.path_dist:
            prod = np.ones(P.shape[0])
            for v in path:
                if v in col:
                    j = col[v]
                    alive = 1.0 - (1.0 - noise.fn) * (1.0 - prod)
                    spend = spend + pi * alive * P[:, j] * c[j]
                    prod = prod * miss[:, j]
    else:
        raise ValueError(f"cost model {cost_model!r} has no exact form for W={model.W}")
    return p_T * params.alpha_D + (1.0 - p_T + p_FP) * params.beta_D - spend


def best_response_oracle(
    model: GameModel,
    fixed: DefenderStrategy | AdversaryStrategy,
    side: Side | str,
    noise: NoiseModel,
    params: PayoffParams,
    step: float = 0.1,
    cost_model: str = "budget",
    benign: BenignPaths | None = None,
    restrict_to: Sequence[NodeId] | None = None,
) -> BestResponse:
    """Exhaustive best response of ``side`` against the other player's ``fixed`` strategy.

    The adversary side compares every pure attack path, which suffices
    because its payoff is linear in the path mixture.  The defender side
    searches the trap-probability grid over analyzable nodes on the
    adversary's support paths, subject to unit mass at every reachable
    state.  Nodes off the support can only add cost and false positives, so
    they stay at zero.

    ``restrict_to`` limits the defender to the given nodes (typically the
    min-cut set) and requires unit mass on every W-subset of them, as if any
    W of them could be occupied at once.
    """
    side = Side(side)
    f = build_flow_network(model.graph)
    all_paths = enumerate_attack_paths(f)
    _check_size(model, len(all_paths))
    if benign is None:
        benign = benign_paths(model) if model.W > 1 and noise.fp > 0 else BenignPaths({}, 0.0)

    if side is Side.ADVERSARY:
        assert isinstance(fixed, DefenderStrategy)
        best, best_u = None, -math.inf
        for path in all_paths:
            strat = AdversaryStrategy.pure(path)
            u = expected_payoffs_closed_form(
                fixed, strat, model, noise, params, cost_model="budget", benign=benign
            ).U_A
            if u > best_u + 1e-12:
                best, best_u = strat, u
        return BestResponse(side, best_u, adversary=best, evaluated=len(all_paths))

    assert isinstance(fixed, AdversaryStrategy)
    analyzable = model.graph.analyzable()
    if restrict_to is not None:
        analyzable = analyzable & set(restrict_to)
    nodes = sorted_nodes(
        {v for path, pi in fixed.path_dist if pi > 0 for v in path if v in analyzable}
    )
    k = len(nodes)
    n_vals = int(round(1 / step)) + 1
    if n_vals**k > MAX_GRID_POINTS:
        raise InstanceTooLarge(f"defender grid has {n_vals}^{k} points")
    if model.W == 1:
        pairs = []
    elif restrict_to is not None:
        pairs = [list(c) for c in itertools.combinations(range(k), min(model.W, k)) if len(c) > 1]
    else:
        pairs = [[nodes.index(v) for v in s] for s in co_present_sets(model, nodes)]

    best_u, best_row, evaluated = -math.inf, None, 0
    firsts = np.round(np.arange(0.0, 1.0 + step / 2, step), 12) if k else [None]
    for first in firsts:
        P = _grid(k, step, first)
        ok = np.ones(P.shape[0], dtype=bool)
        for idx in pairs:
            ok &= P[:, idx].sum(axis=1) <= 1.0 + 1e-9
        P = P[ok]
        if P.shape[0] == 0:
            continue
        evaluated += P.shape[0]
        U = defender_payoff_matrix(P, nodes, fixed, model, noise, params, benign, cost_model)
        i = int(np.argmax(U))
        if U[i] > best_u + 1e-12:
            best_u, best_row = float(U[i]), P[i]
    probs = {v: float(best_row[j]) for j, v in enumerate(nodes) if best_row[j] > 0}
    return BestResponse(side, best_u, defender=DefenderStrategy(probs), evaluated=evaluated)


# ---------------------------------------------------------------------------
# Equilibrium verification


@dataclass
class Check:
    name: str
    ok: bool
    detail: str = ""


@dataclass
class VerifyReport:
    checks: list[Check] = field(default_factory=list)
    ne_payoffs: tuple[float, float] | None = None

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.checks.append(Check(name, bool(ok), detail))

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "ne_payoffs": list(self.ne_payoffs) if self.ne_payoffs else None,
            "checks": [{"name": c.name, "ok": c.ok, "detail": c.detail} for c in self.checks],
        }


def defender_gain_is_violation(
    gain: float, br: DefenderStrategy, ne: DefenderStrategy, scale: float, step: float = 0.1
) -> bool:
    """A deviation counts only if it pays and moves some node by more than one grid step."""
    if gain <= 1e-9 * scale:
        return False
    nodes = set(br.trap_prob) | set(ne.trap_prob)
    return max(abs(br.p(v) - ne.p(v)) for v in nodes) > step + 1e-9


def verify_equilibrium(
    g: InfoFlowGraph,
    W: int,
    noise: NoiseModel,
    params: PayoffParams,
    defender: DefenderStrategy | None = None,
    adversary: AdversaryStrategy | None = None,
    step: float = 0.1,
    mixture: str = "uniform",
    defender_space: str = "full",
) -> VerifyReport:
    """Check the min-cut strategy pair against both best-response oracles.

    ``defender`` and ``adversary`` default to the equilibrium strategies;
    pass others to audit them instead.  ``mixture`` picks the default
    adversary: ``"uniform"`` over qualifying paths or ``"equalizing"`` group
    weights.  ``defender_space="cut"`` restricts the defender's deviations
    to the min-cut nodes, with every W of them treated as co-present.
    """
    if mixture not in ("uniform", "equalizing"):
        raise ValueError(f"unknown mixture {mixture!r}")
    if defender_space not in ("full", "cut"):
        raise ValueError(f"unknown defender space {defender_space!r}")
    model = compile_model(g, W)
    f = build_flow_network(g)
    paths = enumerate_attack_paths(f)
    _check_size(model, len(paths))
    cut = min_cut(split_nodes(f, g.cost))
    benign = benign_paths(model) if W > 1 and noise.fp > 0 else BenignPaths({}, 0.0)
    report = VerifyReport()

    if defender is None:
        defender = nash_defender(cut, W)
    if adversary is None:
        weights = None
        if mixture == "equalizing":
            weights = equalizing_group_weights(cut, model, noise, params, benign)
        adversary = nash_adversary(paths, cut, weights)

    traps = sorted_nodes(cut.trap_nodes)
    probs = {v: defender.p(v) for v in traps}
    equal = max(probs.values()) - min(probs.values()) <= 1e-12
    report.add(
        "equal trap probability on min-cut nodes",
        equal,
        "" if equal else f"unequal trap probabilities {probs}: equilibrium traps every min-cut node equally",
    )
    off_cut = {v: p for v, p in defender.trap_prob.items() if p > 0 and v not in cut.trap_nodes}
    report.add("trap mass only on min-cut nodes", not off_cut, f"{off_cut}" if off_cut else "")

    worst = 0.0
    for s in reachable_states(model):
        if s.turn is Turn.DEFENDER and absorbing_reason(model, s) is None:
            here = {p for p in s.positions if not isinstance(p, Mark) and p not in model.entries}
            worst = max(worst, math.fsum(defender.p(v) for v in here))
    report.add("per-state trap mass <= 1", worst <= 1 + 1e-12, f"max mass {worst}")

    cls = classify_paths_by_cut([p for p, pi in adversary.path_dist if pi > 0], cut.trap_nodes)
    det = [detection_prob(p, defender, noise.fn) for p in cls.qualifying()]
    spread = (max(det) - min(det)) if det else 0.0
    report.add(
        "equal detection probability on qualifying paths",
        bool(det) and spread <= 1e-12,
        f"spread {spread}",
    )

    ne = expected_payoffs_closed_form(defender, adversary, model, noise, params, "budget", benign)
    report.ne_payoffs = (ne.U_D, ne.U_A)
    scale = abs(params.alpha_D) + abs(params.beta_D)

    adv = best_response_oracle(model, defender, Side.ADVERSARY, noise, params, step, benign=benign)
    gain_a = adv.payoff - ne.U_A
    report.add(
        "adversary has no profitable deviation",
        gain_a <= 1e-9 * (abs(params.alpha_A) + abs(params.beta_A)),
        f"best path {list(adv.adversary.paths[0])} gains {gain_a:.6g}",
    )

    restrict = sorted_nodes(cut.trap_nodes) if defender_space == "cut" else None
    dfd = best_response_oracle(
        model, adversary, Side.DEFENDER, noise, params, step, benign=benign, restrict_to=restrict
    )
    gain_d = dfd.payoff - ne.U_D
    bad = defender_gain_is_violation(gain_d, dfd.defender, defender, scale, step)
    report.add(
        "defender has no profitable deviation",
        not bad,
        f"best grid strategy {dfd.defender.to_dict()['trap_prob']} gains {gain_d:.6g}",
    )
    return report
