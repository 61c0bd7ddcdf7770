"""Equilibrium strategies and analytic payoff expressions."""

from __future__ import annotations

import math
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .errors import EmptyCut, InvalidTheta, NoQualifyingPath, StrategyError
from .flownet import NodeCut, classify_paths_by_cut
from .game import GameModel, NoiseModel, PayoffParams
from .graph import DROP, NodeId, sorted_nodes

BENIGN_MASS_FLOOR = 1e-6


@dataclass(frozen=True)
class DefenderStrategy:
    """Stationary per-node trap probabilities.

    At a defender state the node ``v`` of each present flow is analyzed with
    probability ``trap_prob[v]``; the residual mass is NoOp.
    """

    trap_prob: dict[NodeId, float]
    theta: float | None = None

    def __post_init__(self) -> None:
        for v, p in self.trap_prob.items():
            if not (0.0 <= p <= 1.0):
                raise StrategyError(f"trap probability of {v!r} is {p}, outside [0, 1]")

    def p(self, v: NodeId) -> float:
        return self.trap_prob.get(v, 0.0)

    def support(self) -> list[NodeId]:
        return sorted_nodes(v for v, p in self.trap_prob.items() if p > 0)

    def worst_state_mass(self, W: int) -> float:
        """Largest trap mass any set of W co-present flows could see."""
        top = sorted(self.trap_prob.values(), reverse=True)[:W]
        return math.fsum(top)

    def to_dict(self) -> dict[str, Any]:
        return {
            "theta": self.theta,
            "trap_prob": {str(v): self.trap_prob[v] for v in sorted_nodes(self.trap_prob)},
        }


def theta_bound(W: int, r: int) -> float:
    if W < 1 or r < 1:
        raise ValueError("W and r must be positive")
    return 1.0 / min(W, r)


def placement_defender(nodes: Iterable[NodeId], W: int, theta: float | None = None) -> DefenderStrategy:
    """Trap every node of ``nodes`` with the same probability.

    ``theta`` defaults to 1/min(W, |nodes|); a larger value is rejected since
    some reachable state would then carry more than unit trap mass.
    """
    traps = sorted_nodes(set(nodes))
    if not traps:
        raise EmptyCut("placement has no nodes")
    bound = theta_bound(W, len(traps))
    if theta is None:
        theta = bound
    if theta < 0 or theta > bound + 1e-12:
        raise InvalidTheta(f"theta={theta} exceeds the bound 1/min(W, r) = {bound}")
    return DefenderStrategy({v: theta for v in traps}, theta=theta)


def nash_defender(cut: NodeCut | Iterable[NodeId], W: int) -> DefenderStrategy:
    if W < 1:
        raise ValueError("W must be at least 1")
    nodes = cut.trap_nodes if isinstance(cut, NodeCut) else set(cut)
    if not nodes:
        raise EmptyCut("min cut has no nodes")
    return placement_defender(nodes, W)


@dataclass(frozen=True)
class AdversaryStrategy:
    path_dist: tuple[tuple[tuple, float], ...]
    _cum: tuple[float, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self) -> None:
        total = math.fsum(p for _, p in self.path_dist)
        if not self.path_dist or abs(total - 1.0) > 1e-9:
            raise StrategyError(f"path probabilities sum to {total}, not 1")
        if any(p < 0 for _, p in self.path_dist):
            raise StrategyError("negative path probability")
        acc, cum = 0.0, []
        for _, p in self.path_dist:
            acc += p
            cum.append(acc)
        object.__setattr__(self, "_cum", tuple(cum))

    @classmethod
    def pure(cls, path: Sequence[NodeId]) -> "AdversaryStrategy":
        return cls(((tuple(path), 1.0),))

    @classmethod
    def uniform(cls, paths: Sequence[tuple]) -> "AdversaryStrategy":
        if not paths:
            raise NoQualifyingPath("no paths to mix over")
        p = 1.0 / len(paths)
        return cls(tuple((tuple(w), p) for w in paths))

    @property
    def paths(self) -> list[tuple]:
        return [w for w, _ in self.path_dist]

    def sample_index(self, rng: random.Random) -> int:
        i = bisect_right(self._cum, rng.random() * self._cum[-1])
        return min(i, len(self.path_dist) - 1)

    def to_dict(self) -> dict[str, Any]:
        return {"path_dist": [{"path": list(w), "p": p} for w, p in self.path_dist]}


def nash_adversary(
    paths: Sequence[tuple],
    cut: NodeCut | Iterable[NodeId],
    weights: Mapping[NodeId, float] | None = None,
) -> AdversaryStrategy:
    """Mix over the attack paths that cross exactly one trap node.

    By default the mixture is uniform over those paths.  ``weights`` instead
    assigns a total mass to each trap node's group of paths, spread uniformly
    inside the group.
    """
    traps = cut.trap_nodes if isinstance(cut, NodeCut) else set(cut)
    cls = classify_paths_by_cut(paths, traps)
    if not cls.groups:
        raise NoQualifyingPath("no attack path crosses exactly one trap node")
    if weights is None:
        return AdversaryStrategy.uniform(cls.qualifying())
    total = math.fsum(weights.get(v, 0.0) for v in cls.groups)
    if total <= 0:
        raise StrategyError("group weights put no mass on any qualifying group")
    dist = []
    for v in sorted_nodes(cls.groups):
        group = cls.groups[v]
        mass = weights.get(v, 0.0) / total
        dist += [(w, mass / len(group)) for w in group]
    return AdversaryStrategy(tuple(dist))


def _miss_product(nodes: Iterable[NodeId], strat: DefenderStrategy | Mapping[NodeId, float]) -> float:
    probs = strat.trap_prob if isinstance(strat, DefenderStrategy) else strat
    prod = 1.0
    for v in nodes:
        prod *= 1.0 - probs.get(v, 0.0)
    return prod


def detection_prob(path: Iterable[NodeId], strat: DefenderStrategy, fn: float) -> float:
    return (1.0 - _miss_product(path, strat)) * (1.0 - fn)


def false_positive_prob(path: Iterable[NodeId], strat: DefenderStrategy, fp: float) -> float:
    return (1.0 - _miss_product(path, strat)) * fp


@dataclass(frozen=True)
class BenignPaths:
    """Benign trajectories grouped by the set of nodes they visit."""

    masses: dict[frozenset, float]
    discarded: float

    def expected_fp(self, strat: DefenderStrategy | Mapping[NodeId, float], fp: float) -> float:
        return fp * math.fsum(m * (1.0 - _miss_product(s, strat)) for s, m in self.masses.items())


def benign_paths(model: GameModel, floor: float = BENIGN_MASS_FLOOR) -> BenignPaths:
    """Enumerate benign trajectories from a uniform non-entry start.

    Trajectories are cut at 2N nodes; any prefix whose probability falls
    below ``floor`` is discarded and its mass reported.
    """
    g = model.graph
    masses: dict[frozenset, float] = {}
    lost: list[float] = []
    starts = model.start_nodes
    if not starts:
        return BenignPaths({}, 0.0)
    limit = model.horizon

    def walk(v: NodeId, visited: frozenset, mass: float, depth: int) -> None:
        if mass < floor:
            lost.append(mass)
            return
        visited = visited | {v}
        if depth >= limit:
            masses[visited] = masses.get(visited, 0.0) + mass
            return
        for k, p in g.benign[v].items():
            if p <= 0:
                continue
            if k == DROP:
                masses[visited] = masses.get(visited, 0.0) + mass * p
            else:
                walk(k, visited, mass * p, depth + 1)

    for v in starts:
        walk(v, frozenset(), 1.0 / len(starts), 1)
    return BenignPaths(masses, math.fsum(lost))


def fp_probability(e_f: float, W: int) -> float:
    """Chance that at least one of the W-1 benign flows is falsely trapped."""
    return 1.0 - (1.0 - e_f) ** (W - 1)


@dataclass(frozen=True)
class ClosedForm:
    U_D: float
    U_A: float
    p_T: float
    p_R: float
    p_FP: float
    cost: float
    cost_model: str
    cost_simulated: bool
    benign_discarded: float

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def expected_path_cost(path: Sequence[NodeId], strat: DefenderStrategy, fn: float, cost: Mapping[NodeId, float]) -> float:
    """Expected analysis spend of a lone malicious flow walking ``path``.

    Consistent with the detection formula, a miss is one event for the whole
    path: the flow is still live at node k unless some earlier analysis hit
    and the miss did not occur.
    """
    total = []
    miss = 1.0
    for v in path:
        alive = 1.0 - (1.0 - fn) * (1.0 - miss)
        total.append(alive * strat.p(v) * cost[v])
        miss *= 1.0 - strat.p(v)
    return math.fsum(total)


def expected_payoffs_closed_form(
    defender: DefenderStrategy,
    adversary: AdversaryStrategy,
    model: GameModel,
    noise: NoiseModel,
    params: PayoffParams,
    cost_model: str = "expected",
    benign: BenignPaths | None = None,
    fallback_trials: int = 20000,
    seed: int = 0,
) -> ClosedForm:
    """Analytic expected payoffs of a strategy pair.

    ``cost_model="expected"`` charges the expected analysis spend along the
    malicious path; it is exact for W=1 and estimated by simulation
    otherwise (``cost_simulated`` is then set).  ``cost_model="budget"``
    charges sum_v p_D(v) cost(v), the resource budget of the trap set.
    """
    p_T = math.fsum(pi * detection_prob(w, defender, noise.fn) for w, pi in adversary.path_dist)
    p_R = 1.0 - p_T
    if model.W > 1 and noise.fp > 0:
        benign = benign or benign_paths(model)
        p_FP = fp_probability(benign.expected_fp(defender, noise.fp), model.W)
        discarded = benign.discarded
    else:
        p_FP, discarded = 0.0, 0.0

    simulated = False
    cost = model.cost
    if cost_model == "budget":
        spend = math.fsum(p * cost[v] for v, p in defender.trap_prob.items())
    elif cost_model == "expected":
        if model.W == 1:
            spend = math.fsum(
                pi * expected_path_cost(w, defender, noise.fn, cost)
                for w, pi in adversary.path_dist
            )
        else:
            from .simulator import ExperimentConfig, simulate

            est = simulate(
                ExperimentConfig(
                    trials=fallback_trials,
                    seed=seed,
                    W=model.W,
                    noise=noise,
                    params=params,
                    defender=defender,
                    adversary=adversary,
                    label="cost-fallback",
                ),
                model,
            )
            spend = est.mean_cost
            simulated = True
    else:
        raise ValueError(f"unknown cost model {cost_model!r}")

    U_D = p_T * params.alpha_D + (p_R + p_FP) * params.beta_D - spend
    U_A = p_T * params.alpha_A + (p_R + p_FP) * params.beta_A
    return ClosedForm(U_D, U_A, p_T, p_R, p_FP, spend, cost_model, simulated, discarded)


def fp_gradient(benign: BenignPaths, strat: DefenderStrategy, fp: float, W: int, node: NodeId) -> float:
    """Partial derivative of the false-positive probability in p_D(node)."""
    if W < 2 or fp == 0:
        return 0.0
    e_f = benign.expected_fp(strat, fp)
    d_ef = fp * math.fsum(
        m * _miss_product((u for u in s if u != node), strat)
        for s, m in benign.masses.items()
        if node in s
    )
    return (W - 1) * (1.0 - e_f) ** (W - 2) * d_ef


def equalizing_group_weights(
    cut: NodeCut | Iterable[NodeId],
    model: GameModel,
    noise: NoiseModel,
    params: PayoffParams,
    benign: BenignPaths | None = None,
) -> dict[NodeId, float]:
    """Adversary mass per trap node that leaves the defender indifferent.

    Under the budget cost model the defender's marginal value of trap node x
    is A*pi_x + beta_D*g_x - cost(x), with A = (1-FN)(alpha_D-beta_D) and g_x
    the sensitivity of the false-positive probability.  Choosing pi_x so all
    marginals are equal makes no reallocation among trap nodes profitable.
    Falls back to equal masses when the solution would be negative.
    """
    traps = sorted_nodes(cut.trap_nodes if isinstance(cut, NodeCut) else set(cut))
    strat = nash_defender(traps, model.W)
    benign = benign or (benign_paths(model) if model.W > 1 and noise.fp > 0 else BenignPaths({}, 0.0))
    A = (1.0 - noise.fn) * (params.alpha_D - params.beta_D)
    b = {
        x: model.cost[x] - params.beta_D * fp_gradient(benign, strat, noise.fp, model.W, x)
        for x in traps
    }
    K = (A - math.fsum(b.values())) / len(traps)
    w = {x: (K + b[x]) / A for x in traps}
    if min(w.values()) < 0:
        return {x: 1.0 / len(traps) for x in traps}
    return w
