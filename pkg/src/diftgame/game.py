"""Turn-based stochastic game between a DIFT defender and an APT adversary.

Flow 0 is the malicious flow; flows 1..W-1 are benign and follow the benign
distribution.  Both moves advance the step counter, and the game stops at the
horizon 2N at the latest.
"""

from __future__ import annotations

import enum
import math
import random
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, NamedTuple, Union

from .errors import IllegalAction, StrategyError, ValidationError
from .graph import DROP, InfoFlowGraph, NodeId, node_key, sorted_nodes

MAX_RESAMPLES = 32


class Mark(enum.Enum):
    AT_SOURCE = "AtSource"
    DROPPED = "Dropped"
    TRAPPED = "Trapped"

    def __repr__(self) -> str:
        return self.value


AT_SOURCE = Mark.AT_SOURCE
DROPPED = Mark.DROPPED
TRAPPED = Mark.TRAPPED

Position = Union[NodeId, Mark]


class Turn(enum.Enum):
    ADVERSARY = "A"
    DEFENDER = "D"


class Reason(enum.Enum):
    REACHED = "Reached"
    TRAPPED_FLOW = "TrappedFlow"
    ALL_DROPPED = "AllDropped"
    HORIZON = "Horizon"


class GameState(NamedTuple):
    turn: Turn
    positions: tuple
    step: int


class Analyze(NamedTuple):
    node: NodeId


class MoveTo(NamedTuple):
    node: NodeId


class _Simple(enum.Enum):
    NOOP = "NoOp"
    DROP = "Drop"

    def __repr__(self) -> str:
        return self.value


NOOP = _Simple.NOOP
DROP_ACTION = _Simple.DROP


@dataclass(frozen=True)
class NoiseModel:
    fn: float = 0.0
    fp: float = 0.0

    def __post_init__(self) -> None:
        for name, x in (("FN", self.fn), ("FP", self.fp)):
            if not (0.0 <= x < 1.0):
                raise ValueError(f"{name} must lie in [0, 1), got {x}")


@dataclass(frozen=True)
class PayoffParams:
    alpha_D: float = 1000.0
    beta_D: float = -1000.0
    alpha_A: float = -1000.0
    beta_A: float = 1000.0

    def __post_init__(self) -> None:
        if not self.alpha_D > 0:
            raise ValueError("alpha_D must be positive")
        if not self.beta_D < 0:
            raise ValueError("beta_D must be negative")
        if not self.alpha_A < 0:
            raise ValueError("alpha_A must be negative")
        if not self.beta_A > 0:
            raise ValueError("beta_A must be positive")


def _pos_key(p: Position) -> tuple:
    if isinstance(p, Mark):
        return (1, p.value)
    return (0, node_key(p))


@dataclass(frozen=True)
class GameModel:
    """Everything the transition rules need, precomputed from a graph."""

    graph: InfoFlowGraph
    W: int
    horizon: int
    entries: frozenset
    destinations: frozenset
    start_nodes: tuple
    benign_rows: dict = field(repr=False)

    @property
    def cost(self) -> dict[NodeId, float]:
        return self.graph.cost


def compile_model(g: InfoFlowGraph, W: int) -> GameModel:
    if W < 1:
        raise ValueError("W must be at least 1")
    rows = {}
    for v, row in g.benign.items():
        targets = tuple(DROPPED if k == DROP else k for k in row)
        probs = tuple(row.values())
        cum, acc = [], 0.0
        for p in probs:
            acc += p
            cum.append(acc)
        rows[v] = (targets, probs, tuple(cum), acc)
    start = tuple(v for v in g.node_ids() if v not in g.entries)
    return GameModel(
        graph=g,
        W=W,
        horizon=2 * g.n,
        entries=g.entries,
        destinations=g.destinations,
        start_nodes=start,
        benign_rows=rows,
    )


def initial_state(W: int) -> GameState:
    if W < 1:
        raise ValueError("W must be at least 1")
    return GameState(Turn.ADVERSARY, (AT_SOURCE,) * W, 0)


def absorbing_reason(model: GameModel, s: GameState) -> Reason | None:
    pos = s.positions
    if TRAPPED in pos:
        return Reason.TRAPPED_FLOW
    if pos[0] in model.destinations:
        return Reason.REACHED
    if all(p is DROPPED for p in pos):
        return Reason.ALL_DROPPED
    if s.step >= model.horizon:
        return Reason.HORIZON
    return None


def is_absorbing(model: GameModel, s: GameState) -> tuple[bool, Reason | None]:
    reason = absorbing_reason(model, s)
    return reason is not None, reason


def defender_view(s: GameState) -> tuple:
    """Positions in canonical sorted order, so the malicious index is hidden."""
    return tuple(sorted(s.positions, key=_pos_key))


def defender_actions(model: GameModel, s: GameState) -> list:
    if s.turn is not Turn.DEFENDER:
        raise IllegalAction("defender_actions called on an adversary state")
    if absorbing_reason(model, s) is not None:
        raise IllegalAction("no actions at an absorbing state")
    nodes = [p for p in s.positions if not isinstance(p, Mark) and p not in model.entries]
    return [NOOP] + [Analyze(v) for v in sorted_nodes(nodes)]


def adversary_actions(model: GameModel, s: GameState) -> list:
    if s.turn is not Turn.ADVERSARY:
        raise IllegalAction("adversary_actions called on a defender state")
    if absorbing_reason(model, s) is not None:
        raise IllegalAction("no actions at an absorbing state")
    here = s.positions[0]
    if here is AT_SOURCE:
        nxt = sorted_nodes(model.entries)
    elif here is DROPPED:
        # the malicious flow is gone; the adversary can only pass
        return [DROP_ACTION]
    else:
        nxt = model.graph.successors(here)
    return [DROP_ACTION] + [MoveTo(u) for u in nxt]


def stage_payoff_defender(model: GameModel, s: GameState, action: Any) -> float:
    if action is NOOP:
        return 0.0
    return -model.cost[action.node]


def stage_payoff_adversary(model: GameModel, s: GameState, action: Any) -> float:
    return 0.0


def terminal_payoffs(model: GameModel, s: GameState, params: PayoffParams) -> tuple[float, float]:
    reason = absorbing_reason(model, s)
    if reason is None:
        raise ValueError("terminal_payoffs needs an absorbing state")
    if reason is Reason.TRAPPED_FLOW:
        if s.positions[0] is TRAPPED:
            return params.alpha_D, params.alpha_A
        return params.beta_D, params.beta_A
    if reason is Reason.REACHED:
        return params.beta_D, params.beta_A
    return 0.0, 0.0


def _check_defender_action(model: GameModel, s: GameState, action: Any) -> int:
    if s.turn is not Turn.DEFENDER or absorbing_reason(model, s) is not None:
        raise IllegalAction("not a live defender state")
    if action is NOOP:
        return -1
    if not isinstance(action, Analyze) or action.node in model.entries:
        raise IllegalAction(f"illegal defender action {action!r}")
    try:
        return s.positions.index(action.node)
    except ValueError:
        raise IllegalAction(f"no flow at node {action.node!r}") from None


def step_defender(
    model: GameModel, s: GameState, action: Any, noise: NoiseModel, rng: random.Random
) -> GameState:
    k = _check_defender_action(model, s, action)
    pos = s.positions
    if k >= 0:
        u = rng.random()
        hit = u >= noise.fn if k == 0 else u < noise.fp
        if hit:
            pos = pos[:k] + (TRAPPED,) + pos[k + 1 :]
    return GameState(Turn.ADVERSARY, pos, s.step + 1)


def _check_adversary_action(model: GameModel, s: GameState, action: Any) -> None:
    if s.turn is not Turn.ADVERSARY or absorbing_reason(model, s) is not None:
        raise IllegalAction("not a live adversary state")
    if action is DROP_ACTION:
        return
    here = s.positions[0]
    if not isinstance(action, MoveTo) or here is DROPPED:
        raise IllegalAction(f"illegal adversary action {action!r}")
    legal = model.entries if here is AT_SOURCE else model.graph.successors(here)
    if action.node not in legal:
        raise IllegalAction(f"{action.node!r} is not reachable from {here!r}")


def sample_benign_move(
    model: GameModel, here: Position, taken: Iterable, rng: random.Random
) -> Position:
    """Next position of one live benign flow, avoiding nodes in ``taken``.

    A flow still at the source is placed uniformly on a free non-entry node.
    Otherwise a move is drawn from the benign distribution; a draw that lands
    on an occupied node is redrawn, and after 32 failures the flow drops out.
    """
    if here is DROPPED:
        return DROPPED
    if here is AT_SOURCE:
        free = [v for v in model.start_nodes if v not in taken]
        if not free:
            return DROPPED
        return free[int(rng.random() * len(free))]
    targets, _, cum, total = model.benign_rows[here]
    last = len(targets) - 1
    for _ in range(MAX_RESAMPLES):
        i = bisect_right(cum, rng.random() * total)
        t = targets[i if i <= last else last]
        if t is DROPPED or t not in taken:
            return t
    return DROPPED


def step_adversary(
    model: GameModel, s: GameState, action: Any, rng: random.Random
) -> GameState:
    _check_adversary_action(model, s, action)
    mal = DROPPED if action is DROP_ACTION else action.node
    new = [mal]
    taken = set() if mal is DROPPED else {mal}
    for here in s.positions[1:]:
        nxt = sample_benign_move(model, here, taken, rng)
        if nxt is not DROPPED:
            taken.add(nxt)
        new.append(nxt)
    return GameState(Turn.DEFENDER, tuple(new), s.step + 1)


# ---------------------------------------------------------------------------
# Exact transition supports


def benign_move_support(model: GameModel, here: Position, taken: frozenset) -> dict:
    """Exact distribution of :func:`sample_benign_move`."""
    if here is DROPPED:
        return {DROPPED: 1.0}
    if here is AT_SOURCE:
        free = [v for v in model.start_nodes if v not in taken]
        if not free:
            return {DROPPED: 1.0}
        return {v: 1.0 / len(free) for v in free}
    targets, probs, _, total = model.benign_rows[here]
    probs = [p / total for p in probs]
    q = math.fsum(p for t, p in zip(targets, probs) if t is not DROPPED and t in taken)
    if q >= 1.0:
        return {DROPPED: 1.0}
    boost = (1.0 - q**MAX_RESAMPLES) / (1.0 - q)
    out: dict = {}
    for t, p in zip(targets, probs):
        if p > 0 and (t is DROPPED or t not in taken):
            out[t] = out.get(t, 0.0) + p * boost
    if q > 0:
        out[DROPPED] = out.get(DROPPED, 0.0) + q**MAX_RESAMPLES
    return out


def adversary_transition_support(model: GameModel, s: GameState, action: Any) -> dict:
    _check_adversary_action(model, s, action)
    mal = DROPPED if action is DROP_ACTION else action.node
    partial = {((mal,), frozenset() if mal is DROPPED else frozenset([mal])): 1.0}
    for here in s.positions[1:]:
        nxt_partial: dict = {}
        for (pos, taken), pr in partial.items():
            for t, p in benign_move_support(model, here, taken).items():
                key = (pos + (t,), taken if t is DROPPED else taken | {t})
                nxt_partial[key] = nxt_partial.get(key, 0.0) + pr * p
        partial = nxt_partial
    out: dict = {}
    for (pos, _), pr in partial.items():
        st = GameState(Turn.DEFENDER, pos, s.step + 1)
        out[st] = out.get(st, 0.0) + pr
    return out


def defender_transition_support(
    model: GameModel, s: GameState, action: Any, noise: NoiseModel
) -> dict:
    k = _check_defender_action(model, s, action)
    same = GameState(Turn.ADVERSARY, s.positions, s.step + 1)
    if k < 0:
        return {same: 1.0}
    trapped = GameState(
        Turn.ADVERSARY, s.positions[:k] + (TRAPPED,) + s.positions[k + 1 :], s.step + 1
    )
    p_trap = 1.0 - noise.fn if k == 0 else noise.fp
    out = {}
    if p_trap > 0:
        out[trapped] = p_trap
    if p_trap < 1:
        out[same] = 1.0 - p_trap
    return out


def reachable_states(model: GameModel, noise: NoiseModel | None = None) -> set[GameState]:
    """Every state reachable from the initial state under some action sequence."""
    noise = noise or NoiseModel(0.1, 0.1)
    start = initial_state(model.W)
    seen = {start}
    frontier = [start]
    while frontier:
        s = frontier.pop()
        if absorbing_reason(model, s) is not None:
            continue
        if s.turn is Turn.ADVERSARY:
            succ = [
                t
                for a in adversary_actions(model, s)
                for t in adversary_transition_support(model, s, a)
            ]
        else:
            succ = [
                t
                for a in defender_actions(model, s)
                for t in defender_transition_support(model, s, a, noise)
            ]
        for t in succ:
            if t not in seen:
                seen.add(t)
                frontier.append(t)
    return seen


def state_count_bound(N: int, W: int) -> int:
    """Combinatorial bound on the number of distinct unordered states."""
    return 2 * (math.comb(N + 1, W) + sum(math.comb(N + 1, j) for j in range(W))) + 1


def unordered_state_count(states: Iterable[GameState]) -> int:
    return len({(s.turn, tuple(sorted(s.positions, key=_pos_key))) for s in states})


def check_state_invariants(model: GameModel, s: GameState) -> None:
    """Raise ValidationError if ``s`` breaks a structural state invariant."""
    nodes = [p for p in s.positions if not isinstance(p, Mark)]
    if len(nodes) != len(set(nodes)):
        raise ValidationError("live flows occupy distinct nodes", s)
    if sum(1 for p in s.positions if p is TRAPPED) > 1:
        raise ValidationError("at most one trapped flow", s)
    if s.step > model.horizon:
        raise ValidationError("step <= 2N", s)


def present_trap_mass(trap_prob: Mapping[NodeId, float], positions: Iterable) -> float:
    return math.fsum(
        trap_prob.get(p, 0.0) for p in positions if not isinstance(p, Mark)
    )


def sample_defender_action(
    model: GameModel,
    s: GameState,
    trap_prob: Mapping[NodeId, float],
    rng: random.Random,
) -> Any:
    """Analyze each present node ``v`` with probability ``trap_prob[v]``, else NoOp."""
    cands = sorted_nodes(
        p
        for p in s.positions
        if not isinstance(p, Mark) and p not in model.entries and trap_prob.get(p, 0.0) > 0
    )
    if not cands:
        return NOOP
    mass = math.fsum(trap_prob[v] for v in cands)
    if mass > 1.0 + 1e-12:
        raise StrategyError(
            f"trap probabilities of co-present nodes {cands} sum to {mass} > 1"
        )
    u = rng.random()
    acc = 0.0
    for v in cands:
        acc += trap_prob[v]
        if u < acc:
            return Analyze(v)
    return NOOP


def state_to_json(s: GameState) -> dict[str, Any]:
    return {
        "turn": s.turn.value,
        "positions": [p.value if isinstance(p, Mark) else p for p in s.positions],
        "step": s.step,
    }


def action_to_json(a: Any) -> Any:
    if isinstance(a, (Analyze, MoveTo)):
        return {type(a).__name__: a.node}
    return a.value
