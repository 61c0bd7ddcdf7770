"""Flow networks, node splitting, min-cut and attack path enumeration."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Mapping, NamedTuple, Sequence, Union

from .errors import Disconnected, NoFeasibleCut, PathExplosion
from .graph import InfoFlowGraph, NodeId, node_key, sorted_nodes

CAPACITY_TOL = 1e-9
DEFAULT_PATH_LIMIT = 10**6


class Endpoint(enum.Enum):
    SOURCE = "s_F"
    SINK = "t_F"

    def __repr__(self) -> str:
        return self.value


S_F = Endpoint.SOURCE
T_F = Endpoint.SINK


@dataclass(frozen=True, order=False)
class Prime:
    """The outgoing half ``v'`` of a split node."""

    node: NodeId

    def __repr__(self) -> str:
        return f"{self.node!r}'"


Vertex = Union[NodeId, Endpoint, Prime]


def vertex_key(x: Vertex) -> tuple:
    if x is S_F:
        return (0,)
    if x is T_F:
        return (3,)
    if isinstance(x, Prime):
        return (1, node_key(x.node), 1)
    return (1, node_key(x), 0)


class Origin(enum.Enum):
    ORIGINAL_EDGE = "OriginalEdge"
    ENTRY_ARC = "EntryArc"
    DEST_ARC = "DestArc"
    SPLIT_ARC = "SplitArc"


class Arc(NamedTuple):
    tail: Vertex
    head: Vertex
    capacity: Fraction
    origin: Origin
    # node for entry/dest/split arcs, (u, w) for original edges
    ref: Any


def exact(x: float | int | Fraction) -> Fraction:
    """Exact decimal value of a cost as written in the input."""
    if isinstance(x, Fraction):
        return x
    return Fraction(repr(x)) if isinstance(x, float) else Fraction(x)


@dataclass(frozen=True)
class FlowNetwork:
    arcs: tuple[Arc, ...]
    big: Fraction
    split: bool
    entries: tuple[NodeId, ...]
    destinations: tuple[NodeId, ...]
    nodes: tuple[NodeId, ...]

    source = S_F
    sink = T_F

    @property
    def vertices(self) -> list[Vertex]:
        vs: set[Vertex] = {S_F, T_F}
        for a in self.arcs:
            vs.add(a.tail)
            vs.add(a.head)
        return sorted(vs, key=vertex_key)

    def arcs_by_origin(self, origin: Origin) -> list[Arc]:
        return [a for a in self.arcs if a.origin is origin]

    def node_successors(self) -> dict[NodeId, list[NodeId]]:
        """Successor lists over graph nodes only, sorted by node id."""
        succ: dict[NodeId, list[NodeId]] = {v: [] for v in self.nodes}
        for a in self.arcs:
            if a.origin is Origin.ORIGINAL_EDGE:
                succ[a.ref[0]].append(a.ref[1])
        return {v: sorted_nodes(ws) for v, ws in succ.items()}


def _arc_sort_key(a: Arc) -> tuple:
    return (vertex_key(a.tail), vertex_key(a.head))


def build_flow_network(g: InfoFlowGraph) -> FlowNetwork:
    """Attach ``s_F`` before every entry and ``t_F`` after every destination."""
    big = 1 + sum((exact(c) for c in g.cost.values()), Fraction(0))
    arcs = [Arc(S_F, v, big, Origin.ENTRY_ARC, v) for v in sorted_nodes(g.entries)]
    arcs += [Arc(u, w, big, Origin.ORIGINAL_EDGE, (u, w)) for u, w in g.sorted_edges()]
    arcs += [Arc(v, T_F, big, Origin.DEST_ARC, v) for v in sorted_nodes(g.destinations)]
    return FlowNetwork(
        arcs=tuple(arcs),
        big=big,
        split=False,
        entries=tuple(sorted_nodes(g.entries)),
        destinations=tuple(sorted_nodes(g.destinations)),
        nodes=tuple(g.node_ids()),
    )


def split_nodes(
    f: FlowNetwork,
    cost: Mapping[NodeId, float],
    protect_terminals: bool = True,
) -> FlowNetwork:
    """Replace every node ``v`` by ``v -> v'`` carrying capacity ``cost(v)``.

    With ``protect_terminals`` the split arcs of entries and destinations get
    capacity BIG: the defender can never analyze a flow at an entry, and a
    malicious flow that reaches a destination has already won, so neither kind
    of node is a usable trap.  Pass ``False`` for the bare construction.
    """
    if f.split:
        raise ValueError("network is already split")
    finite = {v: exact(cost[v]) for v in f.nodes}
    terminals = set(f.entries) | set(f.destinations)
    usable = [v for v in f.nodes if not (protect_terminals and v in terminals)]
    big = 1 + sum((finite[v] for v in usable), Fraction(0))
    arcs = []
    for a in f.arcs:
        if a.origin is Origin.ORIGINAL_EDGE:
            arcs.append(Arc(Prime(a.tail), a.head, big, a.origin, a.ref))
        elif a.origin is Origin.DEST_ARC:
            arcs.append(Arc(Prime(a.tail), T_F, big, a.origin, a.ref))
        else:
            arcs.append(Arc(a.tail, a.head, big, a.origin, a.ref))
    for v in f.nodes:
        cap = big if (protect_terminals and v in terminals) else finite[v]
        arcs.append(Arc(v, Prime(v), cap, Origin.SPLIT_ARC, v))
    arcs.sort(key=_arc_sort_key)
    return FlowNetwork(
        arcs=tuple(arcs),
        big=big,
        split=True,
        entries=f.entries,
        destinations=f.destinations,
        nodes=f.nodes,
    )


@dataclass(frozen=True)
class NodeCut:
    cut_arcs: tuple[Arc, ...]
    trap_nodes: frozenset[NodeId]
    capacity: float
    flow_value: float

    def sorted_traps(self) -> list[NodeId]:
        return sorted_nodes(self.trap_nodes)

    @property
    def r(self) -> int:
        return len(self.trap_nodes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "trap_nodes": self.sorted_traps(),
            "capacity": self.capacity,
            "flow_value": self.flow_value,
        }


class _Residual:
    """Adjacency-list residual graph over exact rational capacities."""

    def __init__(self, arcs: Sequence[Arc]) -> None:
        self.head: list[int] = []
        self.cap: list[Fraction] = []
        self.adj: dict[Vertex, list[int]] = {}
        self.vertex_of: dict[int, Vertex] = {}
        for a in arcs:
            self._add(a.tail, a.head, a.capacity)

    def _add(self, u: Vertex, w: Vertex, c: Fraction) -> None:
        self.adj.setdefault(u, []).append(len(self.head))
        self.head.append(w)
        self.cap.append(c)
        self.adj.setdefault(w, []).append(len(self.head))
        self.head.append(u)
        self.cap.append(Fraction(0))

    def reachable(self, s: Vertex) -> set[Vertex]:
        seen = {s}
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for e in self.adj.get(u, ()):
                w = self.head[e]
                if self.cap[e] > 0 and w not in seen:
                    seen.add(w)
                    queue.append(w)
        return seen

    def max_flow(self, s: Vertex, t: Vertex) -> Fraction:
        """Edmonds-Karp; BFS visits arcs in insertion order, so runs are deterministic."""
        total = Fraction(0)
        while True:
            parent: dict[Vertex, int] = {s: -1}
            queue = deque([s])
            while queue and t not in parent:
                u = queue.popleft()
                for e in self.adj.get(u, ()):
                    w = self.head[e]
                    if self.cap[e] > 0 and w not in parent:
                        parent[w] = e
                        queue.append(w)
            if t not in parent:
                return total
            bottleneck = None
            w = t
            while w != s:
                e = parent[w]
                bottleneck = self.cap[e] if bottleneck is None else min(bottleneck, self.cap[e])
                w = self.head[e ^ 1]
            w = t
            while w != s:
                e = parent[w]
                self.cap[e] -= bottleneck
                self.cap[e ^ 1] += bottleneck
                w = self.head[e ^ 1]
            total += bottleneck


def max_flow_value(f: FlowNetwork) -> Fraction:
    return _Residual(f.arcs).max_flow(S_F, T_F)


def min_cut(f: FlowNetwork) -> NodeCut:
    """Minimum node cut of a split network.

    Among several minimum cuts, the one whose source side is the set of
    vertices reachable from ``s_F`` in the final residual graph is returned.
    """
    if not f.split:
        raise ValueError("min_cut expects a node-split network")
    res = _Residual(f.arcs)
    if T_F not in res.reachable(S_F):
        raise Disconnected("source cannot reach sink")
    flow = res.max_flow(S_F, T_F)
    if flow >= f.big:
        raise NoFeasibleCut(
            "every cut must remove an entry or destination, which cannot be analyzed"
        )
    side = res.reachable(S_F)
    cut_arcs = tuple(a for a in f.arcs if a.tail in side and a.head not in side)
    assert all(a.origin is Origin.SPLIT_ARC for a in cut_arcs)
    capacity = sum((a.capacity for a in cut_arcs), Fraction(0))
    assert capacity == flow
    return NodeCut(
        cut_arcs=cut_arcs,
        trap_nodes=frozenset(a.ref for a in cut_arcs),
        capacity=float(capacity),
        flow_value=float(flow),
    )


def solve_min_cut(g: InfoFlowGraph, protect_terminals: bool = True) -> NodeCut:
    return min_cut(split_nodes(build_flow_network(g), g.cost, protect_terminals))


AttackPath = tuple  # tuple of NodeId from an entry to a destination


def enumerate_attack_paths(f: FlowNetwork, limit: int = DEFAULT_PATH_LIMIT) -> list[tuple]:
    """All simple entry-to-destination paths in lexicographic node-id order.

    ``s_F`` and ``t_F`` are implicit: each path starts at an entry and stops
    at the first destination it reaches, because the game ends there.
    """
    succ = f.node_successors()
    dests = set(f.destinations)
    out: list[tuple] = []
    path: list[NodeId] = []
    on_path: set[NodeId] = set()

    def visit(v: NodeId) -> None:
        path.append(v)
        on_path.add(v)
        if v in dests:
            out.append(tuple(path))
            if len(out) > limit:
                raise PathExplosion(limit)
        else:
            for w in succ[v]:
                if w not in on_path:
                    visit(w)
        path.pop()
        on_path.discard(v)

    for e in f.entries:
        visit(e)
    return out


@dataclass(frozen=True)
class PathClassification:
    groups: dict[NodeId, list[tuple]]
    multi: list[tuple]
    uncovered: list[tuple]

    def qualifying(self) -> list[tuple]:
        """Paths crossing exactly one trap node, in group order."""
        return [p for v in sorted_nodes(self.groups) for p in self.groups[v]]


def classify_paths_by_cut(paths: Iterable[tuple], trap_nodes: Iterable[NodeId]) -> PathClassification:
    traps = set(trap_nodes)
    groups: dict[NodeId, list[tuple]] = {v: [] for v in sorted_nodes(traps)}
    multi, uncovered = [], []
    for p in paths:
        hit = [v for v in p if v in traps]
        if len(hit) == 1:
            groups[hit[0]].append(p)
        elif hit:
            multi.append(p)
        else:
            uncovered.append(p)
    return PathClassification(
        groups={v: ps for v, ps in groups.items() if ps}, multi=multi, uncovered=uncovered
    )


def is_cut(g: InfoFlowGraph, nodes: Iterable[NodeId]) -> bool:
    """True when removing ``nodes`` disconnects every entry from every destination."""
    removed = set(nodes)
    seen = {v for v in g.entries if v not in removed}
    stack = list(seen)
    while stack:
        u = stack.pop()
        if u in g.destinations:
            return False
        for w in g.successors(u):
            if w not in removed and w not in seen:
                seen.add(w)
                stack.append(w)
    return True
