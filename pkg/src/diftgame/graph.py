"""Information flow graph: data model, ingestion, pruning and cycle handling.

The canonical on-disk format is JSON::

    {
      "nodes": [{"id": 1, "name": "/bin/bash", "kind": "Process", "cost": 2.5}, ...],
      "edges": [[1, 15], [15, 5], ...],
      "entries": [1, 5],
      "destinations": [3],
      "benign": {"1": {"15": 0.5, "drop": 0.5}, ...}
    }

``cost`` and ``benign`` are optional.  A missing cost defaults to 1.0 and a
missing benign row defaults to the uniform distribution over the node's
out-neighbors plus dropping out.  Costs are stored as positive magnitudes;
payoff code negates them.
"""

from __future__ import annotations

import enum
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Iterable, Mapping, Union

import networkx as nx

from .errors import CyclicGraph, NoAttackPath, ParseError, ValidationError

NodeId = Union[int, str]

#: Key used for the drop-out outcome inside a benign distribution row.
DROP = "drop"

BENIGN_TOL = 1e-9


def node_key(v: NodeId) -> tuple[int, Any]:
    """Total order over mixed int/str node ids: ints first, numerically."""
    if isinstance(v, int):
        return (0, v)
    return (1, v)


def sorted_nodes(nodes: Iterable[NodeId]) -> list[NodeId]:
    return sorted(nodes, key=node_key)


class NodeKind(enum.Enum):
    PROCESS = "Process"
    FILE = "File"
    IPC_OBJECT = "IpcObject"
    NETWORK_ENDPOINT = "NetworkEndpoint"
    UNKNOWN = "Unknown"

    @classmethod
    def parse(cls, raw: Any) -> "NodeKind":
        if isinstance(raw, NodeKind):
            return raw
        norm = str(raw).replace(" ", "").replace("_", "").replace("-", "").lower()
        aliases = {"files": "file", "ipc": "ipcobject", "socket": "networkendpoint"}
        norm = aliases.get(norm, norm)
        for kind in cls:
            if kind.value.lower() == norm:
                return kind
        raise ValidationError("node kind drawn from the closed enum", raw)


@dataclass(frozen=True)
class NodeMeta:
    name: str
    kind: NodeKind = NodeKind.UNKNOWN


@dataclass(frozen=True)
class InfoFlowGraph:
    """Validated information flow graph.

    Treat instances as immutable; the transformation functions in this module
    always return new graphs.
    """

    nodes: dict[NodeId, NodeMeta]
    edges: frozenset[tuple[NodeId, NodeId]]
    entries: frozenset[NodeId]
    destinations: frozenset[NodeId]
    cost: dict[NodeId, float]
    benign: dict[NodeId, dict[NodeId, float]]
    _succ: dict[NodeId, tuple[NodeId, ...]] = field(
        default_factory=dict, repr=False, compare=False
    )

    @classmethod
    def create(
        cls,
        nodes: Mapping[NodeId, NodeMeta] | Iterable[NodeId],
        edges: Iterable[tuple[NodeId, NodeId]],
        entries: Iterable[NodeId],
        destinations: Iterable[NodeId],
        cost: Mapping[NodeId, float] | None = None,
        benign: Mapping[NodeId, Mapping[NodeId, float]] | None = None,
    ) -> "InfoFlowGraph":
        """Apply defaults, validate every invariant and build the graph."""
        if isinstance(nodes, Mapping):
            meta = dict(nodes)
        else:
            meta = {}
            for v in nodes:
                if v in meta:
                    raise ValidationError("node ids unique within one graph", v)
                meta[v] = NodeMeta(name=str(v))
        for v in meta:
            _check_node_id(v)

        edge_set = frozenset((u, w) for u, w in edges)
        for u, w in sorted(edge_set, key=lambda e: (node_key(e[0]), node_key(e[1]))):
            if u not in meta or w not in meta:
                raise ValidationError("every edge endpoint exists in nodes", (u, w))

        entry_set = frozenset(entries)
        dest_set = frozenset(destinations)
        if not entry_set:
            raise ValidationError("entries nonempty")
        if not dest_set:
            raise ValidationError("destinations nonempty")
        for v in sorted_nodes(entry_set | dest_set):
            if v not in meta:
                raise ValidationError("entries and destinations are graph nodes", v)
        both = entry_set & dest_set
        if both:
            raise ValidationError("entries and destinations disjoint", sorted_nodes(both)[0])

        costs: dict[NodeId, float] = {}
        given = dict(cost or {})
        for v in given:
            if v not in meta:
                raise ValidationError("cost keys are graph nodes", v)
        for v in sorted_nodes(meta):
            c = given.get(v, 1.0)
            if isinstance(c, bool) or not isinstance(c, (int, float)):
                raise ValidationError("cost is a real number", v, repr(c))
            c = float(c)
            if not math.isfinite(c) or c <= 0.0:
                raise ValidationError("cost(v) > 0", v, f"cost={c}")
            costs[v] = c

        succ: dict[NodeId, list[NodeId]] = {v: [] for v in meta}
        for u, w in edge_set:
            succ[u].append(w)
        succ_sorted = {v: tuple(sorted_nodes(ws)) for v, ws in succ.items()}

        rows_in = dict(benign or {})
        for v in rows_in:
            if v not in meta:
                raise ValidationError("benign rows are keyed by graph nodes", v)
        rows: dict[NodeId, dict[NodeId, float]] = {}
        for v in sorted_nodes(meta):
            outs = succ_sorted[v]
            if v in rows_in:
                rows[v] = _check_benign_row(v, rows_in[v], outs)
            else:
                share = 1.0 / (len(outs) + 1)
                row = {w: share for w in outs}
                row[DROP] = share
                rows[v] = row

        return cls(
            nodes={v: meta[v] for v in sorted_nodes(meta)},
            edges=edge_set,
            entries=entry_set,
            destinations=dest_set,
            cost=costs,
            benign=rows,
            _succ=succ_sorted,
        )

    @property
    def n(self) -> int:
        return len(self.nodes)

    def node_ids(self) -> list[NodeId]:
        return list(self.nodes)

    def successors(self, v: NodeId) -> tuple[NodeId, ...]:
        return self._succ[v]

    def sorted_edges(self) -> list[tuple[NodeId, NodeId]]:
        return sorted(self.edges, key=lambda e: (node_key(e[0]), node_key(e[1])))

    def analyzable(self) -> frozenset[NodeId]:
        """Nodes where security analysis can actually take place.

        Flows at an entry point cannot be analyzed, and a malicious flow that
        reaches a destination ends the game before the defender moves.
        """
        return frozenset(self.nodes) - self.entries - self.destinations

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(self.sorted_edges())
        return g

    def is_acyclic(self) -> bool:
        return nx.is_directed_acyclic_graph(self.to_networkx())

    def with_costs(self, cost: Mapping[NodeId, float]) -> "InfoFlowGraph":
        return InfoFlowGraph.create(
            self.nodes, self.edges, self.entries, self.destinations, cost, self.benign
        )


def _check_node_id(v: Any) -> None:
    if isinstance(v, bool) or not isinstance(v, (int, str)):
        raise ValidationError("node id is a string or integer", v)
    if v == DROP:
        raise ValidationError(f"node id {DROP!r} is reserved", v)


def _check_benign_row(
    v: NodeId, row: Mapping[NodeId, float], outs: tuple[NodeId, ...]
) -> dict[NodeId, float]:
    allowed = set(outs) | {DROP}
    clean: dict[NodeId, float] = {}
    for k, p in row.items():
        if k not in allowed:
            raise ValidationError(
                "benign support within out-neighbors and drop", (v, k)
            )
        if isinstance(p, bool) or not isinstance(p, (int, float)):
            raise ValidationError("benign probabilities are reals", (v, k))
        p = float(p)
        if not (0.0 <= p <= 1.0):
            raise ValidationError("benign probabilities in [0, 1]", (v, k), f"p={p}")
        clean[k] = p
    total = math.fsum(clean.values())
    if abs(total - 1.0) > BENIGN_TOL:
        raise ValidationError("benign row sums to 1", v, f"sum={total!r}")
    ordered = {w: clean[w] for w in outs if w in clean}
    if DROP in clean:
        ordered[DROP] = clean[DROP]
    return ordered


# ---------------------------------------------------------------------------
# Ingestion and serialization


def _read_text(source: bytes | str | IO[Any]) -> str:
    if isinstance(source, bytes):
        data: Any = source
    elif isinstance(source, str):
        return source
    else:
        data = source.read()
    if isinstance(data, bytes):
        try:
            return data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not valid UTF-8: {exc}") from exc
    return data


def parse_ifg(source: bytes | str | IO[Any], fmt: str = "json") -> InfoFlowGraph:
    """Decode and validate a graph from JSON or DOT text/bytes/stream."""
    text = _read_text(source)
    fmt = fmt.lower()
    if fmt == "json":
        return _parse_json(text)
    if fmt == "dot":
        return _parse_dot(text)
    raise ParseError(f"unknown graph format {fmt!r}")


def load_ifg(path: str | Path) -> InfoFlowGraph:
    path = Path(path)
    fmt = "dot" if path.suffix.lower() in (".dot", ".gv") else "json"
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return parse_ifg(data, fmt)


def _json_id(raw: Any) -> NodeId:
    if isinstance(raw, bool) or not isinstance(raw, (int, str)):
        raise ParseError(f"node id must be a string or integer, got {raw!r}")
    return raw


def _parse_json(text: str) -> InfoFlowGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError("top-level JSON value must be an object")
    for key in ("nodes", "edges", "entries", "destinations"):
        if key not in doc:
            raise ParseError(f"missing required key {key!r}")
        if not isinstance(doc[key], list):
            raise ParseError(f"{key!r} must be a list")

    meta: dict[NodeId, NodeMeta] = {}
    cost: dict[NodeId, float] = {}
    for item in doc["nodes"]:
        if isinstance(item, dict):
            if "id" not in item:
                raise ParseError(f"node object without id: {item!r}")
            v = _json_id(item["id"])
            name = str(item.get("name", v))
            kind = NodeKind.parse(item.get("kind", "Unknown"))
            if "cost" in item:
                cost[v] = item["cost"]
        else:
            v = _json_id(item)
            name, kind = str(v), NodeKind.UNKNOWN
        if v in meta:
            raise ValidationError("node ids unique within one graph", v)
        meta[v] = NodeMeta(name=name, kind=kind)

    edges = []
    for e in doc["edges"]:
        if not isinstance(e, list) or len(e) != 2:
            raise ParseError(f"edge must be a [src, dst] pair, got {e!r}")
        edges.append((_json_id(e[0]), _json_id(e[1])))

    benign_raw = doc.get("benign") or {}
    if not isinstance(benign_raw, dict):
        raise ParseError("'benign' must be an object")
    lookup = _key_resolver(meta)
    benign: dict[NodeId, dict[NodeId, float]] = {}
    for k, row in benign_raw.items():
        if not isinstance(row, dict):
            raise ParseError(f"benign row for {k!r} must be an object")
        v = lookup(k)
        benign[v] = {(DROP if kk == DROP else lookup(kk)): p for kk, p in row.items()}

    return InfoFlowGraph.create(
        meta,
        edges,
        [_json_id(v) for v in doc["entries"]],
        [_json_id(v) for v in doc["destinations"]],
        cost,
        benign,
    )


def _key_resolver(meta: Mapping[NodeId, NodeMeta]):
    by_str = {str(v): v for v in meta}

    def resolve(key: Any) -> NodeId:
        if key in meta:
            return key
        if str(key) in by_str:
            return by_str[str(key)]
        raise ValidationError("benign rows are keyed by graph nodes", key)

    return resolve


_TRUE = {"1", "true", "yes", "on"}


def _dot_id(raw: str) -> NodeId:
    s = raw.strip()
    if len(s) >= 2 and s[0] == s[-1] == '"':
        s = s[1:-1]
    try:
        return int(s)
    except ValueError:
        return s


def _dot_attr(attrs: Mapping[str, Any], key: str) -> str | None:
    if key not in attrs:
        return None
    val = str(attrs[key]).strip()
    if len(val) >= 2 and val[0] == val[-1] == '"':
        val = val[1:-1]
    return val


def _parse_dot(text: str) -> InfoFlowGraph:
    import pydot

    try:
        graphs = pydot.graph_from_dot_data(text)
    except Exception as exc:  # pydot raises assorted parser exceptions
        raise ParseError(f"malformed DOT: {exc}") from exc
    if not graphs:
        raise ParseError("no graph found in DOT input")
    dot = graphs[0]
    if dot.get_type() != "digraph":
        raise ParseError("DOT graph must be a digraph")

    meta: dict[NodeId, NodeMeta] = {}
    cost: dict[NodeId, float] = {}
    entries, dests = [], []
    for node in dot.get_nodes():
        name = node.get_name()
        if name in ("node", "edge", "graph"):
            continue
        v = _dot_id(name)
        attrs = node.get_attributes()
        label = _dot_attr(attrs, "name") or _dot_attr(attrs, "label") or str(v)
        kind = NodeKind.parse(_dot_attr(attrs, "kind") or "Unknown")
        raw_cost = _dot_attr(attrs, "cost")
        if raw_cost is not None:
            try:
                cost[v] = float(raw_cost)
            except ValueError as exc:
                raise ParseError(f"cost of node {v!r} is not a number") from exc
        if (_dot_attr(attrs, "entry") or "").lower() in _TRUE:
            entries.append(v)
        if (_dot_attr(attrs, "dest") or "").lower() in _TRUE:
            dests.append(v)
        meta[v] = NodeMeta(name=label, kind=kind)

    edges = []
    for edge in dot.get_edges():
        u, w = _dot_id(str(edge.get_source())), _dot_id(str(edge.get_destination()))
        for x in (u, w):
            meta.setdefault(x, NodeMeta(name=str(x)))
        edges.append((u, w))
    return InfoFlowGraph.create(meta, edges, entries, dests, cost)


def graph_to_dict(g: InfoFlowGraph) -> dict[str, Any]:
    return {
        "nodes": [
            {"id": v, "name": m.name, "kind": m.kind.value, "cost": g.cost[v]}
            for v, m in g.nodes.items()
        ],
        "edges": [[u, w] for u, w in g.sorted_edges()],
        "entries": sorted_nodes(g.entries),
        "destinations": sorted_nodes(g.destinations),
        "benign": {
            str(v): {str(k): p for k, p in row.items()} for v, row in g.benign.items()
        },
    }


def dump_ifg(g: InfoFlowGraph) -> str:
    """Canonical JSON text; ``parse_ifg(dump_ifg(g)) == g``."""
    return json.dumps(graph_to_dict(g), indent=2) + "\n"


# ---------------------------------------------------------------------------
# Transformations


def _restrict(
    g: InfoFlowGraph,
    keep: set[NodeId],
    edges: Iterable[tuple[NodeId, NodeId]],
) -> InfoFlowGraph:
    edges = [(u, w) for u, w in edges if u in keep and w in keep]
    kept_succ: dict[NodeId, set[NodeId]] = {v: set() for v in keep}
    for u, w in edges:
        kept_succ[u].add(w)
    benign = {}
    for v in keep:
        row = {}
        lost = 0.0
        for k, p in g.benign[v].items():
            if k == DROP or k in kept_succ[v]:
                row[k] = p
            else:
                lost += p
        # mass towards removed neighbors turns into dropping out
        row[DROP] = row.get(DROP, 0.0) + lost
        benign[v] = row
    return InfoFlowGraph.create(
        {v: g.nodes[v] for v in keep},
        edges,
        g.entries & keep,
        g.destinations & keep,
        {v: g.cost[v] for v in keep},
        benign,
    )


def prune_to_attack_subgraph(g: InfoFlowGraph) -> InfoFlowGraph:
    """Keep only nodes and edges lying on some entry-to-destination path.

    Benign probability mass that pointed at a removed neighbor is moved onto
    the drop-out outcome.
    """
    nxg = g.to_networkx()
    forward: set[NodeId] = set(g.entries)
    for v in g.entries:
        forward |= nx.descendants(nxg, v)
    backward: set[NodeId] = set(g.destinations)
    for v in g.destinations:
        backward |= nx.ancestors(nxg, v)
    keep = forward & backward
    if not (keep & g.entries) or not (keep & g.destinations):
        raise NoAttackPath("no entry point reaches any destination")
    edges = [(u, w) for u, w in g.sorted_edges() if u in forward and w in backward]
    return _restrict(g, keep, edges)


class AcyclicMode(enum.Enum):
    REJECT = "reject"
    VERSION = "version"


def find_cycle(g: InfoFlowGraph) -> list[NodeId] | None:
    nxg = g.to_networkx()
    try:
        cyc = nx.find_cycle(nxg, source=g.node_ids())
    except nx.NetworkXNoCycle:
        return None
    return [u for u, _ in cyc]


def ensure_acyclic(g: InfoFlowGraph, mode: AcyclicMode | str = AcyclicMode.REJECT) -> InfoFlowGraph:
    """Return ``g`` if it is a DAG; otherwise reject it or version its cycles.

    Versioning unrolls every strongly connected component ``C`` into ``|C|``
    layers.  Layer 1 keeps the original node ids; later layers are named
    ``"<id>#<layer>"``.  Inside a component, an edge that goes forward in a
    fixed DFS order stays within its layer and a backward edge moves one
    layer up, so any simple path through the component has a layered copy.
    """
    mode = AcyclicMode(mode)
    witness = find_cycle(g)
    if witness is None:
        return g
    if mode is AcyclicMode.REJECT:
        raise CyclicGraph(witness)
    return _version_cycles(g)


def _version_id(v: NodeId, layer: int) -> NodeId:
    return v if layer == 1 else f"{v}#{layer}"


def _version_cycles(g: InfoFlowGraph) -> InfoFlowGraph:
    nxg = g.to_networkx()
    comp_of: dict[NodeId, int] = {}
    layers: dict[NodeId, int] = {}
    order: dict[NodeId, int] = {}
    comps = sorted(
        (sorted_nodes(c) for c in nx.strongly_connected_components(nxg)),
        key=lambda c: node_key(c[0]),
    )
    for ci, comp in enumerate(comps):
        for v in comp:
            comp_of[v] = ci
        cyclic = len(comp) > 1 or nxg.has_edge(comp[0], comp[0])
        sub = nxg.subgraph(comp)
        pre = list(nx.dfs_preorder_nodes(sub, source=comp[0])) if cyclic else comp
        seen = set(pre)
        pre += [v for v in comp if v not in seen]
        for i, v in enumerate(pre):
            order[v] = i
            layers[v] = len(comp) if cyclic else 1

    meta: dict[NodeId, NodeMeta] = {}
    cost: dict[NodeId, float] = {}
    dests = []
    for v in g.node_ids():
        for j in range(1, layers[v] + 1):
            vid = _version_id(v, j)
            if j > 1 and vid in g.nodes:
                raise ValidationError("version ids do not collide with node ids", vid)
            name = g.nodes[v].name if j == 1 else f"{g.nodes[v].name}#{j}"
            meta[vid] = NodeMeta(name=name, kind=g.nodes[v].kind)
            cost[vid] = g.cost[v]
            if v in g.destinations:
                dests.append(vid)

    # target[(u_j, w)] = version of w reached from version j of u, if any
    target: dict[tuple[NodeId, NodeId], NodeId] = {}
    edges = []
    for u, w in g.sorted_edges():
        for j in range(1, layers[u] + 1):
            if comp_of[u] == comp_of[w] and layers[u] > 1:
                jj = j if order[u] < order[w] else j + 1
                if jj > layers[w]:
                    continue
            else:
                jj = 1
            tgt = _version_id(w, jj)
            edges.append((_version_id(u, j), tgt))
            target[(_version_id(u, j), w)] = tgt

    benign = {}
    for v in g.node_ids():
        for j in range(1, layers[v] + 1):
            vid = _version_id(v, j)
            row: dict[NodeId, float] = {}
            lost = 0.0
            for k, p in g.benign[v].items():
                if k == DROP:
                    row[DROP] = row.get(DROP, 0.0) + p
                elif (vid, k) in target:
                    row[target[(vid, k)]] = p
                else:
                    lost += p
            row[DROP] = row.get(DROP, 0.0) + lost
            benign[vid] = row

    return InfoFlowGraph.create(meta, edges, g.entries, dests, cost, benign)


def load_text(path: str | Path) -> str:
    return io.open(path, encoding="utf-8").read()
