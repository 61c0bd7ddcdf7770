from __future__ import annotations

import itertools
import random

import networkx as nx
import pytest
from hypothesis import strategies as st

from diftgame import data_path
from diftgame.errors import Disconnected, NoAttackPath, NoFeasibleCut
from diftgame.flownet import solve_min_cut
from diftgame.graph import InfoFlowGraph, load_ifg, prune_to_attack_subgraph


def random_dag(
    rng: random.Random, n_lo: int = 4, n_hi: int = 8, p: float = 0.4, digits: int = 3
) -> InfoFlowGraph:
    """A pruned random DAG that admits a node cut.

    Sources become entry points and sinks become destinations; draws with a
    direct entry-to-destination edge (no node cut exists) are redrawn.
    """
    while True:
        n = rng.randint(n_lo, n_hi)
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
        if not edges:
            continue
        heads = {w for _, w in edges}
        tails = {u for u, _ in edges}
        entries = {v for v in range(n) if v not in heads and v in tails}
        dests = {v for v in range(n) if v not in tails and v in heads}
        if not entries or not dests:
            continue
        cost = {v: round(rng.uniform(1, 10), digits) for v in range(n)}
        try:
            g = prune_to_attack_subgraph(InfoFlowGraph.create(range(n), edges, entries, dests, cost))
            solve_min_cut(g)
        except (NoAttackPath, NoFeasibleCut, Disconnected):
            continue
        return g


@st.composite
def dags(draw, n_lo: int = 4, n_hi: int = 8) -> InfoFlowGraph:
    seed = draw(st.integers(min_value=0, max_value=2**32 - 1))
    return random_dag(random.Random(seed), n_lo, n_hi)


def brute_force_min_cut(g: InfoFlowGraph) -> tuple[float, list[frozenset]]:
    """Minimum cost over analyzable node sets whose removal disconnects the graph.

    Returns the minimum and every subset attaining it.
    """
    cand = sorted(g.analyzable(), key=str)
    nxg = g.to_networkx()
    best, argbest = float("inf"), []
    for k in range(len(cand) + 1):
        for sub in itertools.combinations(cand, k):
            h = nxg.copy()
            h.remove_nodes_from(sub)
            if any(nx.has_path(h, s, t) for s in g.entries for t in g.destinations):
                continue
            c = sum(g.cost[v] for v in sub)
            if c < best - 1e-9:
                best, argbest = c, [frozenset(sub)]
            elif abs(c - best) <= 1e-9:
                argbest.append(frozenset(sub))
    return best, argbest


@pytest.fixture(scope="session")
def exfil() -> InfoFlowGraph:
    return load_ifg(data_path("exfil_pruned.json"))


@pytest.fixture(scope="session")
def diamond() -> InfoFlowGraph:
    return load_ifg(data_path("diamond.json"))


@pytest.fixture(scope="session")
def chain() -> InfoFlowGraph:
    return load_ifg(data_path("chain.json"))


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (ok, detail)
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
