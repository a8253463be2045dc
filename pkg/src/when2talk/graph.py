"""Conversation DAG over context utterances: temporal + same-speaker edges."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class ConvGraph:
    """Directed acyclic graph over turns 1..n; every edge runs earlier -> later."""

    n: int
    edges: frozenset  # of (src, dst) pairs, 1-based, src < dst
    in_adj: tuple  # in_adj[i-1] = sorted tuple of in-neighbors of node i


def build_graph(speakers: Sequence[str]) -> ConvGraph:
    """Temporal edges between adjacent turns plus edges from every earlier
    same-speaker turn (two or more turns back); deduplicated by construction."""
    m = len(speakers)
    if m < 1:
        raise ValueError("build_graph needs at least one turn")
    edges = set()
    for i in range(2, m + 1):
        edges.add((i - 1, i))
        for j in range(1, i - 1):
            if speakers[j - 1] == speakers[i - 1]:
                edges.add((j, i))
    in_adj = tuple(
        tuple(sorted(src for src, dst in edges if dst == i)) for i in range(1, m + 1)
    )
    return ConvGraph(n=m, edges=frozenset(edges), in_adj=in_adj)


def in_neighbors(g: ConvGraph, i: int) -> list[int]:
    if not 1 <= i <= g.n:
        raise IndexError(f"node {i} out of range for graph with {g.n} nodes")
    return list(g.in_adj[i - 1])


def validate_dag(g: ConvGraph) -> list[str]:
    """Return a list of violations; empty means the graph is consistent."""
    problems = []
    for src, dst in sorted(g.edges):
        if not (1 <= src <= g.n and 1 <= dst <= g.n):
            problems.append(f"edge ({src}->{dst}) references a node outside 1..{g.n}")
        if src >= dst:
            problems.append(f"edge ({src}->{dst}) does not run earlier->later")
    if len(g.in_adj) != g.n:
        problems.append(f"in_adj has {len(g.in_adj)} entries for {g.n} nodes")
    else:
        transpose = tuple(
            tuple(sorted(src for src, dst in g.edges if dst == i))
            for i in range(1, g.n + 1)
        )
        for i, (want, got) in enumerate(zip(transpose, g.in_adj), start=1):
            if want != got:
                problems.append(f"in_adj of node {i} is {got}, expected {want}")
    return problems


def graph_stats(transcripts) -> dict:
    """Per-conversation averages of turn count, edge count and mean degree."""
    count = len(transcripts)
    if count == 0:
        return {"count": 0, "avg_turns": 0.0, "avg_in_degree": 0.0,
                "avg_out_degree": 0.0, "avg_edges": 0.0}
    turns = edges = in_deg = out_deg = 0.0
    for t in transcripts:
        g = build_graph([u.speaker for u in t.turns])
        turns += g.n
        edges += len(g.edges)
        in_deg += len(g.edges) / g.n
        out_deg += len(g.edges) / g.n
    return {
        "count": count,
        "avg_turns": turns / count,
        "avg_in_degree": in_deg / count,
        "avg_out_degree": out_deg / count,
        "avg_edges": edges / count,
    }


def to_dot(g: ConvGraph) -> str:
    lines = ["digraph {"]
    for src, dst in sorted(g.edges):
        lines.append(f"  {src} -> {dst};")
    lines.append("}")
    return "\n".join(lines)
