"""Directed/undirected weighted graph primitives.

Edge convention used everywhere in this package: a stored edge ``(u, v)``
means "v can receive from u".  Consequently a weight matrix W compliant
with a graph has ``W[v, u] > 0`` iff ``(u, v)`` is an edge, i.e. rows are
indexed by the receiver and columns by the sender.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


class GraphError(ValueError):
    """Raised on malformed graph data or precondition violations."""


@dataclass(frozen=True)
class Graph:
    """An immutable graph over dense integer node ids.

    Edges are ordered pairs ``(u, v)`` meaning v receives from u.  For an
    undirected graph the edge set is stored symmetrically (both directions
    present).
    """

    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int]]
    directed: bool = True

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(set(self.nodes))))
        object.__setattr__(self, "edges", frozenset(self.edges))
        if not self.nodes:
            raise GraphError("graph needs at least one node")
        node_set = set(self.nodes)
        for u, v in self.edges:
            if u not in node_set or v not in node_set:
                raise GraphError(f"edge ({u},{v}) references an undeclared node")
        if not self.directed:
            for u, v in self.edges:
                if (v, u) not in self.edges:
                    raise GraphError(
                        f"undirected graph is missing the reverse of ({u},{v})"
                    )

    @classmethod
    def directed_graph(cls, nodes: Iterable[int], edges: Iterable[tuple[int, int]]) -> "Graph":
        return cls(tuple(nodes), frozenset(tuple(e) for e in edges), directed=True)

    @classmethod
    def undirected_graph(cls, nodes: Iterable[int], edges: Iterable[tuple[int, int]]) -> "Graph":
        """Build an undirected graph, symmetrizing the given edge list."""
        sym = set()
        for u, v in edges:
            sym.add((u, v))
            sym.add((v, u))
        return cls(tuple(nodes), frozenset(sym), directed=False)

    @classmethod
    def complete(cls, nodes: Iterable[int], self_loops: bool = False) -> "Graph":
        ns = tuple(sorted(set(nodes)))
        edges = {(u, v) for u in ns for v in ns if self_loops or u != v}
        return cls(ns, frozenset(edges), directed=False)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def index(self, v: int) -> int:
        """Position of v in the ascending node ordering."""
        try:
            return self.nodes.index(v)
        except ValueError:
            raise GraphError(f"unknown node id {v}") from None

    def in_neighbors(self, v: int) -> tuple[int, ...]:
        if v not in set(self.nodes):
            raise GraphError(f"unknown node id {v}")
        return tuple(sorted(u for (u, w) in self.edges if w == v))

    def out_neighbors(self, v: int) -> tuple[int, ...]:
        if v not in set(self.nodes):
            raise GraphError(f"unknown node id {v}")
        return tuple(sorted(w for (u, w) in self.edges if u == v))

    def has_edge(self, u: int, v: int) -> bool:
        return (u, v) in self.edges

    def adjacency(self) -> np.ndarray:
        """0/1 adjacency matrix A with A[recv, send] = 1 iff (send, recv) is an edge."""
        n = self.num_nodes
        pos = {v: k for k, v in enumerate(self.nodes)}
        a = np.zeros((n, n))
        for u, v in self.edges:
            a[pos[v], pos[u]] = 1.0
        return a

    def with_self_loops(self) -> "Graph":
        loops = {(v, v) for v in self.nodes}
        return Graph(self.nodes, self.edges | loops, directed=self.directed)

    def undirected_closure(self) -> "Graph":
        """Symmetrized copy (used when a symmetric view of a digraph is needed)."""
        sym = set(self.edges) | {(v, u) for (u, v) in self.edges}
        return Graph(self.nodes, frozenset(sym), directed=False)

    def to_json_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": sorted([u, v] for (u, v) in self.edges),
            "directed": self.directed,
        }

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "Graph":
        return cls(
            tuple(d["nodes"]),
            frozenset((u, v) for u, v in d["edges"]),
            directed=bool(d.get("directed", True)),
        )

    def to_dot(self) -> str:
        """Graphviz export for quick visual inspection."""
        if self.directed:
            lines = ["digraph G {"]
            arrow = "->"
            edges = sorted(self.edges)
        else:
            lines = ["graph G {"]
            arrow = "--"
            edges = sorted({(min(u, v), max(u, v)) for u, v in self.edges})
        for v in self.nodes:
            lines.append(f"  {v};")
        for u, v in edges:
            lines.append(f"  {u} {arrow} {v};")
        lines.append("}")
        return "\n".join(lines)


@dataclass(frozen=True)
class WeightedGraph:
    """A graph together with compliant positive edge weights.

    ``weights`` is keyed (receiver, sender); an entry must exist exactly for
    the stored edges (sender, receiver).
    """

    graph: Graph
    weights: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "weights", dict(self.weights))
        for (recv, send), w in self.weights.items():
            if (send, recv) not in self.graph.edges:
                raise GraphError(f"weight for ({recv},{send}) has no matching edge")
            if w <= 0:
                raise GraphError(f"weight for ({recv},{send}) must be positive")
        for send, recv in self.graph.edges:
            if (recv, send) not in self.weights:
                raise GraphError(f"edge ({send},{recv}) is missing a weight")

    @property
    def nodes(self) -> tuple[int, ...]:
        return self.graph.nodes

    def weight(self, recv: int, send: int) -> float:
        return self.weights.get((recv, send), 0.0)

    def matrix(self) -> np.ndarray:
        """Dense weight matrix W with W[recv, send] ordering by ascending node id."""
        n = self.graph.num_nodes
        pos = {v: k for k, v in enumerate(self.graph.nodes)}
        w = np.zeros((n, n))
        for (recv, send), val in self.weights.items():
            w[pos[recv], pos[send]] = val
        return w

    @classmethod
    def from_matrix(cls, graph: Graph, w: np.ndarray) -> "WeightedGraph":
        pos = graph.nodes
        weights = {}
        for i, recv in enumerate(pos):
            for j, send in enumerate(pos):
                if w[i, j] != 0.0:
                    weights[(recv, send)] = float(w[i, j])
        edges = frozenset((send, recv) for (recv, send) in weights)
        return cls(Graph(graph.nodes, edges, directed=graph.directed), weights)

    def to_json_dict(self) -> dict:
        d = self.graph.to_json_dict()
        d["weights"] = {f"{r},{s}": w for (r, s), w in sorted(self.weights.items())}
        return d

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "WeightedGraph":
        g = Graph.from_json_dict(d)
        weights = {}
        for key, w in d.get("weights", {}).items():
            r, s = key.split(",")
            weights[(int(r), int(s))] = float(w)
        return cls(g, weights)


@dataclass(frozen=True)
class GraphSequence:
    """A finite sequence of graph snapshots over a fixed node set."""

    snapshots: tuple[Graph, ...]

    def __post_init__(self):
        object.__setattr__(self, "snapshots", tuple(self.snapshots))
        if not self.snapshots:
            raise GraphError("empty graph sequence")
        nodes = self.snapshots[0].nodes
        for g in self.snapshots:
            if g.nodes != nodes:
                raise GraphError("all snapshots must share the node set")

    def __len__(self) -> int:
        return len(self.snapshots)

    def __getitem__(self, k: int) -> Graph:
        return self.snapshots[k]

    def union(self, start: int, stop: int) -> Graph:
        """Edge union of snapshots in [start, stop)."""
        edges: set[tuple[int, int]] = set()
        for g in self.snapshots[start:stop]:
            edges |= g.edges
        return Graph(self.snapshots[0].nodes, frozenset(edges), directed=True)


def laplacian(wg: WeightedGraph) -> np.ndarray:
    """In-degree Laplacian L = D - W, so that L @ 1 = 0."""
    w = wg.matrix()
    return np.diag(w.sum(axis=1)) - w


def is_rooted(g: Graph, r: int) -> bool:
    """True iff every node is reachable from r along directed edges."""
    if r not in set(g.nodes):
        raise GraphError(f"unknown node id {r}")
    seen = {r}
    frontier = [r]
    succ: dict[int, list[int]] = {v: [] for v in g.nodes}
    for u, v in g.edges:
        succ[u].append(v)
    while frontier:
        u = frontier.pop()
        for v in succ[u]:
            if v not in seen:
                seen.add(v)
                frontier.append(v)
    return len(seen) == g.num_nodes


def is_strongly_connected(g: Graph) -> bool:
    if g.num_nodes == 1:
        return True
    if not is_rooted(g, g.nodes[0]):
        return False
    reverse = Graph(g.nodes, frozenset((v, u) for (u, v) in g.edges), directed=True)
    return is_rooted(reverse, g.nodes[0])


def is_connected_undirected(g: Graph) -> bool:
    if g.directed:
        raise GraphError("connectivity check for undirected graphs only")
    return is_rooted(g, g.nodes[0])


def is_q_strongly_connected(seq: GraphSequence, q: int) -> bool:
    """Check Q-strong connectivity over the provided finite horizon.

    Every complete window [kQ, (k+1)Q) within the horizon must have a
    strongly connected edge union.
    """
    if q < 1:
        raise GraphError("Q must be >= 1")
    if len(seq) < q:
        raise GraphError("horizon shorter than Q")
    k = 0
    while (k + 1) * q <= len(seq):
        if not is_strongly_connected(seq.union(k * q, (k + 1) * q)):
            return False
        k += 1
    return True


def restrict(g: Graph, nodes: Iterable[int]) -> Graph:
    """Restriction of g to a node subset: keep edges with both endpoints inside."""
    keep = set(nodes) & set(g.nodes)
    if not keep:
        raise GraphError("restriction to an empty node set")
    edges = frozenset((u, v) for (u, v) in g.edges if u in keep and v in keep)
    return Graph(tuple(sorted(keep)), edges, directed=g.directed)


def intersect(a: Graph, b: Graph) -> Graph:
    """Edge intersection on a's node set (nodes kept even if isolated)."""
    edges = frozenset(e for e in a.edges if e in b.edges)
    return Graph(a.nodes, edges, directed=True)


def metropolis_hastings_weights(g: Graph) -> WeightedGraph:
    """Symmetric doubly stochastic weights w_ij = 1 / (1 + max(deg_i, deg_j)).

    Requires an undirected graph; self-loops get the complementary mass.
    """
    if g.directed:
        raise GraphError("Metropolis-Hastings weights require an undirected graph")
    deg = {v: len([u for u in g.in_neighbors(v) if u != v]) for v in g.nodes}
    w = {}
    for v in g.nodes:
        off = 0.0
        for u in g.in_neighbors(v):
            if u == v:
                continue
            w[(v, u)] = 1.0 / (1.0 + max(deg[v], deg[u]))
            off += w[(v, u)]
        w[(v, v)] = 1.0 - off
    return WeightedGraph(g.with_self_loops(), w)


def row_stochastic_weights(g: Graph) -> WeightedGraph:
    """Uniform row-stochastic weights over in-neighborhoods (self-loops added)."""
    gl = g.with_self_loops()
    w = {}
    for v in gl.nodes:
        nbrs = gl.in_neighbors(v)
        for u in nbrs:
            w[(v, u)] = 1.0 / len(nbrs)
    return WeightedGraph(gl, w)


def column_stochastic_weights(g: Graph) -> WeightedGraph:
    """Uniform column-stochastic weights over out-neighborhoods (self-loops added)."""
    gl = g.with_self_loops()
    w = {}
    for u in gl.nodes:
        outs = gl.out_neighbors(u)
        for v in outs:
            w[(v, u)] = 1.0 / len(outs)
    return WeightedGraph(gl, w)


def uniform_weights(g: Graph) -> WeightedGraph:
    """Unit weight on every edge."""
    return WeightedGraph(g, {(v, u): 1.0 for (u, v) in g.edges})


def graph_to_json(g: Graph | WeightedGraph) -> str:
    return json.dumps(g.to_json_dict(), indent=2, sort_keys=True)


def graph_from_json(text: str) -> Graph | WeightedGraph:
    d = json.loads(text)
    if "weights" in d:
        return WeightedGraph.from_json_dict(d)
    return Graph.from_json_dict(d)
