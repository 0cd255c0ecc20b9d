"""Exchange-graph design: Steiner-family heuristics plus small-scale exact oracles.

Given the communication graph and the interference pattern, build one
exchange graph per component so that every agent that needs a component
holds a copy, all traffic stays on communication edges, and the requested
connectivity holds, while a soft efficiency objective (node count, edge
count, weight, load balance) is reduced heuristically.

Heuristics are the textbook approximations: metric-closure MST for
(unweighted) Steiner trees, shortest-path unions for rooted instances and
a hub arborescence pair for strongly connected instances.  Tie-breaking is
by smallest node id, then lexicographic edge order, so results are
deterministic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import networkx as nx

from .graphs import (
    Graph,
    GraphError,
    is_connected_undirected,
    is_rooted,
    is_strongly_connected,
    restrict,
)
from .layout import ConnectivityMode, EndLayout, LayoutError, Partition, standard_layout, weighted


class DesignInfeasible(ValueError):
    """Raised when a feasible exchange graph does not exist for some component."""

    def __init__(self, message: str, components: Sequence[int] = ()):
        super().__init__(message)
        self.components = tuple(components)


_OBJECTIVES = ("min_nodes", "min_edges", "min_weight", "balanced", "none")

_COMPATIBLE = {
    ("min_nodes", "rooted"),
    ("min_nodes", "strong"),
    ("min_nodes", "undirected"),
    ("min_edges", "rooted"),
    ("min_edges", "undirected"),
    ("min_weight", "undirected"),
    ("balanced", "undirected"),
}


@dataclass(frozen=True)
class DesignCriterion:
    """Connectivity requirement plus a soft efficiency objective.

    ``augment`` widens each solution to the communication graph restricted
    to the solution's node set (never breaks feasibility, never adds nodes).
    """

    connectivity: ConnectivityMode
    objective: str = "none"
    overrides: Mapping[int, str] = field(default_factory=dict)
    augment: bool = False
    balance_penalty: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "overrides", dict(self.overrides))
        for obj in (self.objective, *self.overrides.values()):
            if obj not in _OBJECTIVES:
                raise LayoutError(f"unknown objective {obj!r}")
            if obj != "none" and (obj, self.connectivity.kind) not in _COMPATIBLE:
                raise LayoutError(
                    f"objective {obj!r} incompatible with {self.connectivity.kind!r} connectivity"
                )

    def objective_for(self, p: int) -> str:
        return self.overrides.get(p, self.objective)


@dataclass(frozen=True)
class SteinerInstance:
    """A host graph, terminals to connect, and (for rooted variants) a root."""

    host: Graph
    terminals: frozenset[int]
    root: int | None = None
    weights: Mapping[tuple[int, int], float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "terminals", frozenset(self.terminals))
        if not self.terminals <= set(self.host.nodes):
            raise GraphError("terminals must be host nodes")
        if self.root is not None and self.root not in set(self.host.nodes):
            raise GraphError("root must be a host node")
        if self.weights is not None:
            object.__setattr__(self, "weights", dict(self.weights))


def _nx_undirected(g: Graph, weights=None) -> nx.Graph:
    h = nx.Graph()
    h.add_nodes_from(g.nodes)
    for u, v in sorted(g.edges):
        if u == v:
            continue
        w = 1.0
        if weights is not None:
            w = weights.get((u, v), weights.get((v, u), 1.0))
        h.add_edge(u, v, weight=w)
    return h


def _nx_directed(g: Graph) -> nx.DiGraph:
    h = nx.DiGraph()
    h.add_nodes_from(g.nodes)
    for u, v in sorted(g.edges):
        if u != v:
            h.add_edge(u, v)
    return h


def _prune_leaves(tree: nx.Graph, keep: set[int]) -> None:
    changed = True
    while changed:
        changed = False
        for v in sorted(tree.nodes):
            if v not in keep and tree.degree(v) <= 1:
                tree.remove_node(v)
                changed = True


def solve_st(inst: SteinerInstance) -> Graph:
    """Weighted Steiner tree 2-approximation (metric closure MST + expansion)."""
    return _steiner_tree(inst, weighted_cost=True)


def solve_ust(inst: SteinerInstance) -> Graph:
    """Unweighted Steiner tree: minimize edge count heuristically."""
    return _steiner_tree(inst, weighted_cost=False)


def _steiner_tree(inst: SteinerInstance, weighted_cost: bool) -> Graph:
    if inst.host.directed:
        raise GraphError("Steiner tree requires an undirected host")
    host = _nx_undirected(inst.host, inst.weights if weighted_cost else None)
    terminals = sorted(inst.terminals)
    if len(terminals) == 1:
        return Graph.undirected_graph(terminals, [])
    closure = nx.Graph()
    for a, b in itertools.combinations(terminals, 2):
        try:
            d = nx.shortest_path_length(host, a, b, weight="weight")
        except nx.NetworkXNoPath:
            raise DesignInfeasible(f"terminals {a} and {b} are not connected") from None
        closure.add_edge(a, b, weight=d)
    mst = nx.minimum_spanning_tree(closure, weight="weight")
    tree = nx.Graph()
    tree.add_nodes_from(terminals)
    for a, b in sorted(mst.edges()):
        path = nx.shortest_path(host, a, b, weight="weight")
        tree.add_edges_from(zip(path[:-1], path[1:]))
    _prune_leaves(tree, set(terminals))
    return Graph.undirected_graph(sorted(tree.nodes), sorted(tree.edges))


def solve_hub_tree(inst: SteinerInstance, hub: int | None = None) -> Graph:
    """Undirected shortest-path tree from a hub terminal; favors node-minimality.

    With every terminal adjacent to the hub this returns the star centered
    at the hub.
    """
    if inst.host.directed:
        raise GraphError("hub tree requires an undirected host")
    host = _nx_undirected(inst.host)
    terminals = sorted(inst.terminals)
    if hub is None:
        hub = terminals[0]
    tree = nx.Graph()
    tree.add_node(hub)
    for t in terminals:
        if t == hub:
            continue
        try:
            path = nx.shortest_path(host, hub, t)
        except nx.NetworkXNoPath:
            raise DesignInfeasible(f"terminal {t} not connected to hub {hub}") from None
        tree.add_edges_from(zip(path[:-1], path[1:]))
    _prune_leaves(tree, set(terminals) | {hub})
    return Graph.undirected_graph(sorted(tree.nodes), sorted(tree.edges))


def solve_udst(inst: SteinerInstance) -> Graph:
    """Rooted subgraph covering the terminals with few edges.

    Union of shortest root-to-terminal paths, then redundant-edge pruning.
    """
    if inst.root is None:
        raise GraphError("rooted Steiner instance needs a root")
    host = _nx_directed(inst.host)
    sub = nx.DiGraph()
    sub.add_node(inst.root)
    for t in sorted(inst.terminals):
        if t == inst.root:
            continue
        try:
            path = nx.shortest_path(host, inst.root, t)
        except nx.NetworkXNoPath:
            raise DesignInfeasible(
                f"terminal {t} unreachable from root {inst.root}", components=()
            ) from None
        sub.add_edges_from(zip(path[:-1], path[1:]))
    _prune_redundant_directed(sub, inst.root, set(inst.terminals))
    return Graph.directed_graph(sorted(sub.nodes), sorted(sub.edges))


def solve_dst(inst: SteinerInstance) -> Graph:
    """Weighted rooted variant: shortest paths use edge weights."""
    if inst.root is None:
        raise GraphError("rooted Steiner instance needs a root")
    host = _nx_directed(inst.host)
    if inst.weights:
        for (u, v), w in inst.weights.items():
            if host.has_edge(u, v):
                host[u][v]["weight"] = w
    sub = nx.DiGraph()
    sub.add_node(inst.root)
    for t in sorted(inst.terminals):
        if t == inst.root:
            continue
        try:
            path = nx.shortest_path(host, inst.root, t, weight="weight")
        except nx.NetworkXNoPath:
            raise DesignInfeasible(f"terminal {t} unreachable from root {inst.root}") from None
        sub.add_edges_from(zip(path[:-1], path[1:]))
    _prune_redundant_directed(sub, inst.root, set(inst.terminals))
    return Graph.directed_graph(sorted(sub.nodes), sorted(sub.edges))


def _prune_redundant_directed(sub: nx.DiGraph, root: int, terminals: set[int]) -> None:
    for edge in sorted(sub.edges):
        sub.remove_edge(*edge)
        reach = {root} | nx.descendants(sub, root)
        if terminals <= reach:
            for v in [n for n in sub.nodes if n not in reach]:
                sub.remove_node(v)
        else:
            sub.add_edge(*edge)


def solve_scss(inst: SteinerInstance) -> Graph:
    """Strongly connected subgraph through the terminals, few nodes.

    Hub heuristic: union of shortest hub-to-terminal and terminal-to-hub
    paths; strongly connected by construction.
    """
    host = _nx_directed(inst.host)
    terminals = sorted(inst.terminals)
    hub = inst.root if inst.root is not None else terminals[0]
    sub = nx.DiGraph()
    sub.add_node(hub)
    for t in terminals:
        if t == hub:
            continue
        try:
            out_path = nx.shortest_path(host, hub, t)
            in_path = nx.shortest_path(host, t, hub)
        except nx.NetworkXNoPath:
            raise DesignInfeasible(
                f"terminal {t} not in the hub's strong reachability class"
            ) from None
        sub.add_edges_from(zip(out_path[:-1], out_path[1:]))
        sub.add_edges_from(zip(in_path[:-1], in_path[1:]))
    for edge in sorted(sub.edges):
        sub.remove_edge(*edge)
        if not nx.is_strongly_connected(sub):
            sub.add_edge(*edge)
    return Graph.directed_graph(sorted(sub.nodes), sorted(sub.edges))


# -- exact oracles (exponential; desk scale only) --------------------------


def exact_steiner_cost(g: Graph, terminals: Iterable[int], weights=None) -> float:
    """Optimal undirected Steiner cost by subset enumeration + MST."""
    terminals = set(terminals)
    host = _nx_undirected(g, weights)
    others = [v for v in g.nodes if v not in terminals]
    best = float("inf")
    for r in range(len(others) + 1):
        for extra in itertools.combinations(others, r):
            nodes = terminals | set(extra)
            sub = host.subgraph(nodes)
            if len(nodes) > 0 and nx.is_connected(sub):
                cost = sum(
                    d["weight"] for _, _, d in nx.minimum_spanning_tree(sub).edges(data=True)
                )
                best = min(best, cost)
    return best


def exact_min_rooted_nodes(g: Graph, root: int, terminals: Iterable[int]) -> int:
    """Minimal node count of a rooted subgraph covering the terminals."""
    required = set(terminals) | {root}
    others = [v for v in g.nodes if v not in required]
    for r in range(len(others) + 1):
        for extra in itertools.combinations(others, r):
            nodes = required | set(extra)
            if is_rooted(restrict(g, nodes), root):
                return len(nodes)
    raise DesignInfeasible("no rooted subgraph covers the terminals")


def exact_min_scss_nodes(g: Graph, terminals: Iterable[int]) -> int:
    """Minimal node count of a strongly connected subgraph covering the terminals."""
    required = set(terminals)
    others = [v for v in g.nodes if v not in required]
    for r in range(len(others) + 1):
        for extra in itertools.combinations(others, r):
            nodes = required | set(extra)
            if is_strongly_connected(restrict(g, nodes)):
                return len(nodes)
    raise DesignInfeasible("no strongly connected subgraph covers the terminals")


# -- layout construction ---------------------------------------------------


def _default_scheme(mode: ConnectivityMode) -> str:
    return {"undirected": "metropolis", "rooted": "row", "strong": "column"}[mode.kind]


def design_layout(
    comm: Graph,
    interference: Iterable[tuple[int, int]],
    partition: Partition,
    criterion: DesignCriterion,
    weight_scheme: str | None = None,
) -> EndLayout:
    """Build a layout meeting the criterion, one component at a time.

    With objective ``none`` this returns the standard sparsity-unaware
    layout (full estimate assignment, exchange graphs equal to the
    communication graph).
    """
    interference = frozenset(interference)
    scheme = weight_scheme or _default_scheme(criterion.connectivity)
    mode = criterion.connectivity
    if all(criterion.objective_for(p) == "none" for p in partition.components):
        return standard_layout(comm, interference, partition, weight_scheme=scheme)

    loads: dict[int, int] = {v: 0 for v in comm.nodes}
    design = {}
    failures: list[int] = []
    messages: list[str] = []
    for p in partition.components:
        terminals = frozenset(i for (q, i) in interference if q == p)
        if not terminals:
            failures.append(p)
            messages.append(f"component {p}: no agent needs it")
            continue
        try:
            sub = _solve_component(comm, p, terminals, criterion, loads)
        except DesignInfeasible as exc:
            failures.append(p)
            messages.append(f"component {p}: {exc}")
            continue
        if criterion.augment:
            sub = restrict(
                comm if mode.kind != "undirected" else comm.undirected_closure(), sub.nodes
            )
        for v in sub.nodes:
            loads[v] += 1
        design[p] = weighted(sub, scheme)
    if failures:
        raise DesignInfeasible("; ".join(messages), components=failures)
    layout = EndLayout(
        agents=comm.nodes,
        partition=partition,
        comm=comm,
        interference=interference,
        design=design,
    )
    leftovers = layout.validate(mode)
    if leftovers:
        raise DesignInfeasible("; ".join(leftovers))
    return layout


def _solve_component(
    comm: Graph,
    p: int,
    terminals: frozenset[int],
    criterion: DesignCriterion,
    loads: Mapping[int, int],
) -> Graph:
    mode = criterion.connectivity
    objective = criterion.objective_for(p)
    if objective == "none":
        return comm
    host = comm.undirected_closure() if mode.kind == "undirected" and comm.directed else comm
    if mode.kind == "rooted":
        root = mode.roots.get(p)
        if root is None:
            raise DesignInfeasible("no root specified")
        return solve_udst(SteinerInstance(host, terminals | {root}, root=root))
    if mode.kind == "strong":
        hub = p if p in terminals else None
        return solve_scss(SteinerInstance(host, terminals, root=hub))
    # undirected
    if objective == "min_nodes":
        hub = p if p in terminals else min(terminals)
        return solve_hub_tree(SteinerInstance(host, terminals), hub=hub)
    if objective == "min_edges":
        return solve_ust(SteinerInstance(host, terminals))
    if objective == "min_weight":
        return solve_st(SteinerInstance(host, terminals))
    # balanced: Steiner tree with load-inflated edge weights
    w = {
        (u, v): 1.0 + criterion.balance_penalty * (loads[u] + loads[v]) / 2.0
        for (u, v) in host.edges
    }
    return solve_st(SteinerInstance(host, terminals, weights=w))


def try_minimal_layout(
    comm: Graph,
    interference: Iterable[tuple[int, int]],
    partition: Partition,
    mode: ConnectivityMode,
    weight_scheme: str | None = None,
) -> tuple[EndLayout | None, list[str]]:
    """Attempt the estimate-graph-equals-interference-graph choice.

    Each exchange graph is the communication graph restricted to the agents
    that need the component; succeeds iff every restriction satisfies the
    requested connectivity.
    """
    interference = frozenset(interference)
    scheme = weight_scheme or _default_scheme(mode)
    design = {}
    for p in partition.components:
        needers = {i for (q, i) in interference if q == p}
        if not needers:
            return None, [f"component {p}: no agent needs it"]
        sub = restrict(comm if mode.kind != "undirected" else comm.undirected_closure(), needers)
        design[p] = weighted(sub, scheme)
    layout = EndLayout(
        agents=comm.nodes,
        partition=partition,
        comm=comm,
        interference=interference,
        design=design,
    )
    violations = layout.validate(mode)
    if violations:
        return None, violations
    return layout, []
