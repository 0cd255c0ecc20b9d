"""Estimate-exchange layouts: partition, graph layers, stacked operators.

A layout bundles a variable partition, the communication graph, the
interference pattern (which agents indispensably need which components)
and one weighted exchange graph per component.  The estimate assignment
is derived from the exchange graphs: agent i holds a copy of component p
iff i is a node of the p-th exchange graph.

Stacked vectors are stored variable-major: for each component p in
ascending order, the copies held by agents in ascending id order, each a
block of the component's dimension.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .graphs import (
    Graph,
    GraphError,
    WeightedGraph,
    column_stochastic_weights,
    is_connected_undirected,
    is_rooted,
    is_strongly_connected,
    laplacian,
    metropolis_hastings_weights,
    row_stochastic_weights,
    uniform_weights,
)


class LayoutError(ValueError):
    """Raised on malformed layouts or dimension mismatches."""


@dataclass(frozen=True)
class Partition:
    """Block sizes of the variable of interest; components are numbered 1..P."""

    dims: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if not self.dims or any(d < 1 for d in self.dims):
            raise LayoutError("partition dims must be positive")

    @property
    def num_components(self) -> int:
        return len(self.dims)

    @property
    def components(self) -> range:
        return range(1, len(self.dims) + 1)

    def dim(self, p: int) -> int:
        return self.dims[p - 1]

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    def component_slice(self, p: int) -> slice:
        """Slice of component p inside a flat vector of the full variable."""
        start = sum(self.dims[: p - 1])
        return slice(start, start + self.dims[p - 1])


@dataclass(frozen=True)
class ConnectivityMode:
    """Which connectedness variant the exchange graphs must satisfy."""

    kind: str  # "rooted" | "strong" | "undirected"
    roots: Mapping[int, int] | None = None

    def __post_init__(self):
        if self.kind not in ("rooted", "strong", "undirected"):
            raise LayoutError(f"unknown connectivity kind {self.kind!r}")
        if self.kind == "rooted" and self.roots is None:
            raise LayoutError("rooted mode needs a roots map")
        if self.roots is not None:
            object.__setattr__(self, "roots", dict(self.roots))

    @classmethod
    def rooted(cls, roots: Mapping[int, int]) -> "ConnectivityMode":
        return cls("rooted", roots)

    @classmethod
    def strongly_connected(cls) -> "ConnectivityMode":
        return cls("strong")

    @classmethod
    def undirected_connected(cls) -> "ConnectivityMode":
        return cls("undirected")


def weighted(g: Graph, scheme: str) -> WeightedGraph:
    """Assign weights to a graph by scheme name."""
    if scheme == "metropolis":
        return metropolis_hastings_weights(g)
    if scheme == "row":
        return row_stochastic_weights(g)
    if scheme == "column":
        return column_stochastic_weights(g)
    if scheme == "uniform":
        return uniform_weights(g)
    raise LayoutError(f"unknown weight scheme {scheme!r}")


@dataclass(frozen=True)
class EndLayout:
    """Partition + communication/interference layers + per-component exchange graphs."""

    agents: tuple[int, ...]
    partition: Partition
    comm: Graph
    interference: frozenset[tuple[int, int]]  # (component p, agent i)
    design: Mapping[int, WeightedGraph]  # p -> weighted exchange graph on holders

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(sorted(set(self.agents))))
        object.__setattr__(self, "interference", frozenset(self.interference))
        object.__setattr__(self, "design", dict(self.design))
        if set(self.design.keys()) != set(self.partition.components):
            raise LayoutError("design graphs must cover exactly components 1..P")

    # -- derived structure ------------------------------------------------

    def holders(self, p: int) -> tuple[int, ...]:
        """Agents keeping a copy of component p, ascending."""
        return self.design[p].graph.nodes

    def copies(self, p: int) -> int:
        return len(self.holders(p))

    def needers(self, p: int) -> tuple[int, ...]:
        """Agents for which component p is indispensable."""
        return tuple(sorted(i for (q, i) in self.interference if q == p))

    def held_by(self, i: int) -> tuple[int, ...]:
        """Components agent i keeps a copy of, ascending."""
        return tuple(p for p in self.partition.components if i in self.design[p].graph.nodes)

    def needed_by(self, i: int) -> tuple[int, ...]:
        return tuple(sorted(p for (p, j) in self.interference if j == i))

    @property
    def estimate_edges(self) -> frozenset[tuple[int, int]]:
        return frozenset((p, i) for p in self.partition.components for i in self.holders(p))

    @cached_property
    def stacked_dim(self) -> int:
        return sum(self.copies(p) * self.partition.dim(p) for p in self.partition.components)

    @cached_property
    def _offsets(self) -> dict[tuple[int, int], int]:
        off: dict[tuple[int, int], int] = {}
        cur = 0
        for p in self.partition.components:
            n_p = self.partition.dim(p)
            for i in self.holders(p):
                off[(p, i)] = cur
                cur += n_p
        return off

    def block_slice(self, p: int, i: int) -> slice:
        """Slice of agent i's copy of component p in a stacked vector."""
        try:
            start = self._offsets[(p, i)]
        except KeyError:
            raise LayoutError(f"agent {i} holds no copy of component {p}") from None
        return slice(start, start + self.partition.dim(p))

    def component_slice(self, p: int) -> slice:
        start = self._offsets[(p, self.holders(p)[0])]
        return slice(start, start + self.copies(p) * self.partition.dim(p))

    @cached_property
    def _weight_blocks(self) -> dict[int, np.ndarray]:
        return {p: self.design[p].matrix() for p in self.partition.components}

    @cached_property
    def _laplacian_blocks(self) -> dict[int, np.ndarray]:
        return {p: laplacian(self.design[p]) for p in self.partition.components}

    # -- permutation between variable-major and agent-major orderings -----

    @cached_property
    def agent_major_permutation(self) -> np.ndarray:
        """Index array perm with tilde = hat[perm]."""
        idx: list[np.ndarray] = []
        for i in self.agents:
            for p in self.held_by(i):
                s = self.block_slice(p, i)
                idx.append(np.arange(s.start, s.stop))
        if not idx:
            return np.zeros(0, dtype=int)
        perm = np.concatenate(idx)
        if perm.size != self.stacked_dim:
            raise LayoutError("permutation does not cover the stacked vector")
        return perm

    def permute_to_agent_major(self, hat: np.ndarray) -> np.ndarray:
        return np.asarray(hat)[self.agent_major_permutation]

    def permute_to_variable_major(self, tilde: np.ndarray) -> np.ndarray:
        out = np.empty_like(np.asarray(tilde))
        out[self.agent_major_permutation] = tilde
        return out

    def agent_slice_in_agent_major(self, i: int) -> slice:
        """Slice of agent i's held blocks inside the agent-major vector."""
        start = 0
        for j in self.agents:
            width = sum(self.partition.dim(p) for p in self.held_by(j))
            if j == i:
                return slice(start, start + width)
            start += width
        raise LayoutError(f"unknown agent {i}")

    # -- stacked linear operators -----------------------------------------

    def apply_weight(self, hat: np.ndarray) -> np.ndarray:
        """Block-diagonal application of (W_p kron I) per component."""
        return self._apply_blocks(hat, self._weight_blocks)

    def apply_laplacian(self, hat: np.ndarray) -> np.ndarray:
        return self._apply_blocks(hat, self._laplacian_blocks)

    def _apply_blocks(self, hat: np.ndarray, blocks: Mapping[int, np.ndarray]) -> np.ndarray:
        hat = np.asarray(hat, dtype=float)
        if hat.shape != (self.stacked_dim,):
            raise LayoutError(
                f"stacked vector has length {hat.shape}, expected ({self.stacked_dim},)"
            )
        out = np.empty_like(hat)
        for p in self.partition.components:
            s = self.component_slice(p)
            n_p = self.partition.dim(p)
            block = hat[s].reshape(self.copies(p), n_p)
            out[s] = (blocks[p] @ block).ravel()
        return out

    def weight_matrix(self) -> sp.csr_matrix:
        """Materialized sparse stacked weight operator (for tests/analysis)."""
        return self._materialize(self._weight_blocks)

    def laplacian_matrix(self) -> sp.csr_matrix:
        return self._materialize(self._laplacian_blocks)

    def _materialize(self, blocks: Mapping[int, np.ndarray]) -> sp.csr_matrix:
        parts = [
            sp.kron(sp.csr_matrix(blocks[p]), sp.identity(self.partition.dim(p)))
            for p in self.partition.components
        ]
        return sp.block_diag(parts, format="csr")

    # -- consensus structure ----------------------------------------------

    def consensus_projection(self, hat: np.ndarray) -> np.ndarray:
        """Replace every copy by the per-component arithmetic mean."""
        hat = np.asarray(hat, dtype=float)
        out = np.empty_like(hat)
        for p in self.partition.components:
            s = self.component_slice(p)
            n_p = self.partition.dim(p)
            block = hat[s].reshape(self.copies(p), n_p)
            out[s] = np.broadcast_to(block.mean(axis=0), block.shape).ravel()
        return out

    @cached_property
    def _consensus_matrix(self) -> sp.csr_matrix:
        parts = [
            sp.kron(
                sp.csr_matrix(np.full((self.copies(p), self.copies(p)), 1.0 / self.copies(p))),
                sp.identity(self.partition.dim(p)),
            )
            for p in self.partition.components
        ]
        return sp.block_diag(parts, format="csr")

    def consensus_matrix(self) -> sp.csr_matrix:
        """Sparse projector onto the consensus space (per-component averaging)."""
        return self._consensus_matrix

    def disagreement(self, hat: np.ndarray) -> np.ndarray:
        return np.asarray(hat, dtype=float) - self.consensus_projection(hat)

    def embed_consensus(self, y: np.ndarray) -> np.ndarray:
        """Copy each component of a full variable to all of its holders."""
        y = np.asarray(y, dtype=float)
        if y.shape != (self.partition.total_dim,):
            raise LayoutError(
                f"variable has length {y.shape}, expected ({self.partition.total_dim},)"
            )
        out = np.empty(self.stacked_dim)
        for p in self.partition.components:
            s = self.component_slice(p)
            out[s] = np.tile(y[self.partition.component_slice(p)], self.copies(p))
        return out

    def component_means(self, hat: np.ndarray) -> np.ndarray:
        """Full-variable vector of per-component means of the copies."""
        hat = np.asarray(hat, dtype=float)
        out = np.empty(self.partition.total_dim)
        for p in self.partition.components:
            s = self.component_slice(p)
            n_p = self.partition.dim(p)
            out[self.partition.component_slice(p)] = (
                hat[s].reshape(self.copies(p), n_p).mean(axis=0)
            )
        return out

    # -- validity ----------------------------------------------------------

    def validate(self, mode: ConnectivityMode) -> list[str]:
        """Consistency and connectivity checks; returns violations (empty = valid)."""
        violations: list[str] = []
        agent_set = set(self.agents)
        comp_set = set(self.partition.components)
        for p, i in self.interference:
            if p not in comp_set:
                violations.append(f"interference references unknown component {p}")
            elif i not in agent_set:
                violations.append(f"interference references unknown agent {i}")
            elif i not in self.design[p].graph.nodes:
                violations.append(
                    f"interference not covered: agent {i} needs component {p} but holds no copy"
                )
        for p in self.partition.components:
            if not self.needers(p):
                violations.append(f"component {p} is indispensable for no agent")
            g = self.design[p].graph
            if not set(g.nodes) <= agent_set:
                violations.append(f"exchange graph {p} has non-agent nodes")
            for u, v in g.edges:
                if u != v and (u, v) not in self.comm.edges:
                    violations.append(
                        f"exchange graph {p} edge ({u},{v}) is not a communication edge"
                    )
            violations.extend(self._connectivity_violation(p, mode))
        return violations

    def _connectivity_violation(self, p: int, mode: ConnectivityMode) -> list[str]:
        g = self.design[p].graph
        if mode.kind == "rooted":
            root = mode.roots.get(p)
            if root is None:
                return [f"component {p}: no root specified"]
            if root not in g.nodes:
                return [f"component {p}: root {root} holds no copy"]
            if not is_rooted(g, root):
                return [f"component {p}: exchange graph not rooted at {root}"]
        elif mode.kind == "strong":
            if not is_strongly_connected(g):
                return [f"component {p}: exchange graph not strongly connected"]
        else:
            if g.directed:
                return [f"component {p}: exchange graph is directed, undirected required"]
            if not is_connected_undirected(g):
                return [f"component {p}: exchange graph not connected"]
        return []

    # -- lemma-level runtime checks ---------------------------------------

    def verify_null_space_is_consensus(self, roots: Mapping[int, int]) -> bool:
        """Rooted exchange graphs: null(stacked Laplacian) equals the consensus space."""
        for p in self.partition.components:
            if not is_rooted(self.design[p].graph, roots[p]):
                raise LayoutError(f"component {p} not rooted at {roots[p]}")
        lap = self.laplacian_matrix().toarray()
        rank = np.linalg.matrix_rank(lap, tol=1e-9)
        if rank != self.stacked_dim - self.partition.total_dim:
            return False
        basis = np.eye(self.partition.total_dim)
        for col in basis:
            if np.linalg.norm(lap @ self.embed_consensus(col)) > 1e-9:
                return False
        return True

    def verify_disagreement_bound(
        self, num_samples: int = 32, seed: int = 0
    ) -> tuple[bool, float]:
        """Strongly connected balanced case: <y, L y> >= (lam/2) ||disagreement||^2.

        Returns (holds on a random batch, lam) with lam the minimum over
        components with at least two copies of the second-smallest eigenvalue
        of L + L^T; components with a single copy are skipped (their
        disagreement is identically zero).
        """
        lam = np.inf
        for p in self.partition.components:
            g = self.design[p]
            if not is_strongly_connected(g.graph):
                raise LayoutError(f"component {p} not strongly connected")
            w = g.matrix()
            if np.linalg.norm(w.sum(axis=0) - w.sum(axis=1)) > 1e-10:
                raise LayoutError(f"component {p} weights are not balanced")
            if self.copies(p) < 2:
                continue
            lp = self._laplacian_blocks[p]
            eigs = np.linalg.eigvalsh(lp + lp.T)
            lam = min(lam, eigs[1])
        rng = np.random.default_rng(seed)
        for _ in range(num_samples):
            v = rng.standard_normal(self.stacked_dim)
            lhs = float(v @ self.apply_laplacian(v))
            rhs = 0.0
            if np.isfinite(lam):
                rhs = 0.5 * lam * float(np.sum(self.disagreement(v) ** 2))
            if lhs < rhs - 1e-8:
                return False, lam
        return True, lam

    # -- communication accounting -----------------------------------------

    def communication_cost(self, mode: str = "unicast") -> float:
        """Per-round cost of one full estimate exchange.

        unicast: one unit per scalar sent over one edge; broadcast: one unit
        per scalar broadcast by an agent holding a block with at least one
        out-neighbor.
        """
        if mode == "unicast":
            total = 0
            for p in self.partition.components:
                edges = [(u, v) for (u, v) in self.design[p].graph.edges if u != v]
                total += len(edges) * self.partition.dim(p)
            return float(total)
        if mode == "broadcast":
            total = 0
            for p in self.partition.components:
                g = self.design[p].graph
                for i in g.nodes:
                    if any(v != i for v in g.out_neighbors(i)):
                        total += self.partition.dim(p)
            return float(total)
        raise LayoutError(f"unknown communication mode {mode!r}")

    def mean_estimate_count(self) -> float:
        """Mean number of component copies per agent."""
        return len(self.estimate_edges) / len(self.agents)

    # -- serialization ------------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "partition": list(self.partition.dims),
            "agents": list(self.agents),
            "comm": self.comm.to_json_dict(),
            "interference": sorted([p, i] for (p, i) in self.interference),
            "design": {str(p): wg.to_json_dict() for p, wg in sorted(self.design.items())},
        }

    @classmethod
    def from_json_dict(cls, d: Mapping) -> "EndLayout":
        return cls(
            agents=tuple(d["agents"]),
            partition=Partition(tuple(d["partition"])),
            comm=Graph.from_json_dict(d["comm"]),
            interference=frozenset((p, i) for p, i in d["interference"]),
            design={int(p): WeightedGraph.from_json_dict(wd) for p, wd in d["design"].items()},
        )


@dataclass
class StackedVector:
    """Convenience wrapper pairing a layout with a flat estimate vector."""

    layout: EndLayout
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != (self.layout.stacked_dim,):
            raise LayoutError("data length does not match the layout")

    def block(self, p: int, i: int) -> np.ndarray:
        return self.data[self.layout.block_slice(p, i)]

    def set_block(self, p: int, i: int, value: np.ndarray) -> None:
        self.data[self.layout.block_slice(p, i)] = value


def standard_layout(
    comm: Graph,
    interference: Iterable[tuple[int, int]],
    partition: Partition,
    weight_scheme: str = "metropolis",
) -> EndLayout:
    """The sparsity-unaware baseline: every agent holds every component and
    all exchange graphs equal the communication graph."""
    design = {p: weighted(comm, weight_scheme) for p in partition.components}
    return EndLayout(
        agents=comm.nodes,
        partition=partition,
        comm=comm,
        interference=frozenset(interference),
        design=design,
    )


def reweight(layout: EndLayout, scheme: str) -> EndLayout:
    """Same topology, fresh weights per the named scheme.

    Row/column schemes add self-loops to the exchange graphs.
    """
    design = {p: weighted(layout.design[p].graph, scheme) for p in layout.partition.components}
    return EndLayout(
        agents=layout.agents,
        partition=layout.partition,
        comm=layout.comm,
        interference=layout.interference,
        design=design,
    )
