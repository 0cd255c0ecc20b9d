import numpy as np
import pytest

from endnet.graphs import Graph, WeightedGraph, metropolis_hastings_weights
from endnet.layout import (
    ConnectivityMode,
    EndLayout,
    LayoutError,
    Partition,
    StackedVector,
    standard_layout,
    weighted,
)


def ring(n):
    return Graph.undirected_graph(range(1, n + 1), [(i, i % n + 1) for i in range(1, n + 1)])


def full_interference(P, I):
    return frozenset((p, i) for p in range(1, P + 1) for i in range(1, I + 1))


@pytest.fixture
def small_layout():
    """4 agents on a ring, 2 components of dims (2, 1), full estimate assignment."""
    comm = ring(4)
    part = Partition([2, 1])
    return standard_layout(comm, full_interference(2, 4), part)


def dense_stacked_matrix(layout, blocks):
    """Dense Kronecker oracle for the block-diagonal stacked operators."""
    mats = []
    for p in layout.partition.components:
        mats.append(np.kron(blocks[p], np.eye(layout.partition.dim(p))))
    out = np.zeros((layout.stacked_dim, layout.stacked_dim))
    ofs = 0
    for m in mats:
        out[ofs:ofs + m.shape[0], ofs:ofs + m.shape[1]] = m
        ofs += m.shape[0]
    return out


class TestPartition:
    def test_dims(self):
        part = Partition([2, 3, 1])
        assert part.total_dim == 6
        assert part.dim(2) == 3
        assert part.component_slice(2) == slice(2, 5)

    def test_invalid(self):
        with pytest.raises(LayoutError):
            Partition([2, 0])


class TestValidate:
    def test_standard_layout_valid(self, small_layout):
        assert small_layout.validate(ConnectivityMode.undirected_connected()) == []

    def test_interference_not_covered(self):
        comm = ring(3)
        part = Partition([1])
        design = {1: metropolis_hastings_weights(comm)}
        lay = EndLayout(agents=comm.nodes, partition=part, comm=comm,
                        interference=frozenset({(1, 1)}), design=design)
        # drop agent 2 from the exchange graph while it still needs component 1
        from endnet.graphs import restrict
        design = {1: metropolis_hastings_weights(restrict(comm, [1, 3]))}
        lay = EndLayout(agents=comm.nodes, partition=part, comm=comm,
                        interference=frozenset({(1, 2)}), design=design)
        msgs = lay.validate(ConnectivityMode.undirected_connected())
        assert any("interference" in m for m in msgs)

    def test_rooted_but_not_strong(self):
        comm = Graph.directed_graph([1, 2, 4], [(1, 2), (1, 4)])
        part = Partition([1])
        from endnet.layout import weighted
        lay = EndLayout(agents=(1, 2, 4), partition=part, comm=comm,
                        interference=frozenset({(1, 1), (1, 2), (1, 4)}),
                        design={1: weighted(comm, "row")})
        assert lay.validate(ConnectivityMode.rooted({1: 1})) == []
        msgs = lay.validate(ConnectivityMode.strongly_connected())
        assert any("1" in m for m in msgs)

    def test_design_edge_outside_comm(self):
        comm = Graph.undirected_graph([1, 2, 3], [(1, 2), (2, 3)])
        bad = Graph.undirected_graph([1, 2, 3], [(1, 2), (1, 3)])
        lay = EndLayout(agents=comm.nodes, partition=Partition([1]), comm=comm,
                        interference=full_interference(1, 3),
                        design={1: metropolis_hastings_weights(bad)})
        msgs = lay.validate(ConnectivityMode.undirected_connected())
        assert any("communication" in m for m in msgs)


class TestStackedOperators:
    def test_scalar_case(self):
        comm = Graph.directed_graph([1], [])
        lay = standard_layout(comm, {(1, 1)}, Partition([1]), weight_scheme="row")
        assert np.allclose(lay.apply_weight(np.array([3.0])), [3.0])

    def test_consensus_fixed(self, small_layout):
        y = np.array([1.0, -2.0, 0.5])
        hat = small_layout.embed_consensus(y)
        assert np.allclose(small_layout.apply_weight(hat), hat)

    def test_matches_dense_kronecker(self, small_layout):
        rng = np.random.default_rng(0)
        Wd = dense_stacked_matrix(
            small_layout, {p: small_layout.design[p].matrix()
                           for p in small_layout.partition.components})
        v = rng.standard_normal(small_layout.stacked_dim)
        assert np.allclose(small_layout.apply_weight(v), Wd @ v, atol=1e-12)
        assert np.allclose(small_layout.weight_matrix().toarray(), Wd)

    def test_laplacian_annihilates_embedding(self, small_layout):
        y = np.arange(3.0)
        hat = small_layout.embed_consensus(y)
        assert np.max(np.abs(small_layout.apply_laplacian(hat))) <= 1e-12


class TestProjections:
    def test_consensus_unchanged(self, small_layout):
        hat = small_layout.embed_consensus(np.array([1.0, 2.0, 3.0]))
        assert np.allclose(small_layout.consensus_projection(hat), hat)

    def test_two_copies_mean(self):
        comm = Graph.undirected_graph([1, 2], [(1, 2)])
        lay = standard_layout(comm, full_interference(1, 2), Partition([1]))
        out = lay.consensus_projection(np.array([2.0, 6.0]))
        assert np.allclose(out, [4.0, 4.0])

    def test_idempotent_and_orthogonal(self, small_layout):
        rng = np.random.default_rng(1)
        v = rng.standard_normal(small_layout.stacked_dim)
        par = small_layout.consensus_projection(v)
        perp = small_layout.disagreement(v)
        assert np.allclose(small_layout.consensus_projection(par), par, atol=1e-12)
        assert abs(par @ perp) <= 1e-10
        assert np.allclose(par + perp, v)
        assert par @ par + perp @ perp == pytest.approx(v @ v, rel=1e-10)


class TestPermutation:
    def test_single_component_identity(self):
        comm = ring(3)
        lay = standard_layout(comm, full_interference(1, 3), Partition([2]))
        v = np.arange(6.0)
        assert np.allclose(lay.permute_to_agent_major(v), v)

    def test_interleave_by_hand(self):
        comm = Graph.undirected_graph([1, 2], [(1, 2)])
        lay = standard_layout(comm, full_interference(2, 2), Partition([1, 1]))
        # variable-major: y11 y21 | y12 y22 ; agent-major: y11 y12 | y21 y22
        hat = np.array([11.0, 21.0, 12.0, 22.0])
        assert np.allclose(lay.permute_to_agent_major(hat), [11.0, 12.0, 21.0, 22.0])

    def test_round_trip_exact(self, small_layout):
        rng = np.random.default_rng(2)
        v = rng.standard_normal(small_layout.stacked_dim)
        assert np.array_equal(
            small_layout.permute_to_variable_major(small_layout.permute_to_agent_major(v)), v)

    def test_embed_agent_major_blocks(self, small_layout):
        y = np.array([1.0, 2.0, 3.0])
        tilde = small_layout.permute_to_agent_major(small_layout.embed_consensus(y))
        for i in small_layout.agents:
            ti = tilde[small_layout.agent_slice_in_agent_major(i)]
            assert np.allclose(ti, y)  # every agent holds both components here


class TestEmbed:
    def test_scalar_three_copies(self):
        comm = ring(3)
        lay = standard_layout(comm, full_interference(1, 3), Partition([1]))
        assert np.allclose(lay.embed_consensus(np.array([2.0])), [2.0, 2.0, 2.0])


class TestNullSpaceAndBound:
    def test_standard_strongly_connected(self):
        comm = Graph.directed_graph([1, 2, 3], [(1, 2), (2, 3), (3, 1), (2, 1)])
        lay = standard_layout(comm, full_interference(2, 3), Partition([1, 2]),
                              weight_scheme="row")
        assert lay.verify_null_space_is_consensus({1: 1, 2: 1})

    def test_rooted_star(self):
        comm = Graph.directed_graph([1, 2, 4], [(1, 2), (1, 4)])
        lay = standard_layout(comm, full_interference(1, 3), Partition([1]),
                              weight_scheme="row")
        assert lay.verify_null_space_is_consensus({1: 1})

    def test_disagreement_bound_doubly_stochastic(self):
        comm = ring(5)
        lay = standard_layout(comm, full_interference(2, 5), Partition([1, 1]))
        ok, lam = lay.verify_disagreement_bound(num_samples=50, seed=0)
        assert ok
        # ring Laplacian: lambda_2(L + L^T) = 2 * (1 - cos(2 pi / 5)) * w-scale
        W = lay.design[1].matrix()
        L = np.diag(W @ np.ones(5)) - W
        lam2 = np.sort(np.linalg.eigvalsh(L + L.T))[1]
        assert lam == pytest.approx(lam2, rel=1e-9)

    def test_singleton_component_excluded(self):
        comm = Graph.directed_graph([1, 2], [(1, 2), (2, 1)])
        from endnet.graphs import restrict
        design = {
            1: weighted(comm.with_self_loops(), "column"),
            2: weighted(restrict(comm, [2]).with_self_loops(), "column"),
        }
        lay = EndLayout(agents=(1, 2), partition=Partition([1, 1]), comm=comm,
                        interference=frozenset({(1, 1), (1, 2), (2, 2)}), design=design)
        ok, lam = lay.verify_disagreement_bound(num_samples=20, seed=1)
        assert ok
        assert np.isfinite(lam)  # singleton's sentinel must not leak into the min


class TestCommunicationCost:
    def test_standard_unicast(self, small_layout):
        # |edges of comm| directed = 8, n_y = 3
        assert small_layout.communication_cost("unicast") == 8 * 3

    def test_empty_design_edges(self):
        comm = Graph.directed_graph([1], [])
        lay = standard_layout(comm, {(1, 1)}, Partition([2]), weight_scheme="row")
        assert lay.communication_cost("unicast") == 0.0

    def test_hand_count_broadcast(self):
        comm = ring(3)
        lay = standard_layout(comm, full_interference(2, 3), Partition([1, 2]))
        # every agent broadcasts each of its 2 held blocks once: 3 * (1 + 2)
        assert lay.communication_cost("broadcast") == 9.0

    def test_mean_estimate_count(self, small_layout):
        assert small_layout.mean_estimate_count() == 2.0


class TestStackedVector:
    def test_block_access(self, small_layout):
        sv = StackedVector(small_layout, np.zeros(small_layout.stacked_dim))
        sv.set_block(1, 2, np.array([5.0, 6.0]))
        assert np.allclose(sv.block(1, 2), [5.0, 6.0])
        assert np.count_nonzero(sv.data) == 2


class TestJson:
    def test_round_trip(self, small_layout):
        back = EndLayout.from_json_dict(small_layout.to_json_dict())
        assert back.partition == small_layout.partition
        assert back.comm == small_layout.comm
        assert back.interference == small_layout.interference
        for p in small_layout.partition.components:
            assert np.allclose(back.design[p].matrix(), small_layout.design[p].matrix())
