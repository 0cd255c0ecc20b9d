import numpy as np
import pytest

from endnet.graphs import Graph
from endnet.layout import Partition, standard_layout
from endnet.optim import (
    AbcMatrices,
    ConstraintCoupledProblem,
    LassoSeparable,
    OptimError,
    QuadraticSeparable,
    abc_bound_constant,
    abc_check,
    abc_merit,
    abc_range_residual,
    abc_solve,
    abc_step,
    admm_solve,
    augdgm_matrices,
    augdgm_solve,
    augdgm_step,
    constant_design_weights,
    constraint_coupled_solve,
    dual_reformulate,
    edge_constraint_residual,
    example_design_schedule,
    merit_v,
    power_step_schedule,
    pushsum_dgd_step,
    pushsum_init,
    pushsum_solve,
    stacked_gradient,
    stacked_value,
    tracking_sum_residual,
)


def ring(n):
    return Graph.undirected_graph(range(1, n + 1), [(i, i % n + 1) for i in range(1, n + 1)])


def full_interference(P, I):
    return {(p, i) for p in range(1, P + 1) for i in range(1, I + 1)}


def random_quadratic_problem(rng, num_agents, num_components):
    """Full-footprint strongly convex quadratic, scalar components."""
    quads, lins, fps = [], [], []
    for _ in range(num_agents):
        A = rng.standard_normal((num_components, num_components))
        H = A @ A.T + 2.0 * num_components * np.eye(num_components)
        quads.append({(p, q): H[p - 1:p, q - 1:q]
                      for p in range(1, num_components + 1)
                      for q in range(p, num_components + 1)})
        lins.append({p: rng.standard_normal(1) for p in range(1, num_components + 1)})
        fps.append(tuple(range(1, num_components + 1)))
    return QuadraticSeparable([1] * num_components, fps, quads, lins)


def two_agent_shared_scalar(c1=1.0, c2=3.0):
    return QuadraticSeparable(
        [1], [(1,), (1,)],
        [{(1, 1): np.array([[2.0]])}, {(1, 1): np.array([[2.0]])}],
        [{1: np.array([-2.0 * c1])}, {1: np.array([-2.0 * c2])}])


class TestSeparableProblems:
    def test_quadratic_gradient_matches_finite_difference(self):
        rng = np.random.default_rng(0)
        prob = random_quadratic_problem(rng, 3, 2)
        for i in (1, 2, 3):
            y = rng.standard_normal(2)
            blocks = {1: y[:1], 2: y[1:]}
            g = prob.smooth_gradient(i, blocks)
            eps = 1e-6
            for p in (1, 2):
                e = np.zeros(2)
                e[p - 1] = eps
                up = {1: (y + e)[:1], 2: (y + e)[1:]}
                dn = {1: (y - e)[:1], 2: (y - e)[1:]}
                num = (prob.value(i, up) - prob.value(i, dn)) / (2 * eps)
                assert g[p][0] == pytest.approx(num, abs=1e-5)

    def test_quadratic_reference_solves_normal_equations(self):
        prob = two_agent_shared_scalar(1.0, 3.0)
        assert prob.solve_reference()[0] == pytest.approx(2.0, abs=1e-12)

    def test_lasso_value_and_subgradient(self):
        prob = LassoSeparable([1], [(1,)], [np.array([[1.0]])], [np.array([2.0])],
                              {(1, 1): 0.5})
        y = {1: np.array([1.0])}
        assert prob.value(1, y) == pytest.approx(0.5 * 1.0 + 0.5)
        sub = prob.subgradient(1, y)
        assert sub[1][0] == pytest.approx(-1.0 + 0.5)

    def test_lasso_reference_soft_threshold(self):
        # min 1/2 (y - 2)^2 + 0.5 |y|  ->  y = 1.5
        prob = LassoSeparable([1], [(1,)], [np.array([[1.0]])], [np.array([2.0])],
                              {(1, 1): 0.5})
        assert prob.solve_reference()[0] == pytest.approx(1.5, abs=1e-8)

    def test_off_footprint_quadratic_rejected(self):
        with pytest.raises(OptimError):
            QuadraticSeparable([1, 1], [(1,)], [{(1, 2): np.eye(1)}], [{}])

    def test_data_width_mismatch_rejected(self):
        with pytest.raises(OptimError):
            LassoSeparable([1, 1], [(1, 2)], [np.ones((1, 1))], [np.ones(1)])


class TestDualReformulation:
    def test_constraint_count_matches_design_edges(self):
        lay = standard_layout(ring(4), full_interference(2, 4), Partition([1, 1]))
        cons = dual_reformulate(lay)
        proper = sum(
            sum(1 for (u, v) in lay.design[p].graph.edges if u != v)
            for p in (1, 2))
        assert len(cons) == proper

    def test_consensus_point_feasible(self):
        lay = standard_layout(ring(4), full_interference(2, 4), Partition([1, 1]))
        hat = lay.embed_consensus(np.array([1.0, -2.0]))
        assert edge_constraint_residual(lay, hat) == 0.0
        rng = np.random.default_rng(1)
        assert edge_constraint_residual(lay, rng.standard_normal(lay.stacked_dim)) > 0.01

    def test_directed_design_rejected(self):
        comm = Graph.directed_graph([1, 2], [(1, 2), (2, 1)])
        lay = standard_layout(comm, {(1, 1), (1, 2)}, Partition([1]), weight_scheme="row")
        # make the design asymmetric by removing one direction
        from endnet.graphs import restrict
        from endnet.layout import EndLayout, weighted
        g = Graph.directed_graph([1, 2], [(1, 2), (1, 1), (2, 2)])
        bad = EndLayout(agents=(1, 2), partition=Partition([1]), comm=comm,
                        interference=frozenset({(1, 1), (1, 2)}),
                        design={1: weighted(g, "row")})
        with pytest.raises(OptimError):
            dual_reformulate(bad)


class TestAdmm:
    def test_two_agent_shared_scalar_mean(self):
        lay = standard_layout(ring(2) if False else Graph.undirected_graph([1, 2], [(1, 2)]),
                              {(1, 1), (1, 2)}, Partition([1]))
        prob = two_agent_shared_scalar(1.0, 3.0)
        hat, trace = admm_solve(lay, prob, 0.5, max_iters=2000, tol=1e-10,
                                reference=prob.solve_reference())
        assert np.allclose(hat, [2.0, 2.0], atol=1e-9)

    def test_alpha_out_of_range_rejected(self):
        lay = standard_layout(Graph.undirected_graph([1, 2], [(1, 2)]),
                              {(1, 1), (1, 2)}, Partition([1]))
        prob = two_agent_shared_scalar()
        for alpha in (0.0, 1.0, -0.2, 1.4):
            with pytest.raises(OptimError):
                admm_solve(lay, prob, alpha)

    def test_matches_centralized_on_random_instances(self):
        for seed in range(3):
            rng = np.random.default_rng(40 + seed)
            prob = random_quadratic_problem(rng, 5, 2)
            lay = standard_layout(ring(5), full_interference(2, 5), Partition([1, 1]))
            hat, trace = admm_solve(lay, prob, 0.5, max_iters=5000, tol=1e-8,
                                    reference=prob.solve_reference())
            assert trace.last("distance") < 1e-6
            assert len(trace) <= 5000

    def test_distance_eventually_decreasing(self):
        rng = np.random.default_rng(7)
        prob = random_quadratic_problem(rng, 4, 1)
        lay = standard_layout(ring(4), full_interference(1, 4), Partition([1]))
        _, trace = admm_solve(lay, prob, 0.5, max_iters=400, tol=0.0,
                              reference=prob.solve_reference())
        d = trace.columns["distance"]
        tail = d[len(d) // 2:]
        assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))

    def test_lasso_instance_via_inner_solver(self):
        # both agents share one scalar; generic proximal inner loop path
        lay = standard_layout(Graph.undirected_graph([1, 2], [(1, 2)]),
                              {(1, 1), (1, 2)}, Partition([1]))
        prob = LassoSeparable([1], [(1,), (1,)],
                              [np.array([[1.0]]), np.array([[1.0]])],
                              [np.array([2.0]), np.array([4.0])],
                              {(1, 1): 0.25, (2, 1): 0.25})
        ref = prob.solve_reference()
        # centralized: min (y-2)^2/2 + (y-4)^2/2 + 0.5|y| -> y = 3 - 0.25
        assert ref[0] == pytest.approx(2.75, abs=1e-8)
        hat, trace = admm_solve(lay, prob, 0.5, max_iters=3000, tol=1e-8, reference=ref)
        assert trace.last("distance") < 1e-6


def doubly_stochastic_layout(num_agents, num_components):
    return standard_layout(ring(num_agents),
                           full_interference(num_components, num_agents),
                           Partition([1] * num_components))


class TestAbcChecker:
    def test_tracking_matrices_pass(self):
        lay = doubly_stochastic_layout(4, 2)
        assert abc_check(augdgm_matrices(lay), lay) == []

    def test_zero_c_fails_null_space(self):
        lay = doubly_stochastic_layout(3, 1)
        m = augdgm_matrices(lay)
        m.c_blocks = {1: np.zeros((3, 3))}
        assert any("C3" in msg for msg in abc_check(m, lay))

    def test_random_asymmetric_fails_commutation(self):
        lay = doubly_stochastic_layout(3, 1)
        rng = np.random.default_rng(2)
        m = augdgm_matrices(lay)
        m.b_blocks = {1: np.abs(rng.standard_normal((3, 3)))}
        msgs = abc_check(m, lay)
        assert any("C4" in msg or "C1" in msg for msg in msgs)

    def test_gamma_bound_is_inverse_lipschitz_for_identity_d(self):
        lay = doubly_stochastic_layout(4, 1)
        prob = random_quadratic_problem(np.random.default_rng(3), 4, 1)
        m = augdgm_matrices(lay)
        assert m.gamma_bound(prob) == pytest.approx(1.0 / prob.smooth_lipschitz)


class TestAbcSolve:
    def setup_method(self):
        self.rng = np.random.default_rng(4)
        self.prob = random_quadratic_problem(self.rng, 4, 2)
        self.lay = doubly_stochastic_layout(4, 2)
        self.matrices = augdgm_matrices(self.lay)
        self.gamma = 0.9 / self.prob.smooth_lipschitz
        self.ref = self.prob.solve_reference()

    def test_matches_tracking_recursion_exactly(self):
        y_abc = np.zeros(self.lay.stacked_dim)
        z = np.zeros(self.lay.stacked_dim)
        y_gt = np.zeros(self.lay.stacked_dim)
        v = self.lay.apply_weight(stacked_gradient(self.lay, self.prob, y_gt))
        for _ in range(500):
            y_abc, z = abc_step(self.lay, self.matrices, self.prob, y_abc, z, self.gamma)
            y_gt, v = augdgm_step(self.lay, self.prob, y_gt, v, self.gamma)
        assert np.max(np.abs(y_abc - y_gt)) <= 1e-10

    def test_ergodic_merit_bound(self):
        _, trace = abc_solve(self.lay, self.matrices, self.prob, self.gamma,
                             max_iters=2000, reference=self.ref, merit_every=50)
        h = abc_bound_constant(self.lay, self.matrices, self.prob, self.gamma,
                               np.zeros(self.lay.stacked_dim), self.ref)
        for k, m in zip(trace.columns["k"], trace.columns["merit_avg"]):
            assert k * m <= h / 2.0 + 1e-6

    def test_merit_decays(self):
        _, trace = abc_solve(self.lay, self.matrices, self.prob, self.gamma,
                             max_iters=3000, reference=self.ref, merit_every=100)
        # pointwise merit converges linearly down to round-off; the ergodic
        # average only decays like 1/k
        assert trace.columns["merit"][-1] < 1e-12
        avg = trace.columns["merit_avg"]
        assert avg[-1] < 0.1 * avg[0]

    def test_start_at_optimum_stays(self):
        hat_star = self.lay.embed_consensus(self.ref)
        y, trace = abc_solve(self.lay, self.matrices, self.prob, self.gamma,
                             max_iters=100, y0=hat_star, reference=self.ref)
        assert trace.columns["merit"][-1] < 1e-8

    def test_range_invariant(self):
        y = np.zeros(self.lay.stacked_dim)
        z = np.zeros(self.lay.stacked_dim)
        for _ in range(200):
            y, z = abc_step(self.lay, self.matrices, self.prob, y, z, self.gamma)
            assert abc_range_residual(self.lay, self.matrices, z) <= 1e-9

    def test_out_of_range_gamma_warns(self):
        with pytest.warns(UserWarning):
            abc_solve(self.lay, self.matrices, self.prob,
                      1.5 / self.prob.smooth_lipschitz, max_iters=5)


class TestGradientTracking:
    def test_single_agent_is_gradient_descent(self):
        comm = Graph.undirected_graph([1], [])
        lay = standard_layout(comm, {(1, 1)}, Partition([1]))
        prob = QuadraticSeparable([1], [(1,)], [{(1, 1): np.array([[2.0]])}],
                                  [{1: np.array([-4.0])}])
        gamma = 0.4
        y = np.zeros(1)
        v = stacked_gradient(lay, prob, y)
        x = 0.0
        for _ in range(50):
            y, v = augdgm_step(lay, prob, y, v, gamma)
            x = x - gamma * (2 * x - 4.0)
            assert y[0] == pytest.approx(x, abs=1e-14)
            assert v[0] == pytest.approx(2 * y[0] - 4.0, abs=1e-12)

    def test_tracking_sum_identity(self):
        rng = np.random.default_rng(5)
        prob = random_quadratic_problem(rng, 5, 2)
        lay = doubly_stochastic_layout(5, 2)
        y = np.zeros(lay.stacked_dim)
        v = lay.apply_weight(stacked_gradient(lay, prob, y))
        for _ in range(100):
            y, v = augdgm_step(lay, prob, y, v, 0.1 / prob.smooth_lipschitz)
            assert tracking_sum_residual(lay, prob, y, v) <= 1e-10

    def test_rejects_nonsymmetric_weights(self):
        comm = Graph.directed_graph([1, 2, 3], [(1, 2), (2, 3), (3, 1)])
        lay = standard_layout(comm, full_interference(1, 3), Partition([1]),
                              weight_scheme="row")
        prob = random_quadratic_problem(np.random.default_rng(6), 3, 1)
        with pytest.raises(OptimError):
            augdgm_solve(lay, prob, 0.01)

    def test_converges_on_random_quadratics(self):
        prob = random_quadratic_problem(np.random.default_rng(8), 4, 2)
        lay = doubly_stochastic_layout(4, 2)
        ref = prob.solve_reference()
        y, trace = augdgm_solve(lay, prob, 0.9 / prob.smooth_lipschitz,
                                max_iters=3000, reference=ref, merit_every=500)
        assert np.allclose(lay.component_means(y), ref, atol=1e-8)
        assert trace.columns["merit"][-1] < 1e-10


class TestPushSum:
    def test_schedule_validation(self):
        with pytest.raises(OptimError):
            power_step_schedule(a=0.5)
        with pytest.raises(OptimError):
            power_step_schedule(c=-1.0)
        assert power_step_schedule(2.0, 1.0)(3) == pytest.approx(0.5)

    def test_single_agent_plain_subgradient(self):
        comm = Graph.directed_graph([1], [(1, 1)])
        lay = standard_layout(comm, {(1, 1)}, Partition([1]), weight_scheme="column")
        prob = QuadraticSeparable([1], [(1,)], [{(1, 1): np.array([[2.0]])}],
                                  [{1: np.array([-4.0])}])
        gamma = power_step_schedule(0.5, 0.51)
        state = pushsum_init(lay)
        x = 0.0
        for k in range(100):
            state, _ = pushsum_dgd_step(lay, constant_design_weights(lay), prob,
                                        state, gamma(k))
            x = x - gamma(k) * (2 * x - 4.0)
            assert state.q[1][0] == pytest.approx(1.0, abs=1e-15)
            assert state.z[0] == pytest.approx(x, abs=1e-12)

    def test_mass_and_averaged_process_on_time_varying_designs(self):
        n = 4
        comm = Graph.directed_graph(range(1, n + 1),
                                    [(i, i % n + 1) for i in range(1, n + 1)])
        lay = standard_layout(comm.with_self_loops(), full_interference(2, n),
                              Partition([1, 1]), weight_scheme="column")
        # alternate the two halves of the cycle; union over Q=2 is strong
        cyc = [(i, i % n + 1) for i in range(1, n + 1)]
        half_a = Graph.directed_graph(range(1, n + 1), cyc[:2])
        half_b = Graph.directed_graph(range(1, n + 1), cyc[2:])
        schedule = example_design_schedule(lay, [half_a, half_b])
        prob = random_quadratic_problem(np.random.default_rng(9), n, 2)
        ref = prob.solve_reference()
        state, trace = pushsum_solve(lay, schedule, prob, power_step_schedule(0.2, 0.6),
                                     max_iters=20000, reference=ref, check_every=1000)
        assert trace.meta["max_mass_error"] <= 1e-10
        assert trace.meta["max_averaged_process_error"] <= 1e-10
        assert trace.columns["consensus_err"][-1] < 1e-2
        assert abs(trace.columns["f_gap"][-1]) < 1e-2

    def test_nonpositive_mass_guarded(self):
        comm = Graph.directed_graph([1, 2], [(1, 2), (2, 1)])
        lay = standard_layout(comm, {(1, 1), (1, 2)}, Partition([1]),
                              weight_scheme="column")
        prob = two_agent_shared_scalar()
        state = pushsum_init(lay)
        bad = {1: np.array([[0.0, 0.0], [1.0, 1.0]])}
        with pytest.raises(OptimError):
            pushsum_dgd_step(lay, bad, prob, state, 0.1)

    def test_matches_straightline_pushsum_constant_design(self):
        # independent transcription of the classic scalar recursion at N=3
        n = 3
        comm = Graph.directed_graph([1, 2, 3], [(1, 2), (2, 3), (3, 1)]).with_self_loops()
        lay = standard_layout(comm, full_interference(1, n), Partition([1]),
                              weight_scheme="column")
        W = lay.design[1].matrix()
        prob = QuadraticSeparable(
            [1], [(1,)] * 3,
            [{(1, 1): np.array([[2.0]])} for _ in range(3)],
            [{1: np.array([v])} for v in (-2.0, 0.0, 2.0)])
        gamma = power_step_schedule(0.3, 0.7)
        state = pushsum_init(lay)
        z = np.zeros(n)
        q = np.ones(n)
        for k in range(200):
            state, _ = pushsum_dgd_step(lay, {1: W}, prob, state, gamma(k))
            q = W @ q
            w = W @ z
            y = w / q
            g = 2.0 * y + np.array([-2.0, 0.0, 2.0])
            z = w - gamma(k) * g
            assert np.allclose(state.z, z, atol=1e-12)
            assert np.allclose(state.q[1], q, atol=1e-14)


class TestConstraintCoupled:
    def make_problem(self, c1=0.3, c2=0.9):
        # min (x1-c1)^2 + (x2-c2)^2  s.t.  x1 + x2 = 1, boxes [-5, 5]
        def oracle(i, blocks):
            c = c1 if i == 1 else c2
            return np.clip([c - blocks[1][0] / 2.0], -5.0, 5.0)

        def cost(i, x):
            c = c1 if i == 1 else c2
            return float((x[0] - c) ** 2)

        return ConstraintCoupledProblem(
            x_dims=(1, 1), component_dims=(1,), footprints=((1,), (1,)),
            con_blocks={(1, 1): np.array([[1.0]]), (1, 2): np.array([[1.0]])},
            con_offsets={(1, 1): np.array([0.5]), (1, 2): np.array([0.5])},
            argmin_oracle=oracle, cost=cost)

    def test_two_agent_qp_recovers_multiplier_and_primal(self):
        c1, c2 = 0.3, 0.9
        prob = self.make_problem(c1, c2)
        y_star = c1 + c2 - 1.0
        x_star = np.array([c1 + (1 - c1 - c2) / 2, c2 + (1 - c1 - c2) / 2])
        comm = Graph.directed_graph([1, 2], [(1, 2), (2, 1)]).with_self_loops()
        lay = standard_layout(comm, {(1, 1), (1, 2)}, Partition([1]),
                              weight_scheme="column")
        y, x_avg, trace = constraint_coupled_solve(
            lay, prob, lambda k: constant_design_weights(lay),
            power_step_schedule(0.5, 0.6), max_iters=40000,
            reference_dual=np.array([y_star]))
        assert abs(y[0] - y_star) < 1e-4
        assert abs(x_avg[1][0] - x_star[0]) < 1e-4
        assert abs(x_avg[2][0] - x_star[1]) < 1e-4

    def test_zero_constraints_dual_constant(self):
        def oracle(i, blocks):
            return np.zeros(1)

        prob = ConstraintCoupledProblem(
            x_dims=(1,), component_dims=(1,), footprints=((1,),),
            con_blocks={}, con_offsets={}, argmin_oracle=oracle,
            cost=lambda i, x: 0.0)
        comm = Graph.directed_graph([1], [(1, 1)])
        lay = standard_layout(comm, {(1, 1)}, Partition([1]), weight_scheme="column")
        y, _, _ = constraint_coupled_solve(
            lay, prob, lambda k: constant_design_weights(lay),
            power_step_schedule(), max_iters=200)
        assert y[0] == pytest.approx(0.0, abs=1e-12)

    def test_off_pattern_block_rejected(self):
        with pytest.raises(OptimError):
            ConstraintCoupledProblem(
                x_dims=(1,), component_dims=(1, 1), footprints=((1,),),
                con_blocks={(2, 1): np.eye(1)}, con_offsets={},
                argmin_oracle=lambda i, b: np.zeros(1), cost=lambda i, x: 0.0)


class TestMeritV:
    def test_zero_at_reference_consensus(self):
        prob = random_quadratic_problem(np.random.default_rng(10), 4, 2)
        lay = doubly_stochastic_layout(4, 2)
        ref = prob.solve_reference()
        assert merit_v(lay, prob, lay.embed_consensus(ref), ref) == pytest.approx(0.0, abs=1e-10)

    def test_scaled_disagreement_term(self):
        prob = random_quadratic_problem(np.random.default_rng(11), 4, 1)
        lay = doubly_stochastic_layout(4, 1)
        ref = prob.solve_reference()
        hat = lay.embed_consensus(ref)
        hat[0] += 4.0  # perturb one copy
        grad_star = stacked_gradient(lay, prob, lay.embed_consensus(ref), sub=True)
        perturbed = hat - lay.consensus_projection(hat)
        expected = np.linalg.norm(perturbed / 4.0) * np.linalg.norm(grad_star)
        v = merit_v(lay, prob, hat, ref)
        gap = abs(prob.total_value(lay.component_means(hat)) - prob.total_value(ref))
        assert v == pytest.approx(max(expected, gap), rel=1e-9)
