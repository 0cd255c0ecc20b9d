"""Distributed optimization over estimate-exchange layouts.

Four solver families on top of :class:`~endnet.layout.EndLayout`:

* edge-constrained dual reformulation and the resulting ADMM;
* the generic two-matrix first-order family (A, B, C matrices per
  component) with a condition checker, ergodic-rate merit, and the
  gradient-tracking instantiation;
* push-sum subgradient descent over time-varying directed designs;
* a dual pipeline for constraint-coupled problems driven by push-sum.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .graphs import Graph, WeightedGraph, column_stochastic_weights, intersect, restrict
from .layout import EndLayout
from .trace import DivergenceError, RunTrace


class OptimError(ValueError):
    pass


# -- separable problems ----------------------------------------------------


class SeparableProblem:
    """Cost Σ_i f_i over a partitioned variable; f_i touches a footprint.

    Subclasses provide ``value`` (including any nonsmooth part),
    ``smooth_gradient`` (dict keyed by component), and optionally override
    ``argmin_regularized`` with a closed form. ``l1_weight`` returns the
    coefficient of the 1-norm term on a block (zero by default), which the
    generic proximal inner loop and the subgradient selector use.
    """

    def __init__(self, component_dims: Sequence[int], footprints: Sequence[Sequence[int]],
                 smooth_lipschitz: float | None = None):
        self.component_dims = tuple(int(d) for d in component_dims)
        if any(d < 1 for d in self.component_dims):
            raise OptimError("component dims must be >= 1")
        self.footprints = tuple(tuple(sorted(fp)) for fp in footprints)
        self.smooth_lipschitz = smooth_lipschitz

    @property
    def num_agents(self) -> int:
        return len(self.footprints)

    @property
    def num_components(self) -> int:
        return len(self.component_dims)

    def dim(self, p: int) -> int:
        return self.component_dims[p - 1]

    def footprint(self, i: int) -> tuple[int, ...]:
        return self.footprints[i - 1]

    def component_slice(self, p: int) -> slice:
        start = sum(self.component_dims[: p - 1])
        return slice(start, start + self.component_dims[p - 1])

    def value(self, i: int, blocks: Mapping[int, np.ndarray]) -> float:
        raise NotImplementedError

    def smooth_gradient(self, i: int, blocks: Mapping[int, np.ndarray]) -> dict[int, np.ndarray]:
        raise NotImplementedError

    def l1_weight(self, i: int, p: int) -> float:
        return 0.0

    def subgradient(self, i: int, blocks: Mapping[int, np.ndarray]) -> dict[int, np.ndarray]:
        """Smooth gradient plus the sign selector on any 1-norm terms."""
        out = {p: g.astype(float).copy() for p, g in self.smooth_gradient(i, blocks).items()}
        for p in self.footprint(i):
            w = self.l1_weight(i, p)
            if w != 0.0:
                out[p] = out.get(p, np.zeros(self.dim(p))) + w * np.sign(blocks[p])
        return out

    def total_value(self, y: np.ndarray) -> float:
        y = np.asarray(y, dtype=float)
        return sum(
            self.value(i, {p: y[self.component_slice(p)] for p in self.footprint(i)})
            for i in range(1, self.num_agents + 1)
        )

    def total_smooth_gradient(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        for i in range(1, self.num_agents + 1):
            blocks = {p: y[self.component_slice(p)] for p in self.footprint(i)}
            for p, g in self.smooth_gradient(i, blocks).items():
                out[self.component_slice(p)] += g
        return out

    def argmin_regularized(
        self,
        i: int,
        components: Sequence[int],
        degrees: Mapping[int, float],
        linear: Mapping[int, np.ndarray],
        tol: float = 1e-10,
        max_iters: int = 10000,
    ) -> dict[int, np.ndarray]:
        """min over the listed blocks of f_i + Σ_p d_p ||y_p||^2 - <l_p, y_p>.

        Generic accelerated proximal-gradient fallback; quadratic problems
        override this with a direct solve.
        """
        components = list(components)
        if self.smooth_lipschitz is None:
            raise OptimError("inner solver needs a declared smoothness constant")
        dmax = max((degrees.get(p, 0.0) for p in components), default=0.0)
        step = 1.0 / (self.smooth_lipschitz + 2.0 * dmax)
        fp = set(self.footprint(i))

        y = {p: np.zeros(self.dim(p)) for p in components}
        t_prev = dict(y)
        momentum = 1.0
        for it in range(max_iters):
            g = self.smooth_gradient(i, {p: y[p] for p in components if p in fp}) if fp else {}
            new = {}
            for p in components:
                grad_p = g.get(p, np.zeros(self.dim(p))) if p in fp else np.zeros(self.dim(p))
                grad_p = grad_p + 2.0 * degrees.get(p, 0.0) * y[p] - linear.get(
                    p, np.zeros(self.dim(p))
                )
                v = y[p] - step * grad_p
                w = self.l1_weight(i, p) if p in fp else 0.0
                if w > 0:
                    v = np.sign(v) * np.maximum(np.abs(v) - step * w, 0.0)
                new[p] = v
            momentum_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum**2))
            accel = (momentum - 1.0) / momentum_next
            delta = max(float(np.max(np.abs(new[p] - t_prev[p]))) for p in components)
            y = {p: new[p] + accel * (new[p] - t_prev[p]) for p in components}
            t_prev, momentum = new, momentum_next
            if delta < tol:
                break
        else:
            raise OptimError(f"inner proximal solver did not reach {tol} for agent {i}")
        return t_prev


class QuadraticSeparable(SeparableProblem):
    """f_i = 1/2 Σ_{p,q} y_p' H_i[p,q] y_q + Σ_p c_i[p]' y_p + const_i."""

    def __init__(self, component_dims, footprints, quadratics, linears, constants=None):
        super().__init__(component_dims, footprints)
        self.quadratics = [dict(q) for q in quadratics]
        self.linears = [dict(c) for c in linears]
        self.constants = list(constants) if constants is not None else [0.0] * len(footprints)
        for i in range(1, self.num_agents + 1):
            fp = set(self.footprint(i))
            H = self.quadratics[i - 1]
            for (p, q), blk in list(H.items()):
                if p not in fp or q not in fp:
                    raise OptimError(f"agent {i}: quadratic block {(p, q)} off the footprint")
                if (q, p) not in H:
                    H[(q, p)] = np.asarray(blk).T
        # dense per-agent form (H_i, c_i, offsets) so the hot gradient path
        # is one matvec instead of a loop over scalar blocks
        self._dense = []
        for i in range(1, self.num_agents + 1):
            fp = self.footprint(i)
            H = self._agent_hessian(i)
            ofs = {}
            pos = 0
            for p in fp:
                ofs[p] = pos
                pos += self.dim(p)
            c = np.zeros(H.shape[0])
            for p, vec in self.linears[i - 1].items():
                c[ofs[p]:ofs[p] + self.dim(p)] += vec
            self._dense.append((H, c, fp, ofs))
        self.smooth_lipschitz = max(
            (
                float(np.linalg.norm(self._dense[i - 1][0], 2))
                for i in range(1, self.num_agents + 1)
                if self.footprint(i)
            ),
            default=0.0,
        )

    def _agent_hessian(self, i: int) -> np.ndarray:
        fp = self.footprint(i)
        n = sum(self.dim(p) for p in fp)
        ofs = {}
        pos = 0
        for p in fp:
            ofs[p] = pos
            pos += self.dim(p)
        H = np.zeros((n, n))
        for (p, q), blk in self.quadratics[i - 1].items():
            H[ofs[p]:ofs[p] + self.dim(p), ofs[q]:ofs[q] + self.dim(q)] = blk
        return H

    def value(self, i, blocks):
        val = self.constants[i - 1]
        for (p, q), blk in self.quadratics[i - 1].items():
            val += 0.5 * float(blocks[p] @ (blk @ blocks[q]))
        for p, c in self.linears[i - 1].items():
            val += float(c @ blocks[p])
        return val

    def smooth_gradient(self, i, blocks):
        H, c, fp, ofs = self._dense[i - 1]
        if not fp:
            return {}
        x = np.concatenate([blocks[p] for p in fp])
        g = H @ x + c
        return {p: g[ofs[p]:ofs[p] + self.dim(p)] for p in fp}

    def solve_reference(self) -> np.ndarray:
        """Centralized minimizer of the total cost (positive definite case)."""
        n = sum(self.component_dims)
        H = np.zeros((n, n))
        c = np.zeros(n)
        for i in range(1, self.num_agents + 1):
            for (p, q), blk in self.quadratics[i - 1].items():
                H[self.component_slice(p), self.component_slice(q)] += blk
            for p, vec in self.linears[i - 1].items():
                c[self.component_slice(p)] += vec
        return np.linalg.solve((H + H.T) / 2.0, -c)

    def argmin_regularized(self, i, components, degrees, linear, tol=1e-10, max_iters=10000):
        components = list(components)
        fp = set(self.footprint(i))
        n = sum(self.dim(p) for p in components)
        ofs = {}
        pos = 0
        for p in components:
            ofs[p] = pos
            pos += self.dim(p)
        M = np.zeros((n, n))
        rhs = np.zeros(n)
        for (p, q), blk in self.quadratics[i - 1].items():
            M[ofs[p]:ofs[p] + self.dim(p), ofs[q]:ofs[q] + self.dim(q)] += blk
        for p, c in self.linears[i - 1].items():
            rhs[ofs[p]:ofs[p] + self.dim(p)] -= c
        for p in components:
            sl = slice(ofs[p], ofs[p] + self.dim(p))
            M[sl, sl] += 2.0 * degrees.get(p, 0.0) * np.eye(self.dim(p))
            rhs[sl] += linear.get(p, np.zeros(self.dim(p)))
        sol = np.linalg.solve(M, rhs)
        return {p: sol[ofs[p]:ofs[p] + self.dim(p)] for p in components}


class LassoSeparable(SeparableProblem):
    """f_i = 1/2 ||G_i y_fp - d_i||^2 + Σ_p w_{i,p} ||y_p||_1.

    ``G_i`` acts on the concatenation of agent i's footprint blocks in
    ascending component order.
    """

    def __init__(self, component_dims, footprints, design_matrices, observations,
                 l1_weights=None):
        super().__init__(component_dims, footprints)
        self.design_matrices = [np.asarray(G, dtype=float) for G in design_matrices]
        self.observations = [np.asarray(d, dtype=float) for d in observations]
        self.l1_weights = dict(l1_weights or {})
        for i in range(1, self.num_agents + 1):
            width = sum(self.dim(p) for p in self.footprint(i))
            if self.design_matrices[i - 1].shape[1] != width:
                raise OptimError(f"agent {i}: data matrix width != footprint dim")
        self.smooth_lipschitz = max(
            (float(np.linalg.norm(G, 2)) ** 2 for G in self.design_matrices
             if G.shape[1] > 0),
            default=0.0,
        )

    def _concat(self, i, blocks):
        return np.concatenate([blocks[p] for p in self.footprint(i)])

    def l1_weight(self, i, p):
        return float(self.l1_weights.get((i, p), 0.0))

    def value(self, i, blocks):
        r = self.design_matrices[i - 1] @ self._concat(i, blocks) - self.observations[i - 1]
        val = 0.5 * float(r @ r)
        for p in self.footprint(i):
            val += self.l1_weight(i, p) * float(np.sum(np.abs(blocks[p])))
        return val

    def smooth_gradient(self, i, blocks):
        G = self.design_matrices[i - 1]
        g = G.T @ (G @ self._concat(i, blocks) - self.observations[i - 1])
        out = {}
        pos = 0
        for p in self.footprint(i):
            out[p] = g[pos:pos + self.dim(p)]
            pos += self.dim(p)
        return out

    def solve_reference(self, tol: float = 1e-10, max_iters: int = 200000) -> np.ndarray:
        """Centralized minimizer via accelerated proximal gradient."""
        n = sum(self.component_dims)
        weights = np.zeros(n)
        for i in range(1, self.num_agents + 1):
            for p in self.footprint(i):
                w = self.l1_weight(i, p)
                if w:
                    s = self.component_slice(p)
                    weights[s] += w
        L = sum(float(np.linalg.norm(G, 2)) ** 2 for G in self.design_matrices)
        step = 1.0 / L
        y = np.zeros(n)
        x_prev = y.copy()
        momentum = 1.0

        def smooth_grad(v):
            out = np.zeros(n)
            for i in range(1, self.num_agents + 1):
                blocks = {p: v[self.component_slice(p)] for p in self.footprint(i)}
                for p, g in self.smooth_gradient(i, blocks).items():
                    out[self.component_slice(p)] += g
            return out

        for _ in range(max_iters):
            v = y - step * smooth_grad(y)
            x = np.sign(v) * np.maximum(np.abs(v) - step * weights, 0.0)
            momentum_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * momentum**2))
            y = x + ((momentum - 1.0) / momentum_next) * (x - x_prev)
            if np.max(np.abs(x - x_prev)) < tol:
                return x
            x_prev, momentum = x, momentum_next
        return x_prev


# -- stacked evaluation helpers --------------------------------------------


_SLICE_PLAN_CACHE: dict[tuple[int, int], tuple[object, object, list]] = {}
_SLICE_PLAN_CACHE_MAX = 64


def _agent_slice_plan(layout: EndLayout,
                      problem: SeparableProblem) -> list[tuple[int, dict[int, slice]]]:
    """Per agent, the stacked-vector slice of each footprint block."""
    key = (id(layout), id(problem))
    hit = _SLICE_PLAN_CACHE.get(key)
    if hit is not None and hit[0] is layout and hit[1] is problem:
        return hit[2]
    plan = [
        (i, {p: layout.block_slice(p, i) for p in problem.footprint(i)})
        for i in range(1, problem.num_agents + 1)
    ]
    if len(_SLICE_PLAN_CACHE) >= _SLICE_PLAN_CACHE_MAX:
        _SLICE_PLAN_CACHE.clear()
    _SLICE_PLAN_CACHE[key] = (layout, problem, plan)
    return plan


def stacked_value(layout: EndLayout, problem: SeparableProblem, hat: np.ndarray) -> float:
    """Σ_i f_i evaluated on each agent's own estimate blocks."""
    return sum(
        problem.value(i, {p: hat[s] for p, s in slices.items()})
        for i, slices in _agent_slice_plan(layout, problem)
    )


def stacked_gradient(layout: EndLayout, problem: SeparableProblem, hat: np.ndarray,
                     sub: bool = False) -> np.ndarray:
    """Gradient of the stacked cost: block (i,p) is agent i's partial in y_p."""
    out = np.zeros(layout.stacked_dim)
    for i, slices in _agent_slice_plan(layout, problem):
        blocks = {p: hat[s] for p, s in slices.items()}
        grads = problem.subgradient(i, blocks) if sub else problem.smooth_gradient(i, blocks)
        for p, g in grads.items():
            out[slices[p]] = g
    return out


# Dense stacked operators are memoized per (layout, block map) identity so the
# per-component Python loop runs once per solve rather than once per step. The
# cached pair is kept alive by the cache entry itself, so the ids stay valid.
_BLOCK_OP_CACHE: dict[tuple[int, int], tuple[object, object, np.ndarray]] = {}
_BLOCK_OP_CACHE_MAX = 64


def _component_block_operator(layout: EndLayout,
                              blocks: Mapping[int, np.ndarray]) -> np.ndarray:
    key = (id(layout), id(blocks))
    hit = _BLOCK_OP_CACHE.get(key)
    if hit is not None and hit[0] is layout and hit[1] is blocks:
        return hit[2]
    op = np.zeros((layout.stacked_dim, layout.stacked_dim))
    for p in layout.partition.components:
        s = layout.component_slice(p)
        d = layout.partition.dim(p)
        B = np.asarray(blocks[p], dtype=float)
        op[s, s] = B if d == 1 else np.kron(B, np.eye(d))
    if len(_BLOCK_OP_CACHE) >= _BLOCK_OP_CACHE_MAX:
        _BLOCK_OP_CACHE.clear()
    _BLOCK_OP_CACHE[key] = (layout, blocks, op)
    return op


def _apply_component_blocks(layout: EndLayout, blocks: Mapping[int, np.ndarray],
                            v: np.ndarray) -> np.ndarray:
    return _component_block_operator(layout, blocks) @ v


# -- dual reformulation and ADMM -------------------------------------------


def dual_reformulate(layout: EndLayout) -> list[tuple[int, int, int]]:
    """Edge consensus constraints equivalent to the original problem.

    Returns one (p, i, j) triple per proper design edge, meaning
    "agent i's and agent j's copies of component p must agree". Requires
    undirected (symmetric) design graphs.
    """
    constraints = []
    for p in layout.partition.components:
        g = layout.design[p].graph
        for (u, v) in sorted(g.edges):
            if u == v:
                continue
            if (v, u) not in g.edges:
                raise OptimError(f"component {p}: design graph not undirected")
            constraints.append((p, u, v))
    return constraints


def edge_constraint_residual(layout: EndLayout, hat: np.ndarray) -> float:
    """Largest violation among the pairwise design-edge constraints."""
    worst = 0.0
    for (p, i, j) in dual_reformulate(layout):
        d = hat[layout.block_slice(p, i)] - hat[layout.block_slice(p, j)]
        worst = max(worst, float(np.max(np.abs(d))))
    return worst


def _design_neighbors(layout: EndLayout, p: int, i: int) -> list[int]:
    return [j for j in layout.design[p].graph.out_neighbors(i) if j != i]


def admm_solve(
    layout: EndLayout,
    problem: SeparableProblem,
    alpha: float,
    max_iters: int = 5000,
    tol: float = 1e-10,
    reference: np.ndarray | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """Edge-based ADMM on the dual reformulation.

    Each agent alternates a regularized local argmin with a per-edge
    multiplier exchange; the relaxation parameter must lie strictly
    inside (0, 1).
    """
    if not 0.0 < alpha < 1.0:
        raise OptimError(f"relaxation parameter {alpha} outside (0, 1)")
    dual_reformulate(layout)  # validates undirectedness

    held = {i: [] for i in layout.agents}
    for p in layout.partition.components:
        for i in layout.holders(p):
            held[i].append(p)
    z = {}
    for p in layout.partition.components:
        for i in layout.holders(p):
            for j in _design_neighbors(layout, p, i):
                z[(i, j, p)] = np.zeros(layout.partition.dim(p))

    hat = np.zeros(layout.stacked_dim)
    ref_hat = None if reference is None else layout.embed_consensus(np.asarray(reference, float))
    trace = RunTrace(meta={"alpha": alpha,
                           "messages_per_iter": float(len(z))})
    for k in range(max_iters):
        new_hat = hat.copy()
        for i in layout.agents:
            comps = held[i]
            if not comps:
                continue
            # quadratic penalty of 1/2 per incident edge: with the multiplier
            # exchange used below, any other scaling shifts the fixed point
            # away from the consensus optimum
            degrees = {p: 0.5 * len(_design_neighbors(layout, p, i)) for p in comps}
            linear = {p: sum((z[(i, j, p)] for j in _design_neighbors(layout, p, i)),
                             np.zeros(layout.partition.dim(p)))
                      for p in comps}
            blocks = problem.argmin_regularized(i, comps, degrees, linear)
            for p in comps:
                new_hat[layout.block_slice(p, i)] = blocks[p]
        z = {
            (i, j, p): (1.0 - alpha) * z[(i, j, p)] - alpha * z[(j, i, p)]
            + 2.0 * alpha * new_hat[layout.block_slice(p, j)]
            for (i, j, p) in z
        }
        record = {"k": k,
                  "step": float(np.max(np.abs(new_hat - hat))),
                  "consensus_err": float(np.linalg.norm(layout.disagreement(new_hat)))}
        if ref_hat is not None:
            record["distance"] = float(np.max(np.abs(new_hat - ref_hat)))
        hat = new_hat
        trace.append(**record)
        target = record.get("distance", record["step"])
        if target < tol:
            break
    return hat, trace


# -- generic two-matrix family ---------------------------------------------


@dataclass
class AbcMatrices:
    """Per-component mixing matrices for the generic first-order family."""

    a_blocks: dict[int, np.ndarray]
    b_blocks: dict[int, np.ndarray]
    c_blocks: dict[int, np.ndarray]
    d_blocks: dict[int, np.ndarray]

    def gamma_bound(self, problem: SeparableProblem) -> float:
        if problem.smooth_lipschitz is None:
            raise OptimError("step bound needs the smoothness constant")
        lam = min(float(np.min(np.linalg.eigvalsh((D + D.T) / 2)))
                  for D in self.d_blocks.values())
        return lam / problem.smooth_lipschitz


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((M + M.T) / 2.0)
    vals = np.where(vals > -1e-10, np.maximum(vals, 0.0), vals)
    if np.min(vals) < 0:
        raise OptimError("matrix square root of an indefinite matrix")
    return vecs @ np.diag(np.sqrt(vals)) @ vecs.T


def abc_check(matrices: AbcMatrices, layout: EndLayout, tol: float = 1e-8) -> list[str]:
    """Check the five structural conditions; returns human-readable failures."""
    failures = []
    for p in layout.partition.components:
        n = layout.copies(p)
        A, B = matrices.a_blocks[p], matrices.b_blocks[p]
        C, D = matrices.c_blocks[p], matrices.d_blocks[p]
        one = np.ones(n)
        if np.max(np.abs(A - B @ D)) > tol:
            failures.append(f"C1: component {p}: A != B D")
        if np.max(np.abs(B - B.T)) > tol or np.min(np.linalg.eigvalsh((B + B.T) / 2)) < -tol:
            failures.append(f"C1: component {p}: B not symmetric PSD")
        if np.min(np.linalg.eigvalsh((D + D.T) / 2)) <= tol:
            failures.append(f"C1: component {p}: D not positive definite")
        if np.max(np.abs(D @ one - one)) > tol or np.max(np.abs(B @ one - one)) > tol:
            failures.append(f"C2: component {p}: consensus not fixed by D or B")
        cvals = np.linalg.eigvalsh((C + C.T) / 2)
        if np.max(np.abs(C - C.T)) > tol or cvals[0] < -tol:
            failures.append(f"C3: component {p}: C not symmetric PSD")
        else:
            sv = np.linalg.svd(C, compute_uv=False)
            scale = max(sv[0], 1.0)
            rank = int(np.sum(sv > tol * scale))
            null_ok = float(np.max(np.abs(C @ one))) <= tol * scale
            if rank != n - 1 or not null_ok:
                failures.append(f"C3: component {p}: null space of C is not the consensus line")
        if np.max(np.abs(B @ C - C @ B)) > tol:
            failures.append(f"C4: component {p}: B and C do not commute")
        try:
            rootB = _psd_sqrt(B)
            M = np.eye(n) - 0.5 * C - rootB @ D @ rootB
            if np.min(np.linalg.eigvalsh((M + M.T) / 2)) < -tol:
                failures.append(f"C5: component {p}: I - C/2 - sqrt(B) D sqrt(B) not PSD")
        except OptimError:
            failures.append(f"C5: component {p}: B has no PSD square root")
    return failures


def abc_step(
    layout: EndLayout,
    matrices: AbcMatrices,
    problem: SeparableProblem,
    y: np.ndarray,
    z: np.ndarray,
    gamma: float,
) -> tuple[np.ndarray, np.ndarray]:
    g = stacked_gradient(layout, problem, y)
    y_new = (_apply_component_blocks(layout, matrices.a_blocks, y)
             - gamma * _apply_component_blocks(layout, matrices.b_blocks, g)
             - z)
    z_new = z + _apply_component_blocks(layout, matrices.c_blocks, y_new)
    return y_new, z_new


def abc_merit(layout: EndLayout, problem: SeparableProblem, hat: np.ndarray,
              grad_star_norm: float, f_star: float) -> float:
    return max(
        float(np.linalg.norm(layout.disagreement(hat))) * grad_star_norm,
        abs(stacked_value(layout, problem, hat) - f_star),
    )


def abc_bound_constant(
    layout: EndLayout,
    matrices: AbcMatrices,
    problem: SeparableProblem,
    gamma: float,
    y0: np.ndarray,
    reference: np.ndarray,
) -> float:
    """Constant of the ergodic O(1/k) bound: merit(avg_k) <= constant / (2k)."""
    hat_star = layout.embed_consensus(np.asarray(reference, dtype=float))
    z_star = -stacked_gradient(layout, problem, hat_star)
    z_arg = 2.0 * z_star
    diff = np.asarray(y0, dtype=float) - hat_star
    d_norm2 = 0.0
    for p in layout.partition.components:
        s = layout.component_slice(p)
        block = diff[s].reshape(layout.copies(p), -1)
        d_norm2 += float(np.sum(block * (matrices.d_blocks[p] @ block)))
    # ||B - consensus projector|| over the stacked space: per component the
    # candidate values are the singular values of B_p - (1/n) 1 1', so take
    # the max across components (Kronecker with I preserves them)
    # single-copy components have identically zero disagreement and a 1x1
    # zero C block, so they cannot contribute to either constant
    multi = [p for p in layout.partition.components if layout.copies(p) >= 2]
    if not multi:
        return d_norm2 / gamma
    b_dev = max(
        float(np.linalg.norm(
            matrices.b_blocks[p]
            - np.full((layout.copies(p),) * 2, 1.0 / layout.copies(p)), 2))
        for p in multi
    )
    lam_lower = min(
        float(np.sort(np.linalg.eigvalsh(
            (matrices.c_blocks[p] + matrices.c_blocks[p].T) / 2))[1])
        for p in multi
    )
    if lam_lower <= 0:
        raise OptimError("ergodic bound needs C with one-dimensional null space")
    return d_norm2 / gamma + gamma * (b_dev / lam_lower) * float(z_arg @ z_arg)


def abc_range_residual(layout: EndLayout, matrices: AbcMatrices, z: np.ndarray) -> float:
    """Norm of the part of z outside range(B) (should stay ~0 from z0 = 0)."""
    total = 0.0
    for p in layout.partition.components:
        B = matrices.b_blocks[p]
        vals, vecs = np.linalg.eigh((B + B.T) / 2.0)
        null = vecs[:, np.abs(vals) <= 1e-12]
        if null.size == 0:
            continue
        s = layout.component_slice(p)
        block = z[s].reshape(layout.copies(p), -1)
        total += float(np.sum((null.T @ block) ** 2))
    return float(np.sqrt(total))


def abc_solve(
    layout: EndLayout,
    matrices: AbcMatrices,
    problem: SeparableProblem,
    gamma: float,
    max_iters: int = 10000,
    y0: np.ndarray | None = None,
    reference: np.ndarray | None = None,
    merit_every: int = 1,
) -> tuple[np.ndarray, RunTrace]:
    """Run the two-matrix iteration from z0 = 0 and track the ergodic merit."""
    bound = matrices.gamma_bound(problem)
    if not 0.0 < gamma < bound:
        warnings.warn(
            f"step size {gamma} outside the certified interval (0, {bound:.6g})",
            stacklevel=2,
        )
    y = np.zeros(layout.stacked_dim) if y0 is None else np.asarray(y0, dtype=float).copy()
    z = np.zeros(layout.stacked_dim)
    trace = RunTrace(meta={"gamma": gamma, "gamma_bound": bound})
    grad_star_norm = f_star = None
    if reference is not None:
        hat_star = layout.embed_consensus(np.asarray(reference, dtype=float))
        grad_star_norm = float(np.linalg.norm(stacked_gradient(layout, problem, hat_star)))
        f_star = stacked_value(layout, problem, hat_star)
    running = np.zeros_like(y)
    guard = DIVERGENCE_GUARD * (1.0 + float(np.linalg.norm(y)))
    for k in range(1, max_iters + 1):
        y, z = abc_step(layout, matrices, problem, y, z, gamma)
        if float(np.linalg.norm(y)) > guard or not np.isfinite(y).all():
            raise DivergenceError(f"stacked iterate blew up at iteration {k}")
        running += y
        if k % merit_every == 0 or k == max_iters:
            record = {"k": k,
                      "consensus_err": float(np.linalg.norm(layout.disagreement(y)))}
            if reference is not None:
                avg = running / k
                record["merit_avg"] = abc_merit(layout, problem, avg,
                                                grad_star_norm, f_star)
                record["merit"] = abc_merit(layout, problem, y, grad_star_norm, f_star)
            trace.append(**record)
    trace.meta["running_average"] = running / max_iters
    return y, trace


DIVERGENCE_GUARD = 1e6


# -- gradient tracking (AugDGM instantiation) ------------------------------


def _check_symmetric_doubly_stochastic(layout: EndLayout, tol: float = 1e-10) -> None:
    for p in layout.partition.components:
        W = layout.design[p].matrix()
        n = W.shape[0]
        if np.max(np.abs(W - W.T)) > tol or np.max(np.abs(W @ np.ones(n) - 1.0)) > tol:
            raise OptimError(
                f"component {p}: gradient tracking needs symmetric doubly "
                "stochastic exchange weights"
            )


def augdgm_matrices(layout: EndLayout) -> AbcMatrices:
    """The gradient-tracking choice A = B = W^2, C = (I - W)^2, D = I."""
    a, b, c, d = {}, {}, {}, {}
    for p in layout.partition.components:
        W = layout.design[p].matrix()
        n = W.shape[0]
        a[p] = b[p] = W @ W
        c[p] = (np.eye(n) - W) @ (np.eye(n) - W)
        d[p] = np.eye(n)
    return AbcMatrices(a, b, c, d)


def augdgm_step(
    layout: EndLayout,
    problem: SeparableProblem,
    y: np.ndarray,
    v: np.ndarray,
    gamma: float,
) -> tuple[np.ndarray, np.ndarray]:
    y_new = layout.apply_weight(y - gamma * v)
    g_new = stacked_gradient(layout, problem, y_new)
    g_old = stacked_gradient(layout, problem, y)
    v_new = layout.apply_weight(v + g_new - g_old)
    return y_new, v_new


def augdgm_solve(
    layout: EndLayout,
    problem: SeparableProblem,
    gamma: float,
    max_iters: int = 10000,
    reference: np.ndarray | None = None,
    merit_every: int = 1,
) -> tuple[np.ndarray, RunTrace]:
    """Gradient tracking from y0 = 0, v0 = W grad(0)."""
    _check_symmetric_doubly_stochastic(layout)
    y = np.zeros(layout.stacked_dim)
    v = layout.apply_weight(stacked_gradient(layout, problem, y))
    trace = RunTrace(meta={"gamma": gamma})
    grad_star_norm = f_star = None
    if reference is not None:
        hat_star = layout.embed_consensus(np.asarray(reference, dtype=float))
        grad_star_norm = float(np.linalg.norm(stacked_gradient(layout, problem, hat_star)))
        f_star = stacked_value(layout, problem, hat_star)
    running = np.zeros_like(y)
    for k in range(1, max_iters + 1):
        y, v = augdgm_step(layout, problem, y, v, gamma)
        if not np.isfinite(y).all():
            raise DivergenceError(f"tracking iterate diverged at iteration {k}")
        running += y
        if k % merit_every == 0 or k == max_iters:
            record = {"k": k,
                      "consensus_err": float(np.linalg.norm(layout.disagreement(y)))}
            if reference is not None:
                record["merit_avg"] = abc_merit(layout, problem, running / k,
                                                grad_star_norm, f_star)
                record["merit"] = abc_merit(layout, problem, y, grad_star_norm, f_star)
            trace.append(**record)
    trace.meta["running_average"] = running / max_iters
    return y, trace


def tracking_sum_residual(layout: EndLayout, problem: SeparableProblem,
                          y: np.ndarray, v: np.ndarray) -> float:
    """How far Σ_i v_{i,p} is from Σ_j grad_p f_j at the current estimates."""
    worst = 0.0
    g = stacked_gradient(layout, problem, y)
    for p in layout.partition.components:
        s = layout.component_slice(p)
        d = layout.partition.dim(p)
        vs = v[s].reshape(layout.copies(p), d).sum(axis=0)
        gs = g[s].reshape(layout.copies(p), d).sum(axis=0)
        worst = max(worst, float(np.max(np.abs(vs - gs))))
    return worst


# -- push-sum subgradient over time-varying designs ------------------------


def power_step_schedule(c: float = 1.0, a: float = 0.51) -> Callable[[int], float]:
    """γ^k = c (k+1)^(-a); requires a in (1/2, 1] so that Σγ = ∞, Σγ² < ∞."""
    if not (0.5 < a <= 1.0) or c <= 0:
        raise OptimError("schedule needs c > 0 and exponent in (1/2, 1]")
    return lambda k: c * (k + 1) ** (-a)


@dataclass
class PushSumState:
    z: np.ndarray
    q: dict[int, np.ndarray]
    y: np.ndarray | None = None


def pushsum_init(layout: EndLayout, z0: np.ndarray | None = None) -> PushSumState:
    z = np.zeros(layout.stacked_dim) if z0 is None else np.asarray(z0, dtype=float).copy()
    q = {p: np.ones(layout.copies(p)) for p in layout.partition.components}
    return PushSumState(z=z, q=q, y=z.copy())


def pushsum_dgd_step(
    layout: EndLayout,
    weights_at_k: Mapping[int, np.ndarray],
    problem: SeparableProblem,
    state: PushSumState,
    gamma_k: float,
) -> tuple[PushSumState, np.ndarray]:
    """One push-sum round; returns the new state and the subgradient stack."""
    q_new = {}
    w = np.empty_like(state.z)
    y = np.empty_like(state.z)
    for p in layout.partition.components:
        W = np.asarray(weights_at_k[p], dtype=float)
        q_new[p] = W @ state.q[p]
        if np.min(q_new[p]) <= 0.0:
            raise OptimError(f"component {p}: push-sum weight became non-positive")
        s = layout.component_slice(p)
        d = layout.partition.dim(p)
        wp = W @ state.z[s].reshape(layout.copies(p), d)
        w[s] = wp.ravel()
        y[s] = (wp / q_new[p][:, None]).ravel()
    g = stacked_gradient(layout, problem, y, sub=True)
    z_new = w - gamma_k * g
    return PushSumState(z=z_new, q=q_new, y=y), g


def constant_design_weights(layout: EndLayout) -> dict[int, np.ndarray]:
    return {p: layout.design[p].matrix() for p in layout.partition.components}


def example_design_schedule(
    layout: EndLayout, comm_sequence: Sequence[Graph]
) -> Callable[[int], dict[int, np.ndarray]]:
    """Periodic time-varying designs: the fixed design graph intersected with
    the communication snapshot of the round, self-loops kept, column-stochastic
    weights."""
    period = len(comm_sequence)
    cache: dict[int, dict[int, np.ndarray]] = {}

    def at(k: int) -> dict[int, np.ndarray]:
        t = k % period
        if t not in cache:
            out = {}
            for p in layout.partition.components:
                base = layout.design[p].graph
                snap = restrict(comm_sequence[t], list(base.nodes))
                g = intersect(base, snap.with_self_loops()).with_self_loops()
                out[p] = column_stochastic_weights(g).matrix()
            cache[t] = out
        return cache[t]

    return at


def pushsum_solve(
    layout: EndLayout,
    design_schedule: Callable[[int], Mapping[int, np.ndarray]],
    problem: SeparableProblem,
    gamma: Callable[[int], float],
    max_iters: int = 100000,
    reference: np.ndarray | None = None,
    stop_tol: float | None = None,
    merit: Callable[[np.ndarray], float] | None = None,
    check_every: int = 100,
    record_invariants: bool = True,
) -> tuple[PushSumState, RunTrace]:
    """Iterate the push-sum subgradient scheme with a step-size schedule.

    The trace records the consensus residual of the ratio estimates against
    the mass-weighted component means, the objective gap at the means when a
    reference optimum is supplied, and (optionally) the worst per-step
    deviations of the conserved q-mass and of the averaged-process identity.
    """
    state = pushsum_init(layout)
    trace = RunTrace()
    f_star = problem.total_value(np.asarray(reference, float)) if reference is not None else None
    mass_err = 0.0
    avg_err = 0.0
    zbar = {p: np.zeros(layout.partition.dim(p)) for p in layout.partition.components}
    for k in range(max_iters):
        gk = gamma(k)
        state, g = pushsum_dgd_step(layout, design_schedule(k), problem, state, gk)
        if not np.isfinite(state.z).all():
            # without this check the nan would silently vanish in the
            # max-reductions below
            raise DivergenceError(f"push-sum iterate became non-finite at iteration {k}")
        if record_invariants:
            for p in layout.partition.components:
                n = layout.copies(p)
                mass_err = max(mass_err, abs(float(np.sum(state.q[p])) - n))
                s = layout.component_slice(p)
                d = layout.partition.dim(p)
                zbar[p] = zbar[p] - gk * g[s].reshape(n, d).mean(axis=0)
                actual = state.z[s].reshape(n, d).mean(axis=0)
                avg_err = max(avg_err, float(np.max(np.abs(actual - zbar[p]))))
        if (k + 1) % check_every == 0 or k == max_iters - 1:
            res = 0.0
            means = np.empty(layout.partition.total_dim)
            for p in layout.partition.components:
                s = layout.component_slice(p)
                d = layout.partition.dim(p)
                m = state.z[s].reshape(layout.copies(p), d).mean(axis=0)
                means[problem.component_slice(p)] = m
                res = max(res, float(np.max(np.abs(
                    state.y[s].reshape(layout.copies(p), d) - m))))
            record = {"k": k, "consensus_err": res, "gamma": gk}
            if f_star is not None:
                record["f_gap"] = problem.total_value(means) - f_star
            if merit is not None:
                record["merit"] = merit(state.y)
            trace.append(**record)
            if stop_tol is not None and merit is not None and record["merit"] <= stop_tol:
                break
    trace.meta["max_mass_error"] = mass_err
    trace.meta["max_averaged_process_error"] = avg_err
    return state, trace


# -- constraint-coupled problems via the dual ------------------------------


@dataclass
class ConstraintCoupledProblem:
    """Σ f_i(x_i) subject to per-component affine coupling constraints.

    ``argmin_oracle(i, y_blocks)`` returns a minimizer of
    f_i(x_i) + Σ_p <y_p, A_{p,i} x_i - a_{p,i}> over agent i's (compact)
    domain; ``cost(i, x_i)`` evaluates f_i.
    """

    x_dims: tuple[int, ...]
    component_dims: tuple[int, ...]
    footprints: tuple[tuple[int, ...], ...]
    con_blocks: Mapping[tuple[int, int], np.ndarray]
    con_offsets: Mapping[tuple[int, int], np.ndarray]
    argmin_oracle: Callable[[int, Mapping[int, np.ndarray]], np.ndarray]
    cost: Callable[[int, np.ndarray], float]

    def __post_init__(self):
        object.__setattr__(self, "con_blocks", dict(self.con_blocks))
        object.__setattr__(self, "con_offsets", dict(self.con_offsets))
        for (p, i) in self.con_blocks:
            if p not in self.footprints[i - 1]:
                raise OptimError(f"constraint block {(p, i)} off the interference pattern")

    @property
    def num_agents(self) -> int:
        return len(self.x_dims)

    def dual_value(self, i: int, blocks: Mapping[int, np.ndarray]) -> tuple[float, np.ndarray]:
        x = self.argmin_oracle(i, blocks)
        val = self.cost(i, x)
        for p in self.footprints[i - 1]:
            A = self.con_blocks.get((p, i))
            a = self.con_offsets.get((p, i))
            gap = (A @ x if A is not None else 0.0) - (a if a is not None else 0.0)
            val += float(blocks[p] @ gap)
        return val, x

    def constraint_gap(self, p: int, xs: Mapping[int, np.ndarray]) -> np.ndarray:
        gap = np.zeros(self.component_dims[p - 1])
        for (pp, i), A in self.con_blocks.items():
            if pp == p:
                gap += A @ xs[i]
        for (pp, i), a in self.con_offsets.items():
            if pp == p:
                gap -= a
        return gap


class _NegatedDual(SeparableProblem):
    """-Σ φ_i as a separable minimization problem for the push-sum driver."""

    def __init__(self, ccp: ConstraintCoupledProblem):
        super().__init__(ccp.component_dims, ccp.footprints)
        self.ccp = ccp
        self.last_primal: dict[int, np.ndarray] = {}

    def value(self, i, blocks):
        val, _ = self.ccp.dual_value(i, blocks)
        return -val

    def smooth_gradient(self, i, blocks):
        # dual subgradient: the constraint gap at the local inner minimizer
        x = self.ccp.argmin_oracle(i, blocks)
        self.last_primal[i] = x
        out = {}
        for p in self.footprint(i):
            A = self.ccp.con_blocks.get((p, i))
            a = self.ccp.con_offsets.get((p, i))
            g = (A @ x if A is not None else np.zeros(self.dim(p)))
            if a is not None:
                g = g - a
            out[p] = -g
        return out


def constraint_coupled_solve(
    layout: EndLayout,
    ccp: ConstraintCoupledProblem,
    design_schedule: Callable[[int], Mapping[int, np.ndarray]],
    gamma: Callable[[int], float],
    max_iters: int = 50000,
    reference_dual: np.ndarray | None = None,
) -> tuple[np.ndarray, dict[int, np.ndarray], RunTrace]:
    """Maximize the coupled dual with push-sum and recover the primal.

    Returns the consensus dual estimate, the inner minimizers evaluated at
    that dual (the step-weighted ergodic averages are kept in the trace
    metadata), and the run trace.
    """
    dual = _NegatedDual(ccp)
    state = pushsum_init(layout)
    trace = RunTrace()
    x_acc = {i: np.zeros(ccp.x_dims[i - 1]) for i in range(1, ccp.num_agents + 1)}
    weight_acc = 0.0
    for k in range(max_iters):
        gk = gamma(k)
        state, _ = pushsum_dgd_step(layout, design_schedule(k), dual, state, gk)
        for i, x in dual.last_primal.items():
            x_acc[i] += gk * x
        weight_acc += gk
        if (k + 1) % 100 == 0 or k == max_iters - 1:
            means = layout.component_means(state.z)
            record = {"k": k,
                      "consensus_err": float(np.linalg.norm(layout.disagreement(state.y)))}
            if reference_dual is not None:
                record["dual_distance"] = float(np.max(np.abs(means - reference_dual)))
            x_avg = {i: v / weight_acc for i, v in x_acc.items()}
            gap = max(
                float(np.max(np.abs(ccp.constraint_gap(p, x_avg))))
                for p in layout.partition.components
            )
            record["primal_gap"] = gap
            trace.append(**record)
    trace.meta["x_ergodic"] = {i: v / weight_acc for i, v in x_acc.items()}
    y_mean = layout.component_means(state.z)
    x_final = {}
    for i in range(1, ccp.num_agents + 1):
        blocks = {p: y_mean[dual.component_slice(p)] for p in ccp.footprints[i - 1]}
        x_final[i] = ccp.argmin_oracle(i, blocks)
    return y_mean, x_final, trace


# -- scaled merit used by the sensing experiments --------------------------


def merit_v(layout: EndLayout, problem: SeparableProblem, hat: np.ndarray,
            reference: np.ndarray) -> float:
    """max of the copy-count-scaled disagreement (times the reference gradient
    norm) and the objective gap at the consensus projection."""
    hat = np.asarray(hat, dtype=float)
    hat_star = layout.embed_consensus(np.asarray(reference, dtype=float))
    grad_star = stacked_gradient(layout, problem, hat_star, sub=True)
    scaled = layout.disagreement(hat).copy()
    for p in layout.partition.components:
        scaled[layout.component_slice(p)] /= layout.copies(p)
    proj = layout.component_means(hat)
    return max(
        float(np.linalg.norm(scaled)) * float(np.linalg.norm(grad_star)),
        abs(problem.total_value(proj) - problem.total_value(np.asarray(reference, float))),
    )
