"""Equilibrium seeking over estimate-exchange layouts.

Two algorithm families:

* projected pseudo-gradient dynamics for Nash problems, where each agent
  mixes its neighbors' copies of the other players' actions and takes a
  projected gradient step on its own action, with a linear-rate certificate
  built from per-component weight matrices;
* a primal-dual forward-backward iteration for generalized Nash problems
  with affine aggregation and affine coupling constraints, tracking the
  aggregation value and the dual variable over two layouts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .layout import EndLayout
from .trace import DivergenceError, RunTrace

_DIVERGENCE_FACTOR = 1e6


class GameError(ValueError):
    pass


# -- projection oracles ----------------------------------------------------


@dataclass(frozen=True)
class RealsSet:
    """No constraint: projection is the identity."""

    def project(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float)


@dataclass(frozen=True)
class BoxSet:
    lower: float | np.ndarray
    upper: float | np.ndarray

    def project(self, v: np.ndarray) -> np.ndarray:
        return np.clip(v, self.lower, self.upper)


@dataclass(frozen=True)
class BallSet:
    center: np.ndarray
    radius: float

    def project(self, v: np.ndarray) -> np.ndarray:
        d = np.asarray(v, dtype=float) - self.center
        norm = float(np.linalg.norm(d))
        if norm <= self.radius:
            return np.asarray(v, dtype=float)
        return self.center + d * (self.radius / norm)


@dataclass(frozen=True)
class HalfspaceSet:
    """{v : <normal, v> <= offset}."""

    normal: np.ndarray
    offset: float

    def project(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        slack = float(self.normal @ v) - self.offset
        if slack <= 0:
            return v
        return v - slack * self.normal / float(self.normal @ self.normal)


# -- Nash games ------------------------------------------------------------


@dataclass(frozen=True)
class GameSpec:
    """A game given by per-agent partial-gradient oracles.

    ``gradient(i, blocks)`` receives exactly the action blocks named by the
    interference pattern (keys are agent/component ids) and returns the
    partial gradient of agent ``i``'s cost in its own action.
    """

    action_dims: tuple[int, ...]
    gradient: Callable[[int, Mapping[int, np.ndarray]], np.ndarray]
    interference: frozenset[tuple[int, int]]
    domains: Mapping[int, object] = field(default_factory=dict)
    mu: float | None = None
    theta: float | None = None
    estimated_constants: bool = False

    def __post_init__(self):
        object.__setattr__(self, "interference", frozenset(self.interference))
        object.__setattr__(self, "domains", dict(self.domains))
        if self.mu is not None and self.theta is not None:
            if self.mu <= 0 or self.theta < self.mu:
                raise GameError("need 0 < mu <= theta")
        n = len(self.action_dims)
        for i in range(1, n + 1):
            if (i, i) not in self.interference:
                raise GameError(f"agent {i} must interfere with itself")

    @property
    def num_agents(self) -> int:
        return len(self.action_dims)

    def domain(self, i: int):
        return self.domains.get(i, RealsSet())

    def footprint(self, i: int) -> tuple[int, ...]:
        return tuple(sorted(p for (p, j) in self.interference if j == i))

    def action_slice(self, i: int) -> slice:
        start = sum(self.action_dims[: i - 1])
        return slice(start, start + self.action_dims[i - 1])

    def pseudo_gradient(self, x: np.ndarray) -> np.ndarray:
        """Stacked partial gradients evaluated on the true actions."""
        out = np.empty_like(x, dtype=float)
        for i in range(1, self.num_agents + 1):
            blocks = {p: x[self.action_slice(p)] for p in self.footprint(i)}
            out[self.action_slice(i)] = self.gradient(i, blocks)
        return out


def estimate_game_constants(
    game: GameSpec, box: tuple[float, float], num_samples: int = 200, seed: int = 0
) -> tuple[float, float]:
    """Sampled strong-monotonicity and Lipschitz constants of the pseudo-gradient."""
    rng = np.random.default_rng(seed)
    n = sum(game.action_dims)
    mu, theta = np.inf, 0.0
    for _ in range(num_samples):
        x = rng.uniform(box[0], box[1], n)
        y = rng.uniform(box[0], box[1], n)
        d = x - y
        dn2 = float(d @ d)
        if dn2 < 1e-16:
            continue
        df = game.pseudo_gradient(x) - game.pseudo_gradient(y)
        mu = min(mu, float(df @ d) / dn2)
        theta = max(theta, float(np.linalg.norm(df)) / np.sqrt(dn2))
    return mu, theta


def ne_step(layout: EndLayout, game: GameSpec, hat: np.ndarray, alpha: float) -> np.ndarray:
    """One round: mix all copies, projected gradient step on the own block."""
    if alpha <= 0:
        raise GameError("step size must be positive")
    mixed = layout.apply_weight(hat)
    out = mixed.copy()
    for i in range(1, game.num_agents + 1):
        blocks = {p: mixed[layout.block_slice(p, i)] for p in game.footprint(i)}
        grad = game.gradient(i, blocks)
        own = layout.block_slice(i, i)
        out[own] = game.domain(i).project(mixed[own] - alpha * grad)
    return out


@dataclass
class NeTheorem1Certificate:
    """Contraction certificate for the pseudo-gradient dynamics.

    ``rho`` bounds the squared per-step contraction in the weighted norm
    given by the per-component ``q_matrices``; ``certified`` is False when
    no weight construction applied or a numeric identity failed, in which
    case the iteration is still runnable but without a rate guarantee.
    """

    alpha: float
    rho: float
    m_alpha: np.ndarray
    q_matrices: dict[int, np.ndarray]
    perron: dict[int, np.ndarray]
    sigma: dict[int, float]
    sigma_bar: float
    theta_bar: float
    gamma_lo: float
    gamma_hi: float
    mu: float
    theta: float
    certified: bool
    estimated_constants: bool
    notes: list[str] = field(default_factory=list)

    def xi_norm(self, layout: EndLayout, v: np.ndarray) -> float:
        total = 0.0
        for p in layout.partition.components:
            block = v[layout.component_slice(p)].reshape(layout.copies(p), -1)
            total += float(np.sum(block * (self.q_matrices[p] @ block)))
        return float(np.sqrt(total))


def _perron_left_vector(W: np.ndarray, tol: float = 1e-12, max_iters: int = 100000):
    n = W.shape[0]
    q = np.full(n, 1.0 / n)
    for _ in range(max_iters):
        nxt = W.T @ q
        s = nxt.sum()
        if s <= 0:
            break
        nxt /= s
        if np.max(np.abs(nxt - q)) < tol:
            return np.maximum(nxt, 0.0) / np.maximum(nxt, 0.0).sum()
        q = nxt
    # periodic or slowly mixing chain: fall back to a null-space solve
    M = W.T - np.eye(n)
    _, _, vh = np.linalg.svd(M)
    q = vh[-1]
    if q.sum() < 0:
        q = -q
    q = np.maximum(q, 0.0)
    return q / q.sum()


def _weighted_operator_norm(E: np.ndarray, Q: np.ndarray) -> float:
    vals, vecs = np.linalg.eigh(Q)
    vals = np.maximum(vals, 0.0)
    root = vecs @ np.diag(np.sqrt(vals)) @ vecs.T
    inv_root = vecs @ np.diag(1.0 / np.sqrt(np.maximum(vals, 1e-300))) @ vecs.T
    return float(np.linalg.norm(root @ E @ inv_root, 2))


def _component_weights(layout: EndLayout, game: GameSpec, i: int):
    """Pick (Q_i, q_i, sigma_i, note) for one component; note is None on success."""
    W = layout.design[i].matrix()
    n = W.shape[0]
    holders = layout.holders(i)
    pos = holders.index(i)
    e_pos = np.zeros(n)
    e_pos[pos] = 1.0
    tol = 1e-8

    if np.max(np.abs(W @ np.ones(n) - 1.0)) > tol:
        return None, None, None, f"component {i}: weights not row stochastic"
    from .graphs import is_rooted

    if not is_rooted(layout.design[i].graph, i):
        return None, None, None, f"component {i}: exchange graph not rooted at owner"

    # star: every holder copies straight from the owner
    if np.max(np.abs(W - np.outer(np.ones(n), e_pos))) <= tol:
        return np.eye(n), e_pos, 0.0, None

    # doubly stochastic
    if np.max(np.abs(np.ones(n) @ W - 1.0)) <= tol:
        q = np.full(n, 1.0 / n)
        sigma = float(np.linalg.norm(W - np.outer(np.ones(n), q), 2))
        return np.eye(n), q, sigma, None

    from .graphs import is_strongly_connected

    has_self_loops = np.all(np.diag(W) > 0)
    if is_strongly_connected(layout.design[i].graph) and has_self_loops:
        q = _perron_left_vector(W)
        if q[pos] <= 0:
            return None, None, None, f"component {i}: owner weight vanishes in Perron vector"
        Q = np.diag(q / q[pos])
        sigma = _weighted_operator_norm(W - np.outer(np.ones(n), q), Q)
        return Q, q, sigma, None

    # leader-follower: the owner's row is frozen, followers average below it
    if abs(W[pos, pos] - 1.0) <= tol and np.max(np.abs(np.delete(W[pos], pos))) <= tol:
        if not isinstance(game.domain(i), RealsSet):
            return None, None, None, (
                f"component {i}: non-diagonal weights need an unconstrained action set"
            )
        order = [pos] + [k for k in range(n) if k != pos]
        Wp = W[np.ix_(order, order)]
        q = e_pos.copy()
        E = Wp - np.outer(np.ones(n), np.eye(n)[0])
        if np.max(np.abs(np.linalg.eigvals(E))) >= 1.0 - 1e-12:
            return None, None, None, f"component {i}: follower block not contractive"
        X = scipy.linalg.solve_discrete_lyapunov(E.T, np.eye(n))
        X22 = X[1:, 1:]
        Qp = np.zeros((n, n))
        Qp[0, 0] = 1.0 + float(np.ones(n - 1) @ X22 @ np.ones(n - 1))
        Qp[0, 1:] = -np.ones(n - 1) @ X22
        Qp[1:, 0] = -X22 @ np.ones(n - 1)
        Qp[1:, 1:] = X22
        inv = np.argsort(order)
        Q = Qp[np.ix_(inv, inv)]
        sigma = _weighted_operator_norm(W - np.outer(np.ones(n), q), Q)
        return Q, q, sigma, None

    return None, None, None, f"component {i}: no weight construction applies"


def certify_theorem1(
    layout: EndLayout, game: GameSpec, alpha: float, tol: float = 1e-8
) -> NeTheorem1Certificate:
    """Build the contraction certificate for the given step size."""
    if game.mu is None or game.theta is None:
        raise GameError("certificate needs monotonicity and Lipschitz constants")
    mu, theta = game.mu, game.theta
    q_matrices: dict[int, np.ndarray] = {}
    perron: dict[int, np.ndarray] = {}
    sigmas: dict[int, float] = {}
    notes: list[str] = []
    certified = True
    for i in range(1, game.num_agents + 1):
        Q, q, sigma, note = _component_weights(layout, game, i)
        if note is not None:
            notes.append(note)
            certified = False
            n = layout.copies(i)
            Q, q, sigma = np.eye(n), np.full(n, 1.0 / n), 1.0
        else:
            W = layout.design[i].matrix()
            n = W.shape[0]
            pos = layout.holders(i).index(i)
            ok = (
                np.min(np.linalg.eigvalsh(Q)) > 0
                and abs((np.ones(n) @ Q)[pos] - 1.0) <= tol
                and np.max(np.abs(np.ones(n) @ Q @ W @ (np.eye(n) - np.outer(np.ones(n), q))))
                <= tol
                and sigma < 1.0
            )
            if not ok:
                notes.append(f"component {i}: weight identities failed numerically")
                certified = False
        q_matrices[i], perron[i], sigmas[i] = Q, q, sigma

    sigma_bar = max(sigmas.values())
    lam_min_xi = min(float(np.min(np.linalg.eigvalsh(Q))) for Q in q_matrices.values())
    own_diag = max(
        float(q_matrices[i][layout.holders(i).index(i), layout.holders(i).index(i)])
        for i in range(1, game.num_agents + 1)
    )
    theta_bar = theta * np.sqrt(own_diag / lam_min_xi)
    mass = {
        i: float(np.ones(layout.copies(i)) @ q_matrices[i] @ np.ones(layout.copies(i)))
        for i in range(1, game.num_agents + 1)
    }
    gamma_lo = float(np.sqrt(1.0 / max(mass.values())))
    gamma_hi = float(np.sqrt(1.0 / min(mass.values())))
    off = sigma_bar * (alpha * (theta_bar + theta * gamma_hi) + alpha**2 * theta_bar * theta * gamma_hi)
    m_alpha = np.array(
        [
            [1.0 - 2 * alpha * mu * gamma_lo**2 + alpha**2 * theta**2 * gamma_hi**2, off],
            [off, sigma_bar**2 * (1.0 + 2 * alpha * theta_bar + alpha**2 * theta_bar**2)],
        ]
    )
    a, b, d = m_alpha[0, 0], m_alpha[0, 1], m_alpha[1, 1]
    rho = float((a + d) / 2.0 + np.sqrt(((a - d) / 2.0) ** 2 + b**2))
    return NeTheorem1Certificate(
        alpha=alpha,
        rho=rho,
        m_alpha=m_alpha,
        q_matrices=q_matrices,
        perron=perron,
        sigma=sigmas,
        sigma_bar=sigma_bar,
        theta_bar=float(theta_bar),
        gamma_lo=gamma_lo,
        gamma_hi=gamma_hi,
        mu=mu,
        theta=theta,
        certified=certified,
        estimated_constants=game.estimated_constants,
        notes=notes,
    )


def search_ne_step_size(
    layout: EndLayout, game: GameSpec, target: float = 0.999, grid: int = 60
) -> NeTheorem1Certificate:
    """Largest step size with certified contraction factor at most ``target``.

    Samples a geometric grid to find the feasible region, then bisects its
    right edge.
    """
    alphas = np.geomspace(1e-8, 1e2, grid)
    feas = [a for a in alphas if certify_theorem1(layout, game, a).rho <= target]
    if not feas:
        raise GameError("no certifiable step size found")
    lo = max(feas)
    hi = float(alphas[np.searchsorted(alphas, lo) + 1]) if lo < alphas[-1] else lo * 2
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if certify_theorem1(layout, game, mid).rho <= target:
            lo = mid
        else:
            hi = mid
    return certify_theorem1(layout, game, lo)


def ne_solve(
    layout: EndLayout,
    game: GameSpec,
    alpha: float,
    max_iters: int = 10000,
    tol: float = 1e-10,
    hat0: np.ndarray | None = None,
    reference: np.ndarray | None = None,
    certificate: NeTheorem1Certificate | None = None,
) -> tuple[np.ndarray, RunTrace]:
    """Iterate the pseudo-gradient dynamics to a fixed point.

    With a reference equilibrium the trace records the weighted distance
    and the per-step squared contraction ratio.
    """
    hat = np.zeros(layout.stacked_dim) if hat0 is None else np.asarray(hat0, float).copy()
    ref_hat = None if reference is None else layout.embed_consensus(np.asarray(reference, float))
    trace = RunTrace(meta={"alpha": alpha})
    guard = _DIVERGENCE_FACTOR * (1.0 + float(np.linalg.norm(hat)))
    prev_dist = None
    for k in range(max_iters):
        nxt = ne_step(layout, game, hat, alpha)
        step = float(np.linalg.norm(nxt - hat))
        record = {"k": k, "step": step}
        if ref_hat is not None:
            if certificate is not None:
                dist = certificate.xi_norm(layout, nxt - ref_hat)
            else:
                dist = float(np.linalg.norm(nxt - ref_hat))
            record["distance"] = dist
            if prev_dist is not None and prev_dist > 0:
                record["ratio"] = (dist / prev_dist) ** 2
            prev_dist = dist
        trace.append(**record)
        hat = nxt
        if float(np.linalg.norm(hat)) > guard:
            raise DivergenceError(
                f"iterate norm exceeded {guard:.3e} at iteration {k} (alpha={alpha})"
            )
        if ref_hat is not None and prev_dist is not None and prev_dist < tol:
            break
        if ref_hat is None and step < tol:
            break
    return hat, trace


# -- generalized Nash, affine-aggregative ----------------------------------


@dataclass(frozen=True)
class AggregativeGameSpec:
    """Aggregative game with affine aggregation and affine coupling constraints.

    Matrices are given blockwise and must vanish off the two interference
    patterns. ``grad_x(i, x_i, sigma)`` / ``grad_sigma(i, x_i, sigma)`` take
    the agent's estimates of the aggregation blocks it needs (dict keyed by
    component) and return the partial gradients; ``grad_sigma`` returns a
    dict over the same keys.
    """

    action_dims: tuple[int, ...]
    sigma_dims: Mapping[int, int]
    lambda_dims: Mapping[int, int]
    grad_x: Callable[[int, np.ndarray, Mapping[int, np.ndarray]], np.ndarray]
    grad_sigma: Callable[[int, np.ndarray, Mapping[int, np.ndarray]], Mapping[int, np.ndarray]]
    agg_blocks: Mapping[tuple[int, int], np.ndarray]
    agg_offsets: Mapping[tuple[int, int], np.ndarray]
    con_blocks: Mapping[tuple[int, int], np.ndarray]
    con_offsets: Mapping[tuple[int, int], np.ndarray]
    interference_sigma: frozenset[tuple[int, int]]
    interference_lambda: frozenset[tuple[int, int]]
    sense: str = "equality"
    domains: Mapping[int, object] = field(default_factory=dict)
    # optional vectorized replacement for the per-agent gradient loop:
    # called as extended_gradient(ops, x, sigma_hat) and must return the
    # same vector as the generic path
    extended_gradient: Callable | None = None

    def __post_init__(self):
        for name in ("agg_blocks", "agg_offsets", "con_blocks", "con_offsets", "domains",
                     "sigma_dims", "lambda_dims"):
            object.__setattr__(self, name, dict(getattr(self, name)))
        object.__setattr__(self, "interference_sigma", frozenset(self.interference_sigma))
        object.__setattr__(self, "interference_lambda", frozenset(self.interference_lambda))
        if self.sense not in ("equality", "inequality"):
            raise GameError("constraint sense must be equality or inequality")
        for key in self.agg_blocks:
            if key not in self.interference_sigma:
                raise GameError(f"aggregation block {key} off the interference pattern")
        for key in self.con_blocks:
            if key not in self.interference_lambda:
                raise GameError(f"constraint block {key} off the interference pattern")

    @property
    def num_agents(self) -> int:
        return len(self.action_dims)

    def domain(self, i: int):
        return self.domains.get(i, RealsSet())

    def action_slice(self, i: int) -> slice:
        start = sum(self.action_dims[: i - 1])
        return slice(start, start + self.action_dims[i - 1])

    @property
    def total_action_dim(self) -> int:
        return sum(self.action_dims)

    def sigma_footprint(self, i: int) -> tuple[int, ...]:
        return tuple(sorted(q for (q, j) in self.interference_sigma if j == i))

    def aggregation(self, x: np.ndarray) -> dict[int, np.ndarray]:
        """True aggregation values, one block per component."""
        out = {}
        for q, dim in self.sigma_dims.items():
            acc = np.zeros(dim)
            for (qq, i), B in self.agg_blocks.items():
                if qq == q:
                    acc += B @ x[self.action_slice(i)]
            for (qq, i), b in self.agg_offsets.items():
                if qq == q:
                    acc += b
            out[q] = acc
        return out

    def constraint_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense stacked (A, a) of the coupling constraints A x = a (or <=)."""
        mdims = dict(self.lambda_dims)
        rows = sum(mdims.values())
        A = np.zeros((rows, self.total_action_dim))
        a = np.zeros(rows)
        ofs = 0
        for m in sorted(mdims):
            for (mm, i), blk in self.con_blocks.items():
                if mm == m:
                    A[ofs:ofs + mdims[m], self.action_slice(i)] = blk
            for (mm, i), vec in self.con_offsets.items():
                if mm == m:
                    a[ofs:ofs + mdims[m]] += vec
            ofs += mdims[m]
        return A, a

    def pseudo_gradient(self, x: np.ndarray) -> np.ndarray:
        """True pseudo-gradient (estimates exact and at consensus)."""
        sigma = self.aggregation(x)
        out = np.empty(self.total_action_dim)
        for i in range(1, self.num_agents + 1):
            xi = x[self.action_slice(i)]
            local = {q: sigma[q] for q in self.sigma_footprint(i)}
            g = self.grad_x(i, xi, local).astype(float).copy()
            gs = self.grad_sigma(i, xi, local)
            for q, gq in gs.items():
                B = self.agg_blocks.get((q, i))
                if B is not None:
                    g += B.T @ gq
            out[self.action_slice(i)] = g
        return out


@dataclass
class GneOperators:
    """Stacked operators for the primal-dual iteration, built once.

    Small instances store the operators densely (BLAS matvecs beat sparse
    overhead at desk scale); large ones stay in CSR.
    """

    game: AggregativeGameSpec
    sigma_layout: EndLayout
    lambda_layout: EndLayout
    B_hat: sp.csr_matrix | np.ndarray
    b_hat: np.ndarray
    A_hat: sp.csr_matrix | np.ndarray
    a_hat: np.ndarray
    L_sigma: sp.csr_matrix | np.ndarray
    L_lambda: sp.csr_matrix | np.ndarray
    # elementwise bounds when every domain is a box, for a loop-free
    # projection in the hot path; None otherwise
    box_lower: np.ndarray | None = None
    box_upper: np.ndarray | None = None


def build_gne_operators(
    game: AggregativeGameSpec, sigma_layout: EndLayout, lambda_layout: EndLayout
) -> GneOperators:
    n_x = game.total_action_dim
    # aggregation operator: block (q, i) of B_hat x is N_q * B_{q,i} x_i
    rows, cols, vals = [], [], []
    b_hat = np.zeros(sigma_layout.stacked_dim)
    for q in sigma_layout.partition.components:
        nq = sigma_layout.copies(q)
        for i in sigma_layout.holders(q):
            sl = sigma_layout.block_slice(q, i)
            B = game.agg_blocks.get((q, i))
            if B is not None:
                scaled = nq * B
                for r in range(scaled.shape[0]):
                    for c in range(scaled.shape[1]):
                        if scaled[r, c] != 0.0:
                            rows.append(sl.start + r)
                            cols.append(game.action_slice(i).start + c)
                            vals.append(scaled[r, c])
            off = game.agg_offsets.get((q, i))
            if off is not None:
                b_hat[sl] += nq * off
    B_hat = sp.csr_matrix((vals, (rows, cols)), shape=(sigma_layout.stacked_dim, n_x))

    rows, cols, vals = [], [], []
    a_hat = np.zeros(lambda_layout.stacked_dim)
    for m in lambda_layout.partition.components:
        for i in lambda_layout.holders(m):
            sl = lambda_layout.block_slice(m, i)
            A = game.con_blocks.get((m, i))
            if A is not None:
                for r in range(A.shape[0]):
                    for c in range(A.shape[1]):
                        if A[r, c] != 0.0:
                            rows.append(sl.start + r)
                            cols.append(game.action_slice(i).start + c)
                            vals.append(A[r, c])
            off = game.con_offsets.get((m, i))
            if off is not None:
                a_hat[sl] += off
    A_hat = sp.csr_matrix((vals, (rows, cols)), shape=(lambda_layout.stacked_dim, n_x))
    box_lower = box_upper = None
    if all(isinstance(game.domain(i), BoxSet) for i in range(1, game.num_agents + 1)):
        box_lower = np.empty(n_x)
        box_upper = np.empty(n_x)
        for i in range(1, game.num_agents + 1):
            dom = game.domain(i)
            box_lower[game.action_slice(i)] = dom.lower
            box_upper[game.action_slice(i)] = dom.upper
    L_sigma = sigma_layout.laplacian_matrix()
    L_lambda = lambda_layout.laplacian_matrix()
    if n_x + sigma_layout.stacked_dim + 2 * lambda_layout.stacked_dim <= 2000:
        B_hat = B_hat.toarray()
        A_hat = A_hat.toarray()
        L_sigma = L_sigma.toarray()
        L_lambda = L_lambda.toarray()
    return GneOperators(
        game=game,
        sigma_layout=sigma_layout,
        lambda_layout=lambda_layout,
        B_hat=B_hat,
        b_hat=b_hat,
        A_hat=A_hat,
        a_hat=a_hat,
        L_sigma=L_sigma,
        L_lambda=L_lambda,
        box_lower=box_lower,
        box_upper=box_upper,
    )


@dataclass
class GneState:
    x: np.ndarray
    s_hat: np.ndarray       # shifted aggregation estimates (estimate - local input)
    z_hat: np.ndarray
    lam_hat: np.ndarray

    def sigma_hat(self, ops: GneOperators) -> np.ndarray:
        return self.s_hat + ops.B_hat @ self.x + ops.b_hat


def initial_gne_state(ops: GneOperators, x0: np.ndarray) -> GneState:
    x0 = np.asarray(x0, dtype=float)
    return GneState(
        x=x0.copy(),
        s_hat=np.zeros(ops.sigma_layout.stacked_dim),
        z_hat=np.zeros(ops.lambda_layout.stacked_dim),
        lam_hat=np.zeros(ops.lambda_layout.stacked_dim),
    )


def extended_pseudo_gradient(ops: GneOperators, x: np.ndarray, sigma_hat: np.ndarray) -> np.ndarray:
    """Per-agent gradients evaluated on the local aggregation estimates."""
    game = ops.game
    if game.extended_gradient is not None:
        return game.extended_gradient(ops, x, sigma_hat)
    out = np.empty(game.total_action_dim)
    for i in range(1, game.num_agents + 1):
        xi = x[game.action_slice(i)]
        local = {
            q: sigma_hat[ops.sigma_layout.block_slice(q, i)] for q in game.sigma_footprint(i)
        }
        g = game.grad_x(i, xi, local).astype(float).copy()
        for q, gq in game.grad_sigma(i, xi, local).items():
            B = game.agg_blocks.get((q, i))
            if B is not None:
                g += B.T @ gq
    # no N_q scaling here: the chain rule runs through the agent's own copy
        out[game.action_slice(i)] = g
    return out


def gne_step(ops: GneOperators, state: GneState, alpha: float, beta: float) -> GneState:
    """One primal-dual round with aggregation tracking and dual consensus."""
    game = ops.game
    sigma_hat = state.sigma_hat(ops)
    Ls = ops.L_sigma @ sigma_hat
    grad = alpha * extended_pseudo_gradient(ops, state.x, sigma_hat)
    drive = grad + ops.B_hat.T @ Ls + ops.A_hat.T @ state.lam_hat
    if ops.box_lower is not None:
        x_new = np.clip(state.x - beta * drive, ops.box_lower, ops.box_upper)
    else:
        x_new = np.empty_like(state.x)
        for i in range(1, game.num_agents + 1):
            sl = game.action_slice(i)
            x_new[sl] = game.domain(i).project(state.x[sl] - beta * drive[sl])
    s_new = state.s_hat - beta * Ls
    z_new = state.z_hat + beta * (ops.L_lambda @ state.lam_hat)
    lam_new = state.lam_hat - beta * (
        ops.L_lambda @ (2 * z_new - state.z_hat)
        - ops.A_hat @ (2 * x_new - state.x)
        + ops.a_hat
    )
    if game.sense == "inequality":
        lam_new = np.maximum(lam_new, 0.0)
    return GneState(x=x_new, s_hat=s_new, z_hat=z_new, lam_hat=lam_new)


def preconditioner_positive(ops: GneOperators, beta: float) -> bool:
    """Positive-definiteness of the symmetric primal-dual preconditioner."""
    n_x = ops.game.total_action_dim
    n_s = ops.sigma_layout.stacked_dim
    n_l = ops.lambda_layout.stacked_dim
    n = n_x + n_s + 2 * n_l
    Phi = np.zeros((n, n))
    np.fill_diagonal(Phi, 1.0 / beta)
    A = ops.A_hat.toarray() if sp.issparse(ops.A_hat) else np.asarray(ops.A_hat)
    L = ops.L_lambda.toarray() if sp.issparse(ops.L_lambda) else np.asarray(ops.L_lambda)
    x0, z0, l0 = 0, n_x + n_s, n_x + n_s + n_l
    Phi[x0:n_x, l0:] = -A.T
    Phi[l0:, x0:n_x] = -A
    Phi[z0:l0, l0:] = L
    Phi[l0:, z0:l0] = L.T
    return float(np.min(np.linalg.eigvalsh((Phi + Phi.T) / 2.0))) > 0.0


def skew_part_pairing(ops: GneOperators, x, s, z, lam) -> float:
    """<omega, A2 omega> for the linear coupling operator; zero when skew."""
    t1 = float(x @ (ops.A_hat.T @ lam))
    t3 = float(z @ (-(ops.L_lambda @ lam)))
    t4 = float(lam @ (ops.L_lambda @ z - ops.A_hat @ x))
    return t1 + t3 + t4


def consensus_dual(ops: GneOperators, lam_hat: np.ndarray) -> np.ndarray:
    """Per-block mean of the dual copies, stacked into one multiplier."""
    return ops.lambda_layout.component_means(lam_hat)


def kkt_residual(game: AggregativeGameSpec, x: np.ndarray, lam: np.ndarray) -> float:
    A, a = game.constraint_matrix()
    drive = game.pseudo_gradient(x) + A.T @ lam
    proj = np.empty_like(x)
    for i in range(1, game.num_agents + 1):
        sl = game.action_slice(i)
        proj[sl] = game.domain(i).project(x[sl] - drive[sl])
    stat = float(np.linalg.norm(proj - x))
    gap = A @ x - a
    if game.sense == "equality":
        return stat + float(np.linalg.norm(gap))
    return stat + float(np.linalg.norm(np.maximum(gap, 0.0))) + abs(float(lam @ gap))


def gne_solve(
    ops: GneOperators,
    x0: np.ndarray,
    alpha: float,
    beta: float,
    max_iters: int = 200000,
    tol: float = 1e-4,
    reference: np.ndarray | None = None,
    residual_tol: float | None = None,
    check_every: int = 50,
    track_invariant: bool = True,
) -> tuple[GneState, RunTrace]:
    """Run the primal-dual iteration until the KKT residual (or the distance
    to a reference equilibrium) drops below tolerance."""
    state = initial_gne_state(ops, x0)
    trace = RunTrace(meta={"alpha": alpha, "beta": beta})
    cost = ops.sigma_layout.communication_cost("unicast") + ops.lambda_layout.communication_cost(
        "unicast"
    )
    trace.meta["unicast_cost_per_iter"] = cost
    guard = _DIVERGENCE_FACTOR * (1.0 + float(np.linalg.norm(x0)))
    max_invariant = 0.0
    cons = None
    if track_invariant:
        cons = ops.sigma_layout.consensus_matrix()
        if cons.shape[0] <= 2000:
            cons = cons.toarray()
    for k in range(max_iters):
        state = gne_step(ops, state, alpha, beta)
        if float(np.linalg.norm(state.x)) > guard or not np.isfinite(state.x).all():
            raise DivergenceError(f"primal iterate blew up at iteration {k}")
        if track_invariant:
            max_invariant = max(
                max_invariant, float(np.linalg.norm(cons @ state.s_hat))
            )
        if (k + 1) % check_every == 0 or k == max_iters - 1:
            # the primal step drives alpha*F + A^T lam_hat to zero, so the
            # copies track alpha-scaled multipliers
            lam = consensus_dual(ops, state.lam_hat) / alpha
            residual = kkt_residual(ops.game, state.x, lam)
            record = {"k": k, "residual": residual,
                      "sigma_disagreement": float(
                          np.linalg.norm(ops.sigma_layout.disagreement(state.sigma_hat(ops)))),
                      "lambda_disagreement": float(
                          np.linalg.norm(ops.lambda_layout.disagreement(state.lam_hat)))}
            if reference is not None:
                record["distance"] = float(np.linalg.norm(state.x - reference))
            trace.append(**record)
            done = record["distance"] <= tol if reference is not None else residual <= tol
            if residual_tol is not None:
                done = done and residual <= residual_tol
            if done:
                break
    trace.meta["max_consensus_invariant"] = max_invariant
    return state, trace


def search_gne_beta(
    ops: GneOperators,
    x0: np.ndarray,
    alpha: float,
    start: float = 1e-2,
    probe_iters: int = 200,
    max_halvings: int = 30,
) -> float:
    """Largest power-of-two fraction of ``start`` that keeps the symmetric
    preconditioner positive definite and a short probe run non-expansive."""
    beta = start
    for _ in range(max_halvings):
        if preconditioner_positive(ops, beta):
            state = initial_gne_state(ops, np.asarray(x0, dtype=float))
            norms = []
            ok = True
            try:
                for _ in range(probe_iters):
                    state = gne_step(ops, state, alpha, beta)
                    if not np.isfinite(state.x).all():
                        ok = False
                        break
                    norms.append(float(np.linalg.norm(state.x)))
            except FloatingPointError:
                ok = False
            if ok and norms and norms[-1] <= 10.0 * (1.0 + max(norms[0], 1.0)):
                return beta
        beta /= 2.0
    raise GameError("no stable dual-primal step size found")


def solve_vgne_centralized(
    game: AggregativeGameSpec,
    x0: np.ndarray,
    step: float = 0.05,
    max_iters: int = 2000000,
    tol: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray]:
    """Reference equilibrium via a centralized projected primal-dual loop."""
    A, a = game.constraint_matrix()
    x = np.asarray(x0, dtype=float).copy()
    lam = np.zeros(A.shape[0])
    for _ in range(max_iters):
        drive = game.pseudo_gradient(x) + A.T @ lam
        x_new = np.empty_like(x)
        for i in range(1, game.num_agents + 1):
            sl = game.action_slice(i)
            x_new[sl] = game.domain(i).project(x[sl] - step * drive[sl])
        lam_new = lam + step * (A @ (2 * x_new - x) - a)
        if game.sense == "inequality":
            lam_new = np.maximum(lam_new, 0.0)
        delta = max(float(np.max(np.abs(x_new - x))), float(np.max(np.abs(lam_new - lam))))
        x, lam = x_new, lam_new
        if delta < tol:
            break
    return x, lam
