"""Peierls barrier, Aubry and Mather sets, minimizing measures, chain recurrence.

The barrier is a stabilized running minimum of fixed-step-count action values.
Full pair matrices are only built for small grids; at scale the diagonal is
assembled from round trips through the minimum-mean cycles of the action
graph, which is where long cheap cycles must spend their time.

Minimizing measures come from a linear program over phase-grid weights with
the invariance constraint relaxed to an l1 ball plus a defect penalty; the
support of the whole optimal face is recovered by a second spreading pass, so
disjoint families of minimizing cycles are all represented.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from .action import build_action_graph, min_cycle_mean_howard, policy_cycle_nodes
from .errors import (DerivativeMismatch, EmptyAubry, GraphViolation, Infeasible,
                     SolverFailure)
from .util import dilate_mask

# computed critical values sit within solver tolerance of the graph value;
# evaluating path costs a hair above c keeps every cycle nonnegative
_C_GUARD = 1e-6


# ---------------------------------------------------------------------------
# Peierls barrier


@dataclass
class BarrierMatrix:
    values: np.ndarray          # (V, V) pair matrix, or (V,) diagonal only
    c: float
    window: tuple               # (T1, T2) in time units
    stabilized: bool
    diagonal_only: bool = False
    meta: dict = field(default_factory=dict)

    def diagonal(self):
        if self.diagonal_only:
            return self.values
        return np.diagonal(self.values).copy()

    def lookup(self, i, j):
        if self.diagonal_only:
            if i != j:
                raise ValueError("pair values unavailable in diagonal-only mode")
            return float(self.values[i])
        return float(self.values[i, j])


def _component_labels(seed_mask, grid):
    """Label connected components of a node mask (periodic, full stencil)."""
    labels = -np.ones(grid.shape, dtype=np.int64)
    n_label = 0
    idx = np.argwhere(seed_mask)
    seed_set = set(map(tuple, idx))
    for start in map(tuple, idx):
        if labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = n_label
        while stack:
            node = stack.pop()
            for off in np.ndindex(*([3] * grid.n)):
                nb = tuple((node[i] + off[i] - 1) % grid.shape[i]
                           for i in range(grid.n))
                if nb in seed_set and labels[nb] < 0:
                    labels[nb] = n_label
                    stack.append(nb)
        n_label += 1
    return labels, n_label


def _converged_distance(graph, seed_mask, c_eval, reverse, max_sweeps=None):
    """Min cost to (reverse) or from (forward) the seed set, free path length."""
    u = np.where(seed_mask, 0.0, np.inf)
    step = graph.reverse_step if reverse else graph.backward_step
    if max_sweeps is None:
        max_sweeps = 4 * max(graph.grid.shape) + 16
    for _ in range(max_sweeps):
        nxt = np.minimum(u, step(u, k_offset=c_eval))
        if np.array_equal(nxt, u):
            break
        fin = np.isfinite(u)
        grew = np.isfinite(nxt) & ~fin
        dec = float(np.max(u[fin] - nxt[fin])) if fin.any() else np.inf
        u = nxt
        if not grew.any() and dec <= 1e-13 * (1.0 + float(np.max(np.abs(nxt[np.isfinite(nxt)])))):
            break
    return u


def _barrier_diagonal(L, c, grid, tau, radius, fiber):
    """h(x,x) by round trips through the minimum-mean cycle components."""
    graph = build_action_graph(L, grid, tau, radius, fiber)
    c_eval = c + _C_GUARD
    _, _, policy = min_cycle_mean_howard(graph, k_offset=0.0)
    seeds = policy_cycle_nodes(graph, policy)
    seed_mask = np.zeros(grid.shape, dtype=bool)
    seed_mask.ravel()[seeds] = True
    labels, n_comp = _component_labels(seed_mask, grid)
    diag = np.full(grid.shape, np.inf)
    for g in range(n_comp):
        comp = labels == g
        d_from = _converged_distance(graph, comp, c_eval, reverse=False)
        d_to = _converged_distance(graph, comp, c_eval, reverse=True)
        np.minimum(diag, d_from + d_to, out=diag)
    return diag, n_comp


def peierls_barrier(L, c, grid, window=None, tau=None, stencil_radius=3,
                    fiber=None, mode="auto", max_nodes=1600, stab_tol=1e-9):
    """Stabilized minimum of fixed-step action values over a time window.

    window = (T1, T2): step counts in [T1/tau, T2/tau] enter the minimum; the
    window expands once automatically if the running minimum is still moving
    at T2. Above max_nodes only the diagonal is assembled (mode "diagonal").
    """
    if tau is None:
        tau = float(np.max(grid.h))
    if window is None:
        window = (6.0, 12.0)
    T1, T2 = float(window[0]), float(window[1])
    if not T1 < T2:
        raise ValueError("window must satisfy T1 < T2")
    V = grid.node_count
    if mode == "auto":
        mode = "full" if V <= max_nodes else "diagonal"

    if mode == "diagonal":
        diag, n_comp = _barrier_diagonal(L, c, grid, tau, stencil_radius, fiber)
        return BarrierMatrix(values=diag.ravel(), c=c, window=(T1, T2),
                             stabilized=True, diagonal_only=True,
                             meta={"mode": "diagonal", "components": n_comp,
                                   "tau": tau})

    graph = build_action_graph(L, grid, tau, stencil_radius, fiber)
    c_eval = c + _C_GUARD
    m1 = max(1, int(np.ceil(T1 / tau)))
    m2 = max(m1 + 1, int(np.ceil(T2 / tau)))

    # batched DP over all sources at once: U[b] = cost of m steps from b
    U = np.full((V,) + grid.shape, np.inf)
    U.reshape(V, V)[np.arange(V), np.arange(V)] = 0.0
    best = None
    last_change = 0
    stabilized = True
    expanded = False
    m = 0
    while True:
        m += 1
        U = graph.backward_step(U, k_offset=c_eval)
        if m < m1:
            continue
        if best is None:
            best = U.copy()
            last_change = m
        else:
            moved = U < best - stab_tol * (1.0 + np.abs(best))
            if moved.any():
                np.minimum(best, U, out=best)
                last_change = m
        if m >= m2:
            if m - last_change >= max(4, (m2 - m1) // 4):
                break
            if not expanded:
                expanded = True
                m2 *= 2
            else:
                stabilized = False
                break
    values = best.reshape(V, V)
    return BarrierMatrix(values=values, c=c, window=(m1 * tau, m * tau),
                         stabilized=stabilized,
                         meta={"mode": "full", "steps": (m1, m),
                               "expanded": expanded, "tau": tau})


# ---------------------------------------------------------------------------
# node-set masks


@dataclass
class NodeSetMask:
    mask: np.ndarray
    tol: float
    grid: object = None
    meta: dict = field(default_factory=dict)

    def count(self):
        return int(self.mask.sum())

    def coverage(self):
        return float(self.mask.mean())

    def indices(self):
        return np.argwhere(self.mask)


def projected_aubry(barrier, grid, tol_A=None):
    """Nodes with vanishing barrier diagonal: h(x,x) <= tol_A."""
    if tol_A is None:
        tol_A = float(np.max(grid.h))
    diag = barrier.diagonal()
    mask = (diag <= tol_A).reshape(grid.shape)
    if not mask.any():
        raise EmptyAubry(
            "no node has h(x,x) <= %.3g (min diagonal %.3g); "
            "c may be estimated too low" % (tol_A, float(np.min(diag))))
    return NodeSetMask(mask=mask, tol=tol_A, grid=grid,
                       meta={"min_diag": float(np.min(diag)),
                             "max_diag": float(np.max(diag))})


def aubry_lift(mask, pair, H=None, tol=0.1):
    """Common derivative of the pair on the mask: the covector lift.

    Central differences of u_minus and u_plus must agree on the mask within
    tol; the lift is reported with a Lipschitz estimate and, when H is given,
    the deviation |H(x, du) - c| measuring distance from the energy shell.
    """
    grid = pair.u_minus.grid
    m = mask.mask if isinstance(mask, NodeSetMask) else np.asarray(mask, bool)
    if not m.any():
        raise EmptyAubry("empty mask passed to the lift")
    du_minus = pair.u_minus.gradient()
    du_plus = pair.u_plus.gradient()
    mismatch = np.linalg.norm(du_minus - du_plus, axis=-1)
    worst = float(mismatch[m].max())
    if worst > tol:
        raise DerivativeMismatch(
            "du_minus vs du_plus differ by %.3g on the mask (tol %.3g)"
            % (worst, tol))
    points = grid.X[m]
    covectors = du_minus[m]
    # Lipschitz estimate of x -> du(x): consecutive mask nodes in index order
    # give a dense sample of nearby pairs
    lip = 0.0
    if len(points) > 1:
        disp = grid.shortest_disp(np.diff(points, axis=0))
        d = np.linalg.norm(disp, axis=-1)
        dc = np.linalg.norm(np.diff(covectors, axis=0), axis=-1)
        ok = d > 1e-12
        if ok.any():
            lip = float(np.max(dc[ok] / d[ok]))
    report = {
        "points": points,
        "covectors": covectors,
        "max_pair_mismatch": worst,
        "lipschitz": lip,
    }
    if H is not None:
        dev = np.abs(H.value(grid.X, du_minus) - pair.c)
        report["max_shell_deviation"] = float(dev[m].max())
    return report


# ---------------------------------------------------------------------------
# minimizing measures


@dataclass
class DiscreteMeasure:
    """Probability weights on the phase grid, base-major layout."""

    weights: np.ndarray         # (M,) with M = grid.node_count * fiber.node_count
    grid: object
    fiber: object
    meta: dict = field(default_factory=dict)

    def mass(self):
        return float(self.weights.sum())

    def support(self, rel_tol=1e-6):
        w = self.weights
        return np.flatnonzero(w > rel_tol * w.max())

    def base_marginal(self):
        F = self.fiber.node_count
        return self.weights.reshape(-1, F).sum(axis=1)

    def mean_velocity(self):
        F = self.fiber.node_count
        w = self.weights.reshape(-1, F)
        return (w.sum(axis=0) @ self.fiber.V) / max(self.weights.sum(), 1e-300)

    def pairs(self, rel_tol=0.0):
        """(ix, iv, weight) triplets for CSV export."""
        w = self.weights
        keep = np.flatnonzero(w > rel_tol * max(w.max(), 1e-300))
        F = self.fiber.node_count
        return keep // F, keep % F, w[keep]


def _el_rhs(L, x, v, fd_eps=1e-5):
    """Euler-Lagrange acceleration: hess_v a = L_x - (d/dx L_v) v."""
    n = x.shape[-1]
    J = np.empty(x.shape[:-1] + (n, n))
    for b in range(n):
        e = np.zeros(n)
        e[b] = fd_eps
        J[..., :, b] = (L.grad_v(x + e, v) - L.grad_v(x - e, v)) / (2 * fd_eps)
    rhs = L.grad_x(x, v) - np.einsum("...ab,...b->...a", J, v)
    acc = np.linalg.solve(L.hess_v(x, v), rhs[..., None])[..., 0]
    return acc


def el_flow_step(L, x, v, tau, substeps=4):
    """RK4 step of the Euler-Lagrange flow on (x, v)."""
    dt = tau / substeps
    x = np.array(x, dtype=float)
    v = np.array(v, dtype=float)
    for _ in range(substeps):
        k1x, k1v = v, _el_rhs(L, x, v)
        k2x, k2v = v + 0.5 * dt * k1v, _el_rhs(L, x + 0.5 * dt * k1x,
                                               v + 0.5 * dt * k1v)
        k3x, k3v = v + 0.5 * dt * k2v, _el_rhs(L, x + 0.5 * dt * k2x,
                                               v + 0.5 * dt * k2v)
        k4x, k4v = v + dt * k3v, _el_rhs(L, x + dt * k3x, v + dt * k3v)
        x = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return x, v


def transfer_matrix(L, grid, fiber, tau, substeps=4):
    """Column-stochastic one-step transfer on the phase grid.

    Each phase node flows for time tau under the Euler-Lagrange dynamics and
    the endpoint scatters multilinearly onto its phase neighbors; endpoint
    velocities are clamped to the fiber box.
    """
    V = grid.node_count
    F = fiber.node_count
    n = grid.n
    xs = np.repeat(grid.X.reshape(V, n), F, axis=0)
    vs = np.tile(fiber.V, (V, 1))
    x1, v1 = el_flow_step(L, xs, vs, tau, substeps)

    # per-axis index/weight pairs: x periodic, v clamped to the box
    M = V * F
    src = np.arange(M)
    ax_idx = []
    ax_wt = []
    for a in range(n):
        t = x1[:, a] / grid.h[a]
        i0 = np.floor(t).astype(np.int64)
        frac = t - i0
        ax_idx.append((i0 % grid.shape[a], (i0 + 1) % grid.shape[a]))
        ax_wt.append((1.0 - frac, frac))
    counts = fiber.count
    for a in range(n):
        t = (np.clip(v1[:, a], -fiber.P, fiber.P) + fiber.P) / fiber.spacing
        i0 = np.clip(np.floor(t).astype(np.int64), 0, counts - 2)
        frac = np.clip(t - i0, 0.0, 1.0)
        ax_idx.append((i0, i0 + 1))
        ax_wt.append((1.0 - frac, frac))

    rows = []
    cols = []
    data = []
    for corner in np.ndindex(*([2] * (2 * n))):
        w = np.ones(M)
        idx = []
        for a, bit in enumerate(corner):
            w = w * ax_wt[a][bit]
            idx.append(ax_idx[a][bit])
        base = idx[0]
        for a in range(1, n):
            base = base * grid.shape[a] + idx[a]
        fib = idx[n]
        for a in range(1, n):
            fib = fib * counts + idx[n + a]
        dest = base * F + fib
        keep = w > 0
        rows.append(dest[keep])
        cols.append(src[keep])
        data.append(w[keep])
    P = sp.csr_matrix((np.concatenate(data),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(M, M))
    return P


# -- dense simplex fallback -------------------------------------------------


def _dense_simplex(c, A_eq, b_eq, max_pivots=50000, want_reduced=False):
    """Two-phase primal simplex with Bland's rule; x >= 0, A x = b."""
    A = np.asarray(A_eq, dtype=float).copy()
    b = np.asarray(b_eq, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, nv = A.shape
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    T = np.zeros((m + 1, nv + m + 1))
    T[:m, :nv] = A
    T[:m, nv:nv + m] = np.eye(m)
    T[:m, -1] = b
    basis = list(range(nv, nv + m))
    T[m, nv:nv + m] = 1.0
    for i in range(m):
        T[m, :] -= T[i, :]

    def pivot(row, col):
        T[row, :] /= T[row, col]
        for r in range(m + 1):
            if r != row and T[r, col] != 0.0:
                T[r, :] -= T[r, col] * T[row, :]
        basis[row] = col

    def run(ncols):
        for _ in range(max_pivots):
            enter = -1
            for j in range(ncols):
                if T[m, j] < -1e-10:
                    enter = j
                    break
            if enter < 0:
                return
            col = T[:m, enter]
            ratios = np.full(m, np.inf)
            pos = col > 1e-12
            ratios[pos] = T[:m, -1][pos] / col[pos]
            rmin = ratios.min()
            if not np.isfinite(rmin):
                raise SolverFailure("unbounded linear program")
            cand = np.flatnonzero(ratios <= rmin + 1e-12)
            leave = cand[np.argmin([basis[i] for i in cand])]
            pivot(leave, enter)
        raise SolverFailure("simplex pivot limit reached")

    run(nv + m)
    if T[m, -1] < -1e-7:
        raise Infeasible("phase-1 optimum %.3g > 0" % -float(T[m, -1]))
    # drive artificials out of the basis where possible
    for i in range(m):
        if basis[i] >= nv:
            row = T[i, :nv]
            j = int(np.argmax(np.abs(row)))
            if abs(row[j]) > 1e-9:
                pivot(i, j)
    # phase 2: artificials stay barred from entering (run scans nv columns)
    T[m, :] = 0.0
    T[m, :nv] = c
    T[m, -1] = 0.0
    for i in range(m):
        if basis[i] < nv:
            T[m, :] -= c[basis[i]] * T[i, :]
    run(nv)
    x = np.zeros(nv)
    for i in range(m):
        if basis[i] < nv:
            x[basis[i]] = T[i, -1]
    if want_reduced:
        return x, T[m, :nv].copy()
    return x


def _solve_lp(c_obj, A_ub, b_ub, A_eq, b_eq, n_vars, solver, upper=None,
              want_reduced=False, options=None):
    """Route an LP through scipy's interface or the dense fallback.

    With want_reduced, also return the reduced costs of the structural
    variables at the optimum (zero on any variable that can be positive in
    some optimal solution).
    """
    if solver in ("auto", "highs"):
        try:
            from scipy.optimize import linprog
            if upper is None:
                bounds = (0, None)
            else:
                bounds = [(0, None if not np.isfinite(u) else u)
                          for u in upper]
            res = linprog(c_obj, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                          bounds=bounds, method="highs",
                          options=options or {})
            if res.status == 2:
                raise Infeasible("linear program infeasible: " + res.message)
            if not res.success:
                raise SolverFailure("LP solver failed: " + res.message)
            if want_reduced:
                return res.x, np.asarray(res.lower.marginals)
            return res.x
        except (Infeasible, SolverFailure):
            raise
        except Exception as exc:  # missing backend
            if solver == "highs":
                raise SolverFailure(str(exc))
    if n_vars > 3000:
        raise SolverFailure(
            "dense fallback limited to 3000 variables (got %d)" % n_vars)
    A_ub_d = A_ub.toarray() if sp.issparse(A_ub) else np.asarray(A_ub)
    A_eq_d = A_eq.toarray() if sp.issparse(A_eq) else np.asarray(A_eq)
    if upper is not None:
        fin = np.flatnonzero(np.isfinite(upper))
        if len(fin):
            E = np.zeros((len(fin), n_vars))
            E[np.arange(len(fin)), fin] = 1.0
            A_ub_d = np.vstack([A_ub_d, E])
            b_ub = np.concatenate([b_ub, np.asarray(upper)[fin]])
    n_ub = A_ub_d.shape[0]
    A_full = np.block([[A_ub_d, np.eye(n_ub)],
                       [A_eq_d, np.zeros((A_eq_d.shape[0], n_ub))]])
    b_full = np.concatenate([b_ub, b_eq])
    c_full = np.concatenate([c_obj, np.zeros(n_ub)])
    x, red = _dense_simplex(c_full, A_full, b_full, want_reduced=True)
    if want_reduced:
        return x[:n_vars], red[:n_vars]
    return x[:n_vars]


def mather_lp(L, grid, fiber, tau=None, tol_inv=None, solver="auto",
              substeps=4, spread=True):
    """Minimizing measures by linear programming on the phase grid.

    Minimizes sum L*mu over probability weights with ||P mu - mu||_1 bounded
    by tol_inv and additionally penalized, P being the one-step transfer.
    Returns (measures, optimum): the first measure spreads mass over the
    entire optimal face (union of all minimizing supports), the last is a
    plain vertex optimizer. -optimum estimates c from below.
    """
    if tau is None:
        tau = 0.5 * float(np.max(grid.h))
    if tol_inv is None:
        tol_inv = 5.0 * float(np.max(grid.h))
    P = transfer_matrix(L, grid, fiber, tau, substeps)
    M = P.shape[0]
    V, F, n = grid.node_count, fiber.node_count, grid.n
    xs = np.repeat(grid.X.reshape(V, n), F, axis=0)
    vs = np.tile(fiber.V, (V, 1))
    L_vec = L.value(xs, vs)
    gamma = 2.0 * (1.0 + float(np.ptp(L_vec)))

    D = (P - sp.eye(M)).tocsr()
    I_M = sp.eye(M, format="csr")
    ones_row = sp.csr_matrix(np.ones((1, M)))
    zero_row = sp.csr_matrix((1, M))
    # variables z = [mu (M), e (M)]
    A_ub = sp.vstack([
        sp.hstack([D, -I_M]),
        sp.hstack([-D, -I_M]),
        sp.hstack([zero_row, ones_row]),
    ]).tocsr()
    b_ub = np.concatenate([np.zeros(2 * M), [tol_inv]])
    A_eq = sp.hstack([ones_row, zero_row]).tocsr()
    b_eq = np.array([1.0])
    c_obj = np.concatenate([L_vec, gamma * np.ones(M)])

    z, reduced = _solve_lp(c_obj, A_ub, b_ub, A_eq, b_eq, 2 * M, solver,
                           want_reduced=True)
    mu_vertex = z[:M]
    composite = float(c_obj @ z)
    optimum = float(L_vec @ mu_vertex)
    vertex = DiscreteMeasure(
        weights=mu_vertex, grid=grid, fiber=fiber,
        meta={"optimum": optimum,
              "defect_l1": float(np.abs(D @ mu_vertex).sum()),
              "tau": tau, "tol_inv": tol_inv})
    measures = [vertex]

    if spread:
        # support of the whole optimal face: complementary slackness bars
        # any atom with positive reduced cost from every optimal solution,
        # so probes are restricted to the zero-reduced-cost candidates.
        # Repeatedly maximize mass on candidates outside the support seen
        # so far, capped per atom at delta so the maximizer must saturate
        # every loadable atom instead of returning one vertex; the iterate
        # average carries the union support.
        # any invariant measure carries at least 1/M on each support atom,
        # so every face atom can saturate the delta cap; an atom loadable
        # only through solver tolerance leak stays far below delta/2
        slack = 1e-9 * (1.0 + abs(composite))
        tol_r = 1e-6 * (1.0 + float(np.abs(c_obj).max()))
        cand = reduced[:M] <= tol_r
        delta = 1.0 / (4.0 * M)
        tight = {"primal_feasibility_tolerance": 1e-9,
                 "dual_feasibility_tolerance": 1e-9}
        A_face = sp.vstack([A_ub, sp.csr_matrix(c_obj[None, :])]).tocsr()
        b_face = np.concatenate([b_ub, [composite + slack]])
        support = mu_vertex > 1e-6 * max(mu_vertex.max(), 1e-300)
        seen = support.copy()
        iterates = [mu_vertex]
        try:
            for _ in range(4):
                fresh = cand & ~seen
                if not fresh.any():
                    break
                c_probe = np.concatenate([-fresh.astype(float), np.zeros(M)])
                ub = np.full(2 * M, np.inf)
                ub[:M][fresh] = delta
                ub[:M][~cand] = 0.0
                z2 = _solve_lp(c_probe, A_face, b_face, A_eq, b_eq,
                               2 * M, solver, upper=ub, options=tight)
                mu2 = z2[:M]
                loaded = mu2 > 0.5 * delta
                if not (loaded & fresh).any():
                    break
                iterates.append(mu2)
                support |= loaded
                seen |= loaded
            mu_int = np.mean(iterates, axis=0)
            measures.insert(0, DiscreteMeasure(
                weights=mu_int, grid=grid, fiber=fiber,
                meta={"optimum": float(L_vec @ mu_int),
                      "defect_l1": float(np.abs(D @ mu_int).sum()),
                      "tau": tau, "tol_inv": tol_inv, "face_spread": True,
                      "face_rounds": len(iterates),
                      "candidates": int(cand.sum()),
                      "support_mask": support}))
        except (Infeasible, SolverFailure):
            pass  # the vertex solution alone is still a valid answer
    return measures, optimum


def mather_set(measures, tol=1e-6, vel_sep_factor=3.0):
    """Union of measure supports, thresholded and dilated one cell."""
    if not measures:
        raise ValueError("no measures supplied")
    grid = measures[0].grid
    fiber = measures[0].fiber
    V, F = grid.node_count, fiber.node_count
    phase = np.zeros(V * F, dtype=bool)
    for mu in measures:
        if "support_mask" in mu.meta:
            phase |= mu.meta["support_mask"]
        else:
            w = mu.weights
            phase |= w > tol * w.max()
    phase = phase.reshape(V, F)

    # Lipschitz graph check: mass over one base node must sit at one velocity
    sep = vel_sep_factor * fiber.spacing
    for i in np.flatnonzero(phase.any(axis=1)):
        vsel = fiber.V[phase[i]]
        if len(vsel) > 1:
            d = np.linalg.norm(vsel[:, None, :] - vsel[None, :, :], axis=-1)
            if d.max() > sep:
                raise GraphViolation(
                    "base node %d carries velocities %.3g apart (bar %.3g)"
                    % (i, float(d.max()), sep))

    base = dilate_mask(phase.any(axis=1).reshape(grid.shape), 1)
    return NodeSetMask(mask=base, tol=tol, grid=grid,
                       meta={"phase_mask": phase.reshape(grid.shape + (F,)),
                             "fiber": fiber})


# ---------------------------------------------------------------------------
# foliation cycles


@dataclass
class FoliationCycle:
    """Transverse-measure data for the Sullivan pairing with 1-forms."""

    weights: np.ndarray         # (S,)
    points: np.ndarray          # (S, n) base points
    tangents: np.ndarray        # (S, n) base component of the field
    momenta: np.ndarray         # (S, n) fiber momenta L_v at the samples

    def pairing(self, form):
        """Sum of weights * form(points) . tangents for a covector field."""
        om = form(self.points)
        return float(np.einsum("s,sa,sa->", self.weights, om, self.tangents))

    def liouville(self):
        """Pair with the tautological form: weights * <p, dx(V)>."""
        return float(np.einsum("s,sa,sa->", self.weights, self.momenta,
                               self.tangents))


def foliation_cycle(measure, L):
    """Build the cycle carried by a minimizing measure's support."""
    ib, iv, w = measure.pairs(rel_tol=1e-9)
    grid, fiber = measure.grid, measure.fiber
    pts = grid.X.reshape(grid.node_count, grid.n)[ib]
    vel = fiber.V[iv]
    mom = L.grad_v(pts, vel)
    w = w / w.sum()
    return FoliationCycle(weights=w, points=pts, tangents=vel, momenta=mom)


def foliation_pairing(cycle, form):
    """Sullivan pairing; form may be callable or the string "liouville"."""
    if isinstance(form, str):
        if form == "liouville":
            return cycle.liouville()
        raise ValueError("unknown form %r" % form)
    return cycle.pairing(form)


def boundary_defects(cycle, n_tests=20, max_mode=2, rng=None):
    """|pairing(dg)| for random trigonometric g; near zero for true cycles."""
    if rng is None:
        rng = np.random.default_rng(7)
    n = cycle.points.shape[1]
    defects = []
    for _ in range(n_tests):
        modes = []
        for _ in range(3):
            k = rng.integers(-max_mode, max_mode + 1, size=n)
            if not k.any():
                k[0] = 1
            modes.append((k.astype(float), rng.normal(), rng.normal()))

        def dg(x, modes=modes):
            out = np.zeros_like(x)
            for k, ca, cb in modes:
                phase = x @ k
                out += (-ca * np.sin(phase) + cb * np.cos(phase))[..., None] * k
            return out
        defects.append(abs(cycle.pairing(dg)))
    return np.array(defects)


# ---------------------------------------------------------------------------
# strong chain recurrence


def _integrate_arcs(field, x0, t_total, dt):
    """RK4 arcs for every start; returns (dt_used, points (S+1, B, n))."""
    steps = max(1, int(np.ceil(t_total / dt)))
    dt = t_total / steps
    pts = np.empty((steps + 1,) + x0.shape)
    x = np.array(x0, dtype=float)
    pts[0] = x
    for s in range(steps):
        k1 = field(x)
        k2 = field(x + 0.5 * dt * k1)
        k3 = field(x + 0.5 * dt * k2)
        k4 = field(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        pts[s + 1] = x
    return dt, pts


def _torus_dist(a, b):
    d = np.abs(a - b)
    d = np.minimum(d, 2 * np.pi - d)
    return np.linalg.norm(d, axis=-1)


def _neighbor_offsets(reach_cells, n):
    r = int(reach_cells)
    return list(np.ndindex(*([2 * r + 1] * n)))


def _arc_edges(grid, arc, deadband, max_jump):
    """Deadbanded jump costs from each start node to nearby grid nodes.

    arc has shape (S, V, n); returns (src, tgt, cost) triplets deduplicated
    to the cheapest jump per pair. Jumps beyond max_jump are dropped: a
    single leg that expensive cannot sit on a cycle within tolerance.
    """
    S, V, n = arc.shape
    shape = grid.shape
    reach = int(np.ceil(max_jump / float(np.min(grid.h)))) + 1
    offs = _neighbor_offsets(reach, n)
    src_all, tgt_all, cost_all = [], [], []
    for s in range(S):
        p = arc[s]
        base = np.floor(p / grid.h).astype(np.int64)
        for off in offs:
            cell = np.stack([(base[:, a] + off[a] - reach) % shape[a]
                             for a in range(n)], axis=1)
            d = _torus_dist(p, cell * grid.h)
            keep = d <= max_jump
            if not keep.any():
                continue
            src_all.append(np.flatnonzero(keep))
            tgt_all.append(np.ravel_multi_index(cell[keep].T, shape))
            cost_all.append(np.maximum(0.0, d[keep] - deadband))
    src = np.concatenate(src_all)
    tgt = np.concatenate(tgt_all)
    cost = np.concatenate(cost_all)
    key = src * grid.node_count + tgt
    order = np.lexsort((cost, key))
    key, src, tgt, cost = key[order], src[order], tgt[order], cost[order]
    first = np.ones(len(key), dtype=bool)
    first[1:] = key[1:] != key[:-1]
    return src[first], tgt[first], cost[first]


def _scatter_min_dist(grid, pts, reach):
    """Per-node minimum distance to any of the given points (inf beyond reach)."""
    n = grid.n
    shape = grid.shape
    out = np.full(grid.node_count, np.inf)
    base = np.floor(pts / grid.h).astype(np.int64)
    for off in _neighbor_offsets(reach, n):
        cell = np.stack([(base[:, a] + off[a] - reach) % shape[a]
                         for a in range(n)], axis=1)
        flat = np.ravel_multi_index(cell.T, shape)
        d = _torus_dist(pts, cell * grid.h)
        np.minimum.at(out, flat, d)
    return out


def strong_chain_recurrent(field, grid, T, tol_jump=None, mode="auto",
                           max_exact_nodes=2600, dt=None):
    """Nodes admitting cycles of flow arcs (times in [T, 2T]) with small jumps.

    Edge x -> z costs the distance from the time-[T, 2T] arc of x to z, less
    a half-cell deadband (a jump below node-snapping resolution is not
    evidence against recurrence). A node belongs to the mask iff some cycle
    through it has summed jump cost at most tol_jump.
    """
    hmax = float(np.max(grid.h))
    if tol_jump is None:
        tol_jump = 1.2 * hmax
    deadband = (np.sqrt(2.0) / 2.0) * hmax * 1.01
    max_jump = deadband + tol_jump * 1.001
    V = grid.node_count
    n = grid.n
    x0 = grid.X.reshape(V, n)
    vmax = float(np.linalg.norm(field(x0), axis=-1).max()) + 1e-9
    if dt is None:
        dt = hmax / (2.0 * vmax)

    dt_used, pts = _integrate_arcs(field, x0, 2.0 * T, dt)
    s_lo = int(np.floor(T / dt_used))
    arc = np.mod(pts[s_lo:], 2.0 * np.pi)

    self_ret = _torus_dist(arc, x0[None, :, :]).min(axis=0)
    self_cost = np.maximum(0.0, self_ret - deadband)
    cyc = self_cost.copy()
    used_mode = "self-return"

    if (cyc > tol_jump).any() and mode != "self":
        if V <= max_exact_nodes or mode == "exact":
            src, tgt, cost = _arc_edges(grid, arc, deadband, max_jump)
            E = sp.csr_matrix((cost + 1e-15, (src, tgt)), shape=(V, V))
            D = shortest_path(E, method="D", directed=True)
            cand = cost + D[tgt, src]
            np.minimum.at(cyc, src, cand)
            used_mode = "exact"
        else:
            # cheap long cycles at this scale must loiter in the
            # self-returning core; within one flow-connected core component
            # travel along arcs is free
            reach = int(np.ceil(max_jump / float(np.min(grid.h)))) + 1
            core_mask = (self_cost <= 0.25 * tol_jump).reshape(grid.shape)
            labels, n_comp = _component_labels(core_mask, grid)
            lab_flat = labels.ravel()
            for g in range(n_comp):
                gset = np.zeros(V, dtype=bool)
                gset[lab_flat == g] = True
                # node -> component: each node's own arc meets a core node
                d_out = np.full(V, np.inf)
                for s in range(arc.shape[0]):
                    p = arc[s]
                    base = np.floor(p / grid.h).astype(np.int64)
                    for off in _neighbor_offsets(reach, n):
                        cell = np.stack(
                            [(base[:, a] + off[a] - reach) % grid.shape[a]
                             for a in range(n)], axis=1)
                        flat = np.ravel_multi_index(cell.T, grid.shape)
                        hit = gset[flat]
                        if hit.any():
                            d = _torus_dist(p[hit], cell[hit] * grid.h)
                            np.minimum.at(d_out, np.flatnonzero(hit), d)
                # component -> node: arcs of core members come near the node
                member_arc = arc[:, gset, :].reshape(-1, n)
                d_back = _scatter_min_dist(grid, member_arc, reach)
                trip = (np.maximum(0.0, d_out - deadband)
                        + np.maximum(0.0, d_back - deadband))
                np.minimum(cyc, trip, out=cyc)
            used_mode = "core-accelerated"

    mask = cyc <= tol_jump
    return NodeSetMask(mask=mask.reshape(grid.shape), tol=tol_jump, grid=grid,
                       meta={"mode": used_mode, "T": T, "deadband": deadband,
                             "dt": dt_used})
