"""Discretized action: stencil graph, potentials, critical value.

Paths on the grid move by integer cell offsets delta in [-R, R]^n per time
step tau; an edge x -> y = x + delta carries the one-step action

    w0(x, y) = tau * L(midpoint(x, y), delta * h / tau),

evaluated at the edge midpoint. The cohomology/critical offset k enters every
edge as + k * tau, so a path of S steps shifts affinely by S * tau * k; the
offset is therefore added after minimization, which makes the affinity exact.
"""

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .errors import BracketFailure, VelocityBoxExceeded


# ---------------------------------------------------------------------------
# graph construction


class ActionGraph:
    """One-step action weights for every stencil offset.

    Attributes
    ----------
    grid : TorusGrid
    tau : float
    offsets : (K, n) int array of cell offsets (the zero offset included).
    disp : (K, n) float displacements delta * h.
    vels : (K, n) float one-step velocities disp / tau.
    w0 : (K,) + grid.shape float base weights indexed by source node.
    """

    def __init__(self, grid, tau, offsets, disp, vels, w0):
        self.grid = grid
        self.tau = float(tau)
        self.offsets = offsets
        self.disp = disp
        self.vels = vels
        self.w0 = w0
        self._flat_w = w0.reshape(len(offsets), -1)
        self._src_into = None
        # negative axes so batched stacks (..., n1, n2) roll the grid axes only
        self._roll_axes = tuple(range(-grid.n, 0))

    @property
    def n_offsets(self):
        return len(self.offsets)

    @property
    def node_count(self):
        return self.grid.node_count

    def src_into(self):
        """(K, V) flat index of x - delta_k for each node x (edge sources)."""
        if self._src_into is None:
            g = self.grid
            idx = np.indices(g.shape).reshape(g.n, -1)  # (n, V)
            maps = np.empty((self.n_offsets, g.node_count), dtype=np.int64)
            for k, off in enumerate(self.offsets):
                shifted = [(idx[i] - off[i]) % g.shape[i] for i in range(g.n)]
                maps[k] = np.ravel_multi_index(tuple(shifted), g.shape)
            self._src_into = maps
        return self._src_into

    # -- min-plus steps ----------------------------------------------------

    def backward_step(self, u, k_offset=0.0, with_arg=False):
        """(Tu)(x) = min_y [u(y) + w(y, x)]: extend paths by one step into x."""
        best = None
        arg = None
        for j, off in enumerate(self.offsets):
            cand = np.roll(u + self.w0[j], shift=tuple(off), axis=self._roll_axes)
            if best is None:
                best = cand
                if with_arg:
                    arg = np.zeros(u.shape, dtype=np.int32)
            else:
                if with_arg:
                    m = cand < best
                    arg[m] = j
                    np.minimum(best, cand, out=best)
                else:
                    np.minimum(best, cand, out=best)
        if k_offset:
            best = best + k_offset * self.tau
        return (best, arg) if with_arg else best

    def forward_step(self, u, k_offset=0.0):
        """(T'u)(x) = max_y [u(y) - w(x, y)]: the forward (conjugate) operator."""
        best = None
        for j, off in enumerate(self.offsets):
            cand = np.roll(u, shift=tuple(-off), axis=self._roll_axes) - self.w0[j]
            if best is None:
                best = cand
            else:
                np.maximum(best, cand, out=best)
        if k_offset:
            best = best - k_offset * self.tau
        return best

    def reverse_step(self, u, k_offset=0.0):
        """(Ru)(x) = min_y [w(x, y) + u(y)]: distance-to-target relaxation."""
        best = None
        for j, off in enumerate(self.offsets):
            cand = np.roll(u, shift=tuple(-off), axis=self._roll_axes) + self.w0[j]
            if best is None:
                best = cand
            else:
                np.minimum(best, cand, out=best)
        if k_offset:
            best = best + k_offset * self.tau
        return best

    # -- alternate weight views -------------------------------------------

    def with_class_shift(self, a):
        """Graph for L - <a, v>: subtract <a, disp> from every edge, exactly."""
        a = np.atleast_1d(np.asarray(a, dtype=float))
        shift = self.disp @ a  # (K,)
        w = self.w0 - shift[:, None] if self.grid.n == 1 else \
            self.w0 - shift.reshape(-1, *([1] * self.grid.n))
        return ActionGraph(self.grid, self.tau, self.offsets, self.disp,
                           self.vels, w)

    def to_csr(self, k_offset=0.0):
        """Sparse (V, V) matrix of edge weights w0 + k*tau, sources as rows."""
        V = self.node_count
        rows = np.repeat(np.arange(V)[None, :], self.n_offsets, axis=0)
        # src_into gives, for each target x, the source x - delta; invert by
        # noting the edge set is offset-symmetric in construction: build
        # directly: source row -> target = source + delta.
        g = self.grid
        idx = np.indices(g.shape).reshape(g.n, -1)
        cols = np.empty((self.n_offsets, V), dtype=np.int64)
        for j, off in enumerate(self.offsets):
            shifted = [(idx[i] + off[i]) % g.shape[i] for i in range(g.n)]
            cols[j] = np.ravel_multi_index(tuple(shifted), g.shape)
        data = self._flat_w + k_offset * self.tau
        return sparse.csr_matrix(
            (data.ravel(), (rows.ravel(), cols.ravel())), shape=(V, V))


def build_action_graph(L, grid, tau, stencil_radius=3, fiber=None):
    """Build the one-step action graph.

    Parameters
    ----------
    L : LagrangianModel
    grid : TorusGrid
    tau : float
        Time step; must lie in [min h, 10 * min h].
    stencil_radius : int
        Cell reach R per axis; stencil velocities are delta * h / tau.
    fiber : FiberGrid, optional
        If given, enforce R * max(h) / tau <= fiber.P (VelocityBoxExceeded).

    Returns
    -------
    ActionGraph
    """
    hmin, hmax = float(np.min(grid.h)), float(np.max(grid.h))
    if not (hmin - 1e-12 <= tau <= 10 * hmin + 1e-12):
        raise ValueError("tau=%g outside [h, 10h] = [%g, %g]" % (tau, hmin, 10 * hmin))
    R = int(stencil_radius)
    if fiber is not None and R * hmax / tau > fiber.P + 1e-12:
        raise VelocityBoxExceeded(
            "stencil velocity %g exceeds fiber box %g" % (R * hmax / tau, fiber.P))
    offsets = np.array(list(product(range(-R, R + 1), repeat=grid.n)), dtype=int)
    disp = offsets * grid.h  # (K, n)
    vels = disp / tau
    # midpoints: x + disp/2, broadcast over nodes
    X = grid.X  # shape + (n,)
    K = len(offsets)
    w0 = np.empty((K,) + grid.shape)
    for j in range(K):
        mid = np.mod(X + 0.5 * disp[j], 2 * np.pi)
        w0[j] = tau * L.value(mid, np.broadcast_to(vels[j], X.shape))
    if not np.all(np.isfinite(w0)):
        raise ValueError("non-finite action weights")
    return ActionGraph(grid, tau, offsets, disp, vels, w0)


# ---------------------------------------------------------------------------
# negative cycles and cycle means


def has_negative_cycle(graph, k_offset, max_rounds=None):
    """Sound Bellman-Ford negative-cycle test at offset k.

    Starts from the all-zero potential (a virtual source into every node),
    relaxes rounds of the backward operator, and reports a cycle either via
    a predecessor-graph cycle (pointer doubling) or by non-stabilization
    within V rounds. Exact for the discretized graph.
    """
    g = graph.grid
    V = graph.node_count
    if max_rounds is None:
        max_rounds = V + 2
    u = np.zeros(g.shape)
    pred = np.full(V, -1, dtype=np.int64)
    srcmap = graph.src_into()
    flat_ids = np.arange(V)
    doublings = int(np.ceil(np.log2(max(V, 2)))) + 1
    for _ in range(max_rounds):
        best, arg = graph.backward_step(u, k_offset=k_offset, with_arg=True)
        improved = best < u
        if not improved.any():
            return False
        imp_flat = improved.ravel()
        u = np.where(improved, best, u)
        pred[imp_flat] = srcmap[arg.ravel()[imp_flat], flat_ids[imp_flat]]
        # pointer doubling: any surviving ancestry of length >= 2V is a cycle
        anc = pred.copy()
        for _ in range(doublings):
            live = anc >= 0
            if not live.any():
                break
            anc = np.where(live, pred[np.where(live, anc, 0)], -1)
        else:
            if (anc >= 0).any():
                return True
    return True


def min_cycle_mean_karp(graph, k_offset=0.0):
    """Exact minimum cycle mean by Karp's recurrence (small graphs only)."""
    V = graph.node_count
    if V > 2500:
        raise ValueError("Karp table is O(V^2); use the policy iteration")
    D = np.zeros((V + 1,) + graph.grid.shape)
    for t in range(1, V + 1):
        D[t] = graph.backward_step(D[t - 1], k_offset=k_offset)
    Dn = D[V].ravel()
    Dk = D[:V].reshape(V, -1)
    denom = (V - np.arange(V))[:, None].astype(float)
    ratios = (Dn[None, :] - Dk) / denom
    return float(ratios.max(axis=0).min())


def min_cycle_mean_howard(graph, k_offset=0.0, max_iter=500):
    """Minimum cycle mean by policy iteration (Howard), deterministic.

    Returns (mu, eta, policy): mu the global minimum cycle mean, eta the
    per-node best reachable cycle mean, policy the chosen offset per node.
    """
    V = graph.node_count
    W = graph._flat_w + k_offset * graph.tau  # (K, V) by SOURCE node? no:
    # _flat_w[j, x] is the weight of the edge x -> x + delta_j, source-indexed.
    g = graph.grid
    idx = np.indices(g.shape).reshape(g.n, -1)
    K = graph.n_offsets
    succ = np.empty((K, V), dtype=np.int64)
    for j, off in enumerate(graph.offsets):
        shifted = [(idx[i] + off[i]) % g.shape[i] for i in range(g.n)]
        succ[j] = np.ravel_multi_index(tuple(shifted), g.shape)
    scale = 1.0 + float(np.abs(W).max())
    eps = 1e-11 * scale

    policy = np.argmin(W, axis=0).astype(np.int64)

    def evaluate(policy):
        nxt = succ[policy, np.arange(V)]
        wp = W[policy, np.arange(V)]
        eta = np.empty(V)
        bias = np.zeros(V)
        state = np.zeros(V, dtype=np.int8)  # 0 new, 1 on stack, 2 done
        for start in range(V):
            if state[start]:
                continue
            path = []
            node = start
            while state[node] == 0:
                state[node] = 1
                path.append(node)
                node = nxt[node]
            if state[node] == 1:
                # found a new cycle: collect it
                cess = path.index(node)
                cyc = path[cess:]
                wsum = wp[cyc].sum()
                m = wsum / len(cyc)
                bias[cyc[-1]] = 0.0
                eta_c = m
                for x in reversed(cyc[:-1] if len(cyc) > 1 else []):
                    bias[x] = wp[x] - eta_c + bias[nxt[x]]
                for x in cyc:
                    eta[x] = eta_c
                    state[x] = 2
                stem = path[:cess]
            else:
                stem = path
            for x in reversed(stem):
                eta[x] = eta[nxt[x]]
                bias[x] = wp[x] - eta[x] + bias[nxt[x]]
                state[x] = 2
        return eta, bias

    arange = np.arange(V)
    for _ in range(max_iter):
        eta, bias = evaluate(policy)
        eta_succ = eta[succ]  # (K, V)
        best_eta = eta_succ.min(axis=0)
        improve1 = best_eta < eta - eps
        if improve1.any():
            new = np.argmin(eta_succ, axis=0)
            policy = np.where(improve1, new, policy)
            continue
        cand = W - eta[None, :] + bias[succ]
        best = cand.min(axis=0)
        improve2 = best < bias - eps
        if improve2.any():
            new = np.argmin(cand, axis=0)
            policy = np.where(improve2, new, policy)
            continue
        break
    mu = float(eta.min())
    return mu, eta, policy


def policy_cycle_nodes(graph, policy):
    """Flat indices of all nodes lying on cycles of the policy graph."""
    V = graph.node_count
    g = graph.grid
    idx = np.indices(g.shape).reshape(g.n, -1)
    succ_all = np.empty((graph.n_offsets, V), dtype=np.int64)
    for j, off in enumerate(graph.offsets):
        shifted = [(idx[i] + off[i]) % g.shape[i] for i in range(g.n)]
        succ_all[j] = np.ravel_multi_index(tuple(shifted), g.shape)
    nxt = succ_all[policy, np.arange(V)]
    state = np.zeros(V, dtype=np.int8)
    on_cycle = np.zeros(V, dtype=bool)
    for start in range(V):
        if state[start]:
            continue
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = nxt[node]
        if state[node] == 1:
            cyc = path[path.index(node):]
            on_cycle[cyc] = True
        for x in path:
            state[x] = 2
    return np.flatnonzero(on_cycle)


# ---------------------------------------------------------------------------
# critical value


@dataclass
class CriticalValue:
    """Result of a critical-value computation."""

    c: float
    bracket: tuple
    method: str
    certified: bool = True
    meta: dict = field(default_factory=dict)


def mane_critical_value(graph, tol_c=1e-3, bracket=None, method="auto"):
    """Critical offset above which no path sum diverges to minus infinity.

    The predicate "no negative cycle at offset k" is monotone in k; the
    returned value is the midpoint of a bracket of width <= tol_c whose
    endpoints the predicate separates.

    method:
      "bisection"  pure bisection with the sound negative-cycle test;
      "cycle-mean" exact minimum cycle mean (policy iteration), bracket
                   certified afterwards with the same predicate;
      "auto"       cycle-mean with fallback to bisection.
    """
    if tol_c < 1e-4:
        raise ValueError("tol_c below the supported resolution 1e-4")
    tau = graph.tau
    if bracket is None:
        m = float(np.abs(graph.w0).max()) / tau
        bracket = (-m - 1.0, m + 1.0)
    lo, hi = float(bracket[0]), float(bracket[1])

    def no_neg(k):
        return not has_negative_cycle(graph, k)

    if method in ("auto", "cycle-mean"):
        mu, eta, policy = min_cycle_mean_howard(graph)
        c0 = -mu / tau
        ok_lo = not no_neg(c0 - 0.5 * tol_c)
        ok_hi = no_neg(c0 + 0.5 * tol_c)
        if ok_lo and ok_hi:
            return CriticalValue(c=c0, bracket=(c0 - 0.5 * tol_c, c0 + 0.5 * tol_c),
                                 method="cycle-mean", certified=True,
                                 meta={"policy_cycle_mean": mu})
        if method == "cycle-mean":
            return CriticalValue(c=c0, bracket=(c0 - 0.5 * tol_c, c0 + 0.5 * tol_c),
                                 method="cycle-mean", certified=False,
                                 meta={"policy_cycle_mean": mu})
        # fall through to bisection

    if no_neg(lo):
        raise BracketFailure("lower bracket end already admits no negative cycle")
    if not no_neg(hi):
        raise BracketFailure("upper bracket end still has a negative cycle")
    while hi - lo > tol_c:
        mid = 0.5 * (lo + hi)
        if no_neg(mid):
            hi = mid
        else:
            lo = mid
    return CriticalValue(c=0.5 * (lo + hi), bracket=(lo, hi), method="bisection")


# ---------------------------------------------------------------------------
# potentials


@dataclass
class PotentialMatrix:
    """All-pairs minimal path action at a fixed offset k.

    values[i, j] is the minimal action of a path from node i to node j (flat
    row-major indices); the empty path makes the diagonal exactly zero. When
    a negative cycle exists every entry is minus infinity (the stencil graph
    is strongly connected), stored as -inf with the flag set.
    """

    values: np.ndarray
    k_offset: float
    minus_inf: bool = False

    def lookup(self, i, j):
        return self.values[i, j]

    def triangle_defect(self, sample=None, rng=None):
        """max over sampled (i, j, m) of Phi(i,j) - Phi(i,m) - Phi(m,j)."""
        if self.minus_inf:
            return float("nan")
        V = self.values.shape[0]
        if sample is None:
            d = (self.values[:, None, :] - self.values[:, :, None]
                 - self.values[None, :, :]) if V <= 200 else None
            if d is not None:
                return float(d.max())
            sample = 4096
        rng = rng or np.random.default_rng(0)
        i = rng.integers(0, V, sample)
        j = rng.integers(0, V, sample)
        m = rng.integers(0, V, sample)
        return float((self.values[i, j] - self.values[i, m] - self.values[m, j]).max())


def action_potential(graph, k_offset, max_nodes=2600):
    """Free-step minimal action between all node pairs at offset k.

    Uses Johnson's algorithm on the sparse stencil graph after a sound
    negative-cycle pre-check; with a negative cycle present, strong
    connectivity makes every entry minus infinity.
    """
    V = graph.node_count
    if V > max_nodes:
        raise ValueError("all-pairs potential guarded to %d nodes" % max_nodes)
    if has_negative_cycle(graph, k_offset):
        vals = np.full((V, V), -np.inf)
        return PotentialMatrix(values=vals, k_offset=k_offset, minus_inf=True)
    M = graph.to_csr(k_offset)
    dist = csgraph.shortest_path(M, method="J", directed=True)
    return PotentialMatrix(values=dist, k_offset=k_offset, minus_inf=False)


def action_potential_T(graph, k_offset, steps, source=None):
    """Fixed-step-count DP minimal action.

    With source=None returns the full (V, V) table for `steps` steps (small
    grids); with a flat source index returns the (V,) row. The k offset is
    added after minimizing the base weights, so the result is exactly affine
    in k with slope steps * tau.
    """
    g = graph.grid
    if source is None:
        if graph.node_count > 1600:
            raise ValueError("all-sources DP guarded to 1600 nodes")
        u = np.full((graph.node_count,) + g.shape, np.inf)
        flat = u.reshape(graph.node_count, -1)
        flat[np.arange(graph.node_count), np.arange(graph.node_count)] = 0.0
    else:
        u = np.full(g.shape, np.inf)
        u.ravel()[source] = 0.0
    for _ in range(steps):
        u = _dp_step_batched(graph, u)
    return u + steps * graph.tau * k_offset


def _dp_step_batched(graph, u):
    """One DP extension step; u may carry leading batch axes."""
    lead = u.ndim - graph.grid.n
    axes = tuple(range(lead, u.ndim))
    best = None
    for j, off in enumerate(graph.offsets):
        cand = np.roll(u + graph.w0[j], shift=tuple(off), axis=axes)
        if best is None:
            best = cand
        else:
            np.minimum(best, cand, out=best)
    return best


# ---------------------------------------------------------------------------
# static curves


def static_check(times, xs, vs, L, c, potentials, grid, n_samples=24,
                 tol=None, rng=None):
    """Classify a sampled curve as static / semistatic / neither.

    Compares the Lagrangian action (plus c) along sampled sub-arcs with the
    free-step potential between the nearest grid nodes; a sub-arc is
    semistatic when the two agree, static when additionally the reverse
    potential cancels the action.

    Returns dict with verdict and the two defects.
    """
    times = np.asarray(times, dtype=float)
    xs = np.asarray(xs, dtype=float)
    vs = np.asarray(vs, dtype=float)
    lagr = L.value(xs, vs) + c
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (lagr[1:] + lagr[:-1])
                                           * np.diff(times))])
    rng = rng or np.random.default_rng(0)
    T = len(times)
    ii = rng.integers(0, T - 1, n_samples)
    jj = rng.integers(0, T - 1, n_samples)
    lo = np.minimum(ii, jj)
    hi = np.maximum(ii, jj)
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    if lo.size == 0:
        lo, hi = np.array([0]), np.array([T - 1])
    nodes = grid.flat_index(grid.nearest_node(xs))
    if tol is None:
        tol = 6.0 * float(np.max(grid.h)) * (1.0 + abs(c))
    semi = 0.0
    stat = 0.0
    for a, b in zip(lo, hi):
        act = cum[b] - cum[a]
        fwd = potentials.lookup(nodes[a], nodes[b])
        semi = max(semi, abs(act - fwd))
        stat = max(stat, abs(act + potentials.lookup(nodes[b], nodes[a])))
    if semi <= tol and stat <= tol:
        verdict = "static"
    elif semi <= tol:
        verdict = "semistatic"
    else:
        verdict = "neither"
    return {"verdict": verdict, "semistatic_defect": float(semi),
            "static_defect": float(stat), "tol": float(tol)}
