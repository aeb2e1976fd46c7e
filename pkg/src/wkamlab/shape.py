"""Alpha function and the sectional shape of fiberwise convex domains.

The alpha function is evaluated through the exact class shift of the
discrete action graph: alpha(a) is the critical value of the shifted
Lagrangian L - <a, v>, computed by the same cycle-mean machinery that
certifies c(L) itself.  Sublevel sets {alpha < h} answer membership of a
cohomology class in the shape of {H < h}, a marching-squares pass over a
class grid traces the boundary curve, and classes strictly inside are
realized by smooth sections obtained from mollified weak KAM solutions.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .action import (build_action_graph, has_negative_cycle,
                     mane_critical_value, min_cycle_mean_howard,
                     policy_cycle_nodes)
from .errors import GridTooSmall, NotRealizable, VerificationFailed
from .geometry import LagrangianModel, LagrangianSection, ScalarField, TorusGrid
from .selector import _torus_kernel
from .weakkam import solve_weak_kam


def shifted_lagrangian(L, a):
    """The model L - <a, v>; same Euler-Lagrange flow, tilted cost."""
    a = np.atleast_1d(np.asarray(a, dtype=float))

    def value(x, v):
        return L.value(x, v) - v @ a

    def grad_v(x, v):
        return L.grad_v(x, v) - a

    return LagrangianModel(n=L.n, value=value, grad_v=grad_v,
                           grad_x=L.grad_x, hess_v=L.hess_v,
                           name=(L.name + "-shift") if L.name else "shift")


def alpha_function(L, a, grid=None, tau=None, stencil_radius=12,
                   tol_c=1e-3, graph=None, certify=True, box_check=True):
    """Critical value of L - <a, v> on the discrete action graph.

    The default stencil (radius 12, tau = 4h) is calibrated for the bundled
    quadratic-type models on a 64-per-axis grid; callers with slower models
    pass their own profile or a prebuilt graph.

    box_check inspects the optimal policy: a minimizing cycle that rides the
    stencil boundary means the requested class wants velocities outside the
    certified box, and the value would be clipped rather than wrong-but-
    plausible, so that is refused loudly.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if graph is None:
        if grid is None:
            grid = TorusGrid((64,) * L.n)
        if tau is None:
            tau = 4.0 * float(np.max(grid.h))
        graph = build_action_graph(L, grid, tau, stencil_radius)
    shifted = graph.with_class_shift(a)
    mu, eta, policy = min_cycle_mean_howard(shifted)
    c = -mu / shifted.tau
    if box_check:
        rad = int(np.max(np.abs(np.asarray(graph.offsets))))
        cyc = policy_cycle_nodes(shifted, policy)
        used = np.asarray(graph.offsets)[policy[cyc]]
        if np.any(np.abs(used) >= rad):
            raise ValueError(
                "class %s drives the minimizing cycle onto the stencil "
                "boundary; enlarge the velocity box" % np.array2string(a))
    if certify:
        # same bracket predicate mane_critical_value uses; fall back to
        # bisection if the cycle mean fails its own certificate
        bad_lo = not has_negative_cycle(shifted, c - 0.5 * tol_c)
        bad_hi = has_negative_cycle(shifted, c + 0.5 * tol_c)
        if bad_lo or bad_hi:
            c = mane_critical_value(shifted, tol_c=tol_c,
                                    method="bisection").c
    return float(c)


def _alpha_values(graph, classes, tol_c, certify=False):
    """alpha over an (M, n) array of classes, one shared graph.

    x-independent weights admit a closed form: every cycle mean averages
    per-offset costs, and each single offset already closes up on the
    torus, so the minimum cycle mean is the minimum over offsets.  That
    turns the scan into one matrix product.
    """
    flat_w = graph._flat_w
    if float(np.ptp(flat_w, axis=1).max()) < 1e-12:
        wbar = flat_w[:, 0]  # (K,)
        shifts = classes @ np.asarray(graph.disp).T  # (M, K)
        return np.max((shifts - wbar) / graph.tau, axis=1)
    out = np.empty(len(classes))
    for m, a in enumerate(classes):
        shifted = graph.with_class_shift(a)
        mu, _, _ = min_cycle_mean_howard(shifted)
        c = -mu / graph.tau
        if certify:
            if has_negative_cycle(shifted, c + 0.5 * tol_c) or \
                    not has_negative_cycle(shifted, c - 0.5 * tol_c):
                c = mane_critical_value(shifted, tol_c=tol_c,
                                        method="bisection").c
        out[m] = c
    return out


@dataclass
class AlphaTable:
    """alpha sampled on a rectangular grid of cohomology classes.

    axes: per-axis class coordinates; values: alpha, shaped like the grid;
    tol: per-entry tolerance of the critical-value computation.
    """

    axes: list
    values: np.ndarray
    tol: float
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.values.shape

    def classes(self):
        """All grid classes as one (M, n) array, C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def min_value(self):
        return float(self.values.min())

    def argmin(self):
        idx = np.unravel_index(int(np.argmin(self.values)), self.shape)
        return np.array([ax[i] for ax, i in zip(self.axes, idx)])

    def sublevel_mask(self, h):
        return self.values < h

    def midpoint_convexity_audit(self, h, n_pairs=400, seed=5):
        """Sampled quasiconvexity of the sublevel {alpha < h}.

        Pairs are drawn with even per-axis index sums so the midpoint lands
        on the table; the check is alpha(mid) <= max of the endpoints plus
        twice the per-entry tolerance.
        """
        sub = np.argwhere(self.sublevel_mask(h))
        report = {"pass": True, "checked": 0, "worst_defect": 0.0}
        if len(sub) < 2:
            return report
        rng = np.random.default_rng(seed)
        worst = 0.0
        checked = 0
        for _ in range(n_pairs):
            i, j = rng.integers(0, len(sub), size=2)
            ia, ib = sub[i], sub[j]
            if np.any((ia + ib) % 2):
                continue
            mid = tuple((ia + ib) // 2)
            lim = max(self.values[tuple(ia)], self.values[tuple(ib)])
            defect = self.values[mid] - lim - 2.0 * self.tol
            worst = max(worst, defect)
            checked += 1
        report["checked"] = checked
        report["worst_defect"] = float(worst)
        report["pass"] = bool(worst <= 0.0)
        return report


# ---------------------------------------------------------------------------
# boundary extraction


_MS_CASES = {
    0: [], 15: [],
    1: [("L", "B")], 2: [("B", "R")], 3: [("L", "R")],
    4: [("R", "T")], 6: [("B", "T")], 7: [("L", "T")],
    8: [("T", "L")], 9: [("B", "T")], 11: [("R", "T")],
    12: [("R", "L")], 13: [("B", "R")], 14: [("L", "B")],
}


def _marching_squares(ax0, ax1, F):
    """Zero-level segments of F sampled on ax0 x ax1, linear on edges."""

    def cross(fa, fb, pa, pb):
        t = fa / (fa - fb)
        return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))

    segs = []
    for i in range(len(ax0) - 1):
        for j in range(len(ax1) - 1):
            fA, fB = F[i, j], F[i + 1, j]
            fC, fD = F[i + 1, j + 1], F[i, j + 1]
            case = ((fA < 0) | ((fB < 0) << 1)
                    | ((fC < 0) << 2) | ((fD < 0) << 3))
            if case in (0, 15):
                continue
            A = (ax0[i], ax1[j])
            B = (ax0[i + 1], ax1[j])
            C = (ax0[i + 1], ax1[j + 1])
            D = (ax0[i], ax1[j + 1])
            pts = {}
            if (fA < 0) != (fB < 0):
                pts["B"] = cross(fA, fB, A, B)
            if (fB < 0) != (fC < 0):
                pts["R"] = cross(fB, fC, B, C)
            if (fD < 0) != (fC < 0):
                pts["T"] = cross(fD, fC, D, C)
            if (fA < 0) != (fD < 0):
                pts["L"] = cross(fA, fD, A, D)
            if case in (5, 10):
                center_in = (fA + fB + fC + fD) < 0
                if case == 5:
                    pairs = ([("B", "R"), ("T", "L")] if center_in
                             else [("L", "B"), ("R", "T")])
                else:
                    pairs = ([("L", "B"), ("R", "T")] if center_in
                             else [("B", "R"), ("T", "L")])
            else:
                pairs = _MS_CASES[case]
            for ea, eb in pairs:
                segs.append((pts[ea], pts[eb]))
    return segs


def _stitch(segs):
    """Chain segments into polylines by endpoint matching; longest first."""
    if not segs:
        return np.zeros((0, 2)), 0

    def key(p):
        return (round(p[0], 9), round(p[1], 9))

    adj = {}
    for s in segs:
        a, b = key(s[0]), key(s[1])
        if a == b:
            continue
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    seen = set()
    loops = []
    for start in adj:
        if start in seen:
            continue
        path = [start]
        seen.add(start)
        cur, prev = start, None
        while True:
            nxt = [q for q in adj[cur] if q != prev and q not in seen]
            if not nxt:
                closed = start in adj[cur] and len(path) > 2
                if closed:
                    path.append(start)
                break
            prev, cur = cur, nxt[0]
            seen.add(cur)
            path.append(cur)
        loops.append(path)
    loops.sort(key=len, reverse=True)
    return np.array(loops[0], dtype=float), len(loops)


def shape_of_domain(L, h, box=1.5, count=33, grid=None, tau=None,
                    stencil_radius=12, tol_c=1e-3, audit_pairs=400,
                    graph=None, audit_seed=5):
    """Alpha table over a class grid, sublevel boundary, convexity audit.

    Returns (AlphaTable, polyline): the polyline is the stitched
    marching-squares curve of {alpha = h} in class coordinates (empty for
    a one-dimensional base, where the table itself is the answer).
    Raises GridTooSmall whenever the sublevel reaches the class-grid
    boundary, since the traced shape would then be an artifact of the box.
    """
    n = L.n
    if graph is None:
        if grid is None:
            grid = TorusGrid((64,) * n)
        if tau is None:
            tau = 4.0 * float(np.max(grid.h))
        graph = build_action_graph(L, grid, tau, stencil_radius)
    axes = [np.linspace(-box, box, count) for _ in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    classes = np.stack([m.ravel() for m in mesh], axis=-1)
    values = _alpha_values(graph, classes, tol_c).reshape((count,) * n)
    table = AlphaTable(axes=axes, values=values, tol=tol_c,
                       meta={"box": box, "level": h,
                             "tau": graph.tau,
                             "base_shape": tuple(graph.grid.shape)})
    sub = table.sublevel_mask(h)
    edge = np.zeros_like(sub)
    for ax in range(n):
        edge[(slice(None),) * ax + (0,)] = True
        edge[(slice(None),) * ax + (-1,)] = True
    if np.any(sub & edge):
        raise GridTooSmall(
            "sublevel {alpha < %g} touches the class-grid boundary "
            "(box %g); enlarge the box" % (h, box))
    if n == 2:
        poly, n_loops = _stitch(_marching_squares(axes[0], axes[1],
                                                  values - h))
        table.meta["boundary_components"] = n_loops
    else:
        poly = np.zeros((0, 2))
    table.meta["convexity_audit"] = table.midpoint_convexity_audit(
        h, n_pairs=audit_pairs, seed=audit_seed)
    return table, poly


def shape_membership(L, h, a, grid=None, tau=None, stencil_radius=12,
                     tol=None, tol_c=1e-3, graph=None):
    """Tri-state membership of class a in the shape of {H < h}.

    Returns ("In" | "Out" | "Indeterminate", alpha).  The band half-width
    defaults to the critical-value tolerance plus a discretization margin
    of 0.02 (1 + |a|^2), the velocity-envelope error of the default
    stencil on the bundled quadratic-type models; the band is what keeps
    the answer honest about the open domain, so a class near the boundary
    is never claimed In.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    alpha = alpha_function(L, a, grid=grid, tau=tau,
                           stencil_radius=stencil_radius, tol_c=tol_c,
                           graph=graph)
    if tol is None:
        tol = tol_c + 0.02 * (1.0 + float(a @ a))
    if alpha < h - tol:
        state = "In"
    elif alpha > h + tol:
        state = "Out"
    else:
        state = "Indeterminate"
    return state, alpha


def section_realization(L, H, h, a, grid=None, tau=None, stencil_radius=15,
                        sweep=(8, 4, 2), tol_c=1e-3, tol=None,
                        require_membership=True, return_report=False):
    """Smooth section of class a strictly below the level h.

    Tries the constant section first, then mollified weak KAM solutions of
    the shifted Lagrangian over a decreasing sweep of smoothing radii
    (multiples of the grid step).  Every candidate is verified by direct
    evaluation of H on its covectors at the grid nodes; nothing is
    returned unverified.

    Raises NotRealizable when the class is not strictly inside the shape,
    and VerificationFailed when it is but no swept candidate passes (the
    achieved max-H is in the message).
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if grid is None:
        grid = TorusGrid((48,) * L.n)
    if tau is None:
        tau = 5.0 * float(np.max(grid.h))
    graph = build_action_graph(L, grid, tau, stencil_radius)
    if require_membership:
        state, alpha = shape_membership(L, h, a, tol=tol, tol_c=tol_c,
                                        graph=graph)
        if state != "In":
            raise NotRealizable(
                "class %s is %s for level %g (alpha = %.6f); only classes "
                "strictly inside the shape admit sections"
                % (np.array2string(a), state, h, alpha))
    X = grid.X
    report = {"candidates": []}
    hmax0 = float(np.max(H.value(X, np.broadcast_to(a, X.shape))))
    report["candidates"].append({"kind": "constant", "max_H": hmax0})
    if hmax0 < h:
        sec = LagrangianSection.constant(grid, a)
        report.update({"accepted": "constant", "max_H": hmax0,
                       "margin": h - hmax0})
        return (sec, report) if return_report else sec

    pair = solve_weak_kam(L, grid, tau, graph=graph.with_class_shift(a))
    u = pair.u_minus.values
    hstep = float(np.max(grid.h))
    best = (np.inf, None, None)
    for k in sweep:
        s = k * hstep
        psi = ndimage.convolve(u, _torus_kernel(grid, s), mode="wrap")
        g = ScalarField(grid, psi - psi.mean())
        sec = LagrangianSection(a, g)
        hmax = float(np.max(H.value(X, sec.covectors())))
        report["candidates"].append({"kind": "mollified", "s": s,
                                     "max_H": hmax})
        if hmax < best[0]:
            best = (hmax, sec, s)
        if hmax < h:
            report.update({"accepted": "mollified", "s": s, "max_H": hmax,
                           "margin": h - hmax})
            return (sec, report) if return_report else sec
    raise VerificationFailed(
        "no candidate section stayed below %g: best max H = %.6f "
        "(smoothing radius %.4f); sweep %s grid steps"
        % (h, best[0], best[2] if best[2] is not None else float("nan"),
           tuple(sweep)))
