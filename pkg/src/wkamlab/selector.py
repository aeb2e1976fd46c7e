"""Generating families quadratic at infinity and the minimax graph selector.

A family S(x, xi) with S = Q outside a fiber ball selects one critical value
per base point: the smallest sublevel threshold at which a homology class
fixed by the index of Q appears. The class is tracked through a union-find
filtration of a sampled fiber; the resulting function of x is Lipschitz and
its gradient picks a branch of the generated Lagrangian.

Mollifying the selector with a torus bump gives a smooth section whose
derivative stays inside convex hulls of nearby selected covectors.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateCritical, ResolutionTooCoarse, VerificationFailed
from .geometry import LagrangianSection, ScalarField

# ---------------------------------------------------------------------------
# the family


@dataclass
class Gfqi:
    """Generating family quadratic at infinity with constant diagonal Q.

    value/grad_xi/grad_x take one base point x of shape (n,) and a batch of
    fiber points xi of shape (M, k); they return (M,), (M, k), (M, n).
    """

    q: np.ndarray               # diagonal entries of Q, length k
    rho: float                  # S = Q outside |xi| > rho
    value: object
    grad_xi: object
    grad_x: object
    n: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if np.any(np.abs(self.q) < 1e-12):
            raise ValueError("Q must be nondegenerate")
        if self.k not in (1, 2):
            raise ValueError("fiber dimension must be 1 or 2")

    @property
    def k(self):
        return len(self.q)

    @property
    def index(self):
        return int((self.q < 0).sum())

    def quadratic(self, xi):
        xi = np.atleast_2d(xi)
        return np.einsum("j,mj,mj->m", self.q, xi, xi)

    @property
    def level_N(self):
        """S equals Q wherever |Q| exceeds this level."""
        return 1.25 * float(np.abs(self.q).max()) * self.rho ** 2 + 1e-9


def quadratic_gfqi(q, n=1, rho=0.1):
    """The family S = Q: a zero-section generator for any index."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    k = len(q)

    def value(x, xi):
        xi = np.atleast_2d(xi)
        return np.einsum("j,mj,mj->m", q, xi, xi)

    def grad_xi(x, xi):
        return 2.0 * q * np.atleast_2d(xi)

    def grad_x(x, xi):
        return np.zeros((np.atleast_2d(xi).shape[0], n))

    return Gfqi(q=q, rho=rho, value=value, grad_xi=grad_xi, grad_x=grad_x,
                n=n, meta={"kind": "quadratic"})


def _bump(t):
    """Smooth bump on (-1, 1), zero outside, max 1 at 0."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    s = t[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s * s))
    return out


def _bump_d(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    s = t[inside]
    u = 1.0 - s * s
    out[inside] = np.exp(1.0 - 1.0 / u) * (-2.0 * s / u ** 2)
    return out


def bump_gfqi(amplitude=1.5, mode=1, rho=0.8, q=-1.0, center=0.15, n=1):
    """k=1 family S = q xi^2 + amplitude sin(mode x_1) bump((xi-center)/rho).

    Large enough amplitude folds the generated curve over an interval of
    base points, so the selector must switch branches: the standard
    multivalued test case. The off-center bump keeps the fiber problems
    free of accidental symmetry, so critical values stay pairwise distinct
    away from the fold points themselves.
    """
    q = float(q)

    def value(x, xi):
        xi = np.atleast_2d(xi)[:, 0]
        return (q * xi ** 2 + amplitude * np.sin(mode * x[0])
                * _bump((xi - center) / rho))

    def grad_xi(x, xi):
        xi = np.atleast_2d(xi)[:, 0]
        g = (2.0 * q * xi + amplitude * np.sin(mode * x[0])
             * _bump_d((xi - center) / rho) / rho)
        return g[:, None]

    def grad_x(x, xi):
        xi = np.atleast_2d(xi)[:, 0]
        out = np.zeros((len(xi), n))
        out[:, 0] = (amplitude * mode * np.cos(mode * x[0])
                     * _bump((xi - center) / rho))
        return out

    return Gfqi(q=np.array([q]), rho=rho + abs(center), value=value,
                grad_xi=grad_xi, grad_x=grad_x, n=n,
                meta={"kind": "bump", "amplitude": amplitude, "mode": mode,
                      "center": center})


def shifted_gfqi(base, f, df):
    """S'(x, xi) = S(x, xi) + f(x): shifts the selector by f exactly."""

    def value(x, xi):
        return base.value(x, xi) + f(x)

    def grad_x(x, xi):
        return base.grad_x(x, xi) + df(x)

    return Gfqi(q=base.q.copy(), rho=base.rho, value=value,
                grad_xi=base.grad_xi, grad_x=grad_x, n=base.n,
                meta=dict(base.meta, shifted=True))


def load_gfqi(path):
    """Build a family from a small key = value text file.

    Recognized keys: q (comma-separated diagonal entries), rho, and for the
    bundled bump family amplitude, mode and center.
    """
    import configparser

    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_string("[gfqi]\n" + fh.read())
    sec = cp["gfqi"]
    q = np.array([float(t) for t in sec.get("q", "-1.0").split(",")])
    rho = float(sec.get("rho", "0.8"))
    amplitude = float(sec.get("amplitude", "0.0"))
    if amplitude == 0.0:
        return quadratic_gfqi(q, rho=rho)
    if len(q) != 1:
        raise ValueError("the bump family has a one-dimensional fiber")
    return bump_gfqi(amplitude=amplitude, mode=int(sec.get("mode", "1")),
                     rho=rho, q=q[0],
                     center=float(sec.get("center", "0.15")))


def check_gfqi(S, grid, n_tail=64, n_base=16, tol=1e-10):
    """Sampled invariants: exact quadratic tail, transversal critical set.

    Transversality of the fiber-critical manifold asks the full derivative
    of d_xi S to have rank k at critical points; with constant Q this means
    the pair (xi-Hessian, mixed derivative) never vanishes together.
    """
    rng = np.random.default_rng(11)
    k = S.k
    xs = grid.X.reshape(-1, grid.n)
    xs = xs[rng.choice(len(xs), size=min(n_base, len(xs)), replace=False)]
    r = S.rho * (1.0 + rng.random(n_tail) * 2.0) + 1e-9
    if k == 1:
        xi_t = np.where(rng.random(n_tail) < 0.5, -r, r)[:, None]
    else:
        ang = rng.random(n_tail) * 2 * np.pi
        xi_t = r[:, None] * np.stack([np.cos(ang), np.sin(ang)], axis=1)
    tail_err = 0.0
    rank_gap = np.inf
    eps = 1e-6
    for x in xs:
        tail_err = max(tail_err, float(
            np.abs(S.value(x, xi_t) - S.quadratic(xi_t)).max()))
        for p in fiber_critical_points(S, x):
            mixed = np.empty((S.k, len(x)))
            for b in range(len(x)):
                e = np.zeros(len(x))
                e[b] = eps
                mixed[:, b] = (S.grad_xi(x + e, p["xi"][None, :])[0]
                               - S.grad_xi(x - e, p["xi"][None, :])[0]) / (2 * eps)
            row = np.concatenate([np.atleast_1d(p["hess_det"]),
                                  mixed.ravel()])
            rank_gap = min(rank_gap, float(np.abs(row).max()))
    report = {"tail_error": tail_err, "tail_exact": tail_err <= tol,
              "min_rank_indicator": rank_gap,
              "transversal": rank_gap > 1e-8}
    return report


# ---------------------------------------------------------------------------
# fiberwise critical points


def _fiber_limit(S):
    """Half-width of the sampling box: past rho and past the -2N level."""
    lim = 1.1 * S.rho
    N = S.level_N
    for j in range(S.k):
        if S.q[j] < 0:
            lim = max(lim, np.sqrt(2.0 * N / -S.q[j]))
    return lim


def fiber_critical_points(S, x, samples=2001, tol_deg=1e-8, strict=False):
    """All fiberwise critical points over one base point.

    Sign-change bracketing on a fine grid, polished by Newton; each point
    carries its value, Morse index, degeneracy flag, and d_xS. Sorted by
    value. With strict=True a degenerate point raises DegenerateCritical.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    lim = _fiber_limit(S)
    pts = []
    if S.k == 1:
        t = np.linspace(-lim, lim, samples)
        g = S.grad_xi(x, t[:, None])[:, 0]
        sgn = np.sign(g)
        hits = np.flatnonzero(np.diff(sgn) != 0)
        h = (t[1] - t[0])
        roots = []
        for i in hits:
            a, b = t[i], t[i + 1]
            fa = g[i]
            for _ in range(30):
                mid = 0.5 * (a + b)
                fm = float(S.grad_xi(x, [[mid]])[0, 0])
                if fa * fm <= 0:
                    b = mid
                else:
                    a, fa = mid, fm
            r = 0.5 * (a + b)
            for _ in range(3):  # Newton polish with a centered slope
                fr = float(S.grad_xi(x, [[r]])[0, 0])
                d2 = float((S.grad_xi(x, [[r + h]])[0, 0]
                            - S.grad_xi(x, [[r - h]])[0, 0]) / (2 * h))
                if abs(d2) < 1e-14:
                    break
                r = r - fr / d2
            roots.append(r)
        roots.extend(t[np.flatnonzero(g == 0.0)])
        for r in sorted(set(np.round(roots, 12))):
            d2 = float((S.grad_xi(x, [[r + h]])[0, 0]
                        - S.grad_xi(x, [[r - h]])[0, 0]) / (2 * h))
            pts.append({"xi": np.array([r]),
                        "value": float(S.value(x, [[r]])[0]),
                        "index": 1 if d2 < 0 else 0,
                        "hess_det": d2,
                        "degenerate": abs(d2) < tol_deg,
                        "d_x": S.grad_x(x, [[r]])[0]})
    else:
        m = int(np.sqrt(samples)) | 1
        t = np.linspace(-lim, lim, m)
        XI = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
        G = S.grad_xi(x, XI).reshape(m, m, 2)
        h = t[1] - t[0]
        # cells where both gradient components change sign
        cand = []
        s0 = np.sign(G[..., 0])
        s1 = np.sign(G[..., 1])
        for i in range(m - 1):
            for j in range(m - 1):
                b0 = {s0[i, j], s0[i + 1, j], s0[i, j + 1], s0[i + 1, j + 1]}
                b1 = {s1[i, j], s1[i + 1, j], s1[i, j + 1], s1[i + 1, j + 1]}
                # a corner where the component vanishes exactly counts as
                # a crossing, same as the k=1 branch's g == 0 roots
                if ((0.0 in b0 or len(b0 - {0.0}) != 1)
                        and (0.0 in b1 or len(b1 - {0.0}) != 1)):
                    cand.append((t[i] + h / 2, t[j] + h / 2))
        seen = []
        for xi0 in cand:
            xi = np.array(xi0)
            for _ in range(40):
                g = S.grad_xi(x, xi[None, :])[0]
                Hm = _fd_hess(S, x, xi)
                try:
                    step = np.linalg.solve(Hm, g)
                except np.linalg.LinAlgError:
                    break
                xi = xi - step
                if np.linalg.norm(step) < 1e-13:
                    break
            if np.linalg.norm(S.grad_xi(x, xi[None, :])[0]) > 1e-7:
                continue
            if any(np.linalg.norm(xi - s) < 1e-6 for s in seen):
                continue
            seen.append(xi.copy())
            Hm = _fd_hess(S, x, xi)
            ev = np.linalg.eigvalsh(0.5 * (Hm + Hm.T))
            det = float(np.linalg.det(Hm))
            pts.append({"xi": xi,
                        "value": float(S.value(x, xi[None, :])[0]),
                        "index": int((ev < 0).sum()),
                        "hess_det": det,
                        "degenerate": abs(det) < tol_deg,
                        "d_x": S.grad_x(x, xi[None, :])[0]})
        pts.sort(key=lambda p: p["value"])
    if strict and any(p["degenerate"] for p in pts):
        raise DegenerateCritical("degenerate fiber critical point at x=%s"
                                 % np.array2string(x, precision=4))
    return pts


def _fd_hess(S, x, xi, eps=1e-6):
    k = len(xi)
    H = np.empty((k, k))
    for b in range(k):
        e = np.zeros(k)
        e[b] = eps
        H[:, b] = (S.grad_xi(x, (xi + e)[None, :])[0]
                   - S.grad_xi(x, (xi - e)[None, :])[0]) / (2 * eps)
    return H


# ---------------------------------------------------------------------------
# the selector value: homology threshold in the fiber filtration


class _DisjointSet:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, i):
        p = self.parent
        while p[i] != i:
            p[i] = p[p[i]]
            i = p[i]
        return i

    def union(self, i, j):
        ri, rj = self.find(i), self.find(j)
        if ri != rj:
            self.parent[ri] = rj


def _fiber_grid(S, count):
    lim = _fiber_limit(S)
    t = np.linspace(-lim, lim, count)
    if S.k == 1:
        return t[:, None], (count,)
    XI = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    return XI, (count, count)


def _threshold_union_find(vals, shape, camp_a, camp_b):
    """Smallest sublevel at which the two camps join, by increasing-value
    activation; ties broken toward earlier cells, so the smaller threshold."""
    n = vals.size
    order = np.argsort(vals, kind="stable")
    ds = _DisjointSet(n)
    active = np.zeros(n, dtype=bool)
    if len(shape) == 1:
        neigh = lambda i: (j for j in (i - 1, i + 1) if 0 <= j < n)
    else:
        w = shape[1]

        def neigh(i):
            r, c = divmod(i, w)
            if r > 0:
                yield i - w
            if r < shape[0] - 1:
                yield i + w
            if c > 0:
                yield i - 1
            if c < w - 1:
                yield i + 1
    ra = int(camp_a[0])
    rb = int(camp_b[0])
    for i in order:
        active[i] = True
        for j in neigh(int(i)):
            if active[j]:
                ds.union(int(i), j)
        if ds.find(ra) == ds.find(rb):
            return float(vals[i])
    raise VerificationFailed("fiber camps never connect inside the box")


def _threshold_scan(vals, shape, camp_a, camp_b):
    """Independent oracle: bisection over levels with BFS connectivity."""
    levels = np.unique(vals)
    lo, hi = 0, len(levels) - 1

    def connected(a):
        keep = vals <= a
        if not (keep[camp_a].any() and keep[camp_b].any()):
            return False
        n = vals.size
        seen = np.zeros(n, dtype=bool)
        stack = [int(i) for i in camp_a if keep[i]]
        for i in stack:
            seen[i] = True
        if len(shape) == 1:
            def neigh(i):
                return (j for j in (i - 1, i + 1) if 0 <= j < n)
        else:
            w = shape[1]

            def neigh(i):
                r, c = divmod(i, w)
                if r > 0:
                    yield i - w
                if r < shape[0] - 1:
                    yield i + w
                if c > 0:
                    yield i - 1
                if c < w - 1:
                    yield i + 1
        while stack:
            i = stack.pop()
            for j in neigh(i):
                if keep[j] and not seen[j]:
                    seen[j] = True
                    stack.append(j)
        return bool(seen[camp_b].any())

    if not connected(levels[hi]):
        raise VerificationFailed("fiber camps never connect inside the box")
    while lo < hi:
        mid = (lo + hi) // 2
        if connected(levels[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(levels[lo])


def _selector_on_grid(S, x, count, method):
    XI, shape = _fiber_grid(S, count)
    vals = S.value(x, XI)
    m = S.index
    k = S.k
    if m == 0:
        return float(vals.min())
    N = S.level_N
    if m == k:
        if k == 1:
            low = S.quadratic(XI) <= -N
            idx = np.flatnonzero(low)
            camp_a = idx[XI[idx, 0] < 0]
            camp_b = idx[XI[idx, 0] > 0]
            fn = _threshold_scan if method == "scan" else _threshold_union_find
            return fn(vals, shape, camp_a, camp_b)
        # k = 2, index 2: the relative fundamental class appears when the
        # sublevel swallows the whole compact region above the -N collar
        return float(vals[S.quadratic(XI) > -N].max())
    # k = 2, index 1: the disc runs along the negative axis; its class is
    # born when the two far cones of {Q <= -N} join through the sublevel
    j_neg = int(np.argmax(S.q < 0))
    low = S.quadratic(XI) <= -N
    idx = np.flatnonzero(low)
    camp_a = idx[XI[idx, j_neg] < 0]
    camp_b = idx[XI[idx, j_neg] > 0]
    fn = _threshold_scan if method == "scan" else _threshold_union_find
    return fn(vals, shape, camp_a, camp_b)


def selector_value(S, x, fiber_count=None, method="union-find",
                   tol_refine=None, check_refine=True):
    """Minimax value of the family over one base point.

    The smallest sublevel threshold at which the homology class fixed by
    index(Q) appears in the pair (sublevel set, deep quadratic collar). The
    value is recomputed on a doubled fiber grid; a drift beyond tol_refine
    raises ResolutionTooCoarse.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if fiber_count is None:
        fiber_count = 4097 if S.k == 1 else 193
    fiber_count = int(fiber_count) | 1
    a0 = _selector_on_grid(S, x, fiber_count, method)
    if not check_refine:
        return a0
    a1 = _selector_on_grid(S, x, 2 * fiber_count - 1, method)
    if tol_refine is None:
        tol_refine = 1e-5 * (1.0 + abs(a1))
    if abs(a1 - a0) > tol_refine:
        raise ResolutionTooCoarse(
            "selector moved %.3g under fiber refinement (tol %.3g)"
            % (abs(a1 - a0), tol_refine))
    return a1


# ---------------------------------------------------------------------------
# the graph selector over a base grid


@dataclass
class SelectorField:
    """Selector values with the well-separated node set and its covectors."""

    phi: ScalarField
    x0_mask: np.ndarray
    covectors: np.ndarray       # grid.shape + (n,), NaN off the mask
    lipschitz: float
    meta: dict = field(default_factory=dict)


def lagrangian_samples(S, grid):
    """The generated Lagrangian as a point cloud: rows (x, d_xS, value)."""
    rows = []
    for idx in np.ndindex(*grid.shape):
        x = grid.X[idx].reshape(-1)
        for p in fiber_critical_points(S, x):
            rows.append(np.concatenate([x, p["d_x"], [p["value"]]]))
    return np.array(rows)


def graph_selector(S, grid, fiber_count=None, tol_gap=None, lip_margin=1.1):
    """Selector values at every node plus the selected-branch covectors.

    X0 keeps the nodes whose critical points are nondegenerate with
    pairwise distinct values; there the selected covector is d_xS at the
    critical point realizing the value. The Lipschitz estimate over node
    pairs must stay under lip_margin times the largest critical |d_xS|.
    """
    vals = np.empty(grid.shape)
    x0 = np.ones(grid.shape, dtype=bool)
    cov = np.full(grid.shape + (grid.n,), np.nan)
    max_dx = 0.0
    all_values = []
    for idx in np.ndindex(*grid.shape):
        x = grid.X[idx].reshape(-1)
        a = selector_value(S, x, fiber_count=fiber_count)
        vals[idx] = a
        pts = fiber_critical_points(S, x)
        if pts:
            max_dx = max(max_dx, max(
                float(np.linalg.norm(p["d_x"])) for p in pts))
            all_values.extend(p["value"] for p in pts)
        if any(p["degenerate"] for p in pts) or not pts:
            x0[idx] = False
            continue
        pv = np.array([p["value"] for p in pts])
        rng_all = max(1.0, float(np.ptp(pv))) if len(pv) > 1 else 1.0
        gap_bar = (tol_gap if tol_gap is not None else 1e-6 * rng_all)
        if len(pv) > 1 and np.diff(np.sort(pv)).min() <= gap_bar:
            x0[idx] = False
            continue
        j = int(np.argmin(np.abs(pv - a)))
        if abs(pv[j] - a) > 1e-4 * (1.0 + abs(a)):
            x0[idx] = False
            continue
        cov[idx] = pts[j]["d_x"]
    phi = ScalarField(grid, vals)
    lip = 0.0
    for ax in range(grid.n):
        d = np.abs(np.roll(vals, -1, axis=ax) - vals) / grid.h[ax]
        lip = max(lip, float(d.max()))
    bound = lip_margin * max_dx
    if max_dx > 0 and lip > bound * (1.0 + 1e-9):
        raise VerificationFailed(
            "selector slope %.4g exceeds %.2f x max |d_xS| = %.4g"
            % (lip, lip_margin, bound))
    member = _membership_cells(S, grid, vals, x0)
    return SelectorField(phi=phi, x0_mask=x0, covectors=cov, lipschitz=lip,
                         meta={"max_dx": max_dx,
                               "x0_fraction": float(x0.mean()),
                               "value_count": len(all_values),
                               "membership_cells": member})


def _membership_cells(S, grid, vals, x0):
    """Worst distance, in cells, from (x, dPhi) on X0 to the sampled branch
    cloud. dPhi at a node is ambiguous one cell from a branch switch, so
    central, forward, and backward slopes all count as candidates."""
    cloud = lagrangian_samples(S, grid)
    if cloud.size == 0 or not x0.any():
        return 0.0
    n = grid.n
    CX, CP = cloud[:, :n], cloud[:, n:2 * n]
    slopes = []
    for ax in range(grid.n):
        h = grid.h[ax]
        slopes.append([(np.roll(vals, -1, ax) - np.roll(vals, 1, ax))
                       / (2.0 * h),
                       (np.roll(vals, -1, ax) - vals) / h,
                       (vals - np.roll(vals, 1, ax)) / h])
    X = grid.X.reshape(-1, n)
    idx = np.flatnonzero(x0.ravel())
    span = 2.0 * np.pi
    worst = 0.0
    for i in idx:
        dx = np.abs(X[i] - CX)
        dx = np.minimum(dx, span - dx) / grid.h
        best = np.inf
        for variant in range(3):
            p = np.array([slopes[ax][variant].ravel()[i] for ax in range(n)])
            dp = np.abs(p - CP) / grid.h
            best = min(best, float(np.maximum(dx.max(axis=1),
                                              dp.max(axis=1)).min()))
        worst = max(worst, best)
    return worst


# ---------------------------------------------------------------------------
# convolution smoothing


def _torus_kernel(grid, s):
    """Radial bump of radius s sampled on the grid, unit discrete mass."""
    r = [int(np.ceil(s / h)) for h in grid.h]
    axes = [np.arange(-ri, ri + 1) * hi for ri, hi in zip(r, grid.h)]
    mesh = np.meshgrid(*axes, indexing="ij")
    d = np.sqrt(sum(m * m for m in mesh))
    w = _bump(d / s)
    total = w.sum()
    if total <= 0:
        raise ValueError("mollifier radius below one cell")
    return w / total


def hull_distance(point, cloud):
    """l1 distance from a point to the convex hull of finitely many points."""
    if len(cloud) == 0:
        return np.inf
    n = len(point)
    if n == 1:
        lo, hi = float(cloud.min()), float(cloud.max())
        p = float(point[0])
        return max(0.0, lo - p, p - hi)
    from .aubry import _dense_simplex
    m = len(cloud)
    # lambda (m), e+ (n), e- (n): cloud' lambda + e+ - e- = point, sum l = 1
    A = np.zeros((n + 1, m + 2 * n))
    A[:n, :m] = cloud.T
    A[:n, m:m + n] = np.eye(n)
    A[:n, m + n:] = -np.eye(n)
    A[n, :m] = 1.0
    b = np.concatenate([point, [1.0]])
    c = np.concatenate([np.zeros(m), np.ones(2 * n)])
    z = _dense_simplex(c, A, b)
    return float(z[m:].sum())


def smooth_selector(sel, s, a=None, return_certificate=False):
    """Mollified selector as a smooth Lagrangian section.

    Convolves the selector with a torus bump of radius s >= 2h; the class of
    the section is a (zero unless the family carried a shift). The optional
    certificate measures, node by node, how far the mollified derivative
    strays from the convex hull of selected covectors within radius s.
    """
    grid = sel.phi.grid
    if s < 2.0 * float(np.max(grid.h)) - 1e-12:
        raise ValueError("mollifier radius must be at least two cells")
    ker = _torus_kernel(grid, s)
    psi = ndimage.convolve(sel.phi.values, ker, mode="wrap")
    g = ScalarField(grid, psi)
    if a is None:
        a = np.zeros(grid.n)
    section = LagrangianSection(a=a, g=g)
    if not return_certificate:
        return section
    dpsi = g.gradient()
    pts = grid.X.reshape(-1, grid.n)
    cov = sel.covectors.reshape(-1, grid.n)
    ok = sel.x0_mask.reshape(-1)
    dists = []
    for i in range(len(pts)):
        disp = (pts - pts[i] + np.pi) % (2 * np.pi) - np.pi
        near = ok & (np.linalg.norm(disp, axis=-1) <= s + 1e-12)
        if not near.any():
            continue
        dists.append(hull_distance(dpsi.reshape(-1, grid.n)[i], cov[near]))
    cert = {"s": float(s),
            "max_hull_distance": float(np.max(dists)) if dists else np.inf,
            "mean_hull_distance": float(np.mean(dists)) if dists else np.inf,
            "nodes_certified": len(dists),
            "class_drift": float(np.abs(dpsi.mean(
                axis=tuple(range(grid.n)))).max())}
    return section, cert
