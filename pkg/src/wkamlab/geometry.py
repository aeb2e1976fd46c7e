"""Grids, models, fields, fiberwise conjugation and Hamiltonian flow.

Base space is the flat torus T^n (n = 1 or 2) with side 2*pi, discretized by a
uniform periodic grid. Fibers (velocities or momenta) live in a symmetric box
[-P, P]^n discretized by an odd uniform grid.

Array conventions: points are arrays of shape (..., n); grid-sampled scalar
fields have shape grid.shape; grid-sampled vector fields have shape
grid.shape + (n,).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArgmaxOnBoundary,
    ConvexityViolation,
    EnergyDrift,
    OutOfBox,
    VanishingField,
)

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# grids


class TorusGrid:
    """Uniform periodic grid on T^n, n in {1, 2}.

    Parameters
    ----------
    shape : tuple of int
        Nodes per axis, each >= 8. Length 1 or 2.
    """

    def __init__(self, shape):
        shape = tuple(int(s) for s in np.atleast_1d(shape))
        if len(shape) not in (1, 2):
            raise ValueError("base dimension must be 1 or 2")
        if any(s < 8 for s in shape):
            raise ValueError("need at least 8 nodes per axis")
        self.shape = shape
        self.n = len(shape)
        self.h = np.array([TWO_PI / s for s in shape])
        self.axes = [np.arange(s) * TWO_PI / s for s in shape]
        mesh = np.meshgrid(*self.axes, indexing="ij")
        self.X = np.stack(mesh, axis=-1)  # shape + (n,)

    @property
    def node_count(self):
        return int(np.prod(self.shape))

    def wrap(self, x):
        return np.mod(x, TWO_PI)

    def shortest_disp(self, d):
        """Reduce displacements to the fundamental domain [-pi, pi)^n."""
        return np.mod(np.asarray(d) + np.pi, TWO_PI) - np.pi

    def flat_index(self, multi):
        return np.ravel_multi_index(tuple(np.asarray(multi).T), self.shape)

    def node_coords(self, flat):
        multi = np.unravel_index(flat, self.shape)
        return np.stack([self.axes[i][multi[i]] for i in range(self.n)], axis=-1)

    def nearest_node(self, x):
        """Multi-index of the nearest node to each point, periodic."""
        x = np.asarray(x)
        idx = np.rint(x / self.h).astype(int)
        return np.mod(idx, np.array(self.shape))


class FiberGrid:
    """Symmetric fiber box [-P, P]^n with an odd number of nodes per axis."""

    def __init__(self, half_width, count, n=1):
        count = int(count)
        if count < 5 or count % 2 == 0:
            raise ValueError("fiber grid needs an odd node count >= 5")
        self.P = float(half_width)
        self.count = count
        self.n = int(n)
        self.axis = np.linspace(-self.P, self.P, count)
        self.spacing = self.axis[1] - self.axis[0]
        mesh = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        self.V = np.stack(mesh, axis=-1).reshape(-1, self.n)

    @property
    def node_count(self):
        return self.count ** self.n

    def contains(self, v, margin=0.0):
        return bool(np.all(np.abs(v) <= self.P + margin))


# ---------------------------------------------------------------------------
# scalar fields


@dataclass
class ScalarField:
    """Periodic scalar field sampled on a TorusGrid."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError("field shape does not match grid")

    @classmethod
    def from_function(cls, grid, f):
        return cls(grid, np.asarray(f(grid.X), dtype=float))

    def __call__(self, x):
        """Periodic multilinear interpolation at points of shape (..., n)."""
        x = np.asarray(x, dtype=float)
        g = self.grid
        u = x / g.h  # fractional index
        i0 = np.floor(u).astype(int)
        frac = u - i0
        if g.n == 1:
            a = np.mod(i0[..., 0], g.shape[0])
            b = np.mod(i0[..., 0] + 1, g.shape[0])
            t = frac[..., 0]
            return (1 - t) * self.values[a] + t * self.values[b]
        ai = np.mod(i0[..., 0], g.shape[0])
        bi = np.mod(i0[..., 0] + 1, g.shape[0])
        aj = np.mod(i0[..., 1], g.shape[1])
        bj = np.mod(i0[..., 1] + 1, g.shape[1])
        s, t = frac[..., 0], frac[..., 1]
        v = self.values
        return ((1 - s) * (1 - t) * v[ai, aj] + s * (1 - t) * v[bi, aj]
                + (1 - s) * t * v[ai, bj] + s * t * v[bi, bj])

    def gradient(self):
        """Central-difference gradient at the nodes, shape grid.shape + (n,)."""
        comps = []
        for ax in range(self.grid.n):
            comps.append((np.roll(self.values, -1, axis=ax)
                          - np.roll(self.values, 1, axis=ax)) / (2 * self.grid.h[ax]))
        return np.stack(comps, axis=-1)

    def one_sided_gap(self):
        """Max over axes of |forward diff - backward diff| at each node.

        Large values flag gradient jumps (kinks) to exclude from residuals.
        """
        gap = np.zeros(self.grid.shape)
        for ax in range(self.grid.n):
            fwd = (np.roll(self.values, -1, axis=ax) - self.values) / self.grid.h[ax]
            bwd = (self.values - np.roll(self.values, 1, axis=ax)) / self.grid.h[ax]
            gap = np.maximum(gap, np.abs(fwd - bwd))
        return gap

    def mean(self):
        return float(self.values.mean())


@dataclass
class LagrangianSection:
    """Covector section a + dg with constant part a and periodic potential g."""

    a: np.ndarray
    g: ScalarField

    def __post_init__(self):
        self.a = np.atleast_1d(np.asarray(self.a, dtype=float))

    @classmethod
    def constant(cls, grid, a):
        return cls(np.asarray(a, dtype=float), ScalarField(grid, np.zeros(grid.shape)))

    def covectors(self):
        """Section values at the grid nodes, shape grid.shape + (n,)."""
        return self.a + self.g.gradient()

    def liouville_class(self):
        """Cohomology class: the constant part (dg integrates to zero)."""
        return self.a.copy()


# ---------------------------------------------------------------------------
# models


@dataclass
class LagrangianModel:
    """Tonelli Lagrangian on T^n, vectorized over leading axes.

    value(x, v) -> (...,); grad_v(x, v) -> (..., n). grad_x is optional and
    falls back to central differences. hess_v returns (..., n, n) or None
    (finite differences of grad_v are used for certification then).
    """

    n: int
    value: callable
    grad_v: callable
    grad_x: callable = None
    hess_v: callable = None
    name: str = ""

    def grad_x_or_fd(self, x, v, delta=1e-6):
        if self.grad_x is not None:
            return self.grad_x(x, v)
        return _fd_grad(lambda xx: self.value(xx, v), x, delta)


@dataclass
class HamiltonianModel:
    """Hamiltonian on T*T^n with the same vectorization conventions."""

    n: int
    value: callable
    grad_p: callable
    grad_x: callable = None
    hess_p: callable = None
    name: str = ""

    def grad_x_or_fd(self, x, p, delta=1e-6):
        if self.grad_x is not None:
            return self.grad_x(x, p)
        return _fd_grad(lambda xx: self.value(xx, p), x, delta)


def _fd_grad(f, x, delta):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape)
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = delta
        out[..., i] = (f(x + e) - f(x - e)) / (2 * delta)
    return out


# ---------------------------------------------------------------------------
# fiberwise conjugation (Legendre transform)


def _conjugate_values(f_value, x, duals, fiber, newton_grad=None, refine_steps=2,
                      boundary_margin=None):
    """max over the fiber grid of <dual, w> - f(x, w), with quadratic refinement.

    Returns (values, argmax_w). Raises ArgmaxOnBoundary when the grid argmax
    sits on the fiber-box boundary.
    """
    x = np.asarray(x, dtype=float)
    duals = np.asarray(duals, dtype=float)
    W = fiber.V  # (F, n)
    # scores: (..., F)
    fx = f_value(x[..., None, :], W)
    scores = np.einsum("...i,fi->...f", duals, W) - fx
    best = np.argmax(scores, axis=-1)
    w_star = W[best]
    if boundary_margin is None:
        boundary_margin = 0.5 * fiber.spacing
    if np.any(np.abs(w_star) > fiber.P - boundary_margin):
        raise ArgmaxOnBoundary(
            "conjugation argmax within %g of the fiber box edge" % boundary_margin)
    if newton_grad is not None and refine_steps > 0:
        # solve grad_w f(x, w) = dual by damped Newton, Jacobian by differences
        for _ in range(refine_steps):
            g = newton_grad(x, w_star) - duals
            J = _fd_jacobian(lambda w: newton_grad(x, w), w_star, 1e-5)
            try:
                step = np.linalg.solve(J, g[..., None])[..., 0]
            except np.linalg.LinAlgError:
                break
            w_new = w_star - step
            ok = np.all(np.abs(w_new) <= fiber.P, axis=-1)
            w_star = np.where(ok[..., None], w_new, w_star)
        w_star = np.clip(w_star, -fiber.P, fiber.P)
    vals = np.einsum("...i,...i->...", duals, w_star) - f_value(x, w_star)
    return vals, w_star


def _fd_jacobian(g, w, delta):
    n = w.shape[-1]
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = delta
        cols.append((g(w + e) - g(w - e)) / (2 * delta))
    return np.stack(cols, axis=-1)  # (..., n, n)


def legendre_transform(L, fiber, check_convexity=True, sample_grid=None):
    """Fiberwise conjugate of a Lagrangian: the associated Hamiltonian.

    Parameters
    ----------
    L : LagrangianModel
    fiber : FiberGrid
        Velocity box; must strictly contain every argmax, otherwise
        ArgmaxOnBoundary is raised at evaluation time.
    check_convexity : bool
        Sample the velocity Hessian and raise ConvexityViolation if it is
        not positive definite.
    sample_grid : TorusGrid, optional
        Base points for the convexity sample (a coarse default otherwise).

    Returns
    -------
    HamiltonianModel with numerically evaluated value/grad_p.
    """
    if check_convexity:
        grid = sample_grid or TorusGrid((16,) * L.n)
        cert = fiber_convexity_certificate(L, grid, fiber)
        if not cert["passed"]:
            raise ConvexityViolation(
                "velocity Hessian min eigenvalue %.3e at %s"
                % (cert["min_eig"], cert["location"]))

    def value(x, p):
        vals, _ = _conjugate_values(L.value, x, p, fiber, newton_grad=L.grad_v)
        return vals

    def grad_p(x, p):
        _, w = _conjugate_values(L.value, x, p, fiber, newton_grad=L.grad_v)
        return w

    return HamiltonianModel(n=L.n, value=value, grad_p=grad_p,
                            name=(L.name + "^*") if L.name else "conjugate")


def inverse_legendre(H, fiber, check_convexity=True, sample_grid=None):
    """Fiberwise conjugate of a Hamiltonian: the associated Lagrangian."""
    if check_convexity:
        grid = sample_grid or TorusGrid((16,) * H.n)
        cert = momentum_convexity_certificate(H, grid, fiber)
        if not cert["passed"]:
            raise ConvexityViolation(
                "momentum Hessian min eigenvalue %.3e at %s"
                % (cert["min_eig"], cert["location"]))

    def value(x, v):
        vals, _ = _conjugate_values(H.value, x, v, fiber, newton_grad=H.grad_p)
        return vals

    def grad_v(x, v):
        _, w = _conjugate_values(H.value, x, v, fiber, newton_grad=H.grad_p)
        return w

    return LagrangianModel(n=H.n, value=value, grad_v=grad_v,
                           name=(H.name + "^*") if H.name else "conjugate")


def _min_eig_2x2(M):
    # symmetric (..., n, n) with n in {1, 2}
    if M.shape[-1] == 1:
        return M[..., 0, 0]
    a, b, d = M[..., 0, 0], 0.5 * (M[..., 0, 1] + M[..., 1, 0]), M[..., 1, 1]
    tr = a + d
    disc = np.sqrt(np.maximum((a - d) ** 2 + 4 * b * b, 0.0))
    return 0.5 * (tr - disc)


def _hessian_certificate(hess, grad, x_pts, w_pts, delta=1e-4):
    n = w_pts.shape[-1]
    if hess is not None:
        Hm = hess(x_pts[:, None, :], w_pts[None, :, :])
    else:
        cols = []
        for i in range(n):
            e = np.zeros(n)
            e[i] = delta
            cols.append((grad(x_pts[:, None, :], w_pts[None, :, :] + e)
                         - grad(x_pts[:, None, :], w_pts[None, :, :] - e)) / (2 * delta))
        Hm = np.stack(cols, axis=-1)
    eigs = _min_eig_2x2(Hm)
    k = np.argmin(eigs)
    i, j = np.unravel_index(k, eigs.shape)
    min_eig = float(eigs[i, j])
    return {
        "min_eig": min_eig,
        "location": (x_pts[i].tolist(), w_pts[j].tolist()),
        "passed": bool(min_eig > 0.0),
    }


def fiber_convexity_certificate(L, grid, fiber):
    """Sampled positive-definiteness certificate for the velocity Hessian."""
    x_pts = grid.X.reshape(-1, grid.n)
    return _hessian_certificate(L.hess_v, L.grad_v, x_pts, fiber.V)


def momentum_convexity_certificate(H, grid, fiber):
    """Sampled positive-definiteness certificate for the momentum Hessian."""
    x_pts = grid.X.reshape(-1, grid.n)
    return _hessian_certificate(H.hess_p, H.grad_p, x_pts, fiber.V)


def convexity_check(H, grid, fiber):
    """Report-only optical check: min sampled momentum-Hessian eigenvalue.

    Returns {min_eig, location, passed}; an indefinite H simply fails.
    """
    return momentum_convexity_certificate(H, grid, fiber)


# ---------------------------------------------------------------------------
# energy and flow


def energy(L, x, v, fiber=None):
    """E(x, v) = <grad_v L, v> - L. Raises OutOfBox outside the fiber box."""
    v = np.asarray(v, dtype=float)
    if fiber is not None and not fiber.contains(v):
        raise OutOfBox("velocity outside the fiber box")
    return np.einsum("...i,...i->...", L.grad_v(x, v), v) - L.value(x, v)


@dataclass
class Trajectory:
    """Sampled flow line: times (T,), base points (T, n), fiber points (T, n)."""

    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    energy_drift: float = 0.0
    meta: dict = field(default_factory=dict)


def hamiltonian_flow(H, x0, p0, t_end, dt=1e-2, tol_energy=1e-4, record_every=1):
    """Integrate Hamilton's equations with classical RK4.

    Parameters
    ----------
    H : HamiltonianModel
    x0, p0 : array (n,) or (B, n)
        Initial conditions (batched allowed).
    t_end : float
    dt : float
        Step size, capped at 1e-2.
    tol_energy : float
        Max allowed |H(t) - H(0)|, checked at the end; EnergyDrift otherwise.
    record_every : int
        Keep every k-th sample (the initial and final states always).

    Returns
    -------
    Trajectory (batched arrays if the input was batched).
    """
    if dt > 1e-2:
        raise ValueError("dt must be <= 1e-2")
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    p = np.atleast_2d(np.asarray(p0, dtype=float)).copy()
    squeeze = np.asarray(x0).ndim == 1
    steps = max(1, int(round(t_end / dt)))
    dt = t_end / steps
    e0 = H.value(x, p)

    def rhs(x, p):
        return H.grad_p(x, p), -H.grad_x_or_fd(x, p)

    ts, xs, ps = [0.0], [np.mod(x, TWO_PI)], [p.copy()]
    for k in range(steps):
        k1x, k1p = rhs(x, p)
        k2x, k2p = rhs(x + 0.5 * dt * k1x, p + 0.5 * dt * k1p)
        k3x, k3p = rhs(x + 0.5 * dt * k2x, p + 0.5 * dt * k2p)
        k4x, k4p = rhs(x + dt * k3x, p + dt * k3p)
        x = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        p = p + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        if (k + 1) % record_every == 0 or k == steps - 1:
            ts.append((k + 1) * dt)
            xs.append(np.mod(x, TWO_PI))
            ps.append(p.copy())
    drift = float(np.max(np.abs(H.value(x, p) - e0)))
    if drift > tol_energy:
        raise EnergyDrift("energy drift %.3e exceeds %.3e" % (drift, tol_energy))
    times = np.array(ts)
    X = np.stack(xs)
    P = np.stack(ps)
    if squeeze:
        X, P = X[:, 0], P[:, 0]
    return Trajectory(times=times, x=X, p=P, energy_drift=drift)


def integrate_field(field_fn, x0, t0, t1, dt):
    """RK4 for a first-order field on the torus, batched; samples on [t0, t1].

    field_fn maps (B, n) points to (B, n) velocities. Returns (times, points)
    with points of shape (S, B, n), wrapped to [0, 2*pi).
    """
    x = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    n_pre = max(0, int(np.ceil(t0 / dt)))
    n_tot = int(np.ceil(t1 / dt))
    ts, xs = [], []
    t = 0.0
    for k in range(n_tot):
        if k >= n_pre:
            ts.append(t)
            xs.append(np.mod(x, TWO_PI))
        k1 = field_fn(x)
        k2 = field_fn(x + 0.5 * dt * k1)
        k3 = field_fn(x + 0.5 * dt * k2)
        k4 = field_fn(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += dt
    ts.append(t)
    xs.append(np.mod(x, TWO_PI))
    return np.array(ts), np.stack(xs)


# ---------------------------------------------------------------------------
# sections and the characteristic field


def characteristic_field(H, section, tol_vanish=1e-8):
    """Fiber derivative of H along a section: V(x) = dH/dp(x, a + dg(x)).

    Returns the field sampled at the nodes, shape grid.shape + (n,).
    Raises VanishingField if |V| < tol_vanish anywhere.
    """
    grid = section.g.grid
    covs = section.covectors()
    V = H.grad_p(grid.X, covs)
    norms = np.linalg.norm(V, axis=-1)
    if np.any(norms < tol_vanish):
        raise VanishingField("characteristic field vanishes on the section")
    return V


def section_max_H(H, section):
    """Max of H over the section graph; returns (max value, argmax node)."""
    grid = section.g.grid
    vals = H.value(grid.X, section.covectors())
    k = int(np.argmax(vals))
    idx = np.unravel_index(k, grid.shape)
    return float(vals[idx]), idx
