"""Built-in analytic models.

Three families are shipped:

* ``flat``: H = |p|^2 on T^2 (L = |v|^2 / 4), the unit sphere bundle model;
* ``hamex``: H = (p1 - sin x1)^2 + (p2 - cos x1)^2 on T^2, a drift model
  whose zero section lies in {H = 1} and whose minimizing dynamics collapse
  onto the two vertical circles {x1 = 0} and {x1 = pi};
* ``twotwo``: H = |p - X(x)|^2 for a unit-norm drift field X suspended from a
  circle field with two degenerate (semi-stable) zeros; here every base point
  is action-recurrent but only the two vertical circles carry minimizing
  measures.

All drift models share the structure H = |p - A(x)|^2, L = <A, v> + |v|^2/4,
with unit drift |A| = 1: the zero section is then flow-invariant and sits in
the level {H = 1}.
"""

import numpy as np

from .geometry import LagrangianModel, HamiltonianModel


def _drift_pair(A, dA_dx1, name):
    """Model pair for H = |p - A(x)|^2 where A depends on x1 only, |A| = 1.

    A(x1) -> (..., 2); dA_dx1(x1) -> (..., 2).
    """

    def H(x, p):
        d = p - A(x[..., 0])
        return np.einsum("...i,...i->...", d, d)

    def H_p(x, p):
        return 2.0 * (p - A(x[..., 0]))

    def H_x(x, p):
        d = p - A(x[..., 0])
        g1 = -2.0 * np.einsum("...i,...i->...", d, dA_dx1(x[..., 0]))
        out = np.zeros(np.broadcast(x, p).shape)
        out[..., 0] = g1
        return out

    def H_pp(x, p):
        shape = np.broadcast(x, p).shape
        return 2.0 * np.broadcast_to(np.eye(2), shape[:-1] + (2, 2)).copy()

    def L(x, v):
        return (np.einsum("...i,...i->...", A(x[..., 0]), v)
                + 0.25 * np.einsum("...i,...i->...", v, v))

    def L_v(x, v):
        return A(x[..., 0]) + 0.5 * v

    def L_x(x, v):
        out = np.zeros(np.broadcast(x, v).shape)
        out[..., 0] = np.einsum("...i,...i->...", dA_dx1(x[..., 0]), v)
        return out

    def L_vv(x, v):
        shape = np.broadcast(x, v).shape
        return 0.5 * np.broadcast_to(np.eye(2), shape[:-1] + (2, 2)).copy()

    lag = LagrangianModel(n=2, value=L, grad_v=L_v, grad_x=L_x, hess_v=L_vv,
                          name=name)
    ham = HamiltonianModel(n=2, value=H, grad_p=H_p, grad_x=H_x, hess_p=H_pp,
                           name=name)
    return lag, ham


def make_quadratic(coeff=0.25, n=2, name="quadratic"):
    """L = coeff |v|^2 and its conjugate H = |p|^2 / (4 coeff)."""
    coeff = float(coeff)

    def L(x, v):
        return coeff * np.einsum("...i,...i->...", v, v)

    def L_v(x, v):
        return 2.0 * coeff * np.asarray(v, dtype=float)

    def L_x(x, v):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(v)).shape)

    def L_vv(x, v):
        shape = np.broadcast(np.asarray(x), np.asarray(v)).shape
        return 2.0 * coeff * np.broadcast_to(np.eye(n), shape[:-1] + (n, n)).copy()

    def H(x, p):
        return np.einsum("...i,...i->...", p, p) / (4.0 * coeff)

    def H_p(x, p):
        return np.asarray(p, dtype=float) / (2.0 * coeff)

    def H_x(x, p):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(p)).shape)

    def H_pp(x, p):
        shape = np.broadcast(np.asarray(x), np.asarray(p)).shape
        return np.broadcast_to(np.eye(n) / (2.0 * coeff),
                               shape[:-1] + (n, n)).copy()

    lag = LagrangianModel(n=n, value=L, grad_v=L_v, grad_x=L_x, hess_v=L_vv,
                          name=name)
    ham = HamiltonianModel(n=n, value=H, grad_p=H_p, grad_x=H_x, hess_p=H_pp,
                           name=name)
    return lag, ham


def make_flat():
    """Unit sphere bundle model: H = |p|^2, L = |v|^2 / 4, on T^2."""
    return make_quadratic(coeff=0.25, n=2, name="flat")


def make_hamex():
    """Drift A(x1) = (sin x1, cos x1)."""

    def A(x1):
        return np.stack([np.sin(x1), np.cos(x1)], axis=-1)

    def dA(x1):
        return np.stack([np.cos(x1), -np.sin(x1)], axis=-1)

    return _drift_pair(A, dA, "hamex")


def make_twotwo():
    """Unit-norm suspension of the circle field sin^2(x1).

    X = (w, 1)/sqrt(1 + w^2) with w = sin^2 x1; the x1 component vanishes
    exactly on {x1 = 0} and {x1 = pi} (both zeros degenerate), and is
    positive elsewhere.
    """

    def A(x1):
        w = np.sin(x1) ** 2
        nrm = np.sqrt(1.0 + w * w)
        return np.stack([w / nrm, 1.0 / nrm], axis=-1)

    def dA(x1):
        w = np.sin(x1) ** 2
        dw = np.sin(2.0 * x1)
        den = (1.0 + w * w) ** 1.5
        return np.stack([dw / den, -w * dw / den], axis=-1)

    return _drift_pair(A, dA, "twotwo")


def drift_field(name):
    """The drift A as a plain callable on points (...,2) -> (...,2)."""
    if name == "hamex":
        return lambda x: np.stack(
            [np.sin(x[..., 0]), np.cos(x[..., 0])], axis=-1)
    if name == "twotwo":
        def A(x):
            w = np.sin(x[..., 0]) ** 2
            nrm = np.sqrt(1.0 + w * w)
            return np.stack([w / nrm, 1.0 / nrm], axis=-1)
        return A
    raise KeyError("no drift field for model %r" % name)
