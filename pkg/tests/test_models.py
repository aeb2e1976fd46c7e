import numpy as np
import pytest

from wkamlab.errors import ConfigError
from wkamlab.models import (drift_field, make_flat, make_hamex,
                            make_quadratic, make_twotwo)

PAIRS = {"flat": make_flat, "hamex": make_hamex, "twotwo": make_twotwo}


@pytest.mark.parametrize("name", sorted(PAIRS))
def test_fenchel_young(name, rng):
    L, H = PAIRS[name]()
    X = rng.uniform(0, 2 * np.pi, size=(256, 2))
    V = rng.uniform(-4, 4, size=(256, 2))
    P = rng.uniform(-4, 4, size=(256, 2))
    lhs = L.value(X, V) + H.value(X, P)
    rhs = np.einsum("ij,ij->i", P, V)
    assert (lhs >= rhs - 1e-10).all()
    # equality at the fiber derivative of L
    Pstar = L.grad_v(X, V)
    gap = L.value(X, V) + H.value(X, Pstar) - np.einsum(
        "ij,ij->i", Pstar, V)
    assert np.abs(gap).max() < 1e-9


@pytest.mark.parametrize("name", sorted(PAIRS))
def test_energy_identity(name, rng):
    # H(x, L_v(x,v)) = v . L_v(x,v) - L(x,v) for any Tonelli pair
    L, H = PAIRS[name]()
    X = rng.uniform(0, 2 * np.pi, size=(128, 2))
    V = rng.uniform(-3, 3, size=(128, 2))
    Pstar = L.grad_v(X, V)
    lhs = H.value(X, Pstar)
    rhs = np.einsum("ij,ij->i", V, Pstar) - L.value(X, V)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_hamex_zero_section_is_critical_shell():
    _, H = make_hamex()
    X = np.stack(np.meshgrid(np.linspace(0, 2 * np.pi, 37),
                             np.linspace(0, 2 * np.pi, 37),
                             indexing="ij"), axis=-1)
    vals = H.value(X, np.zeros_like(X))
    np.testing.assert_allclose(vals, 1.0, atol=1e-13)


def test_twotwo_drift_unit_norm_and_stalls():
    A = drift_field("twotwo")
    x1 = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    X = np.stack([x1, np.zeros_like(x1)], axis=-1)
    vals = A(X)
    np.testing.assert_allclose(np.linalg.norm(vals, axis=-1), 1.0,
                               atol=1e-13)
    # first component vanishes exactly on the two vertical circles and
    # nowhere else on this sample
    zero = np.abs(vals[..., 0]) < 1e-14
    assert set(np.flatnonzero(zero)) == {0, 200}
    assert (vals[..., 0] >= 0).all()


def test_quadratic_model_coefficient():
    L, H = make_quadratic(coeff=0.5)
    X = np.zeros((4, 2))
    V = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0], [-2.0, 0.5]])
    np.testing.assert_allclose(L.value(X, V),
                               0.5 * (V ** 2).sum(axis=-1), atol=1e-14)


def test_unknown_drift_name():
    with pytest.raises((KeyError, ConfigError, ValueError)):
        drift_field("nope")
