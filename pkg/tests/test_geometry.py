import numpy as np
import pytest

from wkamlab.geometry import (FiberGrid, LagrangianSection, ScalarField,
                              TorusGrid)


def test_grid_spacing_and_coordinates():
    grid = TorusGrid((8, 16))
    assert grid.n == 2
    assert grid.node_count == 128
    np.testing.assert_allclose(grid.h, [2 * np.pi / 8, 2 * np.pi / 16])
    assert grid.X.shape == (8, 16, 2)
    np.testing.assert_allclose(grid.X[3, 5], [3 * grid.h[0], 5 * grid.h[1]])


def test_grid_nearest_node_wraps():
    grid = TorusGrid((8, 8))
    idx = grid.nearest_node(np.array([2 * np.pi - 1e-9, grid.h[1] * 2.4]))
    np.testing.assert_array_equal(idx, [0, 2])


def test_scalar_field_matches_samples_at_nodes():
    grid = TorusGrid((16, 16))
    f = ScalarField.from_function(grid, lambda X: np.sin(X[..., 0])
                                  + np.cos(2 * X[..., 1]))
    vals = f(grid.X)
    np.testing.assert_allclose(vals, f.values, atol=1e-14)


def test_scalar_field_interpolation_is_periodic():
    grid = TorusGrid((12, 12))
    f = ScalarField.from_function(grid, lambda X: np.cos(X[..., 0]))
    x = np.array([2 * np.pi - grid.h[0] / 2, 1.0])
    # the query sits between the last node and node 0; the multilinear
    # value must agree with the average across the seam
    expect = 0.5 * (np.cos(grid.h[0] * 11) + np.cos(0.0))
    assert abs(float(f(x)) - expect) < 1e-12


def test_gradient_second_order():
    errs = []
    for m in (16, 32, 64):
        grid = TorusGrid((m, m))
        f = ScalarField.from_function(grid, lambda X: np.sin(X[..., 0]))
        g = f.gradient()
        exact = np.cos(grid.X[..., 0])
        errs.append(np.abs(g[..., 0] - exact).max())
        assert np.abs(g[..., 1]).max() < 1e-13
    # central differences: error <= h^2/6 * max|f'''|
    for m, e in zip((16, 32, 64), errs):
        h = 2 * np.pi / m
        assert e <= h * h / 6 * 1.01
    assert errs[2] < errs[0] / 10


def test_fiber_grid_shape():
    fib = FiberGrid(3.0, 13, n=2)
    assert fib.node_count == 169
    assert fib.V.shape == (169, 2)
    np.testing.assert_allclose(fib.axis[[0, -1]], [-3.0, 3.0])
    assert fib.contains(np.array([3.0, -3.0]))
    assert not fib.contains(np.array([3.0001, 0.0]))
    with pytest.raises(ValueError):
        FiberGrid(3.0, 12)
    with pytest.raises(ValueError):
        FiberGrid(3.0, 3)


def test_constant_section_covectors():
    grid = TorusGrid((16, 16))
    a = np.array([0.3, -0.7])
    sec = LagrangianSection.constant(grid, a)
    P = sec.covectors()
    np.testing.assert_allclose(P, np.broadcast_to(a, P.shape), atol=1e-15)
    np.testing.assert_allclose(sec.liouville_class(), a, atol=1e-15)


def test_gauge_term_does_not_move_liouville_class():
    grid = TorusGrid((24, 24))
    g = ScalarField.from_function(grid, lambda X: 0.4 * np.sin(X[..., 0])
                                  * np.cos(X[..., 1]))
    sec = LagrangianSection(np.array([0.5, 0.25]), g)
    # exact periodic gradients average to zero, so the class is exactly a
    np.testing.assert_allclose(sec.liouville_class(), [0.5, 0.25],
                               atol=1e-13)
