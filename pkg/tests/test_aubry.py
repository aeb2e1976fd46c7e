import numpy as np
import pytest

from wkamlab.action import action_potential, build_action_graph
from wkamlab.aubry import (aubry_lift, boundary_defects, foliation_cycle,
                           foliation_pairing, mather_lp, mather_set,
                           peierls_barrier, projected_aubry,
                           strong_chain_recurrent)
from wkamlab.errors import EmptyAubry
from wkamlab.geometry import FiberGrid, TorusGrid
from wkamlab.models import make_flat, make_hamex, make_twotwo
from wkamlab.weakkam import solve_weak_kam


def l1_cells(grid):
    m = grid.shape[0]
    ii = np.arange(m)
    d = np.minimum(np.abs(ii[:, None] - ii[None, :]),
                   m - np.abs(ii[:, None] - ii[None, :]))
    return d


def test_flat_barrier_is_l1_transport():
    # staying is free and a unit hop costs h^2/(4 tau), so the barrier is
    # the torus l1 distance times that rate, up to the small positive bias
    # the stabilizing offset leaves behind
    L, _ = make_flat()
    grid = TorusGrid((10, 10))
    tau = 4.0 * float(grid.h[0])
    bar = peierls_barrier(L, 0.0, grid, tau=tau, stencil_radius=3)
    assert not bar.diagonal_only
    d1 = l1_cells(grid)
    # build the (V, V) l1 table: split flat indices into the two axes
    m = grid.shape[0]
    ij = np.indices((m, m)).reshape(2, -1)
    dist = d1[np.ix_(ij[0], ij[0])] + d1[np.ix_(ij[1], ij[1])]
    cell = float(grid.h[0]) ** 2 / (4.0 * tau)
    err = bar.values - dist * cell
    assert err.min() > -1e-12
    assert err.max() < 2e-5
    np.testing.assert_allclose(bar.diagonal(), 0.0, atol=1e-5)
    assert bar.stabilized


def test_hamex_barrier_diagonal_vanishes_on_stalls_only():
    L, _ = make_hamex()
    grid = TorusGrid((24, 24))
    bar = peierls_barrier(L, 1.0, grid, tau=float(grid.h[0]),
                          stencil_radius=3)
    diag = bar.diagonal().reshape(grid.shape)
    assert np.abs(diag[[0, 12]]).max() < 1e-5
    off = np.delete(diag, [0, 12], axis=0)
    assert off.min() > 1e-3


def test_barrier_dominates_action_potential():
    L, _ = make_hamex()
    grid = TorusGrid((16, 16))
    tau = float(grid.h[0])
    bar = peierls_barrier(L, 1.0, grid, tau=tau, stencil_radius=3)
    graph = build_action_graph(L, grid, tau, stencil_radius=3)
    pot = action_potential(graph, 1.0)
    assert (bar.values >= pot.values - 1e-9).all()


def test_action_potential_triangle_inequality():
    L, _ = make_hamex()
    grid = TorusGrid((12, 12))
    graph = build_action_graph(L, grid, float(grid.h[0]), stencil_radius=3)
    P = action_potential(graph, 1.0).values
    V = P.shape[0]
    # min-plus closure: P[i,k] <= P[i,j] + P[j,k] up to float slack
    worst = 0.0
    rng = np.random.default_rng(2)
    for _ in range(200):
        i, j, k = rng.integers(0, V, size=3)
        worst = max(worst, P[i, k] - P[i, j] - P[j, k])
    assert worst <= 1e-10


def test_projected_aubry_hamex_is_stall_rows():
    L, _ = make_hamex()
    grid = TorusGrid((48, 48))
    h = float(grid.h[0])
    bar = peierls_barrier(L, 1.0, grid, tau=h, stencil_radius=3)
    # adjacent rows already carry diagonal ~ 3.9 h^2; cut below that
    mask = projected_aubry(bar, grid, tol_A=2.0 * h * h)
    rows = np.flatnonzero(mask.mask.any(axis=1))
    assert mask.count() == 96
    np.testing.assert_array_equal(rows, [0, 24])


def test_projected_aubry_empty_raises():
    L, _ = make_hamex()
    grid = TorusGrid((16, 16))
    bar = peierls_barrier(L, 1.0, grid, tau=float(grid.h[0]),
                          stencil_radius=3)
    with pytest.raises(EmptyAubry):
        projected_aubry(bar, grid, tol_A=1e-14)


def test_mather_lp_flat_sits_at_rest():
    L, _ = make_flat()
    grid = TorusGrid((8, 8))
    fiber = FiberGrid(2.0, 5, n=2)
    measures, optimum = mather_lp(L, grid, fiber,
                                  tau=4.0 * float(grid.h[0]))
    assert abs(optimum) < 1e-9
    for mu in measures:
        v = mu.mean_velocity()
        assert np.abs(v).max() < 1e-9


def test_mather_lp_hamex_rides_the_cycles():
    L, _ = make_hamex()
    grid = TorusGrid((16, 16))
    fiber = FiberGrid(3.0, 13, n=2)
    measures, optimum = mather_lp(L, grid, fiber, tau=float(grid.h[0]))
    assert abs(optimum + 1.0) < 5e-2
    mask = mather_set(measures)
    rows = np.flatnonzero(mask.mask.any(axis=1))
    # support concentrates on the two vertical circles, dilated one cell
    assert set(rows) <= {15, 0, 1, 7, 8, 9}
    # velocity signs: downward on x1=0, upward on x1=pi
    mu = measures[0]
    ib, iv, w = mu.pairs(rel_tol=1e-6)
    x1 = grid.X.reshape(-1, 2)[ib, 0]
    v2 = fiber.V[iv, 1]
    on0 = np.abs(x1) < 1e-9
    onpi = np.abs(x1 - np.pi) < 1e-9
    if on0.any():
        assert (v2[on0] < 0).all()
    if onpi.any():
        assert (v2[onpi] > 0).all()


def test_foliation_pairing_properties(rng):
    L, _ = make_hamex()
    grid = TorusGrid((16, 16))
    fiber = FiberGrid(3.0, 13, n=2)
    measures, _ = mather_lp(L, grid, fiber, tau=float(grid.h[0]))
    cyc = foliation_cycle(measures[0], L)

    # the minimizing cycle annihilates the tautological form
    assert abs(foliation_pairing(cyc, "liouville")) < 1e-8

    # linearity is exact
    w1 = lambda X: np.stack([np.cos(X[..., 0]), np.sin(X[..., 1])], axis=-1)
    w2 = lambda X: np.stack([X[..., 1] * 0 + 1.0, np.cos(X[..., 1])], axis=-1)
    combo = lambda X: 2.0 * w1(X) - 0.5 * w2(X)
    lhs = foliation_pairing(cyc, combo)
    rhs = 2.0 * foliation_pairing(cyc, w1) - 0.5 * foliation_pairing(cyc, w2)
    assert abs(lhs - rhs) < 1e-12

    # exact forms vanish: the cycle has no boundary
    defects = boundary_defects(cyc, n_tests=20, rng=rng)
    assert defects.max() < 1e-6


def test_aubry_lift_covectors():
    L, H = make_hamex()
    grid = TorusGrid((32, 32))
    tau = 5.0 * float(grid.h[0])
    pair = solve_weak_kam(L, grid, tau, stencil_radius=15)
    mask = np.zeros(grid.shape, bool)
    mask[[0, 16]] = True
    lift = aubry_lift(mask, pair, H=H)
    assert np.abs(lift["covectors"]).max() < 5e-2
    assert np.isfinite(lift["lipschitz"])

    Lf, Hf = make_flat()
    pf = solve_weak_kam(Lf, grid, tau, stencil_radius=12)
    liftf = aubry_lift(np.ones(grid.shape, bool), pf, H=Hf)
    assert np.abs(liftf["covectors"]).max() < 1e-9


def test_chain_recurrence_irrational_flow_covers():
    # constant irrational slope: minimality returns every orbit to any
    # cell, so the whole torus is recurrent
    grid = TorusGrid((24, 24))
    field = lambda x: np.broadcast_to(np.array([1.0, np.sqrt(2.0)]), x.shape)
    mask = strong_chain_recurrent(field, grid, T=24.0)
    assert mask.coverage() == 1.0


def test_chain_recurrence_contracting_flow_collapses():
    # flow contracting onto the circle x1=0: off the circle nothing returns
    grid = TorusGrid((24, 24))

    def field(x):
        out = np.zeros_like(x)
        out[..., 0] = -np.sin(x[..., 0])
        out[..., 1] = 1.0
        return out

    mask = strong_chain_recurrent(field, grid, T=4.0)
    rows = np.flatnonzero(mask.mask.any(axis=1))
    assert 0 in rows or 12 in rows
    assert mask.coverage() <= 6.0 / 24.0
