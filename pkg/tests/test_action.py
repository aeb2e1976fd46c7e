import numpy as np
import pytest

from wkamlab.action import (build_action_graph, has_negative_cycle,
                            mane_critical_value, min_cycle_mean_howard,
                            min_cycle_mean_karp, policy_cycle_nodes)
from wkamlab.errors import VelocityBoxExceeded
from wkamlab.geometry import FiberGrid, TorusGrid
from wkamlab.models import make_flat, make_hamex


def small_graph(maker, m=12, steps=1.0, R=3):
    L, _ = maker()
    grid = TorusGrid((m, m))
    tau = steps * float(grid.h[0])
    return build_action_graph(L, grid, tau, stencil_radius=R), grid, tau


def test_weights_are_midpoint_actions():
    L, _ = make_hamex()
    graph, grid, tau = small_graph(make_hamex, m=8, R=2)
    j = 7
    v = graph.vels[j]
    mid = np.mod(grid.X + 0.5 * graph.disp[j], 2 * np.pi)
    expect = tau * L.value(mid, np.broadcast_to(v, grid.X.shape))
    np.testing.assert_allclose(graph.w0[j], expect, atol=1e-14)


def test_stencil_contains_zero_offset():
    graph, _, _ = small_graph(make_flat, m=8, R=2)
    assert (graph.offsets == 0).all(axis=1).any()
    assert graph.n_offsets == 25


def test_class_shift_is_exact():
    graph, _, _ = small_graph(make_flat, m=8, R=2)
    a = np.array([0.3, -0.1])
    shifted = graph.with_class_shift(a)
    expect = graph.w0 - (graph.disp @ a)[:, None, None]
    np.testing.assert_allclose(shifted.w0, expect, atol=1e-15)


def test_velocity_box_guard():
    L, _ = make_flat()
    grid = TorusGrid((16, 16))
    tau = float(grid.h[0])
    with pytest.raises(VelocityBoxExceeded):
        build_action_graph(L, grid, tau, stencil_radius=5,
                           fiber=FiberGrid(3.0, 9, n=2))


def test_tau_window_enforced():
    L, _ = make_flat()
    grid = TorusGrid((16, 16))
    with pytest.raises(ValueError):
        build_action_graph(L, grid, 0.1 * float(grid.h[0]))


def test_karp_and_howard_agree():
    for maker in (make_flat, make_hamex):
        graph, _, tau = small_graph(maker, m=10, R=2)
        mu_k = min_cycle_mean_karp(graph)
        mu_h, _, _ = min_cycle_mean_howard(graph)
        assert abs(mu_k - mu_h) < 1e-9


def test_howard_policy_cycles_exist():
    graph, _, _ = small_graph(make_flat, m=8, R=2)
    mu, eta, policy = min_cycle_mean_howard(graph)
    nodes = policy_cycle_nodes(graph, policy)
    assert len(nodes) > 0
    # flat: staying put costs zero, the optimal mean is zero
    assert abs(mu) < 1e-12


def test_critical_value_flat_is_zero():
    graph, _, _ = small_graph(make_flat, m=12, R=3)
    cv = mane_critical_value(graph, tol_c=1e-3)
    assert abs(cv.c) <= 2e-3


def test_critical_value_hamex_is_one():
    graph, _, _ = small_graph(make_hamex, m=16, R=3)
    cv = mane_critical_value(graph, tol_c=1e-3)
    assert abs(cv.c - 1.0) <= 5e-3


def test_negative_cycle_bracket():
    # below the critical value some closed path has negative compensated
    # action; at and above it every cycle is nonnegative
    graph, _, _ = small_graph(make_hamex, m=16, R=3)
    assert has_negative_cycle(graph, k_offset=0.95)
    assert not has_negative_cycle(graph, k_offset=1.05)


def test_bisection_matches_howard_route():
    graph, _, _ = small_graph(make_hamex, m=12, R=3)
    c_bis = mane_critical_value(graph, tol_c=1e-4, method="bisection").c
    mu, _, _ = min_cycle_mean_howard(graph)
    c_how = -mu / graph.tau
    assert abs(c_bis - c_how) < 5e-4
