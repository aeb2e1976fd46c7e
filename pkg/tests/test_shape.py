import numpy as np
import pytest

from wkamlab.action import build_action_graph
from wkamlab.errors import GridTooSmall, NotRealizable
from wkamlab.geometry import TorusGrid
from wkamlab.models import make_flat, make_hamex, make_twotwo
from wkamlab.shape import (alpha_function, section_realization,
                           shape_membership, shape_of_domain)


@pytest.fixture(scope="module")
def flat_graph():
    L, H = make_flat()
    grid = TorusGrid((16, 16))
    tau = 4.0 * float(grid.h[0])
    return L, H, build_action_graph(L, grid, tau, 12)


def test_alpha_exact_on_velocity_lattice(flat_graph):
    # when 2a is a lattice velocity the discrete minimizer is the exact
    # one, so alpha(a) = |a|^2 to machine precision
    L, _, graph = flat_graph
    h = float(graph.grid.h[0])
    for o in [(0, 0), (2, 1), (4, 0), (-3, 5)]:
        a = np.array(o, dtype=float) * h / (2.0 * graph.tau)
        al = alpha_function(L, a, graph=graph)
        assert abs(al - a @ a) < 1e-12


def test_alpha_envelope_band(flat_graph):
    # off the lattice the restricted minimization can only overshoot the
    # parabola from below, by at most the envelope sag s^2/8
    L, _, graph = flat_graph
    s = float(graph.grid.h[0]) / graph.tau
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = rng.uniform(-1.0, 1.0, 2)
        d = alpha_function(L, a, graph=graph) - a @ a
        assert -s * s / 8.0 - 1e-12 <= d <= 1e-12


def test_alpha_box_guard(flat_graph):
    # the minimizer for this class is the fastest stencil velocity; the
    # clipped value would look plausible, so it must refuse instead
    L, _, graph = flat_graph
    with pytest.raises(ValueError, match="velocity box"):
        alpha_function(L, np.array([1.5, 1.5]), graph=graph)


def test_shape_table_and_boundary(flat_graph):
    L, _, graph = flat_graph
    table, poly = shape_of_domain(L, 1.0, box=1.6, count=17, graph=graph)
    # evenness of the model transfers to the table
    np.testing.assert_allclose(table.values, table.values[::-1, ::-1],
                               atol=1e-12)
    assert table.min_value() == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(table.argmin(), 0.0, atol=1e-12)
    # the traced level set is the unit circle
    assert table.meta["boundary_components"] == 1
    r = np.linalg.norm(poly, axis=1)
    assert len(poly) > 20
    assert np.abs(r - 1.0).max() < 0.02
    audit = table.meta["convexity_audit"]
    assert audit["pass"] and audit["checked"] > 50


def test_shape_box_too_small(flat_graph):
    L, _, graph = flat_graph
    with pytest.raises(GridTooSmall):
        shape_of_domain(L, 1.0, box=0.8, count=9, graph=graph)


def test_membership_three_states(flat_graph):
    L, _, graph = flat_graph
    st, al = shape_membership(L, 1.0, np.zeros(2), graph=graph)
    assert st == "In" and abs(al) < 1e-12
    st, al = shape_membership(L, 1.0, np.array([1.2, 0.0]), graph=graph)
    assert st == "Out"
    # alpha lands inside the honesty band around the level
    st, al = shape_membership(L, 1.0, np.array([0.98, 0.0]), graph=graph)
    assert st == "Indeterminate"


def test_realization_flat_constant():
    L, H = make_flat()
    sec, rep = section_realization(L, H, 1.2, np.array([0.6, 0.0]),
                                   grid=TorusGrid((16, 16)),
                                   return_report=True)
    assert rep["accepted"] == "constant"
    assert rep["max_H"] == pytest.approx(0.36, abs=1e-12)
    np.testing.assert_allclose(sec.a, [0.6, 0.0])


def test_realization_hamex_needs_mollified():
    # the constant section tops out at (0.6 + 1)^2 = 2.56; only the
    # smoothed weak KAM correction gets under the level
    L, H = make_hamex()
    sec, rep = section_realization(L, H, 1.2, np.array([-0.6, 0.0]),
                                   return_report=True)
    assert rep["accepted"] == "mollified"
    assert rep["max_H"] < 1.2
    assert rep["candidates"][0]["max_H"] > 2.0
    # verify independently on the returned section
    got = float(np.max(H.value(sec.g.grid.X, sec.covectors())))
    assert got == pytest.approx(rep["max_H"], abs=1e-12)


def test_realization_twotwo_level_boundary():
    # alpha(0) = 1 exactly: at h = 1 the class is not strictly inside,
    # at h = 1.1 the zero section itself verifies with margin
    L, H = make_twotwo()
    grid = TorusGrid((32, 32))
    with pytest.raises(NotRealizable):
        section_realization(L, H, 1.0, np.zeros(2), grid=grid)
    sec, rep = section_realization(L, H, 1.1, np.zeros(2), grid=grid,
                                   return_report=True)
    assert rep["accepted"] == "constant"
    assert rep["margin"] == pytest.approx(0.1, abs=1e-9)
