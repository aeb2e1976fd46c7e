import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wkamlab.errors import VerificationFailed
from wkamlab.geometry import TorusGrid
from wkamlab.selector import (bump_gfqi, check_gfqi, fiber_critical_points,
                              graph_selector, hull_distance, load_gfqi,
                              quadratic_gfqi, selector_value, shifted_gfqi,
                              smooth_selector)


@pytest.fixture(scope="module")
def bump_sel():
    S = bump_gfqi()
    grid = TorusGrid((32,))
    return S, grid, graph_selector(S, grid)


def test_quadratic_family_zero_section():
    # no base dependence at all: the selector is the critical value of the
    # quadratic, identically zero, and the section it generates is p = 0
    Q = quadratic_gfqi([-1.0, 2.0], n=2)
    grid = TorusGrid((8, 8))
    sel = graph_selector(Q, grid, fiber_count=97)
    assert np.abs(sel.phi.values).max() < 1e-8
    assert np.abs(sel.phi.gradient()).max() < 1e-8
    assert sel.meta["x0_fraction"] == 1.0
    assert np.nanmax(np.abs(sel.covectors)) < 1e-12
    assert sel.meta["membership_cells"] == 0.0


def test_quadratic_critical_point_on_node():
    # the lone critical point sits exactly on a sample node; it must still
    # be reported, nondegenerate, with the right index
    Q = quadratic_gfqi([-1.0, 2.0], n=2)
    pts = fiber_critical_points(Q, [0.3, 1.1])
    assert len(pts) == 1
    np.testing.assert_allclose(pts[0]["xi"], 0.0, atol=1e-10)
    assert pts[0]["index"] == 1
    assert not pts[0]["degenerate"]


def test_gfqi_validation():
    with pytest.raises(ValueError):
        quadratic_gfqi([1.0, 0.0])
    with pytest.raises(ValueError):
        quadratic_gfqi([1.0, 2.0, 3.0])


def test_bump_selector_field(bump_sel):
    S, grid, sel = bump_sel
    vals = sel.phi.values
    # sin vanishes at the node x = 0, so the family is pure quadratic there
    assert vals[0] == 0.0
    assert vals.max() <= S.meta["amplitude"] + 1e-12
    assert sel.meta["x0_fraction"] == 1.0
    assert sel.meta["membership_cells"] <= 2.0
    assert sel.lipschitz <= 1.1 * sel.meta["max_dx"]
    assert np.isfinite(sel.covectors[sel.x0_mask]).all()


def test_selector_methods_agree(bump_sel):
    S, grid, _ = bump_sel
    rng = np.random.default_rng(3)
    for x in rng.uniform(0.0, 2.0 * np.pi, 6):
        a = selector_value(S, [x], fiber_count=1001, method="union-find",
                           check_refine=False)
        b = selector_value(S, [x], fiber_count=1001, method="scan",
                           check_refine=False)
        assert a == b


def test_shifted_family_shifts_selector(bump_sel):
    S, grid, _ = bump_sel
    f = lambda x: 0.3 + 0.2 * np.cos(x[0])
    df = lambda x: np.array([-0.2 * np.sin(x[0])])
    S2 = shifted_gfqi(S, f, df)
    for x in (0.4, 2.0, 5.5):
        a = selector_value(S, [x], fiber_count=513, check_refine=False)
        b = selector_value(S2, [x], fiber_count=513, check_refine=False)
        assert abs(b - (a + f([x]))) < 1e-12


def test_load_gfqi_round_trip(tmp_path):
    p = tmp_path / "fam.ini"
    p.write_text("q = -1.0\nrho = 0.8\namplitude = 1.5\nmode = 1\n"
                 "center = 0.15\n")
    S = load_gfqi(p)
    assert S.meta["kind"] == "bump"
    assert S.k == 1 and S.index == 1
    ref = bump_gfqi()
    x = [1.3]
    assert selector_value(S, x, fiber_count=513, check_refine=False) == \
        selector_value(ref, x, fiber_count=513, check_refine=False)

    q = tmp_path / "quad.ini"
    q.write_text("q = -1.0, 2.0\nrho = 0.3\n")
    Q = load_gfqi(q)
    assert Q.k == 2 and Q.index == 1 and Q.rho == 0.3

    bad = tmp_path / "bad.ini"
    bad.write_text("q = -1.0, 2.0\namplitude = 1.0\n")
    with pytest.raises(ValueError):
        load_gfqi(bad)


def test_check_gfqi_reports_exact_tail():
    rep = check_gfqi(bump_gfqi(), TorusGrid((16,)))
    assert rep["tail_exact"] and rep["transversal"]
    rep = check_gfqi(quadratic_gfqi([-1.0, 2.0], n=2), TorusGrid((8, 8)))
    assert rep["tail_exact"] and rep["transversal"]


def test_smooth_selector_certificate(bump_sel):
    S, grid, sel = bump_sel
    s = 4.0 * float(grid.h[0])
    section, cert = smooth_selector(sel, s, return_certificate=True)
    assert cert["nodes_certified"] == 32
    # averaging slopes keeps dg inside the hull of nearby branch covectors
    assert cert["max_hull_distance"] <= 1e-9
    assert cert["class_drift"] <= 1e-12
    np.testing.assert_allclose(section.a, 0.0)
    with pytest.raises(ValueError):
        smooth_selector(sel, 1.5 * float(grid.h[0]))


@st.composite
def cloud_and_weights(draw):
    pts = draw(st.lists(
        st.tuples(st.floats(-3, 3, allow_nan=False, width=32),
                  st.floats(-3, 3, allow_nan=False, width=32)),
        min_size=1, max_size=6))
    w = draw(st.lists(st.floats(0.0, 1.0, width=32),
                      min_size=len(pts), max_size=len(pts)))
    return np.array(pts, dtype=float), np.array(w, dtype=float)


@settings(max_examples=50, deadline=None)
@given(cloud_and_weights())
def test_hull_distance_properties(cw):
    cloud, w = cw
    # a vertex is in the hull
    assert hull_distance(cloud[0], cloud) <= 1e-9
    # any convex combination is too
    if w.sum() > 1e-6:
        inside = (w / w.sum()) @ cloud
        assert hull_distance(inside, cloud) <= 1e-7
    # the hull distance never beats the best vertex
    far = cloud.max(axis=0) + np.array([1.0, 2.0])
    d = hull_distance(far, cloud)
    best = np.abs(cloud - far).sum(axis=1).min()
    assert d <= best + 1e-9
    if len(cloud) == 1:
        assert abs(d - best) <= 1e-9
