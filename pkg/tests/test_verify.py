import numpy as np
import pytest

from wkamlab.errors import ConfigError, MeasureNotPreserved
from wkamlab.geometry import TorusGrid
from wkamlab.verify import (cycle_potential, example_construction_checks,
                            get_example, list_examples, run_verification,
                            stall_mask, verify_invariant_integral,
                            verify_twocycles)


def test_example_registry():
    names = [e["name"] for e in list_examples()]
    assert names == ["flat", "hamex", "twotwo"]
    ex = get_example("hamex")
    assert ex.facts["critical_value"] == 1.0
    assert get_example("twotwo").facts["chain_base"] == "full"
    with pytest.raises(ConfigError):
        get_example("nope")


def test_construction_checks_pass():
    for name in ("flat", "hamex", "twotwo"):
        claims = example_construction_checks(name)
        assert claims, name
        assert all(c["pass"] for c in claims), (name, claims)
    ids = [c["id"] for c in example_construction_checks("twotwo")]
    assert ids == ["two-degenerate-zeros", "sign-definite-off-zeros"]


def test_stall_mask_and_cycle_potential():
    grid = TorusGrid((16, 16))
    m = stall_mask(grid)
    rows = np.flatnonzero(m.any(axis=1))
    np.testing.assert_array_equal(rows, [0, 8])
    assert m.sum() == 32
    phi = cycle_potential(grid, 0.5)
    np.testing.assert_allclose(phi.values, -0.5 * np.cos(grid.X[..., 0]),
                               atol=1e-15)


def test_invariant_integral_flat():
    rep = verify_invariant_integral("flat")
    assert rep.passed
    assert [c["id"] for c in rep.claims] == [
        "trig-average-vanishes", "weak-kam-average-vanishes"]
    d = rep.to_dict()
    assert set(d) == {"theorem", "example", "claims", "passed", "runtime_s"}
    for c in d["claims"]:
        assert set(c) == {"id", "cite", "pass", "defect", "tol"}
        assert c["defect"] <= c["tol"]


def test_invariant_integral_refuses_compressible_flow():
    with pytest.raises(MeasureNotPreserved):
        verify_invariant_integral("hamex")


def test_twocycles_report():
    rep = verify_twocycles()
    assert rep.passed
    # three claims per family parameter
    assert len(rep.claims) == 12
    assert rep.runtime_s > 0.0


def test_run_all_flat():
    reports = run_verification("all", "flat")
    assert [r.theorem for r in reports] == [
        "chain-rigidity", "invariant-integral", "section-intersection"]
    assert all(r.passed for r in reports)
    assert all(r.example == "flat" for r in reports)


def test_run_verification_rejects_unknown():
    with pytest.raises(ConfigError):
        run_verification("bogus", "flat")
    with pytest.raises(ConfigError):
        run_verification("twocycles", "nope")
