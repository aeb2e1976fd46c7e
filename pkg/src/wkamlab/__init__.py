"""Grid-based weak KAM and Aubry-Mather computations on the torus.

The package discretizes a Tonelli Lagrangian on T^n as a periodic action
graph and builds everything else on top of that one object: critical
values, viscosity solution pairs, Peierls barriers, Aubry / Mather /
chain-recurrent sets, alpha functions and their sublevel shapes,
graph-selector sections from generating families, and a small battery of
cross-checks that pin the computed objects against closed-form model
problems.
"""

from .action import (ActionGraph, action_potential, action_potential_T,
                     build_action_graph, has_negative_cycle,
                     mane_critical_value, min_cycle_mean_howard,
                     min_cycle_mean_karp, policy_cycle_nodes)
from .aubry import (BarrierMatrix, DiscreteMeasure, NodeSetMask, aubry_lift,
                    boundary_defects, foliation_cycle, foliation_pairing,
                    mather_lp, mather_set, peierls_barrier, projected_aubry,
                    strong_chain_recurrent)
from .errors import (ConfigError, ConvexityViolation, DominationViolated,
                     EmptyAubry, GridTooSmall, MeasureNotPreserved,
                     NotRealizable, VerificationFailed, WeakKamError)
from .geometry import (FiberGrid, HamiltonianModel, LagrangianModel,
                       LagrangianSection, ScalarField, TorusGrid)
from .models import (drift_field, make_flat, make_hamex, make_quadratic,
                     make_twotwo)
from .selector import (Gfqi, SelectorField, bump_gfqi, check_gfqi,
                       graph_selector, hull_distance, lagrangian_samples,
                       load_gfqi, quadratic_gfqi, selector_value,
                       shifted_gfqi, smooth_selector)
from .shape import (AlphaTable, alpha_function, section_realization,
                    shape_membership, shape_of_domain, shifted_lagrangian)
from .verify import (VerificationReport, get_example, list_examples,
                     run_verification, verify_chain_rigidity,
                     verify_invariant_integral, verify_section_intersection,
                     verify_twocycles)
from .weakkam import (WeakKamPair, dominated_check, lax_oleinik_step,
                      minimax_critical_value, residual_stats, solve_weak_kam)

__version__ = "0.1.0"

__all__ = [
    "ActionGraph", "AlphaTable", "BarrierMatrix", "ConfigError",
    "ConvexityViolation", "DiscreteMeasure", "DominationViolated",
    "EmptyAubry", "FiberGrid", "Gfqi", "GridTooSmall", "HamiltonianModel",
    "LagrangianModel", "LagrangianSection", "MeasureNotPreserved",
    "NodeSetMask", "NotRealizable", "ScalarField", "SelectorField",
    "TorusGrid", "VerificationFailed", "VerificationReport", "WeakKamError",
    "WeakKamPair", "action_potential", "action_potential_T", "alpha_function",
    "aubry_lift", "boundary_defects", "build_action_graph", "bump_gfqi",
    "check_gfqi", "dominated_check", "drift_field", "foliation_cycle",
    "foliation_pairing", "get_example", "graph_selector", "has_negative_cycle",
    "hull_distance", "lagrangian_samples", "lax_oleinik_step",
    "list_examples", "load_gfqi", "make_flat", "make_hamex",
    "make_quadratic", "make_twotwo", "mane_critical_value", "mather_lp",
    "mather_set", "min_cycle_mean_howard", "min_cycle_mean_karp",
    "minimax_critical_value", "peierls_barrier", "policy_cycle_nodes",
    "projected_aubry", "quadratic_gfqi", "residual_stats",
    "run_verification", "section_realization", "selector_value",
    "shape_membership", "shape_of_domain", "shifted_gfqi",
    "shifted_lagrangian", "smooth_selector", "solve_weak_kam",
    "strong_chain_recurrent", "verify_chain_rigidity",
    "verify_invariant_integral", "verify_section_intersection",
    "verify_twocycles",
]
