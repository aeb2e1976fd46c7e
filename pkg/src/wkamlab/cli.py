"""Command-line entry point: configuration, dispatch, output plumbing.

Outputs are deterministic for a fixed (config, seed): the thread knob and
the output directory are execution details, excluded from the echoed
config, and BLAS pools are pinned to one thread before numpy loads so
rerunning with a different WEAKKAM_THREADS cannot move a single bit of
summary.json or the CSVs.  Wall-clock timings go to a timing.json sidecar
for the same reason.

numpy-heavy imports are deferred into the handlers; keep module scope to
the standard library.
"""

import argparse
import configparser
import json
import os
import sys
import time


_TOL_KEYS = ("tol_c", "tol_r", "tol_a", "tol_jump", "tol_inv")

_KEY_TYPES = {
    "model": str, "grid": int, "vgrid": int, "fiber_half": float,
    "tau_steps": float, "stencil": int,
    "tol_c": float, "tol_r": float, "tol_a": float, "tol_jump": float,
    "tol_inv": float,
    "level": float, "box": float, "class_count": int, "chain_t": float,
    "at": str, "family": str, "gfqi": str, "fiber_count": int,
    "smooth_s": float, "theorem": str, "example": str,
    "out": str, "seed": int, "threads": int,
}

_DEFAULTS = {"out": "out", "seed": 0}


def parse_config(path=None, flags=None):
    """Resolved run configuration: defaults < file < environment < flags.

    Unknown keys and non-positive tolerances are rejected with the
    offending key named; values keep the types in _KEY_TYPES.
    """
    from .errors import ConfigError

    cfg = dict(_DEFAULTS)
    if path:
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError("cannot read config file %s: %s" % (path, exc))
        if "[" not in text.split("\n", 1)[0]:
            text = "[run]\n" + text
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError("config file %s: %s" % (path, exc))
        for section in cp.sections():
            for key, raw in cp.items(section):
                if key not in _KEY_TYPES:
                    raise ConfigError(
                        "config key '%s' (section [%s], file %s) is not "
                        "recognized" % (key, section, path))
                try:
                    cfg[key] = _KEY_TYPES[key](raw)
                except ValueError:
                    raise ConfigError(
                        "config key '%s' (section [%s], file %s): cannot "
                        "parse %r as %s" % (key, section, path, raw,
                                            _KEY_TYPES[key].__name__))
    env_threads = os.environ.get("WEAKKAM_THREADS")
    if env_threads is not None:
        try:
            cfg["threads"] = int(env_threads)
        except ValueError:
            raise ConfigError("WEAKKAM_THREADS=%r is not an integer"
                              % env_threads)
    if flags:
        for key, val in flags.items():
            if val is not None and key in _KEY_TYPES:
                cfg[key] = val
    for key in _TOL_KEYS:
        if key in cfg and cfg[key] is not None and cfg[key] <= 0:
            raise ConfigError("flag/config key '%s': tolerance must be "
                              "positive, got %g" % (key, cfg[key]))
    if cfg.get("grid") is not None and cfg["grid"] < 8:
        raise ConfigError("flag/config key 'grid': need at least 8 nodes "
                          "per axis, got %d" % cfg["grid"])
    if cfg.get("vgrid") is not None and (cfg["vgrid"] < 5
                                         or cfg["vgrid"] % 2 == 0):
        raise ConfigError("flag/config key 'vgrid': need an odd count "
                          ">= 5, got %d" % cfg["vgrid"])
    if cfg.get("threads") is not None and cfg["threads"] < 1:
        raise ConfigError("flag/config key 'threads': must be >= 1")
    return cfg


def _echo(cfg, **resolved):
    """Deterministic config echo: drop execution-only knobs, add resolved."""
    out = {k: v for k, v in cfg.items()
           if v is not None and k not in ("out", "threads")}
    out.update({k: v for k, v in resolved.items() if v is not None})
    return out


def _example_for(cfg):
    from .errors import ConfigError
    from .verify import get_example

    if not cfg.get("model"):
        raise ConfigError("this subcommand needs --model (or model= in "
                          "the config file)")
    return get_example(cfg["model"])


def _base_setup(cfg, ex):
    """(grid, tau, stencil) resolved against the example profile."""
    import numpy as np
    from .geometry import TorusGrid

    m = cfg.get("grid") or ex.profile["grid"]
    grid = TorusGrid((m, m))
    h = float(np.max(grid.h))
    if cfg.get("tau_steps"):
        tau = cfg["tau_steps"] * h
    else:
        # profile tau is tied to the profile grid; rescale to the chosen one
        tau = ex.profile["tau"] * (ex.profile["grid"] / float(m))
    stencil = cfg.get("stencil") or ex.profile["stencil"]
    return grid, tau, stencil


def _fiber_for(cfg, ex):
    from .geometry import FiberGrid

    half = cfg.get("fiber_half") or ex.profile["fiber_half"]
    count = cfg.get("vgrid") or ex.profile["fiber_count"]
    return FiberGrid(half, count, n=2)


def _write_mask(path, mask_obj):
    from .util import write_field_csv

    write_field_csv(path, mask_obj.mask.astype(int),
                    tuple(mask_obj.grid.h))


# ---------------------------------------------------------------------------
# subcommand handlers: each returns (summary dict, exit code)


def _cmd_critical_value(cfg, out):
    from .action import build_action_graph, mane_critical_value
    from .aubry import mather_lp
    from .geometry import TorusGrid
    from .weakkam import minimax_critical_value, solve_weak_kam

    ex = _example_for(cfg)
    grid, tau, stencil = _base_setup(cfg, ex)
    tol_c = cfg.get("tol_c") or 1e-3
    graph = build_action_graph(ex.lagrangian, grid, tau, stencil)
    c_bis = mane_critical_value(graph, tol_c=tol_c, method="bisection").c
    pair = solve_weak_kam(ex.lagrangian, grid, tau, graph=graph, tol=tol_c)
    mm = minimax_critical_value(ex.hamiltonian, grid)
    lp_grid = TorusGrid((ex.profile["lp_base"],) * 2)
    fiber = _fiber_for(cfg, ex)
    measures, optimum = mather_lp(ex.lagrangian, lp_grid, fiber)
    summary = {
        "config": _echo(cfg, grid=grid.shape[0], tau=tau, stencil=stencil,
                        tol_c=tol_c, lp_base=lp_grid.shape[0],
                        vgrid=fiber.count),
        "c_bisection": float(c_bis),
        "c_lax_oleinik": float(pair.c),
        "c_minimax_upper": float(mm["c"]),
        "c_lp_lower": float(-optimum),
    }
    return summary, 0


def _cmd_weak_kam(cfg, out):
    from .weakkam import (minimax_critical_value, residual_stats,
                          solve_weak_kam)
    from .util import write_field_csv

    ex = _example_for(cfg)
    grid, tau, stencil = _base_setup(cfg, ex)
    tol_c = cfg.get("tol_c") or 1e-3
    tol_r = cfg.get("tol_r") or 0.05
    pair = solve_weak_kam(ex.lagrangian, grid, tau, stencil_radius=stencil,
                          tol=tol_c)
    stats = residual_stats(pair.u_minus, ex.hamiltonian, pair.c,
                           tol_r=tol_r)
    mm = minimax_critical_value(ex.hamiltonian, grid)
    write_field_csv(os.path.join(out, "u_minus.csv"),
                    pair.u_minus.values, tuple(grid.h))
    write_field_csv(os.path.join(out, "u_plus.csv"),
                    pair.u_plus.values, tuple(grid.h))
    summary = {
        "config": _echo(cfg, grid=grid.shape[0], tau=tau, stencil=stencil,
                        tol_c=tol_c, tol_r=tol_r),
        "c_backward": float(pair.stats["c_backward"]),
        "c_forward": float(pair.stats["c_forward"]),
        "c_minimax": float(mm["c"]),
        "iterations": int(max(pair.stats["iterations_backward"],
                              pair.stats["iterations_forward"])),
        "residual_p95": float(stats["p95"]),
    }
    return summary, 0


def _cmd_barrier(cfg, out):
    import numpy as np
    from .action import build_action_graph, mane_critical_value
    from .aubry import peierls_barrier
    from .util import write_field_csv, write_matrix_csv

    ex = _example_for(cfg)
    grid, tau, stencil = _base_setup(cfg, ex)
    tol_c = cfg.get("tol_c") or 1e-3
    graph = build_action_graph(ex.lagrangian, grid, tau, stencil)
    c = mane_critical_value(graph, tol_c=tol_c).c
    barrier = peierls_barrier(ex.lagrangian, c, grid, tau=tau,
                              stencil_radius=stencil)
    diag = barrier.diagonal().reshape(grid.shape)
    write_field_csv(os.path.join(out, "barrier_diag.csv"), diag,
                    tuple(grid.h))
    if not barrier.diagonal_only and grid.node_count <= 1024:
        write_matrix_csv(os.path.join(out, "barrier_matrix.csv"),
                         barrier.values)
    summary = {
        "config": _echo(cfg, grid=grid.shape[0], tau=tau, stencil=stencil,
                        tol_c=tol_c),
        "c": float(c),
        "stabilized": bool(barrier.stabilized),
        "diagonal_min": float(np.min(diag)),
        "diagonal_max": float(np.max(diag)),
        "window": list(barrier.window),
    }
    return summary, 0


def _cmd_aubry(cfg, out):
    from .verify import aubry_mask_of

    ex = _example_for(cfg)
    grid, tau, stencil = _base_setup(cfg, ex)
    if cfg.get("tol_a"):
        ex.profile["tol_A"] = cfg["tol_a"]
    ex.profile["tau"] = tau
    ex.profile["stencil"] = stencil
    tol_c = cfg.get("tol_c") or 1e-3
    mask, barrier, c = aubry_mask_of(ex, tol_c=tol_c, grid=grid)
    _write_mask(os.path.join(out, "aubry_mask.csv"), mask)
    summary = {
        "config": _echo(cfg, grid=grid.shape[0], tau=tau, stencil=stencil,
                        tol_a=ex.profile["tol_A"], tol_c=tol_c),
        "c": float(c),
        "coverage": float(mask.coverage()),
        "count": int(mask.count()),
        "tol_a": float(ex.profile["tol_A"]),
    }
    return summary, 0


def _cmd_mather(cfg, out):
    import numpy as np
    from .aubry import mather_lp, mather_set
    from .geometry import TorusGrid
    from .util import write_measure_csv

    ex = _example_for(cfg)
    m = cfg.get("grid") or ex.profile["lp_base"]
    lp_grid = TorusGrid((m, m))
    fiber = _fiber_for(cfg, ex)
    tol_inv = cfg.get("tol_inv")
    measures, optimum = mather_lp(ex.lagrangian, lp_grid, fiber,
                                  tol_inv=tol_inv)
    mask = mather_set(measures)
    interior = measures[0]
    F = fiber.node_count
    nz = np.flatnonzero(interior.weights > 1e-15)
    write_measure_csv(os.path.join(out, "mather_measure.csv"),
                      nz // F, nz % F, interior.weights[nz])
    _write_mask(os.path.join(out, "mather_mask.csv"), mask)
    summary = {
        "config": _echo(cfg, grid=m, vgrid=fiber.count,
                        fiber_half=float(fiber.P)),
        "lp_optimum": float(optimum),
        "support_nodes": int(mask.count()),
        "coverage": float(mask.coverage()),
    }
    return summary, 0


def _parse_class(cfg):
    import numpy as np
    from .errors import ConfigError

    raw = cfg.get("at") or "0,0"
    try:
        a = np.array([float(tok) for tok in raw.split(",")])
    except ValueError:
        raise ConfigError("flag/config key 'at': cannot parse %r as a "
                          "comma-separated class" % raw)
    return a


def _cmd_alpha(cfg, out):
    from .shape import alpha_function

    ex = _example_for(cfg)
    grid, tau, stencil = _base_setup(cfg, ex)
    a = _parse_class(cfg)
    tol_c = cfg.get("tol_c") or 1e-3
    val = alpha_function(ex.lagrangian, a, grid=grid, tau=tau,
                         stencil_radius=stencil, tol_c=tol_c)
    summary = {
        "config": _echo(cfg, grid=grid.shape[0], tau=tau, stencil=stencil,
                        tol_c=tol_c),
        "alpha": float(val),
        "at": [float(x) for x in a],
    }
    return summary, 0


def _cmd_shape(cfg, out):
    from .shape import shape_of_domain
    from .util import write_field_csv, write_polyline_csv

    ex = _example_for(cfg)
    grid, tau, stencil = _base_setup(cfg, ex)
    level = cfg.get("level") or ex.profile.get("level", 1.0)
    box = cfg.get("box") or ex.profile.get("class_box", 1.5)
    count = cfg.get("class_count") or ex.profile.get("class_count", 33)
    tol_c = cfg.get("tol_c") or 1e-3
    table, poly = shape_of_domain(ex.lagrangian, level, box=box,
                                  count=count, grid=grid, tau=tau,
                                  stencil_radius=stencil, tol_c=tol_c,
                                  audit_seed=cfg["seed"] or 5)
    step = 2.0 * box / (count - 1)
    write_field_csv(os.path.join(out, "alpha_table.csv"), table.values,
                    (step, step))
    write_polyline_csv(os.path.join(out, "boundary.csv"), poly)
    audit = table.meta["convexity_audit"]
    summary = {
        "config": _echo(cfg, grid=grid.shape[0], tau=tau, stencil=stencil,
                        level=level, box=box, class_count=count,
                        tol_c=tol_c),
        "alpha_min": table.min_value(),
        "alpha_argmin": [float(x) for x in table.argmin()],
        "convexity_audit_pass": bool(audit["pass"]),
        "boundary_vertices": int(len(poly)),
    }
    return summary, 0


def _cmd_selector(cfg, out):
    import numpy as np
    from .errors import ConfigError
    from .geometry import TorusGrid
    from .selector import (bump_gfqi, graph_selector, lagrangian_samples,
                           load_gfqi, quadratic_gfqi, smooth_selector)
    from .util import write_field_csv, write_matrix_csv

    family = cfg.get("family") or "bump"
    if cfg.get("gfqi"):
        S = load_gfqi(cfg["gfqi"])
    elif family == "bump":
        S = bump_gfqi()
    elif family == "quadratic":
        S = quadratic_gfqi(np.array([-1.0]))
    else:
        raise ConfigError("flag/config key 'family': unknown family %r "
                          "(bump, quadratic)" % family)
    m = cfg.get("grid") or 64
    grid = TorusGrid((m,))
    field = graph_selector(S, grid, fiber_count=cfg.get("fiber_count"))
    write_field_csv(os.path.join(out, "phi.csv"), field.phi.values,
                    tuple(grid.h))
    write_field_csv(os.path.join(out, "x0_mask.csv"),
                    field.x0_mask.astype(int), tuple(grid.h))
    write_matrix_csv(os.path.join(out, "lambda_samples.csv"),
                     lagrangian_samples(S, grid))
    summary = {
        "config": _echo(cfg, grid=m, family=None if cfg.get("gfqi")
                        else family),
        "x0_fraction": float(field.meta["x0_fraction"]),
        "lipschitz": float(field.lipschitz),
        "value_count": int(field.meta["value_count"]),
        "max_dx": float(field.meta["max_dx"]),
        "membership_cells": float(field.meta["membership_cells"]),
    }
    if cfg.get("smooth_s"):
        s = cfg["smooth_s"] * float(grid.h[0])
        sec, cert = smooth_selector(field, s, return_certificate=True)
        write_field_csv(os.path.join(out, "psi.csv"), sec.g.values,
                        tuple(grid.h))
        summary["max_hull_distance"] = float(cert["max_hull_distance"])
    return summary, 0


def _cmd_chain_recurrent(cfg, out):
    from .verify import chain_mask_of

    ex = _example_for(cfg)
    grid, _, _ = _base_setup(cfg, ex)
    if cfg.get("chain_t"):
        ex.profile["chain_T"] = cfg["chain_t"]
    mask = chain_mask_of(ex, grid=grid)
    _write_mask(os.path.join(out, "chain_mask.csv"), mask)
    summary = {
        "config": _echo(cfg, grid=grid.shape[0],
                        chain_t=ex.profile["chain_T"]),
        "coverage": float(mask.coverage()),
        "T": float(ex.profile["chain_T"]),
        "mode": str(mask.meta.get("mode", "")),
    }
    return summary, 0


def _cmd_verify(cfg, out):
    from .errors import ConfigError
    from .util import dump_json, json_ready
    from .verify import run_verification

    theorem = cfg.get("theorem")
    if not theorem:
        raise ConfigError("verify needs a theorem id (twocycles, "
                          "section-intersection, chain-rigidity, "
                          "invariant-integral, all)")
    example = cfg.get("example") or "hamex"
    reports = run_verification(theorem, example)
    timing = {}
    rdicts = []
    for rep in reports:
        rd = json_ready(rep.to_dict(with_runtime=False))
        rdicts.append(rd)
        timing["%s/%s" % (rep.theorem, rep.example)] = rep.runtime_s
        dump_json(os.path.join(out, "verify_%s_%s.json"
                               % (rep.theorem, rep.example)), rd)
    dump_json(os.path.join(out, "report_timing.json"),
              {k: float(v) for k, v in sorted(timing.items())})
    summary = {
        "config": _echo(cfg, theorem=theorem, example=example),
        "reports": rdicts,
    }
    code = 0 if all(r["passed"] for r in rdicts) else 3
    return summary, code


def _cmd_list_examples(cfg, out):
    from .util import json_ready
    from .verify import list_examples

    rows = json_ready(list_examples())
    for row in rows:
        print(row["name"])
    return {"config": _echo(cfg), "examples": rows}, 0


_HANDLERS = {
    "critical-value": _cmd_critical_value,
    "weak-kam": _cmd_weak_kam,
    "barrier": _cmd_barrier,
    "aubry": _cmd_aubry,
    "mather": _cmd_mather,
    "alpha": _cmd_alpha,
    "shape": _cmd_shape,
    "selector": _cmd_selector,
    "chain-recurrent": _cmd_chain_recurrent,
    "verify": _cmd_verify,
    "list-examples": _cmd_list_examples,
}


def validate_summary(obj):
    """Check obj against the bundled schema (required/type/enum subset)."""
    path = os.path.join(os.path.dirname(__file__), "summary.schema.json")
    with open(path) as fh:
        schema = json.load(fh)
    _validate_node(obj, schema, "summary")


_JSON_TYPES = {
    "object": dict, "array": list, "string": str, "boolean": bool,
    "number": (int, float), "integer": int,
}


def _validate_node(obj, schema, where):
    typ = schema.get("type")
    if typ and not isinstance(obj, _JSON_TYPES[typ]):
        raise ValueError("%s: expected %s, got %s"
                         % (where, typ, type(obj).__name__))
    if typ == "boolean" or (typ == "integer" and isinstance(obj, bool)):
        if typ == "integer":
            raise ValueError("%s: expected integer, got bool" % where)
    if "enum" in schema and obj not in schema["enum"]:
        raise ValueError("%s: %r not in %s" % (where, obj, schema["enum"]))
    if typ == "object":
        for req in schema.get("required", []):
            if req not in obj:
                raise ValueError("%s: missing required key %r"
                                 % (where, req))
        for key, sub in schema.get("properties", {}).items():
            if key in obj:
                _validate_node(obj[key], sub, "%s.%s" % (where, key))
    if typ == "array" and "items" in schema:
        for i, item in enumerate(obj):
            _validate_node(item, schema["items"], "%s[%d]" % (where, i))


def build_parser():
    p = argparse.ArgumentParser(
        prog="wkamlab",
        description="Grid-based weak KAM, Aubry-Mather and graph-selector "
                    "computations on the torus.")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in _HANDLERS:
        sp = sub.add_parser(name)
        if name == "verify":
            sp.add_argument("theorem", nargs="?", default=None)
            sp.add_argument("--example", type=str, default=None)
        sp.add_argument("--config", type=str, default=None)
        sp.add_argument("--model", type=str, default=None)
        sp.add_argument("--grid", type=int, default=None)
        sp.add_argument("--vgrid", type=int, default=None)
        sp.add_argument("--fiber-half", type=float, default=None)
        sp.add_argument("--fiber-count", type=int, default=None)
        sp.add_argument("--tau-steps", type=float, default=None)
        sp.add_argument("--stencil", type=int, default=None)
        for tol in _TOL_KEYS:
            sp.add_argument("--" + tol.replace("_", "-"), type=float,
                            default=None)
        sp.add_argument("--level", type=float, default=None)
        sp.add_argument("--box", type=float, default=None)
        sp.add_argument("--class-count", type=int, default=None)
        sp.add_argument("--chain-t", type=float, default=None)
        sp.add_argument("--at", type=str, default=None)
        sp.add_argument("--family", type=str, default=None)
        sp.add_argument("--gfqi", type=str, default=None)
        sp.add_argument("--smooth-s", type=float, default=None)
        sp.add_argument("--out", type=str, default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
    return p


def dispatch(subcommand, cfg):
    """Run one subcommand; returns the process exit code."""
    from .util import dump_json, json_ready

    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    t0 = time.time()
    summary, code = _HANDLERS[subcommand](cfg, out)
    summary["subcommand"] = subcommand
    summary = json_ready(summary)
    validate_summary(summary)
    dump_json(os.path.join(out, "summary.json"), summary)
    dump_json(os.path.join(out, "timing.json"),
              {"runtime_s": time.time() - t0})
    return code


def main(argv=None):
    # pin BLAS pools before numpy initializes: output bytes must not
    # depend on the thread knob
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, "1")
    parser = build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items()
             if k not in ("subcommand", "config")}
    from .errors import ConfigError, WeakKamError
    try:
        cfg = parse_config(args.config, flags)
        return dispatch(args.subcommand, cfg)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except WeakKamError as exc:
        print("computation error: %s: %s"
              % (type(exc).__name__, exc), file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        import traceback
        traceback.print_exc()
        print("unexpected error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
