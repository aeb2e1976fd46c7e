"""Small shared helpers: torus mask geometry, CSV and JSON round-trips.

CSV conventions (used by the CLI and the test suite):

* scalar fields: one comment line ``# grid nx=<N1> ny=<N2> hx=<h1> hy=<h2>
  order=row-major`` followed by the values, one grid row per line;
* potential matrices: same layout, entries may be the token ``-inf``;
* node masks: 0/1 integers, same grid comment line;
* discrete measures: triplet rows ``ix,iv,weight`` with flattened row-major
  base and fiber indices.
"""

import json

import numpy as np


# ---------------------------------------------------------------------------
# mask geometry on the torus


def dilate_mask(mask, cells=1):
    """Binary dilation by `cells` grid cells with periodic wrap."""
    if cells <= 0:
        return mask.astype(bool)
    return _wrap_dilate(mask.astype(bool), cells)


def _wrap_dilate(mask, cells):
    # scipy's binary_dilation has no wrap mode, roll-or instead
    out = mask.copy()
    for _ in range(cells):
        acc = out.copy()
        for ax in range(out.ndim):
            acc |= np.roll(out, 1, axis=ax)
            acc |= np.roll(out, -1, axis=ax)
        out = acc
    return out


def cell_distance_map(mask):
    """Chebyshev distance (in cells) from each node to the mask, periodic.

    Returns an integer array; unreachable (empty mask) gives a large value.
    """
    mask = mask.astype(bool)
    if not mask.any():
        return np.full(mask.shape, 10 ** 6, dtype=int)
    dist = np.full(mask.shape, 10 ** 6, dtype=int)
    dist[mask] = 0
    frontier = mask
    d = 0
    while frontier.any() and d < max(mask.shape):
        grown = _wrap_dilate(frontier, 1)
        new = grown & (dist > d + 1)
        d += 1
        dist[new] = d
        frontier = grown
    return dist


def hausdorff_cells(mask_a, mask_b):
    """Symmetric Hausdorff distance between two masks, in cells (Chebyshev)."""
    da = cell_distance_map(mask_b)[mask_a.astype(bool)]
    db = cell_distance_map(mask_a)[mask_b.astype(bool)]
    ha = int(da.max()) if da.size else 10 ** 6
    hb = int(db.max()) if db.size else 10 ** 6
    return max(ha, hb)


# ---------------------------------------------------------------------------
# CSV round-trips


def _grid_header(shape, spacing):
    n1 = shape[0]
    n2 = shape[1] if len(shape) == 2 else 1
    h1 = spacing[0]
    h2 = spacing[1] if len(shape) == 2 else 0.0
    return "# grid nx=%d ny=%d hx=%.17g hy=%.17g order=row-major" % (n1, n2, h1, h2)


def write_field_csv(path, values, spacing):
    """Write a scalar field (or mask) with the grid comment line."""
    values = np.asarray(values)
    shape = values.shape
    rows = values.reshape(shape[0], -1)
    with open(path, "w") as f:
        f.write(_grid_header(shape, spacing) + "\n")
        for row in rows:
            if rows.dtype.kind in "iub":
                f.write(",".join(str(int(v)) for v in row) + "\n")
            else:
                f.write(",".join("%.17g" % v for v in row) + "\n")


def read_field_csv(path):
    """Read a scalar field written by `write_field_csv`.

    Returns (values, spacing). Accepts the token -inf.
    """
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("# grid"):
            raise ValueError("missing grid header line")
        kv = dict(tok.split("=") for tok in header[len("# grid"):].split() if "=" in tok)
        n1, n2 = int(kv["nx"]), int(kv["ny"])
        h1, h2 = float(kv["hx"]), float(kv["hy"])
        data = [[float(tok) for tok in line.strip().split(",")] for line in f if line.strip()]
    values = np.array(data)
    if n2 == 1:
        values = values.reshape(n1)
        spacing = (h1,)
    else:
        values = values.reshape(n1, n2)
        spacing = (h1, h2)
    return values, spacing


def write_matrix_csv(path, matrix):
    """Write a dense matrix; -inf entries become the token -inf."""
    matrix = np.asarray(matrix, dtype=float)
    with open(path, "w") as f:
        f.write("# matrix rows=%d cols=%d\n" % matrix.shape)
        for row in matrix:
            f.write(",".join("-inf" if np.isneginf(v) else "%.17g" % v for v in row) + "\n")


def write_measure_csv(path, base_idx, fiber_idx, weights):
    """Write a sparse phase measure as (ix, iv, weight) triplets."""
    with open(path, "w") as f:
        f.write("# measure ix,iv,weight (flattened row-major indices)\n")
        for ix, iv, w in zip(base_idx, fiber_idx, weights):
            f.write("%d,%d,%.17g\n" % (ix, iv, w))


def read_measure_csv(path):
    ix, iv, w = [], [], []
    with open(path) as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            a, b, c = line.strip().split(",")
            ix.append(int(a))
            iv.append(int(b))
            w.append(float(c))
    return np.array(ix), np.array(iv), np.array(w)


def write_polyline_csv(path, points):
    with open(path, "w") as f:
        f.write("# polyline x,y\n")
        for p in points:
            f.write("%.17g,%.17g\n" % (p[0], p[1]))


# ---------------------------------------------------------------------------
# canonical JSON (deterministic bytes)


def dump_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=2, separators=(",", ": "))
        f.write("\n")


def json_ready(obj):
    """Recursively convert numpy scalars/arrays for json.dump."""
    if isinstance(obj, dict):
        return {k: json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj
