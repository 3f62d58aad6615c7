"""Result persistence: schema-checked JSON, legacy VTK and state files."""
import json
import os

import jsonschema
import numpy as np

from .fields import DeformationField, Grid, MagnetizationField, State, nodal_gradient_at_qp
from .kinematics import det

_num = {"type": "number"}
_breakdown = {
    "type": "object",
    "required": ["elastic", "exchange", "magnetostatic", "dmi", "regularizer", "load_work", "total"],
    "properties": {k: _num for k in ("elastic", "exchange", "magnetostatic", "dmi", "regularizer",
                                     "load_work", "total")},
    "additionalProperties": False,
}

MINIMIZE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["status", "time", "energies", "iterations", "converged", "min_det", "ciarlet_necas"],
    "properties": {
        "status": {"enum": ["ok", "line_search_stalled", "inadmissible"]},
        "time": _num,
        "energies": _breakdown,
        "iterations": {"type": "integer", "minimum": 0},
        "converged": {"type": "boolean"},
        "message": {"type": "string"},
        "min_det": _num,
        "ciarlet_necas": {"type": ["object", "null"]},
        "seed": {"type": "integer"},
    },
}

STEP_SCHEMA = {
    "type": "object",
    "required": ["t", "energies", "dissipation_increment", "cumulative_dissipation", "stability_margin",
                 "inequality_gaps", "passed"],
    "properties": {
        "t": _num,
        "energies": _breakdown,
        "dissipation_increment": {"type": "number", "minimum": 0},
        "cumulative_dissipation": {"type": "number", "minimum": 0},
        "stability_margin": _num,
        "inequality_gaps": {"type": "object", "required": ["energy_inequality", "apriori"],
                            "properties": {"energy_inequality": _num, "apriori": _num}},
        "passed": {"type": "object", "additionalProperties": {"type": "boolean"}},
        "restarts": {"type": "integer", "minimum": 0},
        "iterations": {"type": "integer", "minimum": 0},
    },
}

TRAJECTORY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["status", "steps", "gronwall", "total_dissipation", "energy_balance"],
    "properties": {
        "status": {"enum": ["ok", "audit_failed", "step_failed"]},
        "steps": {"type": "array", "items": STEP_SCHEMA},
        "gronwall": {"type": "object", "required": ["L", "M"], "properties": {"L": _num, "M": _num}},
        "total_dissipation": {"type": "number", "minimum": 0},
        "energy_balance": {"type": "object"},
        "seed": {"type": "integer"},
    },
}

SCHEMAS = {"minimize": MINIMIZE_SCHEMA, "trajectory": TRAJECTORY_SCHEMA, "step": STEP_SCHEMA}


def to_jsonable(obj):
    """Convert numpy scalars/arrays and tuples recursively to plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def dumps(obj):
    """Deterministic JSON text (sorted keys, shortest round-trip floats)."""
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=True) + "\n"


def write_json(path, obj, schema=None):
    data = to_jsonable(obj)
    if schema is not None:
        jsonschema.validate(data, SCHEMAS[schema] if isinstance(schema, str) else schema)
    with open(path, "w") as fh:
        fh.write(dumps(data))


def write_jsonl(path, records, schema=None):
    with open(path, "w") as fh:
        for r in records:
            data = to_jsonable(r)
            if schema is not None:
                jsonschema.validate(data, SCHEMAS[schema])
            fh.write(json.dumps(data, sort_keys=True) + "\n")


# state files -------------------------------------------------------------------

def state_to_dict(q):
    g = q.grid
    return {
        "grid": {"box": g.box, "dims": g.dims, "dirichlet_faces": sorted(g.dirichlet_faces),
                 "neumann_faces": sorted(g.neumann_faces)},
        "y": q.y.nodes.reshape(-1, 3),
        "mu": q.mu.nodes.reshape(-1, 3),
    }


def state_from_dict(d):
    gd = d["grid"]
    g = Grid(tuple(tuple(b) for b in gd["box"]), tuple(gd["dims"]), frozenset(gd["dirichlet_faces"]),
             frozenset(gd["neumann_faces"]))
    y = np.asarray(d["y"], float).reshape(g.node_shape + (3,))
    mu = np.asarray(d["mu"], float).reshape(g.node_shape + (3,))
    return State(DeformationField(g, y), MagnetizationField(g, mu))


def save_state(path, q):
    write_json(path, state_to_dict(q))


def load_state(path):
    with open(path) as fh:
        return state_from_dict(json.load(fh))


# VTK ---------------------------------------------------------------------------

def _fmt(a):
    return "\n".join(" ".join(repr(float(x)) for x in row) for row in np.atleast_2d(a))


def write_vtk_points(path, origin, spacing, dims, point_data=None, cell_data=None, title="chiralmag"):
    """Legacy ASCII ``STRUCTURED_POINTS`` file.

    ``dims`` counts points.  Arrays are given in C order ``(i, j, k[, 3])``
    and written with x fastest, as the format requires.
    """
    dims = tuple(int(n) for n in dims)
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET STRUCTURED_POINTS",
             "DIMENSIONS %d %d %d" % dims,
             "ORIGIN %r %r %r" % tuple(float(x) for x in origin),
             "SPACING %r %r %r" % tuple(float(x) for x in spacing)]

    def block(data, n):
        out = []
        for name, arr in sorted(data.items()):
            arr = np.asarray(arr, dtype=float)
            flat = np.transpose(arr, (2, 1, 0) + tuple(range(3, arr.ndim))).reshape(n, -1)
            if flat.shape[1] == 3:
                out.append(f"VECTORS {name} double")
            else:
                out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            out.append(_fmt(flat))
        return out

    if point_data:
        n = int(np.prod(dims))
        lines.append(f"POINT_DATA {n}")
        lines += block(point_data, n)
    if cell_data:
        n = int(np.prod([max(d - 1, 1) for d in dims]))
        lines.append(f"CELL_DATA {n}")
        lines += block(cell_data, n)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_state_vtk(path, q):
    """Nodal displacement ``y - x`` and ``mu``; cell-mean ``det grad y``."""
    g = q.grid
    J = det(nodal_gradient_at_qp(g, q.y.nodes)).mean(axis=1).reshape(g.dims)
    write_vtk_points(path, g.lower, g.spacing, g.node_shape,
                     {"displacement": q.y.nodes - g.node_coords, "mu": q.mu.nodes},
                     {"det_grad_y": J})


def read_vtk_header(path):
    """Parse the header fields of a legacy structured-points file (used by tests)."""
    out = {}
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if parts and parts[0] in ("DIMENSIONS", "ORIGIN", "SPACING", "POINT_DATA", "CELL_DATA", "DATASET"):
                out[parts[0]] = parts[1:]
    return out


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
