"""Run configuration: JSON parsing, schema validation and object construction."""
import json
from dataclasses import dataclass, fields as dc_fields

import jsonschema
import numpy as np

from .energy import LoadSchedule, MaterialModel
from .errors import ConfigError, InvalidGrid
from .fields import FACES, DeformationField, Grid, MagnetizationField, State, project_to_sphere
from .optimizer import OptimizerConfig
from .quasistatic import AuditSettings, Partition
from .strayfield import StrayField

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_mat3 = {"type": "array", "items": _vec3, "minItems": 3, "maxItems": 3}
_poly = {"type": "array", "items": _vec3, "minItems": 1}
_face_list = {"type": "array", "items": {"enum": list(FACES)}, "uniqueItems": True}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dims"],
            "properties": {
                "box": {"type": "array", "minItems": 3, "maxItems": 3,
                        "items": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}},
                "dims": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 3, "maxItems": 3},
                "dirichlet_faces": _face_list,
                "neumann_faces": _face_list,
            },
        },
        "material": {
            "type": "object",
            "additionalProperties": False,
            "properties": {k: {"type": "number"} for k in ("a", "p", "s", "b", "alpha", "mu0", "kappa")},
        },
        "loads": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"T": {"type": "number", "exclusiveMinimum": 0}, "f": _poly, "g": _poly, "h": _poly},
        },
        "boundary": {
            "type": "object",
            "description": "Dirichlet datum; either one map for all of Gamma or one map per face",
            "additionalProperties": False,
            "properties": {
                "type": {"enum": ["identity", "affine"]},
                "A": _mat3,
                "b": _vec3,
                "pin_mu": {"type": "boolean", "description": "hold mu fixed at the Dirichlet nodes"},
                "faces": {"type": "object", "additionalProperties": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"type": {"enum": ["identity", "affine"]}, "A": _mat3, "b": _vec3}}},
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mu": {"type": "object", "additionalProperties": False, "required": ["type"],
                       "properties": {"type": {"enum": ["constant", "helix", "random"]},
                                      "value": _vec3, "omega": {"type": "number"},
                                      "amplitude": {"type": "number", "minimum": 0}}},
                "y": {"enum": ["boundary", "ball_map", "wrap_3pi"]},
                "y_noise": {"type": "number", "minimum": 0},
            },
        },
        "eulerian": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "enabled": {"type": "boolean"},
                "shape": {"type": "integer", "minimum": 8},
                "padding": {"type": "number", "exclusiveMinimum": 1},
                "route": {"enum": ["deposit", "raster"]},
                "fft_padding": {"type": "integer", "minimum": 1},
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {f.name: {"type": ["number", "boolean"]} for f in dc_fields(OptimizerConfig)},
        },
        "partition": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"N": {"type": "integer", "minimum": 1}, "T": {"type": "number", "exclusiveMinimum": 0},
                           "times": {"type": "array", "items": {"type": "number"}, "minItems": 2}},
        },
        "audit": {
            "type": "object",
            "additionalProperties": False,
            "properties": {f.name: {"type": "number"} for f in dc_fields(AuditSettings)},
        },
        "time": {"type": "number"},
        "output": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
    },
}


@dataclass
class RunConfig:
    raw: dict
    text: str
    grid: Grid
    material: MaterialModel
    loads: LoadSchedule
    optimizer: OptimizerConfig
    stray: object
    partition: Partition
    audit: AuditSettings
    seed: int
    time: float
    output: str

    def initial_state(self):
        return build_initial_state(self)

    @property
    def mu_fixed(self):
        """Node mask of pinned magnetization, or ``None``."""
        return self.grid.dirichlet_mask if self.raw.get("boundary", {}).get("pin_mu", False) else None


def _field(path):
    return ".".join(str(p) for p in path) or "<root>"


def parse_config(text):
    """Parse and validate configuration text; raises :class:`ConfigError`."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}",
                          field=f"line {exc.lineno}") from None
    if not isinstance(raw, dict):
        raise ConfigError("the configuration must be a JSON object")
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(e.message, field=_field(e.absolute_path))
    return _build(raw, text)


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from None
    return parse_config(text)


def _build(raw, text):
    gspec = raw.get("grid", {})
    dims = tuple(gspec.get("dims", (4, 4, 4)))
    box = tuple(tuple(b) for b in gspec.get("box", ((0.0, 1.0),) * 3))
    dirichlet = gspec.get("dirichlet_faces", ["x-"])
    if len(dirichlet) == 0:
        raise ConfigError("the Dirichlet part Gamma of the boundary must have positive area; "
                          "list at least one face", field="grid.dirichlet_faces")
    neumann = gspec.get("neumann_faces", [])
    if set(neumann) & set(dirichlet):
        raise ConfigError("a face cannot be both Dirichlet and Neumann", field="grid.neumann_faces")
    try:
        grid = Grid(box, dims, frozenset(dirichlet), frozenset(neumann))
    except (InvalidGrid, ValueError) as exc:
        raise ConfigError(str(exc), field="grid") from None

    try:
        material = MaterialModel(**raw.get("material", {}))
    except ValueError as exc:
        raise ConfigError(str(exc), field="material") from None

    lspec = dict(raw.get("loads", {}))
    try:
        loads = LoadSchedule(**{k: tuple(tuple(r) for r in v) if k != "T" else v for k, v in lspec.items()})
    except ValueError as exc:
        raise ConfigError(str(exc), field="loads") from None

    ospec = dict(raw.get("optimizer", {}))
    try:
        optimizer = OptimizerConfig(**ospec)
    except TypeError as exc:
        raise ConfigError(str(exc), field="optimizer") from None

    espec = raw.get("eulerian", {})
    stray = None
    if espec.get("enabled", False):
        stray = StrayField(shape=espec.get("shape", 24), padding=espec.get("padding", 2.0),
                           route=espec.get("route", "deposit"), fft_padding=espec.get("fft_padding", 2))

    pspec = raw.get("partition", {})
    try:
        if "times" in pspec:
            partition = Partition(tuple(pspec["times"]))
        else:
            partition = Partition.uniform(pspec.get("N", 8), pspec.get("T", loads.T))
    except ValueError as exc:
        raise ConfigError(str(exc), field="partition") from None
    if abs(partition.T - loads.T) > 1e-12 * loads.T:
        raise ConfigError(f"partition ends at {partition.T} but the load horizon is T = {loads.T}",
                          field="partition")

    aspec = raw.get("audit", {})
    audit = AuditSettings(**{k: (int(v) if k in ("n_competitors", "max_restarts", "seed", "rotations") else v)
                             for k, v in aspec.items()})
    seed = int(raw.get("seed", 0))
    if "seed" not in aspec:
        audit = AuditSettings(**{**audit.__dict__, "seed": seed})
    return RunConfig(raw, text, grid, material, loads, optimizer, stray, partition, audit, seed,
                     float(raw.get("time", 0.0)), raw.get("output", "out"))


def _affine(spec):
    if spec.get("type", "identity") == "identity":
        return np.eye(3), np.zeros(3)
    return np.asarray(spec.get("A", np.eye(3)), float), np.asarray(spec.get("b", np.zeros(3)), float)


def boundary_maps(cfg):
    """Affine map ``(A, b)`` per Dirichlet face."""
    bspec = cfg.raw.get("boundary", {})
    faces = bspec.get("faces", {})
    unknown = set(faces) - set(cfg.grid.dirichlet_faces)
    if unknown:
        raise ConfigError(f"boundary data given for non-Dirichlet faces {sorted(unknown)}", field="boundary.faces")
    default = _affine(bspec)
    return {f: _affine(faces[f]) if f in faces else default for f in sorted(cfg.grid.dirichlet_faces)}


def build_initial_state(cfg):
    """Initial state: deformation from the boundary datum, magnetization from ``initial.mu``."""
    from . import fixtures

    g = cfg.grid
    ispec = cfg.raw.get("initial", {})
    rng = np.random.default_rng(cfg.seed)
    ykind = ispec.get("y", "boundary")
    X = g.node_coords
    if ykind == "boundary":
        maps = boundary_maps(cfg)
        distinct = {(A.tobytes(), b.tobytes()) for A, b in maps.values()}
        if len(distinct) == 1:
            A, b = next(iter(maps.values()))
            Y = X @ A.T + b
        else:
            Y = X.copy()
            for f, (A, b) in maps.items():
                m = g.face_node_mask(f)
                Y[m] = X[m] @ A.T + b
    elif ykind == "ball_map":
        Y = fixtures.ball_map_deformation(X)
    else:
        Y = fixtures.wrap_deformation(1.5)(X)
    noise = ispec.get("y_noise", 0.0)
    if noise > 0:
        Y = Y + noise * np.min(g.spacing) * rng.standard_normal(Y.shape) * (~g.dirichlet_mask[..., None])
    mspec = ispec.get("mu", {"type": "constant", "value": [0.0, 0.0, 1.0]})
    kind = mspec["type"]
    if kind == "constant":
        v = np.asarray(mspec.get("value", (0.0, 0.0, 1.0)), float)
        if np.linalg.norm(v) == 0:
            raise ConfigError("the initial magnetization must be non-zero", field="initial.mu.value")
        mu = MagnetizationField.constant(g, v)
    elif kind == "helix":
        mu = MagnetizationField.from_function(g, fixtures.helix_field(mspec.get("omega", 1.0)))
    else:
        base = np.asarray(mspec.get("value", (0.0, 0.0, 1.0)), float)
        raw = base + mspec.get("amplitude", 1.0) * rng.standard_normal(g.node_shape + (3,))
        mu = project_to_sphere(g, raw)
    return State(DeformationField(g, Y), mu)
