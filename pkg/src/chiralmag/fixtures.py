"""Canonical states and sources with their expected values.

Every fixture is resolution-parametric and deterministic.  Expected values
carry a provenance tag: ``DERIVED`` (independent closed-form or numerical
oracle), ``PAPER`` (stated in the source text) or ``TRIVIAL``.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownFixture
from .fields import DeformationField, Grid, MagnetizationField, State
from .strayfield import EulerianGrid, FaceSource


@dataclass(frozen=True)
class Expected:
    value: object
    tag: str
    note: str = ""


@dataclass
class Fixture:
    name: str
    params: dict
    obj: object
    expected: dict = field(default_factory=dict)


def identity(n=4, mu=(0.0, 0.0, 1.0)):
    g = Grid.cube(n)
    return State(DeformationField.identity(g), MagnetizationField.constant(g, mu))


def helix_field(omega):
    def fn(x):
        z = x[..., 2]
        return np.stack([np.cos(omega * z), np.sin(omega * z), np.zeros_like(z)], axis=-1)
    return fn


def helix(n=12, omega=1.0, lo=0.0, hi=1.0):
    """Identity deformation with ``mu = (cos w x3, sin w x3, 0)``."""
    g = Grid.cube(n, lo, hi)
    return State(DeformationField.identity(g), MagnetizationField.from_function(g, helix_field(omega)))


def ball_map_deformation(x):
    return np.stack([x[..., 0], x[..., 1], np.abs(x[..., 0]) * x[..., 2]], axis=-1)


def ball_map_cofactor(x):
    """Closed-form cofactor of the map away from the plane ``x1 = 0``."""
    x = np.asarray(x, dtype=float)
    a = np.abs(x[..., 0])
    C = np.zeros(x.shape[:-1] + (3, 3))
    C[..., 0, 0] = a
    C[..., 0, 2] = -x[..., 0] * x[..., 2] / a
    C[..., 1, 1] = a
    C[..., 2, 2] = 1.0
    return C


def ball_map(n=16):
    """``y(x) = (x1, x2, |x1| x3)`` on ``(-1, 1)^3``.

    ``n`` must be even so that the plane ``x1 = 0`` is a face plane; the map
    is then bilinear on each cell and its interpolant is exact.
    """
    if n % 2:
        raise ValueError("ball_map needs an even resolution so that x1 = 0 is a grid plane")
    g = Grid(((-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)), (n, n, n))
    return State(DeformationField.from_function(g, ball_map_deformation), MagnetizationField.constant(g, (0, 0, 1)))


def in_wedges(xi):
    """Membership in ``V+ u V-``: ``0 < |xi1| < 1``, ``|xi2| < 1``, ``|xi3| < |xi1|``."""
    xi = np.asarray(xi, dtype=float)
    a = np.abs(xi[..., 0])
    return (a > 0) & (a < 1) & (np.abs(xi[..., 1]) < 1) & (np.abs(xi[..., 2]) < a)


def wrap_deformation(turns=1.5):
    def fn(x):
        r = 1.0 + x[..., 0]
        th = 2.0 * np.pi * turns * x[..., 1]
        return np.stack([r * np.cos(th), r * np.sin(th), x[..., 2]], axis=-1)
    return fn


def wrap_3pi(n=16):
    """Unit cube rolled through an angle of 3 pi around the x3 axis.

    ``int det = 3 pi * 3/2`` while the image is an annulus of area ``3 pi``.
    """
    g = Grid.cube(n)
    return State(DeformationField.from_function(g, wrap_deformation(1.5)), MagnetizationField.constant(g, (0, 0, 1)))


def ball_face_source(egrid, m, radius=1.0, supersample=6):
    """Partial-volume face source of a uniformly magnetized ball centred at 0.

    Component ``d`` of the source lives on the ``d``-faces; each face value is
    ``m_d`` times the ball's volume fraction in the face-centred cell,
    estimated with ``supersample^3`` samples.
    """
    m = np.asarray(m, dtype=float)
    c = egrid.centers()
    h = egrid.spacing
    off = (np.arange(supersample) + 0.5) / supersample - 0.5
    vals = np.zeros(egrid.shape + (3,))
    for d in range(3):
        p = c + 0.5 * h * np.eye(3)[d]
        frac = np.zeros(egrid.shape)
        for a in off:
            for b in off:
                for e in off:
                    frac += np.linalg.norm(p + h * np.array([a, b, e]), axis=-1) < radius
        vals[..., d] = frac / supersample ** 3 * m[d]
    return FaceSource(vals)


def uniform_ball(n=64, m=(0.3, 0.5, 0.8), half_width=2.0):
    m = np.asarray(m, dtype=float)
    m = m / np.linalg.norm(m)
    eg = EulerianGrid((-half_width,) * 3, (half_width,) * 3, n)
    return eg, ball_face_source(eg, m), m


BUILDERS = {
    "identity": identity,
    "helix": helix,
    "ball_map": ball_map,
    "wrap_3pi": wrap_3pi,
    "uniform_ball": uniform_ball,
}

EXPECTED = {
    "identity": {"exchange": Expected(0.0, "TRIVIAL"), "dmi": Expected(0.0, "TRIVIAL"),
                 "elastic": Expected(0.5, "TRIVIAL", "only the offset b |e3|^2 on the unit cube with default b")},
    "helix": {"omega_star": Expected(1.0, "DERIVED", "kappa / (2 alpha)"),
              "exchange_plus_dmi_per_volume": Expected(-1.0, "DERIVED", "alpha w^2 - kappa w at w = w*")},
    "ball_map": {"degree_in_wedges": Expected(1, "PAPER"), "components": Expected(2, "PAPER"),
                 "cofactor": Expected("ball_map_cofactor", "PAPER")},
    "wrap_3pi": {"lhs": Expected(4.5 * np.pi, "DERIVED"), "rhs": Expected(3.0 * np.pi, "DERIVED")},
    "uniform_ball": {"energy": Expected(4.0 * np.pi / 18.0, "DERIVED", "mu0 |B| / 6"),
                     "interior_field": Expected("m / 3", "DERIVED")},
}


def build(name, **params):
    """Build a fixture by name; returns :class:`Fixture`."""
    try:
        fn = BUILDERS[name]
    except KeyError:
        raise UnknownFixture(f"unknown fixture {name!r}; known: {', '.join(sorted(BUILDERS))}") from None
    return Fixture(name, dict(params), fn(**params), EXPECTED.get(name, {}))
