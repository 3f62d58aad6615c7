"""Invariant suites run by ``chiralmag check``.

Each suite returns a list of :class:`CheckResult`; a suite passes when every
check does.
"""
from dataclasses import dataclass

import numpy as np

from . import fixtures
from .dissipation import dissipation_distance, smoothed_dissipation
from .energy import LoadSchedule, MaterialModel, coercivity_floor, energy_terms
from .errors import ConfigError
from .fields import DeformationField, Grid, MagnetizationField, State, evaluate, project_to_sphere
from .geometry import (ciarlet_necas_check, components, deformed_configuration, inverse_jacobian_audit,
                       topological_degree)
from .kinematics import inverse_identities, piola_residual
from .optimizer import random_rotation, rotate_state
from .strayfield import EulerianGrid, StrayField, solve_potential, weak_residual


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def row(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<44s} {self.detail}"


def random_state(grid, rng, y_amp=0.05, mu_spread=1.0):
    """Random admissible state with Dirichlet nodes at the identity.

    Nodal perturbations of ``y`` are ``y_amp`` cell widths, halved until every
    quadrature determinant is positive.
    """
    free = ~grid.dirichlet_mask[..., None]
    noise = rng.standard_normal(grid.node_shape + (3,)) * free
    mu = project_to_sphere(grid, np.array([0.0, 0.0, 1.0]) + mu_spread * rng.standard_normal(grid.node_shape + (3,)))
    amp = y_amp * np.min(grid.spacing)
    while True:
        q = State(DeformationField(grid, grid.node_coords + amp * noise), mu)
        if q.min_det() > 0:
            return q
        amp *= 0.5


def _bump_test_field(grid, rng):
    """Trilinear test field vanishing on the whole boundary."""
    z = rng.standard_normal(grid.node_shape + (3,))
    z[0], z[-1] = 0, 0
    z[:, 0], z[:, -1] = 0, 0
    z[:, :, 0], z[:, :, -1] = 0, 0
    return z


def suite_kinematics(rng):
    out = []
    g = Grid.cube(5)
    y = DeformationField.from_function(
        g, lambda x: x + 0.1 * np.stack([np.sin(3 * x[..., 1]), np.cos(2 * x[..., 2]), x[..., 0] ** 2], -1))
    z = _bump_test_field(g, rng)
    res = piola_residual(y, z)
    scale = float(np.sum(np.abs(z))) * g.cell_volume
    out.append(CheckResult("piola identity (trilinear test field)", abs(res) <= 1e-10 * max(scale, 1.0),
                           f"residual {res:.2e}"))
    F = np.eye(3) + 0.3 * rng.standard_normal((20, 3, 3))
    F = F[np.linalg.det(F) > 0.1]
    ids = inverse_identities(F)
    err = float(np.max(np.abs(ids["inverse"] @ F - np.eye(3))))
    out.append(CheckResult("inverse gradient identities", err < 1e-10, f"max |F^-1 F - I| {err:.2e}"))
    return out


def suite_geometry(rng, n=16, voxels=32, samples=20):
    out = []
    q = fixtures.build("ball_map", n=n).obj
    pts = []
    while len(pts) < samples:
        xi = rng.uniform(-1, 1, 3)
        if fixtures.in_wedges(xi) and abs(abs(xi[2]) - abs(xi[0])) > 0.05 and abs(xi[0]) < 0.95 \
                and abs(xi[1]) < 0.95:
            pts.append(xi)
    deg = topological_degree(q.y, np.array(pts))
    out.append(CheckResult("ball map: degree 1 in the wedges", bool(np.all(deg == 1)), f"degrees {sorted(set(deg.tolist()))}"))
    outside = np.array([[0.5, 0.0, 0.9], [-0.3, 0.2, -0.8], [1.5, 0.0, 0.0], [0.0, 2.0, 0.0]])
    deg_out = topological_degree(q.y, outside)
    out.append(CheckResult("ball map: degree 0 outside the image", bool(np.all(deg_out == 0)),
                           f"degrees {deg_out.tolist()}"))
    cells = rng.integers(0, q.grid.n_cells, 50)
    local = rng.uniform(0.05, 0.95, (50, 3))
    from .kinematics import cofactor
    _, F = evaluate(q.grid, q.y.nodes, cells, local)
    x, _ = evaluate(q.grid, q.grid.node_coords, cells, local)
    err = float(np.max(np.abs(cofactor(F) - fixtures.ball_map_cofactor(x))))
    out.append(CheckResult("ball map: cofactor closed form", err < 1e-10, f"max error {err:.2e}"))
    eg = EulerianGrid.for_state(q, voxels)
    dc = deformed_configuration(q, eg)
    ncomp = components(dc)
    out.append(CheckResult("ball map: two components", ncomp == 2, f"{ncomp} components at {voxels} voxels"))
    w = fixtures.build("wrap_3pi", n=16).obj
    dcw = deformed_configuration(w, EulerianGrid.for_state(w, voxels))
    rep = ciarlet_necas_check(w, dcw)
    out.append(CheckResult("wrap: Ciarlet-Necas violated", (not rep.satisfied) and rep.ratio >= 1.4,
                           f"lhs {rep.lhs:.3f} rhs {rep.rhs:.3f}"))
    ident = fixtures.identity(6)
    dci = deformed_configuration(ident, EulerianGrid.for_state(ident, voxels))
    rep = ciarlet_necas_check(ident, dci)
    aud = inverse_jacobian_audit(ident, dci)
    out.append(CheckResult("identity: Ciarlet-Necas satisfied", rep.satisfied, f"ratio {rep.ratio:.4f}"))
    out.append(CheckResult("identity: inverse audit", aud.volume_error < 0.02 and aud.adjugate_error < 0.02,
                           f"volume {aud.volume_error:.2e} adjugate {aud.adjugate_error:.2e}"))
    return out


def suite_dissipation(rng, n_states=5, n_motions=20):
    g = Grid.cube(4)
    worst = 0.0
    for _ in range(n_states):
        q = random_state(g, rng)
        for _ in range(n_motions):
            qt = rotate_state(q, random_rotation(rng), rng.standard_normal(3))
            worst = max(worst, dissipation_distance(qt, q))
    ok = worst < 1e-10 * g.volume
    q = random_state(g, rng)
    r = random_state(g, rng)
    s = random_state(g, rng)
    tri = dissipation_distance(q, s) <= dissipation_distance(q, r) + dissipation_distance(r, s) + 1e-12
    return [CheckResult("rigid motions dissipate nothing", ok, f"max D {worst:.2e}"),
            CheckResult("triangle inequality", tri, "")]


def suite_energy(rng, n=50):
    g = Grid.cube(3)
    M = MaterialModel()
    worst = np.inf
    for _ in range(n):
        rep = coercivity_floor(random_state(g, rng, y_amp=0.2), M)
        worst = min(worst, rep.slack)
    return [CheckResult("coercivity floor", worst >= 0, f"min slack {worst:.3e}")]


def suite_strayfield(rng):
    eg = EulerianGrid((-1, -1, -1), (1, 1, 1), 16)
    src = np.zeros(eg.shape + (3,))
    src[4:12, 4:12, 4:12] = rng.standard_normal(3)
    pot = solve_potential(src, eg)
    X = pot.grid.centers()
    phi = np.exp(-np.sum(X ** 2, -1)) * (1 + X[..., 0])
    res = weak_residual(pot, phi)
    return [CheckResult("weak-form residual", res <= 1e-6, f"relative residual {res:.2e}")]


def fd_gradient_check(q, objective, rng, eps=1e-6):
    """Relative error of directional derivatives ``(y, mu)`` against central differences."""
    val, (gy, gm) = objective(q, True)
    errs = {}
    g = q.grid
    for name in ("y", "mu"):
        base = q.y.nodes if name == "y" else q.mu.nodes
        d = rng.standard_normal(base.shape)
        if name == "y":
            d = d * (~g.dirichlet_mask[..., None])

        def at(s):
            a = base + s * d
            qq = q.replace(y_nodes=a) if name == "y" else State(q.y, MagnetizationField(g, a))
            return objective(qq, False)[0]

        fd = (at(eps) - at(-eps)) / (2 * eps)
        an = float(np.sum((gy if name == "y" else gm) * d))
        errs[name] = abs(fd - an) / max(abs(an), abs(fd), 1e-12)
    return errs


def gradient_objectives(g, rng, M=None):
    """Named objectives ``f(q, gradient) -> (value, grads)`` covering every term."""
    M = MaterialModel() if M is None else M
    loads = LoadSchedule(f=((0.3, -0.2, 0.5),), g=((0.1, 0.4, -0.3),), h=((0.5, 1.0, -2.0), (1.0, 0.0, 1.0)))
    anchor = random_state(g, rng)
    q0 = random_state(g, rng)
    stray = StrayField(shape=16).bind(q0)
    zero = MaterialModel(a=M.a, p=M.p, s=M.s, b=0.0, alpha=M.alpha, mu0=M.mu0, kappa=0.0)

    def term(name):
        def f(q, grad):
            kw = dict(regularize=False, tv_eps=1e-3, gradient=grad)
            if name == "elastic+exchange":
                br, gr = energy_terms(0.0, q, zero, None, None, **kw)
            elif name == "dmi+b":
                br, gr = energy_terms(0.0, q, M, None, None, **kw)
            elif name == "loads":
                br, gr = energy_terms(0.4, q, M, loads, None, **kw)
            elif name == "magnetostatic":
                br, gr = energy_terms(0.0, q, M, None, stray, **kw)
            elif name == "tv":
                br, gr = energy_terms(0.0, q, M, None, None, **{**kw, "regularize": True})
            else:
                d, gd = smoothed_dissipation(anchor, q, 1e-4, grad)
                return d, gd
            return br.total, gr
        return f

    return q0, {n: term(n) for n in ("elastic+exchange", "dmi+b", "loads", "magnetostatic", "tv", "dissipation")}


def suite_gradients(rng, n=3, rtol=1e-5):
    g = Grid.cube(n, neumann_faces={"x+"})
    q, objs = gradient_objectives(g, rng)
    out = []
    for name, f in objs.items():
        errs = fd_gradient_check(q, f, rng)
        worst = max(errs.values())
        out.append(CheckResult(f"gradient: {name}", worst <= rtol, f"rel err y {errs['y']:.1e} mu {errs['mu']:.1e}"))
    return out


SUITES = {
    "kinematics": suite_kinematics,
    "geometry": suite_geometry,
    "dissipation": suite_dissipation,
    "energy": suite_energy,
    "strayfield": suite_strayfield,
    "gradients": suite_gradients,
}


def run_suite(name, seed=0):
    rng = np.random.default_rng(seed)
    if name == "all":
        return [r for key in SUITES for r in SUITES[key](rng)]
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; known: all, {', '.join(SUITES)}", field="suite")
    return SUITES[name](rng)
