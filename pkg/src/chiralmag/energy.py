"""Energy terms, applied loads and their nodal gradients.

Every Eulerian integral over the deformed body is evaluated in pullback
form on the reference box using ``d xi = det(grad y) dx``.  With
``n = mu/|mu|`` the interpolated unit magnetization, ``A = grad n`` its
reference gradient and ``B = A adj(F)``:

* exchange density   ``alpha |B|^2 / det F``
* DMI density        ``kappa eps_ijk B_kj n_i``   (curl m . m times det F)
* Zeeman-type work   ``h . n det F``
"""
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import NonPositiveDeterminant
from .fields import nodal_gradient_at_qp, nodal_values_at_qp, normalized, corner_values
from .kinematics import LEVI_CIVITA, det, cofactor, adjugate, frobenius, cofactor_vjp, adjugate_vjp

# det F <= |F|^3 * DET_BOUND (AM-GM on singular values)
DET_BOUND = 3.0 ** -1.5


@dataclass(frozen=True)
class MaterialModel:
    """Parameters of the stored energy and of the micromagnetic terms.

    ``W(F, l) = a(|F|^p - 3^(p/2)) + det(F)^-s + det(F)^2 - 2 + b |cof(F) l|^2``
    """

    a: float = 1.0
    p: float = 4.0
    s: float = 2.0
    b: float = 0.5
    alpha: float = 1.0
    mu0: float = 1.0
    kappa: float = 2.0

    def __post_init__(self):
        if not self.p > 3:
            raise ValueError(f"growth exponent p must exceed 3, got {self.p}")
        if not self.a > 0:
            raise ValueError("elastic stiffness a must be positive")
        if self.s < 0 or self.b < 0:
            raise ValueError("s and b must be non-negative")
        if not self.alpha > 0:
            raise ValueError("exchange constant alpha must be positive")
        if not self.mu0 > 0:
            raise ValueError("mu0 must be positive")

    @property
    def K(self):
        return self.a

    def gamma(self, h):
        h = np.asarray(h, dtype=float)
        return h ** -self.s + h ** 2 - 2.0

    def gamma_min(self):
        """Minimum of the compression barrier over h > 0."""
        if self.s == 0:
            return -1.0
        h = (self.s / 2.0) ** (1.0 / (self.s + 2.0))
        return float(self.gamma(h))


def _poly(coeffs, t, deriv=False):
    c = np.asarray(coeffs, dtype=float).reshape(-1, 3)
    if deriv:
        return sum(k * c[k] * t ** (k - 1) for k in range(1, len(c))) if len(c) > 1 else np.zeros(3)
    return sum(c[k] * t ** k for k in range(len(c)))


@dataclass(frozen=True)
class LoadSchedule:
    """Spatially uniform loads, polynomial in time.

    ``f``, ``g``, ``h`` are coefficient tables ``[[c0], [c1], ...]`` so that
    e.g. ``f(t) = sum_k c_k t^k``.  ``f`` acts on the body, ``g`` on the
    Neumann faces and ``h`` is the applied magnetic field.
    """

    f: tuple = ((0.0, 0.0, 0.0),)
    g: tuple = ((0.0, 0.0, 0.0),)
    h: tuple = ((0.0, 0.0, 0.0),)
    T: float = 1.0

    def __post_init__(self):
        for name in ("f", "g", "h"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1, 3)
            object.__setattr__(self, name, tuple(map(tuple, arr)))
        if not self.T > 0:
            raise ValueError("time horizon T must be positive")

    @classmethod
    def zero(cls, T=1.0):
        return cls(T=T)

    @classmethod
    def ramp(cls, name, start, end, T=1.0):
        """Linear ramp of one load from ``start`` at t=0 to ``end`` at t=T."""
        start, end = np.asarray(start, float), np.asarray(end, float)
        return cls(**{name: (tuple(start), tuple((end - start) / T))}, T=T)

    def body(self, t):
        return _poly(self.f, t)

    def surface(self, t):
        return _poly(self.g, t)

    def field(self, t):
        return _poly(self.h, t)

    def body_rate(self, t):
        return _poly(self.f, t, deriv=True)

    def surface_rate(self, t):
        return _poly(self.g, t, deriv=True)

    def field_rate(self, t):
        return _poly(self.h, t, deriv=True)

    @property
    def degree(self):
        return max(len(self.f), len(self.g), len(self.h)) - 1

    def is_constant(self):
        return self.degree == 0


@dataclass
class EnergyBreakdown:
    elastic: float = 0.0
    exchange: float = 0.0
    magnetostatic: float = 0.0
    dmi: float = 0.0
    regularizer: float = 0.0
    load_work: float = 0.0
    total: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.total = (self.elastic + self.exchange + self.magnetostatic + self.dmi
                      + self.regularizer - self.load_work)

    def to_dict(self):
        return {k: float(v) for k, v in asdict(self).items()}


# per-quadrature-point kinematics ------------------------------------------

class QPData:
    """Deformation and magnetization quantities at all Gauss points."""

    def __init__(self, q):
        grid = q.grid
        self.grid = grid
        self.F = nodal_gradient_at_qp(grid, q.y.nodes)
        self.J = det(self.F)
        if not np.all(self.J > 0):
            c = int(np.argwhere(self.J <= 0)[0, 0])
            raise NonPositiveDeterminant(
                f"det grad y = {self.J.min():.3e} <= 0 in cell {tuple(grid.cell_index[c])}", cell=c)
        self.cof = cofactor(self.F)
        self.adj = np.swapaxes(self.cof, -1, -2)
        self.mu = nodal_values_at_qp(grid, q.mu.nodes)
        self.Gmu = nodal_gradient_at_qp(grid, q.mu.nodes)
        self.n, self.A, self.r = normalized(self.mu, self.Gmu)
        self.B = self.A @ self.adj
        self._pos = None
        self._ynodes = q.y.nodes

    @property
    def positions(self):
        if self._pos is None:
            self._pos = nodal_values_at_qp(self.grid, self._ynodes)
        return self._pos

    def zero_cotangents(self):
        shape = self.F.shape[:2]
        return {
            "F": np.zeros(shape + (3, 3)),
            "J": np.zeros(shape),
            "adj": np.zeros(shape + (3, 3)),
            "n": np.zeros(shape + (3,)),
            "A": np.zeros(shape + (3, 3)),
            "pos": np.zeros(shape + (3,)),
        }

    def backprop(self, ct):
        """Nodal gradients ``(y, mu)`` from cotangents of per-point quantities."""
        grid = self.grid
        Fbar = ct["F"] + ct["J"][..., None, None] * self.cof + adjugate_vjp(self.F, ct["adj"])
        Abar, nbar = ct["A"], ct["n"].copy()
        n, G, r = self.n, self.Gmu, self.r
        # A = (G - n (n^T G)) / r
        nG = n[..., None, :] @ G
        Gbar = (Abar - n[..., :, None] * (n[..., None, :] @ Abar)) / r[..., None, None]
        nbar -= ((Abar @ nG[..., 0, :, None])[..., 0]
                 + (G @ (np.swapaxes(Abar, -1, -2) @ n[..., None]))[..., 0]) / r[..., None]
        rbar = -np.sum(Abar * self.A, axis=(-2, -1)) / r
        mubar = (nbar - n * np.sum(n * nbar, axis=-1, keepdims=True)) / r[..., None] + rbar[..., None] * n

        gy = _to_corners(grid, Fbar, ct["pos"])
        gm = _to_corners(grid, Gbar, mubar)
        return scatter(grid, gy), scatter(grid, gm)


def _to_corners(grid, Gbar, vbar):
    """Per-corner cotangents from gradient cotangents ``(c,q,i,j)`` and value cotangents ``(c,q,i)``."""
    c = len(Gbar)
    D = grid.qp_dshape.transpose(0, 2, 1).reshape(-1, 8)
    out = Gbar.transpose(0, 2, 1, 3).reshape(c, 3, -1) @ D  # (c, i, a)
    out += np.swapaxes(vbar, 1, 2) @ grid.qp_shape
    return np.swapaxes(out, 1, 2)


def scatter(grid, per_corner):
    """Sum ``(n_cells, 8, 3)`` corner contributions into nodal ``(*node_shape, 3)``."""
    idx = grid.cell_nodes.ravel()
    vals = per_corner.reshape(-1, 3)
    out = np.stack([np.bincount(idx, weights=vals[:, i], minlength=grid.n_nodes) for i in range(3)], axis=-1)
    return out.reshape(grid.node_shape + (3,))


# elastic -------------------------------------------------------------------

def elastic_density(F, lam, M):
    """Stored energy ``W(F, lam)`` for det F > 0 and unit ``lam``."""
    F = np.asarray(F, dtype=float)
    lam = np.asarray(lam, dtype=float)
    J = det(F)
    if np.any(~(J > 0)):
        raise NonPositiveDeterminant(f"det F = {np.min(J):.3e} <= 0")
    c = np.einsum("...ij,...j->...i", cofactor(F), lam)
    return (M.a * (frobenius(F) ** M.p - 3.0 ** (M.p / 2)) + M.gamma(J)
            + M.b * np.einsum("...i,...i->...", c, c))


def _elastic(qp, M, ct=None):
    F, J = qp.F, qp.J
    nF = frobenius(F)
    c = np.einsum("...ij,...j->...i", qp.cof, qp.n)
    dens = M.a * (nF ** M.p - 3.0 ** (M.p / 2)) + M.gamma(J) + M.b * np.einsum("...i,...i->...", c, c)
    if ct is not None:
        ct["F"] += M.a * M.p * (nF ** (M.p - 2))[..., None, None] * F
        ct["F"] += cofactor_vjp(F, 2.0 * M.b * c[..., :, None] * qp.n[..., None, :])
        ct["J"] += -M.s * J ** (-M.s - 1) + 2.0 * J
        ct["n"] += 2.0 * M.b * np.einsum("...ki,...k->...i", qp.cof, c)
    return dens


def _exchange(qp, M, ct=None):
    B2 = np.einsum("...ij,...ij->...", qp.B, qp.B)
    dens = M.alpha * B2 / qp.J
    if ct is not None:
        Bbar = 2.0 * M.alpha * qp.B / qp.J[..., None, None]
        ct["J"] += -M.alpha * B2 / qp.J ** 2
        ct["A"] += Bbar @ np.swapaxes(qp.adj, -1, -2)
        ct["adj"] += np.swapaxes(qp.A, -1, -2) @ Bbar
    return dens


def _axial(B):
    """``v_i = eps_ijk B_kj``."""
    return np.stack([B[..., 2, 1] - B[..., 1, 2], B[..., 0, 2] - B[..., 2, 0], B[..., 1, 0] - B[..., 0, 1]], axis=-1)


def _axial_adjoint(n):
    """``X_kj = eps_ijk n_i``, so that ``sum(X * B) == n . _axial(B)``."""
    X = np.zeros(n.shape + (3,))
    X[..., 2, 1], X[..., 1, 2] = n[..., 0], -n[..., 0]
    X[..., 0, 2], X[..., 2, 0] = n[..., 1], -n[..., 1]
    X[..., 1, 0], X[..., 0, 1] = n[..., 2], -n[..., 2]
    return X


def _dmi(qp, M, ct=None):
    v = _axial(qp.B)
    dens = M.kappa * np.sum(v * qp.n, axis=-1)
    if ct is not None:
        Bbar = M.kappa * _axial_adjoint(qp.n)
        ct["n"] += M.kappa * v
        ct["A"] += Bbar @ np.swapaxes(qp.adj, -1, -2)
        ct["adj"] += np.swapaxes(qp.A, -1, -2) @ Bbar
    return dens


def elastic_energy(q, M):
    qp = QPData(q)
    return float(np.sum(_elastic(qp, M)) * q.grid.qp_weight)


def exchange_energy(q, M):
    qp = QPData(q)
    return float(np.sum(_exchange(qp, M)) * q.grid.qp_weight)


def dmi_energy(q, M):
    qp = QPData(q)
    return float(np.sum(_dmi(qp, M)) * q.grid.qp_weight)


# loads ---------------------------------------------------------------------

def _neumann_quads(grid):
    out = [grid.face_quads(f) for f in sorted(grid.neumann_faces)]
    return out


def _surface_integral(grid, y_nodes):
    """Integral of y over the Neumann faces (exact for bilinear faces)."""
    flat = np.asarray(y_nodes).reshape(-1, 3)
    total = np.zeros(3)
    for quads, area in _neumann_quads(grid):
        total += flat[quads].sum(axis=(0, 1)) * area / 4.0
    return total


def _load_integrals(q, qp=None):
    """``(int y dx, int_Sigma y dH2, int n det F dx)``."""
    grid = q.grid
    w = grid.qp_weight
    if qp is None:
        qp = QPData(q)
    iy = qp.positions.sum(axis=(0, 1)) * w
    isurf = _surface_integral(grid, q.y.nodes)
    im = np.einsum("cqi,cq->i", qp.n, qp.J) * w
    return iy, isurf, im


def load_work(t, q, loads, qp=None):
    iy, isurf, im = _load_integrals(q, qp)
    return float(loads.body(t) @ iy + loads.surface(t) @ isurf + loads.field(t) @ im)


def load_power(t, q, loads, qp=None):
    """Time derivative of the total energy at fixed state: ``-d/dt work``."""
    iy, isurf, im = _load_integrals(q, qp)
    return -float(loads.body_rate(t) @ iy + loads.surface_rate(t) @ isurf + loads.field_rate(t) @ im)


def _load_gradient(t, q, qp, loads, ct):
    """Add cotangents of ``-work`` and return the surface part as nodal array."""
    f, g, h = loads.body(t), loads.surface(t), loads.field(t)
    ct["pos"] -= f  # weight applied later
    ct["n"] -= h * qp.J[..., None]
    ct["J"] -= np.einsum("cqi,i->cq", qp.n, h)
    gs = np.zeros((q.grid.n_nodes, 3))
    for quads, area in _neumann_quads(q.grid):
        np.add.at(gs, quads.ravel(), -g * area / 4.0)
    return gs.reshape(q.grid.node_shape + (3,))


# regularizer ---------------------------------------------------------------

def _cell_cofactor(y_nodes, grid):
    Y = corner_values(grid, y_nodes)
    Fc = np.einsum("cai,aj->cij", Y, grid.center_dshape)
    return Fc, cofactor(Fc)


def _tv_core(y, eps, gradient):
    grid = y.grid
    Fc, C = _cell_cofactor(y.nodes, grid)
    Cg = C.reshape(grid.dims + (3, 3))
    diffs = []
    for d in range(3):
        D = np.zeros_like(Cg)
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[d] = slice(0, -1)
        sl_hi[d] = slice(1, None)
        D[tuple(sl_lo)] = (Cg[tuple(sl_hi)] - Cg[tuple(sl_lo)]) / grid.spacing[d]
        diffs.append(D)
    sq = sum(np.einsum("...ij,...ij->...", D, D) for D in diffs)
    mag = np.sqrt(sq + eps * eps)
    V = grid.cell_volume
    value = float(np.sum(mag - eps) * V)
    if not gradient:
        return value, None
    safe = np.where(mag > 0, mag, 1.0)
    Cbar = np.zeros_like(Cg)
    for d, D in enumerate(diffs):
        coef = np.where(mag[..., None, None] > 0, D / safe[..., None, None], 0.0) * V / grid.spacing[d]
        sl_lo = [slice(None)] * 3
        sl_hi = [slice(None)] * 3
        sl_lo[d] = slice(0, -1)
        sl_hi[d] = slice(1, None)
        Cbar[tuple(sl_hi)] += coef[tuple(sl_lo)]
        Cbar[tuple(sl_lo)] -= coef[tuple(sl_lo)]
    Fbar = cofactor_vjp(Fc, Cbar.reshape(-1, 3, 3))
    per_corner = np.einsum("cij,aj->cai", Fbar, grid.center_dshape)
    return value, scatter(grid, per_corner)


def tv_regularizer(y):
    """Discrete total variation of the cell-wise cofactor field.

    Forward differences of the cell-centre values ``cof(grad y)`` along each
    axis, combined per cell in the Frobenius norm of the 3x3x3 difference
    tensor.  A jump ``[C]`` across a face contributes ``area * |[C]|``.
    """
    return _tv_core(y, 0.0, False)[0]


def tv_smoothed(y, eps, gradient=True):
    """Pseudo-Huber smoothed TV, ``sum V (sqrt(|DC|^2 + eps^2) - eps)``."""
    return _tv_core(y, eps, gradient)


# assembly ------------------------------------------------------------------

def energy_terms(t, q, M, loads=None, stray=None, *, regularize=True, tv_eps=0.0, gradient=False):
    """Breakdown of the regularized total energy and optionally its gradient.

    Returns ``(EnergyBreakdown, (grad_y, grad_mu) or None)``.  With
    ``tv_eps > 0`` the regularizer is the smoothed one; the breakdown then
    reports the smoothed value.
    """
    qp = QPData(q)
    w = q.grid.qp_weight
    ct = qp.zero_cotangents() if gradient else None
    el = float(np.sum(_elastic(qp, M, ct)) * w)
    ex = float(np.sum(_exchange(qp, M, ct)) * w)
    dm = float(np.sum(_dmi(qp, M, ct)) * w) if M.kappa != 0 else 0.0
    ms = 0.0
    if stray is not None:
        ms = stray.energy_qp(q, qp, M, ct)
    work = load_work(t, q, loads, qp) if loads is not None else 0.0
    extra = None
    if gradient and loads is not None:
        extra = _load_gradient(t, q, qp, loads, ct)
    reg, greg = 0.0, None
    if regularize:
        reg, greg = _tv_core(q.y, tv_eps, gradient)
    br = EnergyBreakdown(elastic=el, exchange=ex, magnetostatic=ms, dmi=dm, regularizer=reg, load_work=work)
    if not gradient:
        return br, None
    for key in ct:
        ct[key] *= w
    gy, gm = qp.backprop(ct)
    if extra is not None:
        gy = gy + extra
    if greg is not None:
        gy = gy + greg
    return br, (gy, gm)


def total_energy(t, q, M, loads=None, stray=None, regularize=True):
    """All terms of the (regularized) total energy at time ``t``."""
    return energy_terms(t, q, M, loads, stray, regularize=regularize)[0]


# coercivity ----------------------------------------------------------------

@dataclass
class CoercivityReport:
    C1: float
    C2: float
    C3: float
    energy: float
    bound: float
    floor_holds: bool

    @property
    def slack(self):
        return self.energy - self.bound


def coercivity_constants(M, volume):
    """Constants of the lower bound ``E >= C1 |grad y|_p^p + C2 |grad m|^2 + int gamma - C3``.

    ``C3`` also carries the elastic offset ``a 3^(p/2) |Omega|`` that the
    shift in ``a (|F|^p - 3^(p/2))`` introduces.
    """
    r = M.p / 3.0
    rp = r / (r - 1.0)
    delta = M.alpha / 2.0
    C = DET_BOUND
    K = M.K
    offset = M.a * 3.0 ** (M.p / 2) * volume
    if M.kappa == 0:
        return K, M.alpha - delta, offset
    eps = 0.5 * (r * K * delta / (C * M.kappa ** 2)) ** (1.0 / r)
    C1 = K - C * M.kappa ** 2 * eps ** r / (r * delta)
    C2 = M.alpha - delta
    C3 = C * M.kappa ** 2 / (rp * eps ** rp * delta) * volume + offset
    return C1, C2, C3


def coercivity_floor(q, M, stray=None):
    """Evaluate the coercivity lower bound on a state.

    The energy compared is the unregularized, unloaded one (magnetostatics
    included when ``stray`` is given; it is non-negative either way).
    """
    qp = QPData(q)
    w = q.grid.qp_weight
    C1, C2, C3 = coercivity_constants(M, q.grid.volume)
    E = float(np.sum(_elastic(qp, M) + _exchange(qp, M) + _dmi(qp, M)) * w)
    if stray is not None:
        E += stray.energy_qp(q, qp, M, None)
    Pp = float(np.sum(frobenius(qp.F) ** M.p) * w)
    grad_m2 = float(np.sum(np.einsum("...ij,...ij->...", qp.B, qp.B) / qp.J) * w)
    gam = float(np.sum(M.gamma(qp.J)) * w)
    bound = C1 * Pp + C2 * grad_m2 + gam - C3
    tol = 1e-12 * max(1.0, abs(E), abs(bound))
    return CoercivityReport(C1, C2, C3, E, bound, bool(E >= bound - tol))
