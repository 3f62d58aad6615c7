"""Magnetostatics on a padded Eulerian voxel grid.

The discretization is the staggered (face-centred) finite-volume scheme.
Component ``d`` of the source ``f`` lives on the ``+d`` face of each voxel,
the potential ``zeta`` on voxel centres.  With forward differences ``D+``
and backward differences ``D-`` the discrete equation is

    sum_d D-_d D+_d zeta = sum_d D-_d f_d,

solved by FFT on a zero-padded box (approximate free-space decay).  The
face gradient ``g = D+ zeta`` is then the orthogonal projection of ``f``
onto discrete gradients, so the weak form
``sum g . D+ phi = sum f . D+ phi`` holds to round-off for every voxel test
function ``phi`` and the energy is ``mu0/2 sum |g|^2 dV``.

A voxel-centred source (the rasterized ``chi m``) is moved to the faces by
averaging the two neighbouring voxels.  Sources can also be built directly
on the faces, see :class:`FaceSource`.

Two ways of producing the source from a state are offered:

* ``raster``: voxel centres inside the deformed body get the unit
  magnetization at their preimage (uses :mod:`chiralmag.geometry`).
* ``deposit``: every Gauss point carries the moment ``w det(grad y) n`` at its
  deformed position ``y(x_q)``; each component is spread cloud-in-cell onto
  its staggered face grid.  This is smooth in the state and differentiable,
  so the optimizer uses it.
"""
from dataclasses import dataclass

from functools import lru_cache

import numpy as np

from .errors import DegenerateGrid

MIN_VOXELS = 8


@dataclass(frozen=True)
class EulerianGrid:
    """Cell-centred voxel grid on the box ``[lower, upper]``."""

    lower: tuple
    upper: tuple
    shape: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        sh = tuple(int(n) for n in np.broadcast_to(self.shape, (3,)))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "shape", sh)
        if any(n < MIN_VOXELS for n in sh):
            raise DegenerateGrid(f"voxel counts {sh} must all be at least {MIN_VOXELS}")
        if any(not b > a for a, b in zip(lo, hi)):
            raise DegenerateGrid("eulerian box has non-positive extent")

    @classmethod
    def around(cls, points, shape=32, padding=2.0, cubic=True):
        """Box centred on the bounding box of ``points``, ``padding`` times as wide.

        With an integer ``shape`` and ``cubic=True`` the longest axis gets
        ``shape`` voxels and the others proportionally fewer (at least
        ``MIN_VOXELS``), with the box widened so that voxels are cubes.
        """
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        centre = 0.5 * (lo + hi)
        ext = padding * np.maximum(hi - lo, 1e-12)
        if cubic and np.ndim(shape) == 0:
            h = ext.max() / int(shape)
            counts = np.maximum(MIN_VOXELS, np.ceil(ext / h - 1e-9)).astype(int)
            ext = counts * h
            shape = tuple(counts)
        return cls(tuple(centre - ext / 2), tuple(centre + ext / 2), shape)

    @classmethod
    def for_state(cls, q, shape=32, padding=2.0, cubic=True):
        return cls.around(q.y.nodes, shape, padding, cubic)

    @property
    def spacing(self):
        return (np.array(self.upper) - np.array(self.lower)) / np.array(self.shape)

    @property
    def voxel_volume(self):
        return float(np.prod(self.spacing))

    @property
    def diagonal(self):
        return float(np.linalg.norm(self.spacing))

    def axes(self):
        h = self.spacing
        return [self.lower[d] + (np.arange(self.shape[d]) + 0.5) * h[d] for d in range(3)]

    def centers(self):
        """Voxel centres, shape ``(N1, N2, N3, 3)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def padded(self, factor=2):
        """Grid ``factor`` times larger per axis, sharing the lower corner."""
        h = self.spacing
        shape = tuple(int(factor * n) for n in self.shape)
        upper = tuple(np.array(self.lower) + h * np.array(shape))
        return EulerianGrid(self.lower, upper, shape)


class FaceSource:
    """Source sampled on voxel faces: component ``d`` at ``centre + h/2 e_d``."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    @classmethod
    def from_cells(cls, cells):
        """Average a voxel-centred field onto the ``+d`` faces (zero outside)."""
        cells = np.asarray(cells, dtype=float)
        out = np.empty_like(cells)
        for d in range(3):
            nxt = np.zeros_like(cells[..., d])
            sl_dst = [slice(None)] * 3
            sl_src = [slice(None)] * 3
            sl_dst[d] = slice(0, -1)
            sl_src[d] = slice(1, None)
            nxt[tuple(sl_dst)] = cells[..., d][tuple(sl_src)]
            out[..., d] = 0.5 * (cells[..., d] + nxt)
        return cls(out)

    def __add__(self, other):
        return FaceSource(self.values + other.values)


@dataclass
class StrayFieldPotential:
    """Potential on voxel centres and its face gradient, on the padded grid."""

    grid: EulerianGrid
    zeta: np.ndarray
    face_grad: np.ndarray
    source: np.ndarray

    @property
    def grad(self):
        """Voxel-centred field: mean of the two face gradients along each axis."""
        g = self.face_grad
        return np.stack([0.5 * (g[..., d] + np.roll(g[..., d], 1, axis=d)) for d in range(3)], axis=-1)

    def crop(self, shape):
        sl = tuple(slice(0, n) for n in shape)
        return self.zeta[sl], self.grad[sl]


def _thetas(shape):
    th = []
    for d, n in enumerate(shape):
        m = np.arange(n // 2 + 1) if d == 2 else np.fft.fftfreq(n, 1.0 / n)
        th.append(2.0 * np.pi * m / n)
    return np.meshgrid(*th, indexing="ij", sparse=True)


@lru_cache(maxsize=8)
def _symbols(shape, h):
    """Forward-difference symbols and the inverse Laplacian symbol (zero at k = 0)."""
    th = _thetas(shape)
    fwd = [(np.exp(1j * th[d]) - 1.0) / h[d] for d in range(3)]
    sig2 = sum((2.0 * np.sin(th[d] / 2.0) / h[d]) ** 2 for d in range(3))
    inv = np.zeros(np.broadcast(*th).shape)
    nz = sig2 > 0
    inv[nz] = -1.0 / np.broadcast_to(sig2, inv.shape)[nz]
    return fwd, inv


def _spectrum(faces, h):
    """Fourier data ``(Z, fwd)`` of the potential for a face source."""
    fwd, inv = _symbols(tuple(faces.shape[:3]), tuple(float(x) for x in h))
    div = sum(-np.conj(fwd[d]) * np.fft.rfftn(faces[..., d]) for d in range(3))
    return div * inv, fwd


def _pruned_forward(values, big):
    """``rfftn`` of ``values`` zero-padded to ``big``, skipping the zero slabs."""
    a = np.fft.rfft(values, n=big[2], axis=2)
    a = np.fft.fft(a, n=big[1], axis=1)
    return np.fft.fft(a, n=big[0], axis=0)


def _pruned_inverse(spec, big, small):
    """Inverse of :func:`_pruned_forward` restricted to the leading ``small`` block."""
    a = np.fft.ifft(spec, axis=0)[: small[0]]
    a = np.fft.ifft(a, axis=1)[:, : small[1]]
    return np.fft.irfft(a, n=big[2], axis=2)[:, :, : small[2]]


def _padded_solve(values, h, padding, need_grad):
    """Energy sum ``sum |g|^2`` and, optionally, the face gradient on the unpadded block."""
    small = values.shape[:3]
    big = tuple(int(padding * n) for n in small)
    fwd, inv = _symbols(big, tuple(float(x) for x in h))
    F = _pruned_forward(values, big)
    Z = sum(-np.conj(fwd[d]) * F[..., d] for d in range(3)) * inv
    G = [fwd[d] * Z for d in range(3)]
    c = np.full(Z.shape[2], 2.0)
    c[0] = 1.0
    if big[2] % 2 == 0:
        c[-1] = 1.0
    ssq = float(sum(np.sum(np.abs(Gd) ** 2 * c) for Gd in G) / np.prod(big))
    if not need_grad:
        return ssq, None
    g = np.stack([_pruned_inverse(Gd, big, small) for Gd in G], axis=-1)
    return ssq, g


def _project(faces, h, zeta=True):
    """Return ``(zeta or None, face gradient)`` for a face source on the solve grid."""
    shape = faces.shape[:3]
    Z, fwd = _spectrum(faces, h)
    z = np.fft.irfftn(Z, s=shape, axes=(0, 1, 2)) if zeta else None
    grad = np.stack([np.fft.irfftn(fwd[d] * Z, s=shape, axes=(0, 1, 2)) for d in range(3)], axis=-1)
    return z, grad


def _spectral_sum_sq(faces, h):
    """``sum |face gradient|^2`` by Parseval, without inverse transforms."""
    shape = faces.shape[:3]
    Z, fwd = _spectrum(faces, h)
    nz = shape[2]
    c = np.full(Z.shape[2], 2.0)
    c[0] = 1.0
    if nz % 2 == 0:
        c[-1] = 1.0
    p2 = sum(np.abs(fwd[d] * Z) ** 2 for d in range(3))
    return float(np.sum(p2 * c) / np.prod(shape))


def pad_source(source, factor=2):
    source = np.asarray(source, dtype=float)
    shape = tuple(int(factor * n) for n in source.shape[:3])
    out = np.zeros(shape + (3,))
    out[tuple(slice(0, n) for n in source.shape[:3])] = source
    return out


def solve_potential(source, egrid, padding=2, zeta=True):
    """Solve the magnetostatic equation for a source on ``egrid``.

    ``source`` is a voxel-centred array of shape ``egrid.shape + (3,)`` or a
    :class:`FaceSource`.  The potential has zero mean over the padded grid.
    """
    faces = source if isinstance(source, FaceSource) else FaceSource.from_cells(source)
    if faces.values.shape != egrid.shape + (3,):
        raise ValueError(f"source shape {faces.values.shape} does not match grid {egrid.shape}")
    big = egrid.padded(padding)
    f = pad_source(faces.values, padding)
    z, grad = _project(f, egrid.spacing, zeta)
    return StrayFieldPotential(big, z, grad, f)


def magnetostatic_energy(pot, M):
    """``mu0/2 sum |grad zeta|^2 dV`` over all faces of the padded grid."""
    return float(0.5 * M.mu0 * np.sum(pot.face_grad ** 2) * pot.grid.voxel_volume)


def forward_gradient(phi, h):
    """Periodic forward differences, i.e. the face gradient of a voxel field."""
    return np.stack([(np.roll(phi, -1, axis=d) - phi) / h[d] for d in range(3)], axis=-1)


def weak_residual(pot, phi):
    """Relative residual of ``sum grad zeta . grad phi - sum f . grad phi``.

    ``phi`` is sampled at the padded voxel centres and differentiated with
    the solver's face stencil.
    """
    g = forward_gradient(phi, pot.grid.spacing)
    lhs = np.sum(pot.face_grad * g)
    rhs = np.sum(pot.source * g)
    scale = max(np.sqrt(np.sum(pot.source ** 2) * np.sum(g ** 2)), 1e-300)
    return float(abs(lhs - rhs) / scale)


# sources -------------------------------------------------------------------

def rasterize(q, egrid, dc=None):
    """Voxel field ``chi m``: unit magnetization at the preimage of covered voxels."""
    from .geometry import deformed_configuration
    from .fields import evaluate

    if dc is None:
        dc = deformed_configuration(q, egrid)
    src = np.zeros(egrid.shape + (3,))
    cells, local = dc.preimage_cell, dc.preimage_local
    mask = dc.occupancy & (cells >= 0)
    idx = np.argwhere(mask)
    if len(idx):
        c = cells[mask]
        loc = local[mask]
        mu, _ = evaluate(q.grid, q.mu.nodes, c, loc)
        src[mask] = mu / np.linalg.norm(mu, axis=-1, keepdims=True)
    return src


def _cic(points, egrid, shift):
    """Cloud-in-cell indices, weights and weight gradients on a shifted lattice.

    Lattice sites sit at ``lower + (i + 0.5 + shift) h``.
    """
    h = egrid.spacing
    u = (points - np.array(egrid.lower)) / h - 0.5 - shift
    i0 = np.floor(u).astype(int)
    shape = np.array(egrid.shape)
    if np.any(i0 < 0) or np.any(i0 + 1 > shape - 1):
        raise ValueError("deposited moment leaves the eulerian box; enlarge the padding")
    fr = u - i0
    idx, wts, dws = [], [], []
    for bits in range(8):
        o = np.array([(bits >> d) & 1 for d in range(3)])
        f = np.where(o == 1, fr, 1.0 - fr)
        df = np.where(o == 1, 1.0, -1.0) / h
        wt = f[:, 0] * f[:, 1] * f[:, 2]
        dw = np.stack([df[0] * f[:, 1] * f[:, 2], f[:, 0] * df[1] * f[:, 2], f[:, 0] * f[:, 1] * df[2]], axis=-1)
        idx.append(np.ravel_multi_index(tuple((i0 + o).T), egrid.shape))
        wts.append(wt)
        dws.append(dw)
    return np.stack(idx, 1), np.stack(wts, 1), np.stack(dws, 1)


def _face_stencils(points, egrid):
    return [_cic(points, egrid, np.eye(3)[d] * 0.5) for d in range(3)]


def deposit(positions, moments, egrid, stencils=None):
    """Face source from point moments; component ``d`` goes to the ``d``-faces."""
    if stencils is None:
        stencils = _face_stencils(positions, egrid)
    n = int(np.prod(egrid.shape))
    comps = []
    for d, (idx, wts, _) in enumerate(stencils):
        comps.append(np.bincount(idx.ravel(), weights=(wts * moments[:, None, d]).ravel(), minlength=n))
    vals = np.stack(comps, axis=-1).reshape(egrid.shape + (3,)) / egrid.voxel_volume
    return FaceSource(vals)


def deposit_energy(positions, moments, egrid, M, padding=2, gradient=False):
    """Energy of deposited moments and its derivatives w.r.t. positions and moments.

    The energy is ``mu0/2 dV <f, P f>`` with ``P`` the orthogonal projection
    onto discrete gradients, so ``dE/df = mu0 dV g`` with ``g`` the face
    gradient of the potential.
    """
    stencils = _face_stencils(positions, egrid)
    src = deposit(positions, moments, egrid, stencils)
    ssq, g = _padded_solve(src.values, egrid.spacing, padding, gradient)
    energy = 0.5 * M.mu0 * ssq * egrid.voxel_volume
    if not gradient:
        return energy, None, None
    g = g.reshape(-1, 3)
    mbar = np.empty_like(moments)
    ybar = np.zeros_like(positions)
    for d, (idx, wts, dws) in enumerate(stencils):
        gd = g[idx, d]
        mbar[:, d] = M.mu0 * np.sum(wts * gd, axis=1)
        ybar += M.mu0 * moments[:, d, None] * np.einsum("pv,pvk->pk", gd, dws)
    return energy, ybar, mbar


class StrayField:
    """Magnetostatic term handle passed to the energy assembly.

    ``route`` is ``"deposit"`` (default, differentiable) or ``"raster"``.
    The eulerian grid is either given or built around each evaluated state;
    :meth:`bind` freezes it so that an optimization sees one discretization.
    """

    def __init__(self, shape=24, padding=2.0, route="deposit", egrid=None, fft_padding=2):
        if route not in ("deposit", "raster"):
            raise ValueError(f"unknown stray-field route {route!r}")
        self.shape = shape
        self.padding = padding
        self.route = route
        self.egrid = egrid
        self.fft_padding = fft_padding

    def bind(self, q, margin=1.5):
        """Copy with a fixed eulerian grid around ``q``, enlarged by ``margin``."""
        eg = EulerianGrid.for_state(q, self.shape, self.padding * margin)
        return StrayField(self.shape, self.padding, self.route, eg, self.fft_padding)

    def grid_for(self, q):
        return self.egrid if self.egrid is not None else EulerianGrid.for_state(q, self.shape, self.padding)

    def potential(self, q):
        eg = self.grid_for(q)
        if self.route == "raster":
            src = rasterize(q, eg)
        else:
            from .energy import QPData

            qp = QPData(q)
            w = q.grid.qp_weight
            mom = (w * qp.J[..., None] * qp.n).reshape(-1, 3)
            src = deposit(qp.positions.reshape(-1, 3), mom, eg)
        return solve_potential(src, eg, self.fft_padding)

    def energy(self, q, M):
        return magnetostatic_energy(self.potential(q), M)

    def energy_qp(self, q, qp, M, ct=None):
        """Energy given precomputed point data; adds cotangents to ``ct`` if given."""
        if self.route == "raster":
            if ct is not None:
                raise ValueError("the raster route has no gradient; use route='deposit'")
            return self.energy(q, M)
        eg = self.grid_for(q)
        w = q.grid.qp_weight
        shape = qp.n.shape
        mom = (w * qp.J[..., None] * qp.n).reshape(-1, 3)
        e, ybar, mbar = deposit_energy(qp.positions.reshape(-1, 3), mom, eg, M, self.fft_padding,
                                       gradient=ct is not None)
        if ct is not None:
            # cotangents are multiplied by the quadrature weight afterwards
            mbar = mbar.reshape(shape)
            ct["pos"] += ybar.reshape(shape) / w
            ct["n"] += qp.J[..., None] * mbar
            ct["J"] += np.einsum("...i,...i->...", mbar, qp.n)
        return e
