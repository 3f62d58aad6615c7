"""Degree, deformed configuration and invertibility audits.

The degree of ``y`` at a point off ``y(dOmega)`` is the winding number of the
image of the boundary surface: the boundary quads are mapped, split into
two triangles each, and the signed solid angles (Van Oosterom-Strackee)
they subtend are summed and divided by ``4 pi``.

A voxel grid of the deformed body stores, per voxel centre:

* ``degree``      winding number (0 outside the bounding box of the image),
* ``covering``    number of distinct reference preimages found by Newton,
* ``boundary``    True within 1.5 voxel diagonals of the mapped boundary,
* ``preimage``    one (cell, local) pair for covered voxels.
"""
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import OnBoundaryImage, NonIntegerWinding, MissingPreimage
from .fields import shape_functions, corner_values, evaluate, CORNERS
from .kinematics import det, adjugate, frobenius

BOUNDARY_BAND = 1.5      # in voxel diagonals
WINDING_RESIDUAL = 0.2
NEWTON_ITERS = 30
NEWTON_SLACK = 1e-9


def _deformation(q_or_y):
    return q_or_y.y if hasattr(q_or_y, "mu") else q_or_y


def _diam(y):
    return float(np.linalg.norm(y.grid.lengths))


# boundary surface ----------------------------------------------------------

def _face_patches(y):
    """Mapped corner positions ``(Q, 4, 3)`` of all outward boundary quads."""
    flat = y.nodes.reshape(-1, 3)
    return flat[y.grid.boundary_quads()]


def _refine_patches(P, s):
    """Split bilinear patches ``(Q, 4, 3)`` into ``s x s`` sub-patches."""
    if s == 1:
        return P
    t = np.linspace(0.0, 1.0, s + 1)
    a, b = np.meshgrid(t, t, indexing="ij")
    p00, p10, p11, p01 = (P[:, i, None, None, :] for i in range(4))
    pts = ((1 - a)[..., None] * (1 - b)[..., None] * p00 + a[..., None] * (1 - b)[..., None] * p10
           + a[..., None] * b[..., None] * p11 + (1 - a)[..., None] * b[..., None] * p01)
    sub = np.stack([pts[:, :-1, :-1], pts[:, 1:, :-1], pts[:, 1:, 1:], pts[:, :-1, 1:]], axis=3)
    return sub.reshape(-1, 4, 3)


def boundary_triangles(y, refine=1):
    """Outward-oriented triangles ``(T, 3, 3)`` of the mapped boundary."""
    P = _refine_patches(_face_patches(y), refine)
    t1 = P[:, [0, 1, 2]]
    t2 = P[:, [0, 2, 3]]
    return np.concatenate([t1, t2])


def _max_edge(P):
    e = np.concatenate([P[:, 1] - P[:, 0], P[:, 2] - P[:, 1], P[:, 3] - P[:, 2], P[:, 0] - P[:, 3]])
    return float(np.max(np.linalg.norm(e, axis=-1)))


def boundary_samples(y, spacing):
    """Points on the mapped boundary no further than ``spacing`` apart along patches."""
    P = _face_patches(y)
    s = int(min(64, max(1, np.ceil(_max_edge(P) / spacing))))
    sub = _refine_patches(P, s)
    return sub.reshape(-1, 3), s


def solid_angle_sum(points, tris, chunk=1_000_000):
    """Sum of signed solid angles of ``tris`` seen from each of ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros(len(points))
    step = max(1, chunk // max(len(tris), 1))
    A, B, C = (np.ascontiguousarray(tris[:, i, :].T) for i in range(3))   # (3, T)
    for s in range(0, len(points), step):
        p = points[s:s + step, :, None]
        a, b, c = A[None] - p, B[None] - p, C[None] - p                    # (P, 3, T)
        la = np.sqrt(np.sum(a * a, axis=1))
        lb = np.sqrt(np.sum(b * b, axis=1))
        lc = np.sqrt(np.sum(c * c, axis=1))
        num = (a[:, 0] * (b[:, 1] * c[:, 2] - b[:, 2] * c[:, 1])
               + a[:, 1] * (b[:, 2] * c[:, 0] - b[:, 0] * c[:, 2])
               + a[:, 2] * (b[:, 0] * c[:, 1] - b[:, 1] * c[:, 0]))
        den = (la * lb * lc + np.sum(a * b, axis=1) * lc + np.sum(a * c, axis=1) * lb
               + np.sum(b * c, axis=1) * la)
        out[s:s + step] = np.sum(2.0 * np.arctan2(num, den), axis=1)
    return out


def point_triangle_distance(p, tris):
    """Exact Euclidean distance from ``p`` to each triangle."""
    return np.linalg.norm(closest_points_on_triangles(p, tris) - p, axis=-1)


def closest_points_on_triangles(p, tris):
    """Closest point of each triangle to ``p`` (``p`` may be given per triangle)."""
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v = np.where(denom != 0, vb / denom, 0.0)
        w = np.where(denom != 0, vc / denom, 0.0)
        closest = a + v[:, None] * ab + w[:, None] * ac
        # edge regions
        t_ab = np.clip(np.where(d1 - d3 != 0, d1 / (d1 - d3), 0.0), 0, 1)
        t_ac = np.clip(np.where(d2 - d6 != 0, d2 / (d2 - d6), 0.0), 0, 1)
        t_bc = np.clip(np.where((d4 - d3) + (d5 - d6) != 0, (d4 - d3) / ((d4 - d3) + (d5 - d6)), 0.0), 0, 1)
    cases = [
        ((d1 <= 0) & (d2 <= 0), a),
        ((d3 >= 0) & (d4 <= d3), b),
        ((d6 >= 0) & (d5 <= d6), c),
        ((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t_ab[:, None] * ab),
        ((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t_ac[:, None] * ac),
        ((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + t_bc[:, None] * (c - b)),
    ]
    result = closest.copy()
    done = np.zeros(len(tris), dtype=bool)
    for cond, val in cases:
        sel = cond & ~done
        result[sel] = val[sel]
        done |= sel
    return result


def topological_degree(y, xi, refine=1, tol=None):
    """Integer degree of ``y`` at the point(s) ``xi``.

    Raises :class:`OnBoundaryImage` if a point lies within ``tol`` (default
    ``1e-6 diam``) of the triangulated mapped boundary and
    :class:`NonIntegerWinding` if the winding sum is not within 0.2 of an
    integer.
    """
    y = _deformation(y)
    pts = np.atleast_2d(np.asarray(xi, dtype=float))
    tris = boundary_triangles(y, refine)
    tol = 1e-6 * _diam(y) if tol is None else tol
    for p in pts:
        dist = point_triangle_distance(p, tris).min()
        if dist <= tol:
            raise OnBoundaryImage(f"point {tuple(p)} lies on the image of the boundary (distance {dist:.2e})")
    w = solid_angle_sum(pts, tris) / (4.0 * np.pi)
    deg = np.rint(w)
    bad = np.abs(w - deg) >= WINDING_RESIDUAL
    if np.any(bad):
        i = int(np.argmax(bad))
        raise NonIntegerWinding(f"winding number {w[i]:.3f} at {tuple(pts[i])} is not near an integer")
    deg = deg.astype(int)
    return int(deg[0]) if np.ndim(xi) == 1 else deg


# preimages -----------------------------------------------------------------

def _newton(Y, xi, u0, tol):
    """Damped Newton for ``sum_a N_a(u) Y_a = xi``; vectorized over pairs."""
    u = u0.copy()
    conv = np.zeros(len(u), dtype=bool)
    for _ in range(NEWTON_ITERS):
        N, dN = shape_functions(u)
        r = np.einsum("pa,pai->pi", N, Y) - xi
        conv = np.linalg.norm(r, axis=-1) < tol
        if conv.all():
            break
        J = np.einsum("pai,paj->pij", Y, dN)
        ok = np.abs(det(J)) > 1e-300
        step = np.zeros_like(u)
        step[ok] = np.linalg.solve(J[ok], r[ok][..., None])[..., 0]
        step[conv] = 0.0
        trial = u - step
        over = np.any((trial < -0.5) | (trial > 1.5), axis=-1)
        trial[over] = u[over] - 0.5 * step[over]
        u = np.clip(trial, -1.0, 2.0)
    N, _ = shape_functions(u)
    r = np.einsum("pa,pai->pi", N, Y) - xi
    conv = np.linalg.norm(r, axis=-1) < tol
    return u, conv


def find_preimages(y, points, slack=NEWTON_SLACK):
    """All (point, cell, local) triples with ``y(cell, local) = point``.

    Candidates are pruned with the bounding boxes of the mapped cells; each
    candidate pair is solved by Newton from the cell centre and, if that
    fails, from the 8 corners.
    """
    grid = y.grid
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    Yc = corner_values(grid, y.nodes)                       # (C, 8, 3)
    lo, hi = Yc.min(axis=1), Yc.max(axis=1)
    pad = 1e-9 * _diam(y)
    order = np.argsort(pts[:, 0], kind="stable")
    xs = pts[order, 0]
    pi_list, ci_list = [], []
    for c in range(grid.n_cells):
        a = np.searchsorted(xs, lo[c, 0] - pad, side="left")
        b = np.searchsorted(xs, hi[c, 0] + pad, side="right")
        if b <= a:
            continue
        cand = order[a:b]
        p = pts[cand]
        inside = np.all((p >= lo[c] - pad) & (p <= hi[c] + pad), axis=1)
        cand = cand[inside]
        if len(cand):
            pi_list.append(cand)
            ci_list.append(np.full(len(cand), c))
    if not pi_list:
        return np.zeros(0, int), np.zeros(0, int), np.zeros((0, 3))
    pidx = np.concatenate(pi_list)
    cidx = np.concatenate(ci_list)
    Y = Yc[cidx]
    xi = pts[pidx]
    tol = 1e-10 * _diam(y)
    u, conv = _newton(Y, xi, np.full((len(pidx), 3), 0.5), tol)
    for corner in CORNERS:
        todo = ~conv
        if not todo.any():
            break
        seed = np.clip(corner.astype(float), 0.05, 0.95)
        u2, c2 = _newton(Y[todo], xi[todo], np.broadcast_to(seed, (todo.sum(), 3)).copy(), tol)
        sub = np.flatnonzero(todo)
        u[sub[c2]] = u2[c2]
        conv[sub[c2]] = True
    inside = conv & np.all((u >= -slack) & (u <= 1 + slack), axis=1)
    return pidx[inside], cidx[inside], np.clip(u[inside], 0.0, 1.0)


@dataclass
class DeformedConfiguration:
    egrid: object
    degree: np.ndarray
    covering: np.ndarray
    boundary: np.ndarray
    preimage_cell: np.ndarray
    preimage_local: np.ndarray

    @property
    def interior_mask(self):
        """Voxels of the deformed configuration: positive degree, off the boundary band."""
        return (self.degree > 0) & ~self.boundary

    @property
    def covered(self):
        return self.covering >= 1

    @property
    def occupancy(self):
        """Voxels counted as occupied: the interior plus covered band voxels."""
        return self.interior_mask | (self.boundary & self.covered)

    def volume(self, mask=None):
        mask = self.occupancy if mask is None else mask
        return float(mask.sum() * self.egrid.voxel_volume)


def deformed_configuration(q, egrid, refine=None):
    """Voxel description of the deformed body on ``egrid``."""
    y = _deformation(q)
    centers = egrid.centers()
    shape = egrid.shape
    flat = centers.reshape(-1, 3)
    band = BOUNDARY_BAND * egrid.diagonal
    nodes = y.nodes.reshape(-1, 3)
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    near = np.all((flat >= lo - band) & (flat <= hi + band), axis=1)

    # boundary band
    h_min = float(np.min(egrid.spacing))
    samples, _ = boundary_samples(y, 0.25 * h_min)
    boundary = np.zeros(len(flat), dtype=bool)
    if near.any():
        dist, _ = cKDTree(samples).query(flat[near], distance_upper_bound=band)
        boundary[near] = dist < band

    # degree: constant on each connected set of off-band voxels, because the
    # segment between two adjacent off-band centres stays off y(dOmega)
    degree = np.zeros(len(flat), dtype=int)
    if refine is None:
        refine = int(min(4, max(1, np.ceil(_max_edge(_face_patches(y)) / h_min))))
    tris = boundary_triangles(y, refine)
    labels, n_lab = ndimage.label(~boundary.reshape(shape))
    labels = labels.ravel()
    inbox = np.all((flat >= lo) & (flat <= hi), axis=1)
    cand = np.flatnonzero(inbox & (labels > 0))
    cand = cand[np.argsort(labels[cand], kind="stable")]
    labs, starts, counts = np.unique(labels[cand], return_index=True, return_counts=True)
    lab_degree = np.zeros(n_lab + 1, dtype=int)
    for lab, st, cnt in zip(labs, starts, counts):
        members = cand[st:st + cnt]
        reps = members[np.unique(np.linspace(0, cnt - 1, min(3, cnt)).astype(int))]
        w = solid_angle_sum(flat[reps], tris) / (4.0 * np.pi)
        d = np.rint(w)
        if np.any(np.abs(w - d) >= WINDING_RESIDUAL) or np.any(d != d[0]):
            raise NonIntegerWinding(
                f"winding numbers {np.round(w, 3).tolist()} near {tuple(flat[reps[0]])} are not a common integer")
        lab_degree[lab] = int(d[0])
    degree = lab_degree[labels]
    degree[~inbox] = 0
    # band voxels are never used for membership; they get the rounded winding
    # of the coarse triangulation, with no integrality requirement
    band_idx = np.flatnonzero(boundary & inbox)
    if len(band_idx):
        coarse = boundary_triangles(y, 1)
        degree[band_idx] = np.rint(solid_angle_sum(flat[band_idx], coarse) / (4.0 * np.pi)).astype(int)

    # covering numbers and preimages
    pidx, cidx, loc = find_preimages(y, flat[near])
    pidx = np.flatnonzero(near)[pidx]
    covering = np.zeros(len(flat), dtype=int)
    pre_cell = np.full(len(flat), -1, dtype=int)
    pre_local = np.zeros((len(flat), 3))
    if len(pidx):
        ref = y.grid.to_reference(cidx, loc)
        key = np.round(ref / (1e-7 * _diam(y))).astype(np.int64)
        order = np.lexsort((key[:, 2], key[:, 1], key[:, 0], pidx))
        rows = np.column_stack([pidx, key])[order]
        new = np.r_[True, np.any(rows[1:] != rows[:-1], axis=1)]
        covering = np.bincount(rows[new, 0], minlength=len(flat))
        # first record per voxel: lowest cell id
        order = np.lexsort((cidx, pidx))
        pv = pidx[order]
        keep = np.r_[True, pv[1:] != pv[:-1]]
        pre_cell[pv[keep]] = cidx[order][keep]
        pre_local[pv[keep]] = loc[order][keep]
    return DeformedConfiguration(
        egrid=egrid,
        degree=degree.reshape(shape),
        covering=covering.reshape(shape),
        boundary=boundary.reshape(shape),
        preimage_cell=pre_cell.reshape(shape),
        preimage_local=pre_local.reshape(shape + (3,)),
    )


def components(dc, mask=None, connectivity=3):
    """Number of connected components of the interior mask.

    ``connectivity`` follows :func:`scipy.ndimage.generate_binary_structure`:
    3 joins voxels sharing a face, edge or corner.  Corner contacts are
    needed because the band edge is ragged at the voxel scale.
    """
    mask = dc.interior_mask if mask is None else mask
    _, n = ndimage.label(mask, structure=ndimage.generate_binary_structure(3, connectivity))
    return int(n)


# audits --------------------------------------------------------------------

@dataclass
class CiarletNecasReport:
    lhs: float
    rhs: float
    satisfied: bool

    @property
    def ratio(self):
        return self.lhs / self.rhs if self.rhs > 0 else np.inf

    def to_dict(self):
        return {"lhs": self.lhs, "rhs": self.rhs, "ratio": self.ratio, "satisfied": self.satisfied}


def image_measure(q, dc, neighbours=16):
    """Measure of ``y(Omega)`` on the voxel grid of ``dc``.

    Voxels off the boundary band count fully when covered.  A band voxel is
    cut by the image boundary; it contributes the partial volume
    ``clip(1/2 + s / w, 0, 1)`` where ``s`` is the signed distance of its
    centre to the triangulated mapped boundary (positive when covered), ``n``
    the unit normal of the nearest triangle and ``w = sum_d h_d |n_d|`` the
    width of the voxel along ``n``.  This is exact for boundaries parallel to
    a voxel face.  When the far side of the nearest face is covered as well
    (a face of one sheet lying inside another) a covered voxel counts fully.
    """
    y = _deformation(q)
    eg = dc.egrid
    full = int(np.sum(dc.covered & ~dc.boundary))
    band = np.argwhere(dc.boundary)
    if len(band) == 0:
        return float(full * eg.voxel_volume)
    h = eg.spacing
    centres = np.array(eg.lower) + (band + 0.5) * h
    # triangles no longer than a voxel, so that nearby centroids find the nearest one
    refine = int(min(8, max(1, np.ceil(_max_edge(_face_patches(y)) / float(np.min(h))))))
    tris = boundary_triangles(y, refine)
    k = min(neighbours, len(tris))
    _, idx = cKDTree(tris.mean(axis=1)).query(centres, k=k)
    idx = np.asarray(idx).reshape(len(centres), k)
    reps = np.repeat(centres, k, axis=0)
    cp = closest_points_on_triangles(reps, tris[idx.ravel()]).reshape(-1, k, 3)
    dist = np.linalg.norm(cp - centres[:, None], axis=-1)
    j = np.argmin(dist, axis=1)
    rows = np.arange(len(centres))
    best, d, foot = idx[rows, j], dist[rows, j], cp[rows, j]
    nrm = np.cross(tris[best, 1] - tris[best, 0], tris[best, 2] - tris[best, 0])
    nrm /= np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-300)
    width = np.abs(nrm) @ h
    covered = dc.covering[tuple(band.T)] >= 1
    frac = np.clip(0.5 + np.where(covered, d, -d) / width, 0.0, 1.0)
    # probe just across the nearest face from covered centres
    sel = np.flatnonzero(covered & (frac < 1.0))
    if len(sel):
        u = foot[sel] - centres[sel]
        nu = np.linalg.norm(u, axis=1, keepdims=True)
        u = np.where(nu > 1e-9 * width[sel, None], u / np.maximum(nu, 1e-300), nrm[sel])
        probe = foot[sel] + 0.5 * width[sel, None] * u
        wind = solid_angle_sum(probe, boundary_triangles(y, 1)) / (4.0 * np.pi)
        frac[sel[wind >= 0.5]] = 1.0
    return float((full + frac.sum()) * eg.voxel_volume)


def ciarlet_necas_check(q, dc, tol_rel=0.02, tol_abs=None):
    """Compare ``int det grad y`` with the measure of the image ``y(Omega)``."""
    from .fields import nodal_gradient_at_qp

    y = _deformation(q)
    J = det(nodal_gradient_at_qp(y.grid, y.nodes))
    lhs = float(np.sum(J) * y.grid.qp_weight)
    rhs = image_measure(y, dc)
    tol_abs = dc.egrid.voxel_volume if tol_abs is None else tol_abs
    return CiarletNecasReport(lhs, rhs, bool(lhs <= rhs * (1 + tol_rel) + tol_abs))


@dataclass
class InverseAuditReport:
    identity_error: float
    volume: float
    volume_reference: float
    adjugate_integral: float
    adjugate_reference: float

    @property
    def volume_error(self):
        return abs(self.volume - self.volume_reference) / self.volume_reference

    @property
    def adjugate_error(self):
        return abs(self.adjugate_integral - self.adjugate_reference) / self.adjugate_reference

    def to_dict(self):
        return {
            "identity_error": self.identity_error,
            "volume": self.volume, "volume_reference": self.volume_reference,
            "volume_error": self.volume_error,
            "adjugate_integral": self.adjugate_integral, "adjugate_reference": self.adjugate_reference,
            "adjugate_error": self.adjugate_error,
        }


def inverse_jacobian_audit(q, dc):
    """Check the inverse-map identities on covered voxels.

    (i)   ``grad y . (grad y)^-1 = I`` at each preimage,
    (ii)  ``sum dV / det grad y(preimage)``  vs  ``|Omega|``,
    (iii) ``sum |grad y| / det grad y dV``   vs  ``int |grad y| dx``
          (``adj grad(y^-1) = grad y / det grad y`` at the preimage).
    """
    from .fields import nodal_gradient_at_qp

    y = _deformation(q)
    mask = dc.occupancy
    missing = mask & (dc.preimage_cell < 0)
    if missing.any():
        i = tuple(int(v) for v in np.argwhere(missing)[0])
        raise MissingPreimage(f"voxel {i} is in the deformed configuration but has no preimage")
    sel = dc.covered
    cells = dc.preimage_cell[sel]
    loc = dc.preimage_local[sel]
    _, F = evaluate(y.grid, y.nodes, cells, loc)
    J = det(F)
    Finv = adjugate(F) / J[..., None, None]
    ident = float(np.max(np.abs(F @ Finv - np.eye(3)))) if len(J) else 0.0
    dV = dc.egrid.voxel_volume
    Fq = nodal_gradient_at_qp(y.grid, y.nodes)
    return InverseAuditReport(
        identity_error=ident,
        volume=float(np.sum(1.0 / J) * dV),
        volume_reference=y.grid.volume,
        adjugate_integral=float(np.sum(frobenius(F) / J) * dV),
        adjugate_reference=float(np.sum(frobenius(Fq)) * y.grid.qp_weight),
    )
