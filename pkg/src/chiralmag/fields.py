"""Reference-box discretization: grid, nodal fields, quadrature.

Deformation ``y`` and pullback magnetization ``mu = m o y`` are nodal
fields on one structured hexahedral grid of the reference box.  Both are
interpolated trilinearly per cell; the magnetization is renormalized
pointwise after interpolation.  Integrals use 2x2x2 Gauss quadrature.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidGrid, ZeroVectorNode, NonPositiveDeterminant
from .kinematics import det, inverse_gradient

FACES = ("x-", "x+", "y-", "y+", "z-", "z+")

# corner offsets of a cell, bit order dx + 2*dy + 4*dz
CORNERS = np.array([[(a >> 0) & 1, (a >> 1) & 1, (a >> 2) & 1] for a in range(8)])

_g = 0.5 / np.sqrt(3.0)
GAUSS_LOCAL = np.array([[0.5 + _g * (2 * c[0] - 1), 0.5 + _g * (2 * c[1] - 1), 0.5 + _g * (2 * c[2] - 1)]
                        for c in CORNERS])


def shape_functions(local):
    """Trilinear shape functions and their local derivatives.

    Returns ``N`` with shape ``(..., 8)`` and ``dN`` with shape ``(..., 8, 3)``.
    """
    u = np.asarray(local, dtype=float)
    w1 = np.where(CORNERS == 1, u[..., None, :], 1.0 - u[..., None, :])  # (..., 8, 3)
    N = w1[..., 0] * w1[..., 1] * w1[..., 2]
    sgn = np.where(CORNERS == 1, 1.0, -1.0)
    dN = np.stack([
        sgn[:, 0] * w1[..., 1] * w1[..., 2],
        w1[..., 0] * sgn[:, 1] * w1[..., 2],
        w1[..., 0] * w1[..., 1] * sgn[:, 2],
    ], axis=-1)
    return N, dN


def _parse_faces(faces):
    faces = frozenset(faces)
    unknown = faces - set(FACES)
    if unknown:
        raise InvalidGrid(f"unknown face name(s) {sorted(unknown)}; expected a subset of {FACES}")
    return faces


@dataclass(frozen=True, eq=False)
class Grid:
    """Axis-aligned reference box split into ``dims`` hexahedral cells.

    ``dirichlet_faces`` carry the prescribed deformation; ``neumann_faces``
    carry surface loads.  Face names are ``x-, x+, y-, y+, z-, z+``.
    """

    box: tuple
    dims: tuple
    dirichlet_faces: frozenset = field(default_factory=lambda: frozenset({"x-"}))
    neumann_faces: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        box = tuple((float(a), float(b)) for a, b in self.box)
        dims = tuple(int(n) for n in self.dims)
        if len(box) != 3 or len(dims) != 3:
            raise InvalidGrid("box and dims must have three entries")
        if any(n < 1 for n in dims):
            raise InvalidGrid(f"cell counts must be >= 1, got {dims}")
        if any(not b > a for a, b in box):
            raise InvalidGrid(f"box sides must have positive length, got {box}")
        gamma = _parse_faces(self.dirichlet_faces)
        sigma = _parse_faces(self.neumann_faces)
        if not gamma:
            raise InvalidGrid(
                "dirichlet_faces is empty: the clamped part of the boundary must have positive area")
        if gamma & sigma:
            raise InvalidGrid(f"faces {sorted(gamma & sigma)} are both Dirichlet and Neumann")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "dirichlet_faces", gamma)
        object.__setattr__(self, "neumann_faces", sigma)

    @classmethod
    def cube(cls, n, lo=0.0, hi=1.0, **kw):
        return cls(((lo, hi),) * 3, (n, n, n), **kw)

    # geometry -----------------------------------------------------------
    @cached_property
    def lower(self):
        return np.array([a for a, _ in self.box])

    @cached_property
    def upper(self):
        return np.array([b for _, b in self.box])

    @cached_property
    def lengths(self):
        return self.upper - self.lower

    @cached_property
    def spacing(self):
        return self.lengths / np.array(self.dims)

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def qp_weight(self):
        return self.cell_volume / 8.0

    @property
    def node_shape(self):
        return tuple(n + 1 for n in self.dims)

    @property
    def n_nodes(self):
        return int(np.prod(self.node_shape))

    @property
    def n_cells(self):
        return int(np.prod(self.dims))

    @cached_property
    def node_coords(self):
        axes = [np.linspace(a, b, n + 1) for (a, b), n in zip(self.box, self.dims)]
        X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        X.flags.writeable = False
        return X

    @cached_property
    def cell_index(self):
        """``(n_cells, 3)`` integer cell coordinates in C order."""
        return np.stack(np.unravel_index(np.arange(self.n_cells), self.dims), axis=-1)

    @cached_property
    def cell_nodes(self):
        """``(n_cells, 8)`` flat node indices of each cell's corners."""
        idx = self.cell_index[:, None, :] + CORNERS[None, :, :]
        return np.ravel_multi_index((idx[..., 0], idx[..., 1], idx[..., 2]), self.node_shape)

    @cached_property
    def qp_shape(self):
        """Shape function values ``(8 qp, 8 nodes)`` at the Gauss points."""
        return shape_functions(GAUSS_LOCAL)[0]

    @cached_property
    def qp_dshape(self):
        """Physical shape function gradients ``(8 qp, 8 nodes, 3)``."""
        return shape_functions(GAUSS_LOCAL)[1] / self.spacing

    @cached_property
    def center_dshape(self):
        return shape_functions(np.full(3, 0.5))[1] / self.spacing

    def quadrature_points(self):
        """Reference coordinates ``(n_cells, 8, 3)`` of all Gauss points."""
        origin = self.lower + self.cell_index * self.spacing
        return origin[:, None, :] + GAUSS_LOCAL[None, :, :] * self.spacing

    def cell_centers(self):
        return self.lower + (self.cell_index + 0.5) * self.spacing

    def cell_of(self, cell):
        """Flat cell index; a tuple is read as ``(i, j, k)``, anything else as flat ids."""
        if isinstance(cell, tuple):
            return int(np.ravel_multi_index(tuple(int(i) for i in cell), self.dims))
        return np.asarray(cell, dtype=int)

    def to_reference(self, cell, local):
        cell = np.asarray(cell)
        return self.lower + (self.cell_index[cell] + np.asarray(local)) * self.spacing

    def locate(self, x):
        """Cell index and local coordinates of reference points ``x``."""
        x = np.asarray(x, dtype=float)
        s = (x - self.lower) / self.spacing
        ijk = np.clip(np.floor(s).astype(int), 0, np.array(self.dims) - 1)
        local = s - ijk
        flat = np.ravel_multi_index(tuple(np.moveaxis(ijk, -1, 0)), self.dims)
        return flat, local

    # boundary -----------------------------------------------------------
    def face_node_mask(self, face):
        axis, side = "xyz".index(face[0]), face[1]
        mask = np.zeros(self.node_shape, dtype=bool)
        sl = [slice(None)] * 3
        sl[axis] = -1 if side == "+" else 0
        mask[tuple(sl)] = True
        return mask

    @cached_property
    def dirichlet_mask(self):
        mask = np.zeros(self.node_shape, dtype=bool)
        for f in self.dirichlet_faces:
            mask |= self.face_node_mask(f)
        mask.flags.writeable = False
        return mask

    def face_quads(self, face):
        """Outward-oriented boundary quads ``(n, 4)`` (flat node ids) and their reference areas."""
        d = "xyz".index(face[0])
        d1, d2 = (d + 1) % 3, (d + 2) % 3
        n1, n2 = self.dims[d1], self.dims[d2]
        a, b = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
        a, b = a.ravel(), b.ravel()
        fixed = self.dims[d] if face[1] == "+" else 0
        corners = [(a, b), (a + 1, b), (a + 1, b + 1), (a, b + 1)]
        quads = []
        for ca, cb in corners:
            ijk = [None] * 3
            ijk[d] = np.full_like(ca, fixed)
            ijk[d1] = ca
            ijk[d2] = cb
            quads.append(np.ravel_multi_index(tuple(ijk), self.node_shape))
        quads = np.stack(quads, axis=-1)
        if face[1] == "-":
            quads = quads[:, ::-1]
        area = self.spacing[d1] * self.spacing[d2]
        return quads, area

    def boundary_quads(self):
        return np.concatenate([self.face_quads(f)[0] for f in FACES])

    def same_as(self, other):
        return (self.box == other.box and self.dims == other.dims
                and self.dirichlet_faces == other.dirichlet_faces
                and self.neumann_faces == other.neumann_faces)


def _frozen(a, shape):
    a = np.array(a, dtype=float)
    if a.shape != shape:
        raise ValueError(f"expected nodal array of shape {shape}, got {a.shape}")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DeformationField:
    grid: Grid
    nodes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(self.nodes, self.grid.node_shape + (3,)))

    @classmethod
    def identity(cls, grid):
        return cls(grid, grid.node_coords)

    @classmethod
    def affine(cls, grid, A, b=(0.0, 0.0, 0.0)):
        X = grid.node_coords
        return cls(grid, X @ np.asarray(A, dtype=float).T + np.asarray(b, dtype=float))

    @classmethod
    def from_function(cls, grid, fn):
        return cls(grid, fn(grid.node_coords))

    @property
    def flat(self):
        return self.nodes.reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class MagnetizationField:
    """Nodal pullback magnetization; unit length at every node unless built raw."""

    grid: Grid
    nodes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(self.nodes, self.grid.node_shape + (3,)))

    @classmethod
    def constant(cls, grid, v):
        v = np.asarray(v, dtype=float)
        return project_to_sphere(grid, np.broadcast_to(v, grid.node_shape + (3,)))

    @classmethod
    def from_function(cls, grid, fn):
        return project_to_sphere(grid, fn(grid.node_coords))

    @property
    def flat(self):
        return self.nodes.reshape(-1, 3)

    def is_unit(self, tol=1e-12):
        return bool(np.all(np.abs(np.linalg.norm(self.nodes, axis=-1) - 1.0) <= tol))


def project_to_sphere(grid, raw):
    """Scale every nodal vector to unit length (idempotent)."""
    raw = np.asarray(raw, dtype=float)
    norms = np.linalg.norm(raw, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        bad = tuple(int(i) for i in np.argwhere(norms[..., 0] == 0.0)[0])
        raise ZeroVectorNode(f"magnetization vanishes at node {bad}")
    return MagnetizationField(grid, raw / norms)


@dataclass(frozen=True, eq=False)
class State:
    y: DeformationField
    mu: MagnetizationField

    def __post_init__(self):
        if self.y.grid is not self.mu.grid and not self.y.grid.same_as(self.mu.grid):
            raise ValueError("deformation and magnetization live on different grids")

    @property
    def grid(self):
        return self.y.grid

    def replace(self, y_nodes=None, mu_nodes=None):
        y = self.y if y_nodes is None else DeformationField(self.grid, y_nodes)
        mu = self.mu if mu_nodes is None else MagnetizationField(self.grid, mu_nodes)
        return State(y, mu)

    def min_det(self):
        return float(det(nodal_gradient_at_qp(self.grid, self.y.nodes)).min())

    def check_admissible(self):
        J = det(nodal_gradient_at_qp(self.grid, self.y.nodes))
        if not np.all(J > 0):
            cell = int(np.argwhere(J <= 0)[0, 0])
            raise NonPositiveDeterminant(
                f"det grad y = {J.min():.3e} <= 0 in cell {tuple(self.grid.cell_index[cell])}", cell=cell)
        return self


# evaluation -----------------------------------------------------------------

def corner_values(grid, nodes, cells=None):
    flat = np.asarray(nodes).reshape(-1, 3)
    cn = grid.cell_nodes if cells is None else grid.cell_nodes[np.asarray(cells)]
    return flat[cn]


def nodal_values_at_qp(grid, nodes):
    """``(n_cells, 8, 3)`` interpolated values at Gauss points."""
    return grid.qp_shape @ corner_values(grid, nodes)


def nodal_gradient_at_qp(grid, nodes):
    """``(n_cells, 8, 3, 3)`` gradients ``d field_i / d x_j`` at Gauss points."""
    Y = corner_values(grid, nodes)                       # (c, a, i)
    D = grid.qp_dshape.transpose(1, 0, 2).reshape(8, -1)  # (a, q*j)
    return (np.swapaxes(Y, 1, 2) @ D).reshape(len(Y), 3, 8, 3).transpose(0, 2, 1, 3)


def evaluate(grid, nodes, cell, local):
    """Value and gradient of the trilinear interpolant at ``(cell, local)``."""
    cell = np.asarray(cell)
    N, dN = shape_functions(local)
    Y = corner_values(grid, nodes, cell)
    val = np.einsum("...a,...ai->...i", N, Y)
    grad = np.einsum("...ai,...aj->...ij", Y, dN / grid.spacing)
    return val, grad


def normalized(mu_raw, grad_raw):
    """Unit field ``n = mu/|mu|`` and its gradient ``(I - n n) grad mu / |mu|``."""
    r = np.linalg.norm(mu_raw, axis=-1)
    n = mu_raw / r[..., None]
    tang = grad_raw - n[..., :, None] * (n[..., None, :] @ grad_raw)
    return n, tang / r[..., None, None], r


def deformation_gradient(y, cell, local):
    """Exact gradient of the trilinear deformation at a local point of a cell."""
    local = np.asarray(local, dtype=float)
    if np.any(local < 0.0) or np.any(local > 1.0):
        raise ValueError("local coordinates must lie in [0, 1]^3")
    return evaluate(y.grid, y.nodes, y.grid.cell_of(cell), local)[1]


def eulerian_magnetization_gradient(q, cell, local, normalize=True):
    """``G = grad(mu) (grad y)^{-1}``: spatial gradient of m at the image point."""
    c = q.grid.cell_of(cell)
    _, F = evaluate(q.grid, q.y.nodes, c, local)
    mu, Gmu = evaluate(q.grid, q.mu.nodes, c, local)
    if normalize:
        _, Gmu, _ = normalized(mu, Gmu)
    return Gmu @ inverse_gradient(F)
