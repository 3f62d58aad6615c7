"""Pointwise 3x3 tensor calculus.

All functions accept stacks of matrices with shape ``(..., 3, 3)`` and
operate on the trailing two axes.
"""
import numpy as np

from .errors import NonPositiveDeterminant

# Levi-Civita symbol
LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    LEVI_CIVITA[_i, _j, _k] = 1.0
    LEVI_CIVITA[_i, _k, _j] = -1.0

# det F > DET_GATE * |F|^3 is required wherever an inverse is formed
DET_GATE = 1e-12


def det(F):
    F = np.asarray(F, dtype=float)
    return (
        F[..., 0, 0] * (F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1])
        - F[..., 0, 1] * (F[..., 1, 0] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 0])
        + F[..., 0, 2] * (F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0])
    )


def cofactor(F):
    """Cofactor matrix by explicit 2x2 minors; defined for singular F.

    ``cof F[i, j] = (-1)**(i+j) * minor(i, j)`` so that ``F @ cof(F).T == det(F) * I``.
    """
    F = np.asarray(F, dtype=float)
    C = np.empty(F.shape)
    C[..., 0, 0] = F[..., 1, 1] * F[..., 2, 2] - F[..., 1, 2] * F[..., 2, 1]
    C[..., 0, 1] = F[..., 1, 2] * F[..., 2, 0] - F[..., 1, 0] * F[..., 2, 2]
    C[..., 0, 2] = F[..., 1, 0] * F[..., 2, 1] - F[..., 1, 1] * F[..., 2, 0]
    C[..., 1, 0] = F[..., 0, 2] * F[..., 2, 1] - F[..., 0, 1] * F[..., 2, 2]
    C[..., 1, 1] = F[..., 0, 0] * F[..., 2, 2] - F[..., 0, 2] * F[..., 2, 0]
    C[..., 1, 2] = F[..., 0, 1] * F[..., 2, 0] - F[..., 0, 0] * F[..., 2, 1]
    C[..., 2, 0] = F[..., 0, 1] * F[..., 1, 2] - F[..., 0, 2] * F[..., 1, 1]
    C[..., 2, 1] = F[..., 0, 2] * F[..., 1, 0] - F[..., 0, 0] * F[..., 1, 2]
    C[..., 2, 2] = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    return C


def adjugate(F):
    return np.swapaxes(cofactor(F), -1, -2)


def frobenius(A):
    return np.sqrt(np.einsum("...ij,...ij->...", A, A))


def check_positive_det(F):
    """Return det F, raising if any matrix fails the admissibility gate."""
    F = np.asarray(F, dtype=float)
    J = det(F)
    gate = DET_GATE * frobenius(F) ** 3
    bad = ~(J > gate)
    if np.any(bad):
        idx = np.argwhere(np.atleast_1d(bad))[0]
        raise NonPositiveDeterminant(
            f"det F = {np.atleast_1d(J)[tuple(idx)]:.3e} is not positive at index {tuple(idx)}",
            cell=tuple(int(i) for i in idx),
        )
    return J


def inverse_gradient(F):
    """F^{-1} = adj F / det F for det F > 0."""
    J = check_positive_det(F)
    return adjugate(F) / J[..., None, None]


def inverse_identities(F):
    """Inverse of F together with adj(F^{-1}) and det(F^{-1}).

    The last two are returned from their closed forms ``F / det F`` and
    ``1 / det F``; callers compare them against direct evaluation.
    """
    J = check_positive_det(F)
    Finv = adjugate(F) / J[..., None, None]
    return {
        "inverse": Finv,
        "adj_of_inverse": np.asarray(F, dtype=float) / J[..., None, None],
        "det_of_inverse": 1.0 / J,
    }


def _cof_terms():
    """Bilinear terms ``sign * F[a] * F[b]`` of every cofactor entry."""
    terms = {}
    for k in range(3):
        for l in range(3):
            entry = []
            for i in range(3):
                for b in range(3):
                    for j in range(3):
                        for d in range(3):
                            s = LEVI_CIVITA[k, i, b] * LEVI_CIVITA[l, j, d]
                            if s != 0 and (i, j) < (b, d):
                                entry.append((float(s), (i, j), (b, d)))
            terms[(k, l)] = entry
    return terms


_COF_TERMS = _cof_terms()


def cofactor_vjp(F, Cbar):
    """Pull back a cotangent of cof F to a cotangent of F.

    Uses ``d(cof F)_kl / dF_ij = eps_kib eps_ljd F_bd``.
    """
    F = np.asarray(F, dtype=float)
    Cbar = np.asarray(Cbar, dtype=float)
    out = np.zeros(np.broadcast_shapes(F.shape, Cbar.shape))
    for (k, l), terms in _COF_TERMS.items():
        c = Cbar[..., k, l]
        for sign, (a, b), (d, e) in terms:
            out[..., a, b] += sign * c * F[..., d, e]
            out[..., d, e] += sign * c * F[..., a, b]
    return out


def adjugate_vjp(F, Abar):
    return cofactor_vjp(F, np.swapaxes(Abar, -1, -2))


def piola_residual(y, zeta_grad):
    """Quadrature value of the integral of cof(grad y) : grad(zeta) over the box.

    Parameters
    ----------
    y : DeformationField
    zeta_grad : callable or DeformationField-like
        Either a function mapping reference points ``(..., 3)`` to the
        gradient ``(..., 3, 3)`` of a test field vanishing on the boundary,
        or a nodal array ``(n1+1, n2+1, n3+1, 3)`` of a trilinear test field.
    """
    from .fields import nodal_gradient_at_qp

    grid = y.grid
    F = nodal_gradient_at_qp(grid, y.nodes)
    if callable(zeta_grad):
        G = zeta_grad(grid.quadrature_points())
    else:
        G = nodal_gradient_at_qp(grid, np.asarray(zeta_grad, dtype=float))
    integrand = np.einsum("cqij,cqij->cq", cofactor(F), G)
    return float(np.sum(integrand * grid.qp_weight))
