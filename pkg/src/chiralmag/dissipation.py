"""Lagrangean magnetization and the dissipation distance built on it."""
import numpy as np

from .errors import GridMismatch
from .fields import nodal_gradient_at_qp, nodal_values_at_qp
from .kinematics import adjugate


def lagrangean_magnetization(q):
    """``Z = adj(grad y) n`` at every Gauss point, shape ``(n_cells, 8, 3)``."""
    grid = q.grid
    F = nodal_gradient_at_qp(grid, q.y.nodes)
    mu = nodal_values_at_qp(grid, q.mu.nodes)
    n = mu / np.linalg.norm(mu, axis=-1, keepdims=True)
    return np.einsum("...ij,...j->...i", adjugate(F), n)


def _check_same_grid(q, qhat):
    if not q.grid.same_as(qhat.grid):
        raise GridMismatch("states live on different grids")


def dissipation_distance(q, qhat):
    """L1 distance of the Lagrangean magnetizations, by Gauss quadrature."""
    _check_same_grid(q, qhat)
    dz = lagrangean_magnetization(q) - lagrangean_magnetization(qhat)
    return float(np.sum(np.linalg.norm(dz, axis=-1)) * q.grid.qp_weight)


def smoothed_dissipation(qhat, q, eps, gradient=True):
    """Pseudo-Huber version ``sum w (sqrt(|Z - Zhat|^2 + eps^2) - eps)``.

    The smoothed integrand is 1-Lipschitz in ``Z`` and never exceeds the exact
    one.  Returns ``(value, (grad_y, grad_mu) or None)`` with respect to ``q``.
    """
    from .energy import QPData

    _check_same_grid(q, qhat)
    qp = QPData(q)
    Zhat = lagrangean_magnetization(qhat)
    Z = np.einsum("...ij,...j->...i", qp.adj, qp.n)
    dz = Z - Zhat
    mag = np.sqrt(np.einsum("...i,...i->...", dz, dz) + eps * eps)
    w = q.grid.qp_weight
    value = float(np.sum(mag - eps) * w)
    if not gradient:
        return value, None
    ct = qp.zero_cotangents()
    Zbar = w * dz / mag[..., None]
    ct["adj"] += Zbar[..., :, None] * qp.n[..., None, :]
    ct["n"] += np.einsum("...ij,...i->...j", qp.adj, Zbar)
    return value, qp.backprop(ct)


def trajectory_variation(states, start=0, stop=None):
    """Sum of consecutive distances over ``states[start:stop+1]``."""
    if not states:
        raise ValueError("trajectory_variation needs at least one state")
    stop = len(states) - 1 if stop is None else stop
    return float(sum(dissipation_distance(states[i], states[i - 1]) for i in range(start + 1, stop + 1)))
