import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from chiralmag import fixtures
from chiralmag.errors import NonPositiveDeterminant
from chiralmag.fields import DeformationField, Grid
from chiralmag.kinematics import (adjugate, cofactor, cofactor_vjp, det, inverse_gradient, inverse_identities,
                                  piola_residual)

matrices = arrays(np.float64, (3, 3), elements=st.floats(-3, 3, allow_nan=False, allow_infinity=False))


def test_cofactor_identity_is_identity():
    assert np.array_equal(cofactor(np.eye(3)), np.eye(3))


def test_cofactor_of_ball_map_gradient():
    # gradient of (x1, x2, |x1| x3) at x1 = 0.5, x3 = 0.2
    F = np.array([[1.0, 0, 0], [0, 1.0, 0], [0.2, 0, 0.5]])
    expected = np.array([[0.5, 0, -0.2], [0, 0.5, 0], [0, 0, 1.0]])
    assert np.allclose(cofactor(F), expected, atol=1e-15)


@given(matrices)
def test_adjugate_expansion(F):
    # F adj F = det F I holds for every matrix, singular or not
    scale = max(1.0, np.abs(F).max()) ** 3
    assert np.allclose(F @ adjugate(F), det(F) * np.eye(3), atol=1e-12 * scale)


@given(matrices)
def test_det_matches_numpy(F):
    assert det(F) == pytest.approx(np.linalg.det(F), abs=1e-10 * max(1.0, np.abs(F).max()) ** 3)


@given(matrices, matrices)
def test_cofactor_multiplicative(A, B):
    scale = max(1.0, np.abs(A).max(), np.abs(B).max()) ** 4
    assert np.allclose(cofactor(A @ B), cofactor(A) @ cofactor(B), atol=1e-11 * scale)


def test_inverse_identity_and_scaling():
    assert np.allclose(inverse_gradient(np.eye(3)), np.eye(3))
    ids = inverse_identities(2.0 * np.eye(3))
    assert np.allclose(ids["inverse"], 0.5 * np.eye(3))
    assert ids["det_of_inverse"] == pytest.approx(1.0 / 8.0)


def test_inverse_identities_random(rng):
    F = np.eye(3) + 0.3 * rng.standard_normal((50, 3, 3))
    F = F[det(F) > 0.2]
    ids = inverse_identities(F)
    assert np.allclose(F @ ids["inverse"], np.eye(3), atol=1e-12)
    # closed forms agree with direct evaluation on the inverse
    assert np.allclose(adjugate(ids["inverse"]), ids["adj_of_inverse"], atol=1e-12)
    assert np.allclose(det(ids["inverse"]), ids["det_of_inverse"], atol=1e-12)


def test_inverse_requires_positive_det():
    with pytest.raises(NonPositiveDeterminant):
        inverse_gradient(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(NonPositiveDeterminant):
        inverse_gradient(np.diag([1.0, 1.0, 0.0]))


def test_cofactor_vjp_matches_finite_differences(rng):
    F = rng.standard_normal((4, 3, 3))
    Cbar = rng.standard_normal((4, 3, 3))
    D = rng.standard_normal((4, 3, 3))
    eps = 1e-6
    fd = (np.sum(Cbar * cofactor(F + eps * D)) - np.sum(Cbar * cofactor(F - eps * D))) / (2 * eps)
    assert np.sum(cofactor_vjp(F, Cbar) * D) == pytest.approx(fd, rel=1e-8)


# Piola identity -----------------------------------------------------------

def _bubble_grad(x):
    """Gradient of the vector test field (b, 2b, -b) with b = prod x_i (1 - x_i)."""
    f = x * (1 - x)
    df = 1 - 2 * x
    gb = np.stack([df[..., 0] * f[..., 1] * f[..., 2], f[..., 0] * df[..., 1] * f[..., 2],
                   f[..., 0] * f[..., 1] * df[..., 2]], -1)
    return np.stack([gb, 2 * gb, -gb], axis=-2)


def test_piola_affine_vanishes(rng):
    g = Grid.cube(4)
    A = np.eye(3) + 0.2 * rng.standard_normal((3, 3))
    y = DeformationField.affine(g, A, rng.standard_normal(3))
    assert abs(piola_residual(y, _bubble_grad)) < 1e-12


def test_piola_refinement_order(rng):
    coarse = Grid.cube(2)
    nodes = coarse.node_coords + 0.08 * rng.standard_normal(coarse.node_shape + (3,))

    def coarse_map(x):
        # trilinear interpolant of the random coarse nodes, evaluated anywhere
        from chiralmag.fields import evaluate

        cells, local = coarse.locate(x.reshape(-1, 3))
        val, _ = evaluate(coarse, nodes, cells, local)
        return val.reshape(x.shape)

    res = []
    for n in (2, 4, 8):
        g = Grid.cube(n)
        res.append(abs(piola_residual(DeformationField.from_function(g, coarse_map), _bubble_grad)))
    # the integrand is piecewise polynomial: the error falls at least like h^2
    for a, b in zip(res, res[1:]):
        assert b <= max(a / 4.0, 1e-14)


def test_piola_ball_map_away_from_kink():
    q = fixtures.ball_map(8)

    def grad(x):
        # bubble supported in x1 > 0 (vanishes on x1 = 0 and on the box boundary)
        u = np.stack([x[..., 0], 0.5 * (x[..., 1] + 1), 0.5 * (x[..., 2] + 1)], -1)
        g = _bubble_grad(u)
        g[..., 1] *= 0.5
        g[..., 2] *= 0.5
        return np.where((x[..., 0] > 0)[..., None, None], g, 0.0)

    assert abs(piola_residual(q.y, grad)) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_piola_trilinear_test_fields(seed):
    rng = np.random.default_rng(seed)
    g = Grid.cube(3)
    free = np.zeros(g.node_shape, bool)
    free[1:-1, 1:-1, 1:-1] = True
    y = DeformationField(g, g.node_coords + 0.05 * rng.standard_normal(g.node_shape + (3,)) * free[..., None])
    z = rng.standard_normal(g.node_shape + (3,)) * free[..., None]
    assert abs(piola_residual(y, z)) < 1e-12
