import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chiralmag import fixtures
from chiralmag.dissipation import (dissipation_distance, lagrangean_magnetization, smoothed_dissipation,
                                   trajectory_variation)
from chiralmag.errors import GridMismatch
from chiralmag.fields import DeformationField, Grid, MagnetizationField, State
from chiralmag.kinematics import adjugate, frobenius
from chiralmag.fields import nodal_gradient_at_qp
from chiralmag.optimizer import random_rotation, rotate_state
from chiralmag.suites import random_state


def test_lagrangean_magnetization_examples():
    q = fixtures.identity(3, mu=(0.0, 0.6, 0.8))
    assert np.allclose(lagrangean_magnetization(q), (0.0, 0.6, 0.8))
    g = Grid.cube(3)
    q2 = State(DeformationField.affine(g, 2 * np.eye(3)), q.mu)
    assert np.allclose(lagrangean_magnetization(q2), 4 * np.array([0.0, 0.6, 0.8]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_lagrangean_magnetization_norm_bound(seed):
    q = random_state(Grid.cube(2), np.random.default_rng(seed), y_amp=0.3)
    Z = lagrangean_magnetization(q)
    A = adjugate(nodal_gradient_at_qp(q.grid, q.y.nodes))
    assert np.all(np.linalg.norm(Z, axis=-1) <= frobenius(A) + 1e-12)


def test_distance_examples(rng):
    q = random_state(Grid.cube(3), rng)
    assert dissipation_distance(q, q) == 0.0
    ident = fixtures.identity(3)
    flipped = State(ident.y, MagnetizationField(ident.grid, -ident.mu.nodes))
    assert dissipation_distance(ident, flipped) == pytest.approx(2.0 * ident.grid.volume)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_rigid_motions_dissipate_nothing(seed):
    rng = np.random.default_rng(seed)
    q = random_state(Grid.cube(3), rng, y_amp=0.2)
    qt = rotate_state(q, random_rotation(rng), rng.uniform(-5, 5, 3))
    assert dissipation_distance(qt, q) < 1e-10 * q.grid.volume


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_distance_is_a_pseudometric(seed):
    rng = np.random.default_rng(seed)
    g = Grid.cube(2)
    a, b, c = (random_state(g, rng, y_amp=0.2) for _ in range(3))
    ab, bc, ac = dissipation_distance(a, b), dissipation_distance(b, c), dissipation_distance(a, c)
    assert ab == pytest.approx(dissipation_distance(b, a), rel=1e-12)
    assert ac <= ab + bc + 1e-12


def test_distance_requires_same_grid():
    with pytest.raises(GridMismatch):
        dissipation_distance(fixtures.identity(2), fixtures.identity(3))


def test_smoothed_distance_bounds(rng):
    g = Grid.cube(3)
    a, b = random_state(g, rng), random_state(g, rng)
    exact = dissipation_distance(a, b)
    for eps in (1e-2, 1e-4, 1e-6):
        v, _ = smoothed_dissipation(a, b, eps, gradient=False)
        assert v <= exact + 1e-14
        assert exact - v <= eps * 8 * g.n_cells * g.qp_weight + 1e-14


def test_variation_examples(rng):
    g = Grid.cube(2)
    s = [random_state(g, rng) for _ in range(3)]
    assert trajectory_variation(s[:1]) == 0.0
    assert trajectory_variation(s[:2]) == pytest.approx(dissipation_distance(s[0], s[1]))
    with_repeat = [s[0], s[1], s[1], s[2]]
    assert trajectory_variation(with_repeat) == pytest.approx(trajectory_variation(s))
    with pytest.raises(ValueError):
        trajectory_variation([])
