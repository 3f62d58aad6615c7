import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chiralmag.errors import InvalidGrid, NonPositiveDeterminant, ZeroVectorNode
from chiralmag.fields import (DeformationField, Grid, MagnetizationField, State, deformation_gradient,
                              eulerian_magnetization_gradient, evaluate, nodal_gradient_at_qp, project_to_sphere)


def test_identity_gradient():
    g = Grid.cube(3)
    F = nodal_gradient_at_qp(g, DeformationField.identity(g).nodes)
    assert np.allclose(F, np.eye(3), atol=1e-14)


def test_affine_gradient(rng):
    g = Grid(((0, 2), (0, 1), (-1, 1)), (3, 2, 4))
    A = rng.standard_normal((3, 3))
    y = DeformationField.affine(g, A, (1.0, 2.0, 3.0))
    F = deformation_gradient(y, (1, 1, 2), (0.3, 0.7, 0.1))
    assert np.allclose(F, A, atol=1e-13)
    assert np.allclose(nodal_gradient_at_qp(g, y.nodes), A, atol=1e-13)


def test_gradient_matches_finite_differences(rng):
    g = Grid.cube(3)
    nodes = g.node_coords + 0.1 * rng.standard_normal(g.node_shape + (3,))
    cell, local = 13, np.array([0.3, 0.6, 0.45])
    _, F = evaluate(g, nodes, cell, local)
    eps = 1e-6
    for j in range(3):
        d = np.zeros(3)
        d[j] = eps
        hi, _ = evaluate(g, nodes, cell, local + d)
        lo, _ = evaluate(g, nodes, cell, local - d)
        assert np.allclose((hi - lo) / (2 * eps * g.spacing[j]), F[:, j], atol=1e-6)


def test_local_coordinates_outside_cell_rejected():
    g = Grid.cube(2)
    with pytest.raises(ValueError):
        deformation_gradient(DeformationField.identity(g), 0, (1.2, 0.5, 0.5))


def test_eulerian_gradient_identity_and_scaling():
    g = Grid.cube(2)
    mu = MagnetizationField.from_function(g, lambda x: np.stack([1 + 0.1 * x[..., 0], 0.2 * x[..., 1],
                                                                  np.ones(x.shape[:-1])], -1))
    q = State(DeformationField.identity(g), mu)
    _, Gmu = evaluate(g, mu.nodes, 3, np.full(3, 0.5))
    G = eulerian_magnetization_gradient(q, 3, np.full(3, 0.5), normalize=False)
    assert np.allclose(G, Gmu)
    q2 = State(DeformationField.affine(g, 2 * np.eye(3)), mu)
    assert np.allclose(eulerian_magnetization_gradient(q2, 3, np.full(3, 0.5), normalize=False), Gmu / 2)


def test_eulerian_gradient_chain_rule(rng):
    g = Grid.cube(2)
    y = DeformationField(g, g.node_coords + 0.1 * rng.standard_normal(g.node_shape + (3,)))
    mu = MagnetizationField(g, rng.standard_normal(g.node_shape + (3,)))
    q = State(y, mu)
    local = rng.uniform(0, 1, 3)
    G = eulerian_magnetization_gradient(q, 5, local, normalize=False)
    _, F = evaluate(g, y.nodes, 5, local)
    _, Gmu = evaluate(g, mu.nodes, 5, local)
    assert np.allclose(G @ F, Gmu, atol=1e-12)


def test_projection_examples():
    g = Grid.cube(1)
    raw = np.zeros(g.node_shape + (3,))
    raw[...] = (0.0, 0.0, 2.0)
    assert np.allclose(project_to_sphere(g, raw).nodes, (0, 0, 1))
    unit = MagnetizationField.constant(g, (0.6, 0.8, 0.0))
    assert np.array_equal(project_to_sphere(g, unit.nodes).nodes, unit.nodes)
    raw[0, 0, 0] = 0.0
    with pytest.raises(ZeroVectorNode):
        project_to_sphere(g, raw)


@settings(max_examples=30)
@given(st.integers(0, 2 ** 32 - 1))
def test_projection_gives_unit_norms(seed):
    g = Grid.cube(2)
    raw = np.random.default_rng(seed).standard_normal(g.node_shape + (3,))
    n = np.linalg.norm(project_to_sphere(g, raw).nodes, axis=-1)
    assert np.max(np.abs(n - 1)) <= 1e-15


@given(st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)),
       st.floats(0.1, 3.0), st.floats(0.1, 3.0))
def test_quadrature_weights(dims, lx, ly):
    g = Grid(((0, lx), (0, ly), (0, 1)), dims)
    assert g.qp_weight > 0
    assert g.qp_weight * 8 == pytest.approx(g.cell_volume)
    assert g.qp_weight * 8 * g.n_cells == pytest.approx(g.volume)


def test_grid_validation():
    with pytest.raises(InvalidGrid):
        Grid.cube(0)
    with pytest.raises(InvalidGrid):
        Grid.cube(2, dirichlet_faces=frozenset())
    with pytest.raises(InvalidGrid):
        Grid.cube(2, dirichlet_faces={"x-"}, neumann_faces={"x-"})
    with pytest.raises(InvalidGrid):
        Grid.cube(2, dirichlet_faces={"w+"})
    with pytest.raises(ValueError):
        Grid(((1, 0), (0, 1), (0, 1)), (2, 2, 2))


def test_dirichlet_mask_marks_clamped_face():
    g = Grid.cube(3)
    m = g.dirichlet_mask
    assert m[0].all() and not m[1:].any()


def test_admissibility_check():
    g = Grid.cube(2)
    q = State(DeformationField.affine(g, np.diag([1.0, 1.0, -1.0])), MagnetizationField.constant(g, (0, 0, 1)))
    with pytest.raises(NonPositiveDeterminant):
        q.check_admissible()
    assert State(DeformationField.identity(g), q.mu).check_admissible().min_det() == pytest.approx(1.0)
