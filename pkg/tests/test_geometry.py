import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chiralmag import fixtures
from chiralmag.errors import OnBoundaryImage
from chiralmag.fields import DeformationField, Grid, MagnetizationField, State
from chiralmag.geometry import (boundary_triangles, ciarlet_necas_check, components, deformed_configuration,
                                image_measure, inverse_jacobian_audit, point_triangle_distance, topological_degree)
from chiralmag.strayfield import EulerianGrid


def test_degree_of_identity():
    q = fixtures.identity(3)
    assert topological_degree(q, (0.5, 0.5, 0.5)) == 1
    assert topological_degree(q, (1.5, 0.5, 0.5)) == 0
    assert list(topological_degree(q, [(0.2, 0.3, 0.4), (-0.1, 0.5, 0.5)])) == [1, 0]


def test_degree_on_boundary_image_raises():
    with pytest.raises(OnBoundaryImage):
        topological_degree(fixtures.identity(3), (1.0, 0.5, 0.5))


def test_degree_of_ball_map():
    q = fixtures.ball_map(8)
    assert topological_degree(q, (0.5, 0.0, 0.1)) == 1
    assert topological_degree(q, (0.5, 0.0, 0.9)) == 0
    assert topological_degree(q, (-0.5, 0.3, -0.2)) == 1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_degree_of_linear_maps(seed):
    rng = np.random.default_rng(seed)
    A = np.eye(3) + 0.4 * rng.standard_normal((3, 3))
    if abs(np.linalg.det(A)) < 0.1:
        A = np.eye(3)
    y = DeformationField.affine(Grid.cube(2), A)
    # the centre of the cube maps inside, far points map outside
    assert topological_degree(y, A @ np.full(3, 0.5)) == int(np.sign(np.linalg.det(A)))
    assert topological_degree(y, A @ np.full(3, 0.5) + 10.0 * np.abs(A).sum()) == 0


def test_point_triangle_distance_examples():
    tri = np.array([[[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]])
    assert point_triangle_distance(np.array([0.2, 0.2, 0.5]), tri)[0] == pytest.approx(0.5)
    assert point_triangle_distance(np.array([2.0, 0.0, 0.0]), tri)[0] == pytest.approx(1.0)
    assert point_triangle_distance(np.array([-1.0, -1.0, 0.0]), tri)[0] == pytest.approx(np.sqrt(2))


def test_boundary_triangles_are_closed():
    tris = boundary_triangles(fixtures.identity(2).y)
    # signed volume enclosed by an outward-oriented surface of the unit cube
    vol = np.einsum("ti,ti->t", tris[:, 0], np.cross(tris[:, 1], tris[:, 2])).sum() / 6
    assert abs(vol) == pytest.approx(1.0)


def test_identity_configuration_mask():
    q = fixtures.identity(4)
    eg = EulerianGrid((-0.5,) * 3, (1.5,) * 3, 16)
    dc = deformed_configuration(q, eg)
    inside = np.all((eg.centers() > 0) & (eg.centers() < 1), axis=-1)
    assert np.array_equal(dc.occupancy, inside)
    assert np.all(dc.covering[inside] == 1)
    assert components(dc) == 1
    assert image_measure(q, dc) == pytest.approx(1.0, rel=1e-12)
    assert ciarlet_necas_check(q, dc).satisfied


def test_ball_map_configuration():
    q = fixtures.ball_map(8)
    dc = deformed_configuration(q, EulerianGrid.for_state(q, 24, padding=1.25))
    assert components(dc) == 2
    # int det = int |x1| over (-1, 1)^3 = 4, and the map is injective off x1 = 0
    assert image_measure(q, dc) == pytest.approx(4.0, rel=0.02)
    assert ciarlet_necas_check(q, dc).satisfied


def test_affine_image_measure_converges(rng):
    A = np.eye(3) + 0.2 * rng.standard_normal((3, 3))
    g = Grid.cube(3)
    q = State(DeformationField.affine(g, A), MagnetizationField.constant(g, (0, 0, 1)))
    err = [abs(image_measure(q, deformed_configuration(q, EulerianGrid.for_state(q, v, padding=1.5)))
               / np.linalg.det(A) - 1) for v in (24, 48)]
    # the partial-volume ramp is second order in the voxel size
    assert err[1] <= err[0] / 3
    assert err[1] < 0.02


def test_wrap_violates_volume_inequality():
    q = fixtures.wrap_3pi(8)
    rep = ciarlet_necas_check(q, deformed_configuration(q, EulerianGrid.for_state(q, 32, padding=1.25)))
    assert not rep.satisfied
    assert rep.ratio > 1.3


def test_inverse_audit_identity():
    q = fixtures.identity(4)
    rep = inverse_jacobian_audit(q, deformed_configuration(q, EulerianGrid((-0.5,) * 3, (1.5,) * 3, 16)))
    assert rep.identity_error < 1e-10
    assert rep.volume_error < 1e-10
    assert rep.adjugate_error < 1e-10


def test_inverse_audit_dilation():
    g = Grid.cube(4)
    q = State(DeformationField.affine(g, 2 * np.eye(3)), MagnetizationField.constant(g, (0, 0, 1)))
    rep = inverse_jacobian_audit(q, deformed_configuration(q, EulerianGrid((-1.0,) * 3, (3.0,) * 3, 32)))
    assert rep.identity_error < 1e-10
    assert rep.volume_error < 0.01
    assert rep.adjugate_error < 0.01
