import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chiralmag import fixtures
from chiralmag.energy import (EnergyBreakdown, LoadSchedule, MaterialModel, coercivity_constants, coercivity_floor,
                              dmi_energy, elastic_density, elastic_energy, energy_terms, exchange_energy, load_power,
                              load_work, total_energy, tv_regularizer, tv_smoothed)
from chiralmag.fields import DeformationField, Grid, MagnetizationField, State
from chiralmag.optimizer import random_rotation, rotate_state
from chiralmag.suites import random_state

from conftest import smooth_state

M0 = MaterialModel()


# stored energy ----------------------------------------------------------------

def test_stored_energy_at_identity():
    assert elastic_density(np.eye(3), np.array([0, 0, 1.0]), M0) == pytest.approx(0.5, abs=1e-14)


def test_material_validation():
    for bad in ({"p": 3.0}, {"a": 0.0}, {"alpha": 0.0}, {"mu0": -1.0}, {"b": -0.1}):
        with pytest.raises(ValueError):
            MaterialModel(**bad)


def test_stored_energy_frame_indifferent(rng):
    for _ in range(100):
        F = np.eye(3) + 0.3 * rng.standard_normal((3, 3))
        if np.linalg.det(F) <= 0.05:
            continue
        lam = rng.standard_normal(3)
        lam /= np.linalg.norm(lam)
        R = random_rotation(rng)
        assert elastic_density(R @ F, lam, M0) == pytest.approx(elastic_density(F, lam, M0), rel=1e-12, abs=1e-12)


def test_compression_barrier_blows_up():
    t = np.geomspace(0.1, 1e-4, 40)
    F = np.zeros((len(t), 3, 3))
    F[:, 0, 0], F[:, 1, 1], F[:, 2, 2] = t, 1.0, 1.0
    W = elastic_density(F, np.array([0, 0, 1.0]), M0)
    assert np.all(np.diff(W) > 0)
    assert W[-1] > 1e7


def test_gamma_minimum():
    h = np.linspace(0.2, 3.0, 20001)
    assert M0.gamma_min() == pytest.approx(M0.gamma(h).min(), abs=1e-7)


def test_elastic_energy_examples():
    assert elastic_energy(fixtures.identity(3), M0) == pytest.approx(0.5, abs=1e-13)
    g = Grid.cube(3)
    A = np.diag([2.0, 1.0, 1.0])
    q = State(DeformationField.affine(g, A), MagnetizationField.constant(g, (0.6, 0, 0.8)))
    assert elastic_energy(q, M0) == pytest.approx(g.volume * elastic_density(A, np.array([0.6, 0, 0.8]), M0),
                                                  rel=1e-12)


def test_elastic_energy_refinement_order():
    def fn(x):
        return x + 0.05 * np.stack([np.sin(np.pi * x[..., 1]), np.cos(np.pi * x[..., 2]) * x[..., 0],
                                    np.sin(np.pi * x[..., 0] * x[..., 1])], -1)

    E = []
    for n in (4, 8, 16):
        g = Grid.cube(n)
        E.append(elastic_energy(State(DeformationField.from_function(g, fn), MagnetizationField.constant(g, (0, 0, 1))),
                                M0))
    ratio = abs(E[0] - E[1]) / abs(E[1] - E[2])
    assert np.log2(ratio) >= 1.8


# exchange and DMI ---------------------------------------------------------------

def test_constant_magnetization_has_no_exchange_or_dmi():
    q = fixtures.identity(3, mu=(0.3, 0.4, 0.5))
    assert exchange_energy(q, M0) == pytest.approx(0.0, abs=1e-14)
    assert dmi_energy(q, M0) == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("omega", [0.5, 1.0, 2.0])
def test_helix_exchange_and_dmi(omega):
    q = fixtures.helix(12, omega)
    assert exchange_energy(q, M0) == pytest.approx(omega ** 2, rel=0.01)
    assert dmi_energy(q, M0) == pytest.approx(-M0.kappa * omega, rel=0.01)


def test_dmi_is_linear_in_kappa(rng):
    q = random_state(Grid.cube(3), rng)
    assert dmi_energy(q, MaterialModel(kappa=-2.0)) == -dmi_energy(q, MaterialModel(kappa=2.0))


def test_micromagnetic_energies_invariant_under_rigid_motion(rng):
    q = smooth_state(Grid.cube(4), rng)
    qt = rotate_state(q, random_rotation(rng), rng.standard_normal(3))
    for fn in (exchange_energy, dmi_energy):
        assert fn(qt, M0) == pytest.approx(fn(q, M0), rel=1e-10, abs=1e-10)
    # b |cof F mu|^2 pairs the rotated cofactor with the rotated mu, so only b = 0 is invariant
    M = MaterialModel(b=0.0)
    assert elastic_energy(qt, M) == pytest.approx(elastic_energy(q, M), rel=1e-10)


def test_helix_minimum_over_frequency():
    M = MaterialModel(alpha=1.0, kappa=2.0)
    w = np.linspace(0.5, 1.5, 21)
    e = []
    for om in w:
        br, _ = energy_terms(0.0, fixtures.helix(12, om), M, regularize=False)
        e.append(br.exchange + br.dmi)
    e = np.array(e)
    assert np.allclose(e, M.alpha * w ** 2 - M.kappa * w, atol=0.02)
    assert w[np.argmin(e)] == pytest.approx(M.kappa / (2 * M.alpha), abs=0.05)
    assert e.min() == pytest.approx(-M.kappa ** 2 / (4 * M.alpha), rel=0.02)


# loads -------------------------------------------------------------------------

def test_zero_loads():
    q = fixtures.identity(3)
    assert load_work(0.3, q, LoadSchedule.zero()) == 0.0
    assert load_power(0.3, q, LoadSchedule.zero()) == 0.0


def test_constant_body_force_work():
    c = np.array([0.3, -1.0, 2.0])
    assert load_work(0.0, fixtures.identity(3), LoadSchedule(f=(tuple(c),))) == pytest.approx(0.5 * c.sum(), rel=1e-12)


def test_constant_field_work():
    h = np.array([0.5, 1.0, -2.0])
    mu = np.array([0.0, 0.6, 0.8])
    assert load_work(0.0, fixtures.identity(3, mu=mu), LoadSchedule(h=(tuple(h),))) == pytest.approx(h @ mu)


def test_surface_load_work():
    g = Grid.cube(3, neumann_faces={"x+"})
    q = State(DeformationField.identity(g), MagnetizationField.constant(g, (0, 0, 1)))
    # the x+ face sits at x1 = 1 with centroid (1, 1/2, 1/2)
    assert load_work(0.0, q, LoadSchedule(g=((1.0, 2.0, 4.0),))) == pytest.approx(1.0 + 1.0 + 2.0)


def test_load_power_examples(rng):
    q = random_state(Grid.cube(3, neumann_faces={"z+"}), rng)
    assert load_power(0.7, q, LoadSchedule(f=((1.0, 2.0, 3.0),), h=((0.0, 1.0, 0.0),))) == 0.0
    c = (0.2, -0.4, 1.0)
    lin = LoadSchedule(f=((0, 0, 0), c))
    assert load_power(0.4, q, lin) == pytest.approx(-load_work(0.0, q, LoadSchedule(f=(c,))), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.95))
def test_load_power_is_time_derivative_of_energy(seed, t):
    rng = np.random.default_rng(seed)
    q = random_state(Grid.cube(2, neumann_faces={"y+"}), rng)
    loads = LoadSchedule(*(tuple(map(tuple, rng.standard_normal((3, 3)))) for _ in range(3)))
    dt = 1e-5
    fd = -(load_work(t + dt, q, loads) - load_work(t - dt, q, loads)) / (2 * dt)
    assert load_power(t, q, loads) == pytest.approx(fd, rel=1e-8, abs=1e-8)


def test_schedule_helpers():
    s = LoadSchedule.ramp("h", (0, 0, 1), (0, 0, -1), T=2.0)
    assert np.allclose(s.field(1.0), 0.0)
    assert np.allclose(s.field_rate(0.3), (0, 0, -1.0))
    assert s.degree == 1 and not s.is_constant()
    with pytest.raises(ValueError):
        LoadSchedule(T=0.0)


# regularizer ----------------------------------------------------------------------

def test_tv_of_affine_map_vanishes(rng):
    g = Grid.cube(4)
    y = DeformationField.affine(g, np.eye(3) + 0.2 * rng.standard_normal((3, 3)))
    assert tv_regularizer(y) == pytest.approx(0.0, abs=1e-12)


def test_tv_of_ball_map_converges():
    tv = {n: tv_regularizer(fixtures.ball_map(n).y) for n in (16, 32)}
    # first-order convergence: Richardson extrapolation against 8 sqrt(3) + 4
    assert 2 * tv[32] - tv[16] == pytest.approx(8 * np.sqrt(3) + 4, rel=0.01)
    assert abs(tv[32] - tv[16]) <= 0.05 * tv[32]


def test_smoothed_tv_bounds(rng):
    y = random_state(Grid.cube(3), rng).y
    exact = tv_regularizer(y)
    for eps in (1e-1, 1e-2, 1e-3):
        v, _ = tv_smoothed(y, eps, gradient=False)
        assert v <= exact + 1e-14
        assert exact - v <= eps * y.grid.volume


# assembly -------------------------------------------------------------------------

def test_breakdown_total():
    br = EnergyBreakdown(elastic=1.0, exchange=2.0, magnetostatic=3.0, dmi=-4.0, regularizer=0.5, load_work=1.5)
    assert br.total == 1.0
    assert set(br.to_dict()) == {"elastic", "exchange", "magnetostatic", "dmi", "regularizer", "load_work", "total"}


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_breakdown_is_additive(seed):
    rng = np.random.default_rng(seed)
    q = random_state(Grid.cube(2), rng)
    br = total_energy(0.5, q, M0, LoadSchedule(f=((1, 0, 0),), h=((0, 1, 0),)))
    parts = br.elastic + br.exchange + br.magnetostatic + br.dmi + br.regularizer - br.load_work
    assert br.total == pytest.approx(parts, abs=1e-12 * max(1.0, abs(br.total)))


def test_unfrustrated_identity_breakdown():
    br = total_energy(0.0, fixtures.identity(4), MaterialModel(kappa=0.0))
    assert br.exchange == 0 and br.dmi == 0 and br.load_work == 0 and br.regularizer == pytest.approx(0.0, abs=1e-12)
    assert br.total == pytest.approx(br.elastic + br.magnetostatic)


# coercivity -----------------------------------------------------------------------

def test_coercivity_constants_without_dmi():
    C1, C2, C3 = coercivity_constants(MaterialModel(kappa=0.0), 1.0)
    assert C1 == MaterialModel().K
    assert C2 == pytest.approx(0.5)
    # only the offset a 3^(p/2) |Omega| that makes W vanish at the identity
    assert C3 == pytest.approx(9.0)


def test_coercivity_floor_random_states(rng):
    M = MaterialModel(alpha=1.0, kappa=2.0)
    for _ in range(100):
        assert coercivity_floor(random_state(Grid.cube(3), rng, y_amp=0.3), M).floor_holds


def test_coercivity_floor_at_helix_ground_state():
    rep = coercivity_floor(fixtures.helix(8, 1.0), MaterialModel())
    assert rep.floor_holds and rep.slack >= 0
