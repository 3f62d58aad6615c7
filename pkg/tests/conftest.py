import numpy as np
import pytest

from chiralmag import fixtures
from chiralmag.energy import MaterialModel
from chiralmag.fields import DeformationField, Grid, MagnetizationField, State

ACCEPTANCE_LINES = []

ALL_FACES = frozenset(("x-", "x+", "y-", "y+", "z-", "z+"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def material():
    return MaterialModel()


@pytest.fixture
def identity_state():
    return fixtures.identity(4)


def smooth_state(grid, rng, amp=0.05, modes=2):
    """Smooth random state: sine perturbation of the identity, tilted helix-ish mu."""
    X = grid.node_coords
    y = X.copy()
    free = ~grid.dirichlet_mask[..., None]
    for _ in range(modes):
        k = rng.uniform(0.5, 2.0, 3) * np.pi
        ph = rng.uniform(0, 2 * np.pi, 3)
        y = y + amp * np.sin(X @ k + ph[0])[..., None] * rng.standard_normal(3) * free
    v = np.stack([np.cos(X @ rng.standard_normal(3)), np.sin(X @ rng.standard_normal(3)), np.ones(X.shape[:3])], -1)
    return State(DeformationField(grid, y), MagnetizationField(grid, v / np.linalg.norm(v, axis=-1, keepdims=True)))


def clamped_cube(n, **kw):
    return Grid.cube(n, dirichlet_faces=ALL_FACES, **kw)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
