"""Large-strain magnetoelasticity with Dzyaloshinskii-Moriya interaction.

Trilinear hexahedral discretization of deformation and magnetization,
energy assembly with analytic gradients, an FFT stray-field solver,
topological-degree geometry audits, a block-coordinate optimizer and an
incremental time-stepping driver.
"""
from .errors import *  # noqa: F401,F403
from .fields import DeformationField, Grid, MagnetizationField, State, project_to_sphere
from .energy import EnergyBreakdown, LoadSchedule, MaterialModel, energy_terms, total_energy
from .dissipation import dissipation_distance, lagrangean_magnetization
from .strayfield import EulerianGrid, StrayField
from .optimizer import OptimizerConfig, minimize_incremental, minimize_static, stability_audit
from .quasistatic import Partition, Trajectory, estimate_gronwall_constants, evolve, prepare_initial

__version__ = "0.1.0"
