"""Convex-integration construction of non-unique solutions to the
continuity equation on the periodic torus.

The package builds, on a uniform lattice, the objects of the construction:
calibrated Mikado tube pairs, improved antidivergence operators, inverse
flow maps of the background velocity, the single perturbation step that
trades a defect field for a smaller one, and the outer iteration that chains
steps while tracking every remainder term.
"""

from .grid import Grid, ScalarField, VectorField, MatrixField, TimeField
from .mikado import MikadoProfile, MikadoPair, build_mikado, measure_constants
from .antidiv import std_antidiv, improved_antidiv, holder_gap, mean_osc_bound
from .flow import (
    Diffeo, inverse_flow, pullback_divfree,
    CallableVelocity, SampledVelocity, IdentityVelocity,
)
from .scheme import (
    SchemeParams, CutoffSystem, DefectTriple, PerturbationBundle,
    time_partition, defect_cutoff, choose_tau, choose_exponents,
    build_perturbation, build_defect, perturb_step,
)
from .driver import (
    Scenario, IterationSchedule, make_scenario, run_iterations, sweep,
)

__version__ = "0.1.0"

__all__ = [
    "Grid", "ScalarField", "VectorField", "MatrixField", "TimeField",
    "MikadoProfile", "MikadoPair", "build_mikado", "measure_constants",
    "std_antidiv", "improved_antidiv", "holder_gap", "mean_osc_bound",
    "Diffeo", "inverse_flow", "pullback_divfree",
    "CallableVelocity", "SampledVelocity", "IdentityVelocity",
    "SchemeParams", "CutoffSystem", "DefectTriple", "PerturbationBundle",
    "time_partition", "defect_cutoff", "choose_tau", "choose_exponents",
    "build_perturbation", "build_defect", "perturb_step",
    "Scenario", "IterationSchedule", "make_scenario", "run_iterations",
    "sweep",
    "__version__",
]
