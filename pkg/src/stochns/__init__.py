"""Taylor-Hood finite elements for the 2D stochastic Navier-Stokes equations with additive noise."""
__version__ = "0.1.0"

from .fem import DiscreteField, FemSystem, infsup_constant, project_div_free, project_pressure
from .mesh import Mesh, build_mesh, refine
from .noise import BrownianPath, build_noise, coarsen, eval_phiW, sample_path
from .schemes import (StepError, TimeGrid, Trajectory, TrajectoryState, recover_semidiscrete_pressure,
                      run_trajectory, step_u, step_y)
from .stopping import StoppingConfig, evaluate_stopping, stopping_decay_study

__all__ = [
    "BrownianPath", "DiscreteField", "FemSystem", "Mesh", "StepError", "StoppingConfig",
    "TimeGrid", "Trajectory", "TrajectoryState", "build_mesh", "build_noise", "coarsen",
    "eval_phiW", "evaluate_stopping", "infsup_constant", "project_div_free", "project_pressure",
    "recover_semidiscrete_pressure", "refine", "run_trajectory", "sample_path", "step_u",
    "step_y", "stopping_decay_study",
]
