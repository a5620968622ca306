"""Learning-control toolkit for vibration-free flexible beam handling.

A serial arm carries a flexible beam approximated as a spring-damper
pendulum on the end-effector frame. The package simulates a richer truth
plant, learns the lumped parameters plus an equivalent output disturbance
from repeated executions, and plans point-to-point joint trajectories that
leave no residual vibration.
"""

__version__ = "0.1.0"

from .config import RunConfig
from .dynamics import (BeamGeometry, BeamParams, SetupState, analytic_init_params,
                       pendulum_equilibrium)
from .estimation import EstimationConfig, LearnedModel
from .ilc import IlcConfig, IlcRecord, run_ilc, vibration_metric
from .kinematics import (FrameMotion, FramePose, KinematicChain, builtin_chain,
                         forward_kinematics, frame_motion, geometric_jacobian,
                         orientation_error)
from .ocp import OcpWeights, PlannedMotion, TaskDefinition, solve_ptp_ocp
from .plant import ExperimentResult, PlantConfig, TwoSegmentParams, run_experiment
from .trajectory import Trajectory

__all__ = [
    "BeamGeometry", "BeamParams", "EstimationConfig", "ExperimentResult",
    "FrameMotion", "FramePose", "IlcConfig", "IlcRecord", "KinematicChain",
    "LearnedModel", "OcpWeights", "PlannedMotion", "PlantConfig", "RunConfig",
    "SetupState", "TaskDefinition", "Trajectory", "TwoSegmentParams",
    "analytic_init_params", "builtin_chain", "forward_kinematics",
    "frame_motion", "geometric_jacobian", "orientation_error",
    "pendulum_equilibrium", "run_experiment", "run_ilc", "solve_ptp_ocp",
    "vibration_metric",
]
