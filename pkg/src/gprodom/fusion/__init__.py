"""Factor-graph fusion of IMU preintegration with wheel and GPR distances."""

from .factors import Factor, distance_residual, gpr_residual, imu_residual, wheel_residual
from .graph import FusionConfig, build_graph, dead_reckon, keyframe_times
from .preintegration import GRAVITY, ImuNoise, PreintegratedImu, preintegrate
from .solver import FactorGraph, OptimizeResult, optimize, optimize_sliding
from .state import RobotState, read_trajectory_csv, write_trajectory_csv

__all__ = [
    "Factor", "FactorGraph", "FusionConfig", "GRAVITY", "ImuNoise", "OptimizeResult", "PreintegratedImu",
    "RobotState", "build_graph", "dead_reckon", "distance_residual", "gpr_residual", "imu_residual",
    "keyframe_times", "optimize", "optimize_sliding", "preintegrate", "read_trajectory_csv",
    "wheel_residual", "write_trajectory_csv",
]
