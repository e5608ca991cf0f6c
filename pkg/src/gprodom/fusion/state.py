"""Robot state and trajectory I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import so3
from ..errors import InvalidInputError

# tangent-space layout of one state
ROT, VEL, POS, BA, BG = (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15))
DOF = 15
BLOCK_NAMES = ("attitude", "velocity", "position", "accel bias", "gyro bias")


def _vec3(v):
    out = np.array(v, dtype=float).reshape(3)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class RobotState:
    """Pose, velocity and IMU biases at one instant, in the world frame."""

    p: np.ndarray
    v: np.ndarray
    R: np.ndarray
    bias_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_g: np.ndarray = field(default_factory=lambda: np.zeros(3))
    timestamp_s: float = 0.0

    def __post_init__(self):
        R = np.array(self.R, dtype=float)
        if R.shape != (3, 3):
            raise InvalidInputError("R must be 3x3")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise InvalidInputError("R is not a rotation matrix")
        R.setflags(write=False)
        object.__setattr__(self, "R", R)
        for name in ("p", "v", "bias_a", "bias_g"):
            object.__setattr__(self, name, _vec3(getattr(self, name)))

    def retract(self, delta) -> "RobotState":
        """Apply a 15-dof tangent update (right-multiplied rotation, additive rest)."""
        delta = np.asarray(delta, dtype=float)
        R = self.R @ so3.exp(delta[ROT])
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-12:
            R = so3.orthonormalize(R)
        return replace(
            self,
            R=R,
            v=self.v + delta[VEL],
            p=self.p + delta[POS],
            bias_a=self.bias_a + delta[BA],
            bias_g=self.bias_g + delta[BG],
        )

    @property
    def forward(self):
        """World-frame direction of the body x axis."""
        return self.R[:, 0]


def positions(traj: Sequence[RobotState]) -> np.ndarray:
    return np.array([s.p for s in traj])


def timestamps(traj: Sequence[RobotState]) -> np.ndarray:
    return np.array([s.timestamp_s for s in traj])


TRAJECTORY_HEADER = ["timestamp_s", "px", "py", "pz", "qw", "qx", "qy", "qz"]


def write_trajectory_csv(traj: Sequence[RobotState], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for s in traj:
            q = so3.to_quaternion(s.R)
            w.writerow([repr(float(x)) for x in (s.timestamp_s, *s.p, *q)])
    return path


def read_trajectory_csv(path):
    """Load a trajectory CSV as a list of states (velocity and biases zero)."""
    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRAJECTORY_HEADER:
            raise InvalidInputError(f"{path}: unexpected header {header}")
        for lineno, row in enumerate(reader, start=2):
            try:
                t, px, py, pz, qw, qx, qy, qz = (float(x) for x in row)
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: {exc}") from None
            q = np.array([qw, qx, qy, qz])
            out.append(RobotState([px, py, pz], np.zeros(3), so3.from_quaternion(q / np.linalg.norm(q)),
                                  timestamp_s=t))
    return out
