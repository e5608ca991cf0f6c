"""Residuals and analytic Jacobians of the factor types.

Jacobians are taken with respect to the 15-dof tangent update of
:meth:`RobotState.retract` (rotation perturbed on the right, everything else
additively), laid out as (attitude, velocity, position, accel bias, gyro bias).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Tuple

import numpy as np

from .. import so3
from ..errors import InvalidInputError
from .preintegration import PreintegratedImu
from .state import BA, BG, DOF, POS, ROT, VEL, RobotState

KINDS = ("imu", "gpr", "wheel", "prior", "motion")
UNARY = ("prior", "motion")
_COV_FLOOR = 1e-15


def _bias_deltas(x_i, pre):
    return x_i.bias_a - pre.bias_ref[0], x_i.bias_g - pre.bias_ref[1]


def imu_residual(x_i: RobotState, x_j: RobotState, pre: PreintegratedImu, gravity=None):
    """Stacked (rotation, velocity, position, accel-bias, gyro-bias) error, 15-vector.

    The increments are first-order corrected for the difference between the
    state's biases and the preintegration's linearisation biases.
    """
    g = pre.gravity if gravity is None else np.asarray(gravity, dtype=float)
    dt = pre.dt_total
    dba, dbg = _bias_deltas(x_i, pre)
    dR = pre.delta_R @ so3.exp(pre.J_R_bg @ dbg)
    dv = pre.delta_v + pre.J_v_ba @ dba + pre.J_v_bg @ dbg
    dp = pre.delta_p + pre.J_p_ba @ dba + pre.J_p_bg @ dbg
    Ri_t = x_i.R.T
    r = np.empty(DOF)
    r[ROT] = so3.log(dR.T @ Ri_t @ x_j.R)
    r[VEL] = Ri_t @ (x_j.v - x_i.v - g * dt) - dv
    r[POS] = Ri_t @ (x_j.p - x_i.p - x_i.v * dt - 0.5 * g * dt * dt) - dp
    r[BA] = x_j.bias_a - x_i.bias_a
    r[BG] = x_j.bias_g - x_i.bias_g
    return r


def imu_jacobians(x_i: RobotState, x_j: RobotState, pre: PreintegratedImu, gravity=None):
    """``(J_i, J_j)``, each 15x15, of :func:`imu_residual`."""
    g = pre.gravity if gravity is None else np.asarray(gravity, dtype=float)
    dt = pre.dt_total
    dba, dbg = _bias_deltas(x_i, pre)
    corr = pre.J_R_bg @ dbg
    dR = pre.delta_R @ so3.exp(corr)
    Ri_t = x_i.R.T
    r_rot = so3.log(dR.T @ Ri_t @ x_j.R)
    Jr_inv = so3.right_jacobian_inv(r_rot)
    I3 = np.eye(3)

    Ji = np.zeros((DOF, DOF))
    Jj = np.zeros((DOF, DOF))
    Ji[ROT, ROT] = -Jr_inv @ x_j.R.T @ x_i.R
    Ji[ROT, BG] = -Jr_inv @ so3.exp(r_rot).T @ so3.right_jacobian(corr) @ pre.J_R_bg
    Jj[ROT, ROT] = Jr_inv

    Ji[VEL, ROT] = so3.skew(Ri_t @ (x_j.v - x_i.v - g * dt))
    Ji[VEL, VEL] = -Ri_t
    Ji[VEL, BA] = -pre.J_v_ba
    Ji[VEL, BG] = -pre.J_v_bg
    Jj[VEL, VEL] = Ri_t

    Ji[POS, ROT] = so3.skew(Ri_t @ (x_j.p - x_i.p - x_i.v * dt - 0.5 * g * dt * dt))
    Ji[POS, VEL] = -Ri_t * dt
    Ji[POS, POS] = -Ri_t
    Ji[POS, BA] = -pre.J_p_ba
    Ji[POS, BG] = -pre.J_p_bg
    Jj[POS, POS] = Ri_t

    Ji[BA, BA] = -I3
    Jj[BA, BA] = I3
    Ji[BG, BG] = -I3
    Jj[BG, BG] = I3
    return Ji, Jj


def imu_covariance(pre: PreintegratedImu):
    """15x15 covariance: preintegration noise plus bias random walk over the interval."""
    cov = np.zeros((DOF, DOF))
    cov[:9, :9] = pre.covariance
    cov[BA, BA] = np.eye(3) * pre.noise.accel_bias_rw**2 * pre.dt_total
    cov[BG, BG] = np.eye(3) * pre.noise.gyro_bias_rw**2 * pre.dt_total
    return cov


def _direction(x_i, x_j):
    d = x_j.p - x_i.p
    n = np.linalg.norm(d)
    if n < 1e-12:
        # coincident positions: fall back to the heading of x_i
        return x_i.forward.copy(), 0.0
    return d / n, n


def distance_residual(x_i: RobotState, x_j: RobotState, z) -> float:
    """Whitened ``(|p_j - p_i| - |u|) / sigma`` for a distance measurement ``z``."""
    return (np.linalg.norm(x_j.p - x_i.p) - abs(z.u_m)) / z.sigma_m


def distance_jacobians(x_i: RobotState, x_j: RobotState, z):
    """``(J_i, J_j)``, each 1x15, of :func:`distance_residual`."""
    n, _ = _direction(x_i, x_j)
    Ji = np.zeros((1, DOF))
    Jj = np.zeros((1, DOF))
    Ji[0, POS] = -n / z.sigma_m
    Jj[0, POS] = n / z.sigma_m
    return Ji, Jj


# the GPR and wheel factors share one residual form and differ only in covariance
gpr_residual = distance_residual
wheel_residual = distance_residual


def prior_residual(x: RobotState, mean: RobotState):
    r = np.empty(DOF)
    r[ROT] = so3.log(mean.R.T @ x.R)
    r[VEL] = x.v - mean.v
    r[POS] = x.p - mean.p
    r[BA] = x.bias_a - mean.bias_a
    r[BG] = x.bias_g - mean.bias_g
    return r


def prior_jacobian(x: RobotState, mean: RobotState):
    J = np.eye(DOF)
    J[ROT, ROT] = so3.right_jacobian_inv(so3.log(mean.R.T @ x.R))
    return J


def motion_residual(x: RobotState, sigma: float):
    """Whitened body-frame lateral and vertical velocity (zero for a ground vehicle)."""
    return (x.R.T @ x.v)[1:] / sigma


def motion_jacobian(x: RobotState, sigma: float):
    """2x15 Jacobian of :func:`motion_residual`."""
    a = x.R.T @ x.v
    J = np.zeros((2, DOF))
    J[:, ROT] = so3.skew(a)[1:] / sigma
    J[:, VEL] = x.R.T[1:] / sigma
    return J


def sqrt_information(cov):
    """Upper factor ``W`` with ``W.T @ W == inv(cov)``."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    cov = 0.5 * (cov + cov.T) + _COV_FLOOR * np.eye(cov.shape[0])
    L = np.linalg.cholesky(cov)
    return np.linalg.solve(L, np.eye(cov.shape[0]))


@dataclass
class Factor:
    """One term of the least-squares objective.

    ``measurement`` is a :class:`PreintegratedImu` (imu), a distance
    measurement (gpr, wheel), a :class:`RobotState` mean (prior) or the
    velocity standard deviation in m/s (motion).
    ``covariance`` is used for imu and prior factors; distance factors carry
    their standard deviation in the measurement.
    """

    kind: str
    state_ids: Tuple[int, ...]
    measurement: Any
    covariance: Any = None
    _W: Any = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown factor kind {self.kind!r}")
        n = 1 if self.kind in UNARY else 2
        if len(self.state_ids) != n:
            raise InvalidInputError(f"{self.kind} factor connects {n} state(s)")
        if n == 2 and self.state_ids[1] != self.state_ids[0] + 1:
            raise InvalidInputError(f"{self.kind} factor must connect consecutive states")
        if self.kind == "imu" and self.covariance is None:
            self.covariance = imu_covariance(self.measurement)
        if self.kind in ("gpr", "wheel"):
            self.covariance = np.array([[self.measurement.sigma_m**2]])
        if self.kind == "motion":
            if not float(self.measurement) > 0:
                raise InvalidInputError("motion constraint sigma must be positive")
            self.covariance = np.eye(2) * float(self.measurement) ** 2
        if self.kind in ("imu", "prior"):
            self._W = sqrt_information(self.covariance)

    @property
    def dim(self):
        return {"gpr": 1, "wheel": 1, "motion": 2}.get(self.kind, DOF)

    def residual(self, states):
        """Whitened residual vector."""
        if self.kind == "prior":
            return self._W @ prior_residual(states[self.state_ids[0]], self.measurement)
        if self.kind == "motion":
            return motion_residual(states[self.state_ids[0]], self.measurement)
        x_i, x_j = states[self.state_ids[0]], states[self.state_ids[1]]
        if self.kind == "imu":
            return self._W @ imu_residual(x_i, x_j, self.measurement)
        return np.array([distance_residual(x_i, x_j, self.measurement)])

    def linearize(self, states):
        """Whitened residual and one whitened Jacobian block per connected state."""
        if self.kind == "prior":
            x = states[self.state_ids[0]]
            return (self._W @ prior_residual(x, self.measurement),
                    [self._W @ prior_jacobian(x, self.measurement)])
        if self.kind == "motion":
            x = states[self.state_ids[0]]
            return motion_residual(x, self.measurement), [motion_jacobian(x, self.measurement)]
        x_i, x_j = states[self.state_ids[0]], states[self.state_ids[1]]
        if self.kind == "imu":
            Ji, Jj = imu_jacobians(x_i, x_j, self.measurement)
            return self._W @ imu_residual(x_i, x_j, self.measurement), [self._W @ Ji, self._W @ Jj]
        Ji, Jj = distance_jacobians(x_i, x_j, self.measurement)
        return np.array([distance_residual(x_i, x_j, self.measurement)]), [Ji, Jj]
