"""On-manifold IMU preintegration.

The increments ``delta_R, delta_v, delta_p`` are expressed in the body frame
at the start of the interval and exclude gravity, so they depend only on the
raw samples and the bias used for linearisation.  Every sample is held
constant until the next one (zero-order hold).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import so3
from ..errors import InvalidInputError

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time noise densities.

    accel/gyro white noise in m/s^2/sqrt(Hz) and rad/s/sqrt(Hz); bias random
    walks in m/s^3/sqrt(Hz) and rad/s^2/sqrt(Hz).
    """

    accel_noise_density: float = 0.02
    gyro_noise_density: float = 0.002
    accel_bias_rw: float = 1e-3
    gyro_bias_rw: float = 1e-4


@dataclass(frozen=True)
class PreintegratedImu:
    delta_R: np.ndarray
    delta_v: np.ndarray
    delta_p: np.ndarray
    dt_total: float
    covariance: np.ndarray  # 9x9, order (rotation, velocity, position)
    bias_ref: tuple  # (bias_a, bias_g)
    J_R_bg: np.ndarray
    J_v_ba: np.ndarray
    J_v_bg: np.ndarray
    J_p_ba: np.ndarray
    J_p_bg: np.ndarray
    gravity: np.ndarray = GRAVITY
    noise: ImuNoise = ImuNoise()


def _as_arrays(samples):
    if isinstance(samples, tuple) and len(samples) == 3 and np.ndim(samples[0]) == 1 and np.ndim(samples[1]) == 2:
        t, acc, gyr = samples
        return np.asarray(t, float), np.asarray(acc, float), np.asarray(gyr, float)
    samples = list(samples)
    if not samples:
        raise InvalidInputError("preintegration needs at least one IMU sample")
    acc = np.array([s[0] for s in samples], dtype=float)
    gyr = np.array([s[1] for s in samples], dtype=float)
    t = np.array([s[2] for s in samples], dtype=float)
    return t, acc, gyr


def preintegrate(
    samples,
    bias=(np.zeros(3), np.zeros(3)),
    gravity=GRAVITY,
    noise: ImuNoise = ImuNoise(),
    t_start: Optional[float] = None,
    t_end: Optional[float] = None,
) -> PreintegratedImu:
    """Accumulate IMU samples into relative motion increments.

    Parameters
    ----------
    samples : sequence of (accel, gyro, t), or a tuple ``(t, accel, gyro)`` of arrays
        Specific force (m/s^2) and angular rate (rad/s) in the body frame.
    bias : (bias_a, bias_g)
        Biases subtracted from the raw samples; also the linearisation point
        for the bias Jacobians.
    t_start, t_end : float, optional
        Integration limits.  Default to the first sample time and one sample
        period past the last sample.
    """
    t, acc, gyr = _as_arrays(samples)
    if t.size == 0:
        raise InvalidInputError("preintegration needs at least one IMU sample")
    if np.any(np.diff(t) <= 0):
        raise InvalidInputError("IMU timestamps must be strictly increasing")
    if t_start is None:
        t_start = t[0]
    if t_end is None:
        if t.size < 2:
            raise InvalidInputError("t_end required for a single IMU sample")
        t_end = t[-1] + (t[-1] - t[-2])
    if not t_end > t_start:
        raise InvalidInputError("empty preintegration interval")

    ba = np.asarray(bias[0], dtype=float)
    bg = np.asarray(bias[1], dtype=float)
    # hold intervals [edges[k], edges[k+1]) of each sample, clipped to the limits
    edges = np.append(t, np.inf)
    first = max(int(np.searchsorted(t, t_start, side="right")) - 1, 0)

    dR = np.eye(3)
    dv = np.zeros(3)
    dp = np.zeros(3)
    J_R_bg = np.zeros((3, 3))
    J_v_ba = np.zeros((3, 3))
    J_v_bg = np.zeros((3, 3))
    J_p_ba = np.zeros((3, 3))
    J_p_bg = np.zeros((3, 3))
    cov = np.zeros((9, 9))
    qa = noise.accel_noise_density**2
    qg = noise.gyro_noise_density**2
    I3 = np.eye(3)

    for k in range(first, t.size):
        lo = t_start if k == first else edges[k]
        hi = min(edges[k + 1], t_end)
        dt = hi - lo
        if dt <= 0:
            if edges[k] >= t_end:
                break
            continue
        a = acc[k] - ba
        w = gyr[k] - bg
        dR_step = so3.exp(w * dt)
        Jr = so3.right_jacobian(w * dt)
        a_hat = so3.skew(a)
        dRa_hat = dR @ a_hat

        A = np.eye(9)
        A[0:3, 0:3] = dR_step.T
        A[3:6, 0:3] = -dRa_hat * dt
        A[6:9, 0:3] = -0.5 * dRa_hat * dt * dt
        A[6:9, 3:6] = I3 * dt
        B = np.zeros((9, 6))
        B[0:3, 0:3] = Jr * dt
        B[3:6, 3:6] = dR * dt
        B[6:9, 3:6] = 0.5 * dR * dt * dt
        Q = np.diag([qg / dt] * 3 + [qa / dt] * 3)
        cov = A @ cov @ A.T + B @ Q @ B.T

        J_p_ba = J_p_ba + J_v_ba * dt - 0.5 * dR * dt * dt
        J_p_bg = J_p_bg + J_v_bg * dt - 0.5 * dRa_hat @ J_R_bg * dt * dt
        J_v_ba = J_v_ba - dR * dt
        J_v_bg = J_v_bg - dRa_hat @ J_R_bg * dt
        J_R_bg = dR_step.T @ J_R_bg - Jr * dt

        dp = dp + dv * dt + 0.5 * (dR @ a) * dt * dt
        dv = dv + (dR @ a) * dt
        dR = dR @ dR_step
        if hi >= t_end:
            break

    cov = 0.5 * (cov + cov.T)
    return PreintegratedImu(
        dR, dv, dp, float(t_end - t_start), cov, (ba.copy(), bg.copy()),
        J_R_bg, J_v_ba, J_v_bg, J_p_ba, J_p_bg, np.asarray(gravity, dtype=float), noise,
    )


def predict(x_i, pre: PreintegratedImu):
    """State reached from ``x_i`` by applying the increments (biases held)."""
    from dataclasses import replace

    dt = pre.dt_total
    g = pre.gravity
    R = x_i.R @ pre.delta_R
    v = x_i.v + g * dt + x_i.R @ pre.delta_v
    p = x_i.p + x_i.v * dt + 0.5 * g * dt * dt + x_i.R @ pre.delta_p
    return replace(x_i, R=so3.orthonormalize(R) if np.abs(R.T @ R - np.eye(3)).max() > 1e-12 else R,
                   v=v, p=p, timestamp_s=x_i.timestamp_s + dt)
