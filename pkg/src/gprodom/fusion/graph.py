"""Keyframe factor-graph construction and dead-reckoning initialisation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .. import so3
from ..errors import InvalidInputError
from ..sfm import DistanceMeasurement
from .factors import Factor
from .preintegration import GRAVITY, ImuNoise, preintegrate
from .solver import FactorGraph
from .state import DOF, POS, ROT, RobotState

log = logging.getLogger(__name__)

_T_TOL = 1e-6


@dataclass(frozen=True)
class FusionConfig:
    """Graph and solver settings.

    Prior variances apply to the first keyframe; wheel factors get
    ``sigma = wheel_sigma_base + wheel_sigma_frac * |u|``.
    """

    keyframe_dt: float = 0.5
    gravity: tuple = tuple(GRAVITY)
    imu_noise: ImuNoise = field(default_factory=ImuNoise)
    prior_pose_var: float = 1e-4
    prior_vel_var: float = 1e-2
    prior_bias_var: float = 1e-2  # accelerometer bias
    prior_gyro_bias_var: float = 1e-6
    wheel_sigma_base: float = 0.01
    wheel_sigma_frac: float = 0.2  # covers slip correlated across keyframes
    initial_yaw: float = 0.0
    # ground-vehicle constraint on body lateral/vertical velocity (m/s); None disables
    motion_sigma: Optional[float] = 0.05
    solver: str = "batch"  # or "sliding"
    sliding_window: int = 20
    max_iter: int = 50

    def __post_init__(self):
        if not self.keyframe_dt > 0:
            raise InvalidInputError("keyframe_dt must be positive")
        if self.solver not in ("batch", "sliding"):
            raise InvalidInputError(f"unknown solver {self.solver!r}")

    def prior_covariance(self):
        var = [self.prior_pose_var] * 3 + [self.prior_vel_var] * 3 + [self.prior_pose_var] * 3
        var += [self.prior_bias_var] * 3 + [self.prior_gyro_bias_var] * 3
        return np.diag(var)


def keyframe_times(t_start: float, t_end: float, dt: float) -> np.ndarray:
    """``t_start, t_start + dt, ...`` up to ``t_end`` inclusive."""
    n = int(np.floor((t_end - t_start) / dt + 1e-9))
    return t_start + dt * np.arange(n + 1)


def _imu_slice(t, t0, t1):
    lo = max(int(np.searchsorted(t, t0, side="right")) - 1, 0)
    hi = int(np.searchsorted(t, t1, side="left"))
    return lo, hi


def preintegrate_intervals(imu, times, cfg: FusionConfig, bias=(np.zeros(3), np.zeros(3))):
    """One preintegration per keyframe interval; ``None`` where no sample covers it."""
    out = []
    for t0, t1 in zip(times[:-1], times[1:]):
        lo, hi = _imu_slice(imu.t, t0, t1)
        inside = int(np.searchsorted(imu.t, t0 - _T_TOL, side="left")) < hi
        if hi <= lo or not inside or imu.t[lo] > t0 + _T_TOL:
            log.warning("no IMU samples cover [%.3f, %.3f]; IMU factor omitted", t0, t1)
            out.append(None)
            continue
        samples = (imu.t[lo:hi], imu.accel[lo:hi], imu.gyro[lo:hi])
        out.append(preintegrate(samples, bias, np.asarray(cfg.gravity), cfg.imu_noise, t_start=t0, t_end=t1))
    return out


def wheel_measurements(wheel, times, cfg: FusionConfig) -> List[DistanceMeasurement]:
    d = wheel.distance_at(times)
    u = np.diff(d)
    return [
        DistanceMeasurement(float(u[k]), float(times[k]), float(times[k + 1]),
                            cfg.wheel_sigma_base + cfg.wheel_sigma_frac * abs(float(u[k])))
        for k in range(u.size)
    ]


def interval_speeds(distances: Sequence[Optional[float]], times) -> np.ndarray:
    """Speed per interval; gaps (``None``) hold the previous speed, leading gaps the first known."""
    dts = np.diff(times)
    speeds = np.full(len(distances), np.nan)
    for k, u in enumerate(distances):
        if u is not None:
            speeds[k] = abs(u) / dts[k]
    known = np.nonzero(np.isfinite(speeds))[0]
    if known.size == 0:
        raise InvalidInputError("no distance measurements to dead-reckon from")
    last = speeds[known[0]]
    for k in range(speeds.size):
        if np.isfinite(speeds[k]):
            last = speeds[k]
        else:
            speeds[k] = last
    return speeds


def dead_reckon(times, distances: Sequence[Optional[float]], rotations=None, initial: Optional[RobotState] = None,
                start_speed: Optional[float] = None) -> List[RobotState]:
    """Integrate per-interval travel distances along a heading source.

    Parameters
    ----------
    times : (N,) keyframe times
    distances : N-1 travelled distances; ``None`` marks a gap that is
        bridged at the previous interval's speed.
    rotations : N-1 relative rotations (body frame), e.g. preintegrated
        gyro increments; identity when omitted.  Each step moves along the
        forward axis of the geodesic midpoint attitude.
    """
    times = np.asarray(times, dtype=float)
    n = times.size
    if len(distances) != n - 1:
        raise InvalidInputError("need one distance per keyframe interval")
    speeds = interval_speeds(distances, times)
    if initial is None:
        initial = RobotState(np.zeros(3), np.zeros(3), np.eye(3), timestamp_s=times[0])
    R = initial.R
    p = initial.p
    v0 = speeds[0] if start_speed is None else start_speed
    out = [RobotState(p, R[:, 0] * v0, R, initial.bias_a, initial.bias_g, times[0])]
    for k in range(n - 1):
        dR = np.eye(3) if rotations is None or rotations[k] is None else rotations[k]
        phi = so3.log(dR)
        mid = R @ so3.exp(0.5 * phi)
        p = p + mid[:, 0] * speeds[k] * (times[k + 1] - times[k])
        R = so3.orthonormalize(R @ dR)
        v_next = speeds[k] if k + 1 >= n - 1 else 0.5 * (speeds[k] + speeds[k + 1])
        out.append(RobotState(p, R[:, 0] * v_next, R, initial.bias_a, initial.bias_g, times[k + 1]))
    return out


def initial_state(cfg: FusionConfig, t0: float, speed: float = 0.0) -> RobotState:
    R = so3.rot_z(cfg.initial_yaw)
    return RobotState(np.zeros(3), R[:, 0] * speed, R, timestamp_s=t0)


def wheel_speed_at(wheel, t, h=0.1) -> float:
    """Central difference of the encoder distance over ``h`` seconds, clipped to the stream."""
    a = max(t - 0.5 * h, wheel.t[0])
    b = min(t + 0.5 * h, wheel.t[-1])
    if not b > a:
        return 0.0
    return float((wheel.distance_at(b) - wheel.distance_at(a)) / (b - a))


def build_graph(imu_stream, wheel_stream, gpr_measurements: Sequence[DistanceMeasurement] = (),
                keyframe_dt: Optional[float] = None, config: Optional[FusionConfig] = None,
                use_wheel: bool = True, use_gpr: bool = True):
    """Assemble the keyframe factor graph and a dead-reckoned initial trajectory.

    One state per ``keyframe_dt`` over the span shared by the IMU and wheel
    streams.  Each interval gets an IMU factor, a wheel factor and, when a
    measurement with matching endpoints exists, a GPR factor.  The first
    state carries a prior at the start pose.

    Returns
    -------
    graph : FactorGraph
    init : list of RobotState
        IMU-attitude, wheel-distance dead reckoning.
    """
    cfg = config or FusionConfig()
    if keyframe_dt is not None and keyframe_dt != cfg.keyframe_dt:
        from dataclasses import replace

        cfg = replace(cfg, keyframe_dt=keyframe_dt)
    if imu_stream is None or len(imu_stream) == 0:
        raise InvalidInputError("the factor graph needs an IMU stream for heading")
    t_start = max(wheel_stream.t[0], imu_stream.t[0])
    t_end = min(wheel_stream.t[-1], imu_stream.t[-1])
    if not t_end > t_start:
        raise InvalidInputError("IMU and wheel streams do not overlap in time")
    times = keyframe_times(t_start, t_end, cfg.keyframe_dt)
    if times.size < 2:
        raise InvalidInputError("streams shorter than one keyframe interval")

    pre = preintegrate_intervals(imu_stream, times, cfg)
    wheel = wheel_measurements(wheel_stream, times, cfg)
    x0 = initial_state(cfg, times[0], wheel_speed_at(wheel_stream, times[0]))
    init = dead_reckon(times, [z.u_m for z in wheel],
                       [None if p is None else p.delta_R for p in pre], x0, start_speed=np.linalg.norm(x0.v))
    # velocities from the encoder rate at each keyframe
    init = [RobotState(s.p, s.forward * wheel_speed_at(wheel_stream, s.timestamp_s), s.R,
                       timestamp_s=s.timestamp_s) for s in init]

    graph = FactorGraph(list(init))
    graph.add(Factor("prior", (0,), x0, cfg.prior_covariance()))
    for k, p in enumerate(pre):
        if p is not None:
            graph.add(Factor("imu", (k, k + 1), p))
    if use_wheel:
        for k, z in enumerate(wheel):
            graph.add(Factor("wheel", (k, k + 1), z))
    if cfg.motion_sigma is not None:
        for k in range(times.size):
            graph.add(Factor("motion", (k,), cfg.motion_sigma))
    if use_gpr:
        index = {round(t / _T_TOL): k for k, t in enumerate(times)}
        for z in gpr_measurements:
            k = index.get(round(z.t_from / _T_TOL))
            if k is None or k + 1 >= times.size or abs(times[k + 1] - z.t_to) > _T_TOL:
                log.debug("GPR measurement [%.3f, %.3f] does not span a keyframe interval", z.t_from, z.t_to)
                continue
            graph.add(Factor("gpr", (k, k + 1), z))
    return graph, init
