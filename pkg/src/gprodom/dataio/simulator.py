"""Synthetic multi-sensor runs with ground truth.

The robot drives a planar path (lines and arcs, z = 0) with a trapezoidal
speed profile.  Kinematics are generated on the IMU clock with piecewise
constant world acceleration and yaw rate, so integrating the noiseless IMU
samples with a zero-order hold reproduces the ground truth to rounding error.

Radar traces are triggered every ``trace_spacing_m`` of travel.  Each trace
sums damped-sinusoid echoes from point reflectors (delayed by the two-way
travel time, hence hyperbolic moveout), a fixed ground-bounce echo,
low-frequency clutter and white noise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass
from typing import List, Optional, Sequence

import numpy as np
import yaml

from .. import so3
from ..errors import InvalidInputError
from ..fusion.preintegration import GRAVITY
from .streams import GprMeta, GroundTruth, ImuStream, SensorStreams, WheelStream, chunk_traces


@dataclass
class PathSpec:
    """Planar path from the origin, initial heading +x.

    ``segments`` items are ``{"line": length_m}`` or
    ``{"arc": {"radius": r_m, "angle_deg": a}}`` (positive angle turns left).
    """

    segments: List[dict] = field(default_factory=lambda: [{"line": 30.0}])
    cruise_speed: float = 1.0
    accel: float = 0.5
    start_speed: float = 0.0
    end_speed: float = 0.0
    start_hold_s: float = 0.0
    end_hold_s: float = 0.0

    def __post_init__(self):
        if min(self.cruise_speed, self.start_speed, self.end_speed) < 0:
            raise InvalidInputError("speeds must be non-negative")
        if self.cruise_speed <= 0 or self.accel <= 0:
            raise InvalidInputError("cruise_speed and accel must be positive")

    def _parts(self):
        parts = []
        for seg in self.segments:
            if "line" in seg:
                parts.append(("line", float(seg["line"]), 0.0))
            elif "arc" in seg:
                arc = seg["arc"]
                r = float(arc["radius"])
                ang = np.radians(float(arc["angle_deg"]))
                parts.append(("arc", r * abs(ang), np.sign(ang) / r))
            else:
                raise InvalidInputError(f"unknown path segment {seg}")
        return parts

    @property
    def length(self):
        return sum(p[1] for p in self._parts())

    def pose(self, s):
        """``(x, y, heading)`` at arc length ``s`` (extrapolated past both ends)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        x = np.zeros_like(s)
        y = np.zeros_like(s)
        psi = np.zeros_like(s)
        parts = self._parts()
        x0 = y0 = h0 = 0.0
        start = 0.0
        done = np.zeros(s.shape, dtype=bool)
        back = s < 0
        x[back], y[back], psi[back] = s[back], 0.0, 0.0
        done |= back
        for k, (kind, length, curv) in enumerate(parts):
            last = k == len(parts) - 1
            sel = ~done & ((s <= start + length) | last)
            u = s[sel] - start
            if curv == 0.0:
                x[sel] = x0 + u * np.cos(h0)
                y[sel] = y0 + u * np.sin(h0)
                psi[sel] = h0
            else:
                h = h0 + curv * u
                x[sel] = x0 + (np.sin(h) - np.sin(h0)) / curv
                y[sel] = y0 - (np.cos(h) - np.cos(h0)) / curv
                psi[sel] = h
            done |= sel
            if curv == 0.0:
                x0, y0 = x0 + length * np.cos(h0), y0 + length * np.sin(h0)
            else:
                h1 = h0 + curv * length
                x0, y0 = x0 + (np.sin(h1) - np.sin(h0)) / curv, y0 - (np.cos(h1) - np.cos(h0)) / curv
                h0 = h1
            start += length
        return x, y, psi

    def profile(self):
        """Breakpoints of the speed profile: ``(t_total, s(t), v(t))`` callables."""
        L = self.length
        a = self.accel
        vs, ve = self.start_speed, self.end_speed
        vc = self.cruise_speed
        d_a = max(vc**2 - vs**2, 0.0) / (2 * a)
        d_d = max(vc**2 - ve**2, 0.0) / (2 * a)
        if d_a + d_d > L:
            vc = np.sqrt(max((2 * a * L + vs**2 + ve**2) / 2.0, max(vs, ve) ** 2))
            d_a = max(vc**2 - vs**2, 0.0) / (2 * a)
            d_d = max(vc**2 - ve**2, 0.0) / (2 * a)
        t1 = self.start_hold_s
        t2 = t1 + (vc - vs) / a
        t3 = t2 + (L - d_a - d_d) / vc
        t4 = t3 + (vc - ve) / a
        t_total = t4 + self.end_hold_s

        def speed(t):
            t = np.asarray(t, dtype=float)
            v = np.where(t < t1, 0.0 if t1 > 0 else vs, 0.0)
            v = np.where((t >= t1) & (t < t2), vs + a * (t - t1), v)
            v = np.where((t >= t2) & (t < t3), vc, v)
            v = np.where((t >= t3) & (t < t4), vc - a * (t - t3), v)
            v = np.where(t >= t4, ve if self.end_hold_s == 0 else 0.0, v)
            return v

        def dist(t):
            t = np.asarray(t, dtype=float)
            tc = np.clip(t - t1, 0.0, t2 - t1)
            s = vs * tc + 0.5 * a * tc**2
            s = s + vc * np.clip(t - t2, 0.0, t3 - t2)
            td = np.clip(t - t3, 0.0, t4 - t3)
            s = s + vc * td - 0.5 * a * td**2
            if self.end_hold_s == 0:
                s = s + ve * np.clip(t - t4, 0.0, None)
            return s

        return t_total, dist, speed


@dataclass
class GprModel:
    center_freq_ghz: float = 1.0
    sample_interval_ns: float = 0.1
    wave_speed_m_per_ns: float = 0.1
    noise_sigma: float = 0.0
    clutter_amplitude: float = 0.0
    n_samples: int = 256
    decay_per_sample: float = 0.12
    ground_delay_ns: float = 2.0
    ground_amplitude: float = 1.0
    trace_spacing_m: float = 0.05
    trigger_jitter: float = 0.0  # std of trace position error, fraction of spacing
    beam_width_m: float = 0.3
    preroll_m: float = 7.0
    window_width: Optional[int] = None

    @property
    def omega(self):
        """Pulse angular frequency in radians per sample."""
        return 2 * np.pi * self.center_freq_ghz * self.sample_interval_ns


@dataclass
class ImuNoiseModel:
    rate_hz: float = 100.0
    accel_noise_density: float = 0.0
    gyro_noise_density: float = 0.0
    accel_bias: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    gyro_bias: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])


@dataclass
class WheelNoiseModel:
    rate_hz: float = 100.0
    slip_fraction: float = 0.0
    slip_tau_s: float = 1.0
    scale_error: float = 0.0
    quantization_m: float = 0.0


@dataclass
class SimScene:
    """Everything :func:`simulate` needs.

    ``reflectors`` holds ``(position, reflectivity)`` pairs with
    ``position[2] = -depth``.
    """

    reflectors: list = field(default_factory=list)
    trajectory: PathSpec = field(default_factory=PathSpec)
    gpr_model: GprModel = field(default_factory=GprModel)
    imu_noise: ImuNoiseModel = field(default_factory=ImuNoiseModel)
    wheel_noise: WheelNoiseModel = field(default_factory=WheelNoiseModel)
    truth_rate_hz: float = 10.0

    def __post_init__(self):
        refl = []
        for pos, r in self.reflectors:
            pos = np.asarray(pos, dtype=float)
            if pos.shape != (3,) or not pos[2] < 0:
                raise InvalidInputError(f"reflector depth must be positive, got {pos}")
            if not 0 < r <= 1:
                raise InvalidInputError("reflectivity must lie in (0, 1]")
            refl.append((pos, float(r)))
        self.reflectors = refl


# ------------------------------------------------------------- scene config

def _build(cls, d):
    if d is None:
        return cls()
    if is_dataclass(d):
        return d
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise InvalidInputError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def scene_from_dict(d: dict) -> SimScene:
    """Build a scene from a nested mapping (the YAML scene file layout).

    A ``preset: corridor`` entry generates reflectors along the path; see
    :func:`reflectors_along_path`.
    """
    d = dict(d or {})
    preset = d.pop("preset", None)
    path = _build(PathSpec, d.pop("trajectory", None))
    gpr = _build(GprModel, d.pop("gpr_model", None))
    imu = _build(ImuNoiseModel, d.pop("imu_noise", None))
    wheel = _build(WheelNoiseModel, d.pop("wheel_noise", None))
    truth_rate = d.pop("truth_rate_hz", 10.0)
    refl = d.pop("reflectors", None)
    gen = d.pop("reflector_field", {}) or {}
    if d:
        raise InvalidInputError(f"unknown scene keys: {sorted(d)}")
    if refl is None:
        refl = []
        if preset == "corridor" or gen:
            refl = reflectors_along_path(path, gpr.preroll_m, **gen)
    else:
        refl = [(r["position"], r["reflectivity"]) if isinstance(r, dict) else r for r in refl]
    return SimScene(refl, path, gpr, imu, wheel, truth_rate)


def scene_to_dict(scene: SimScene) -> dict:
    return {
        "reflectors": [{"position": [float(x) for x in p], "reflectivity": r} for p, r in scene.reflectors],
        "trajectory": asdict(scene.trajectory),
        "gpr_model": asdict(scene.gpr_model),
        "imu_noise": asdict(scene.imu_noise),
        "wheel_noise": asdict(scene.wheel_noise),
        "truth_rate_hz": scene.truth_rate_hz,
    }


def load_scene(path) -> SimScene:
    with open(path) as fh:
        return scene_from_dict(yaml.safe_load(fh))


def reflectors_along_path(path: PathSpec, preroll_m=0.0, count=8, depth_range=(0.3, 1.0),
                          lateral_m=0.15, reflectivity_range=(0.5, 1.0), seed=0):
    """``count`` reflectors spread evenly along the path (including the pre-roll)."""
    rng = np.random.default_rng(seed)
    span = path.length + preroll_m
    s = -preroll_m + (np.arange(count) + 0.5) * span / count
    x, y, psi = path.pose(s)
    lat = rng.uniform(-lateral_m, lateral_m, count)
    depth = rng.uniform(*depth_range, count)
    refl = rng.uniform(*reflectivity_range, count)
    return [
        ((x[k] - lat[k] * np.sin(psi[k]), y[k] + lat[k] * np.cos(psi[k]), -depth[k]), float(refl[k]))
        for k in range(count)
    ]


def corridor_scene(length=30.0, n_reflectors=8, speed=1.0, constant_speed=True, noisy=False, seed=0,
                   **overrides) -> SimScene:
    """Straight corridor; ``noisy`` switches on the documented default noise."""
    path = PathSpec([{"line": float(length)}], cruise_speed=speed,
                    start_speed=speed if constant_speed else 0.0,
                    end_speed=speed if constant_speed else 0.0)
    gpr = GprModel(**(DEFAULT_GPR_NOISE if noisy else {}))
    imu = ImuNoiseModel(**(DEFAULT_IMU_NOISE if noisy else {}))
    wheel = WheelNoiseModel(**(DEFAULT_WHEEL_NOISE if noisy else {}))
    for key, val in overrides.items():
        for obj in (path, gpr, imu, wheel):
            if hasattr(obj, key):
                setattr(obj, key, val)
                break
        else:
            raise InvalidInputError(f"unknown override {key!r}")
    refl = reflectors_along_path(path, gpr.preroll_m, n_reflectors, seed=seed) if n_reflectors else []
    return SimScene(refl, path, gpr, imu, wheel)


# documented default noise levels
DEFAULT_GPR_NOISE = {"noise_sigma": 0.005, "clutter_amplitude": 0.03, "trigger_jitter": 0.05}
DEFAULT_IMU_NOISE = {
    "accel_noise_density": 0.02,
    "gyro_noise_density": 0.002,
    "accel_bias": [0.02, -0.01, 0.0],
    "gyro_bias": [0.0, 0.0, 5e-4],
}
DEFAULT_WHEEL_NOISE = {"slip_fraction": 0.05, "slip_tau_s": 2.0, "scale_error": 0.02, "quantization_m": 0.001}


# ------------------------------------------------------------- simulation

def _kinematics(path: PathSpec, rate):
    t_total, dist, speed = path.profile()
    n = int(round(t_total * rate))
    t = np.arange(n + 1) / rate
    s = dist(t)
    v = speed(t)
    _, _, psi = path.pose(s)
    dt = 1.0 / rate
    vel = np.column_stack([v * np.cos(psi), v * np.sin(psi), np.zeros_like(v)])
    acc = np.zeros_like(vel)
    acc[:-1] = (vel[1:] - vel[:-1]) / dt
    omega = np.zeros(n + 1)
    omega[:-1] = (psi[1:] - psi[:-1]) / dt
    pos = np.zeros_like(vel)
    pos[1:] = np.cumsum(vel[:-1] * dt + 0.5 * acc[:-1] * dt * dt, axis=0)
    return t, pos, vel, acc, psi, omega


def _first_crossing(s_grid, t_grid, s_query):
    """Earliest time at which the non-decreasing ``s_grid`` reaches ``s_query``."""
    k = np.searchsorted(s_grid, s_query, side="left")
    k = np.clip(k, 1, s_grid.size - 1)
    s0, s1 = s_grid[k - 1], s_grid[k]
    frac = np.where(s1 > s0, (s_query - s0) / np.where(s1 > s0, s1 - s0, 1.0), 1.0)
    return t_grid[k - 1] + frac * (t_grid[k] - t_grid[k - 1]), k, frac


def _pulse(i, onset, omega, alpha):
    u = i - onset
    return np.where(u >= 0, np.exp(-alpha * np.maximum(u, 0)) * np.sin(omega * u), 0.0)


def synthesize_traces(scene: SimScene, antenna_xy, rng=None):
    """A-scans (``D x N``) for antenna positions ``antenna_xy`` (N x 2)."""
    g = scene.gpr_model
    D = g.n_samples
    i = np.arange(D, dtype=float)[:, None]
    xy = np.asarray(antenna_xy, dtype=float).reshape(-1, 2)
    n = xy.shape[0]
    data = np.zeros((D, n))
    w, a = g.omega, g.decay_per_sample
    for pos, refl in scene.reflectors:
        depth = -pos[2]
        h = np.hypot(xy[:, 0] - pos[0], xy[:, 1] - pos[1])
        near = h < 4 * g.beam_width_m
        if not np.any(near):
            continue
        r = np.sqrt(depth**2 + h[near] ** 2)
        onset = 2 * r / g.wave_speed_m_per_ns / g.sample_interval_ns
        amp = refl / (1 + depth) * np.exp(-((h[near] / g.beam_width_m) ** 2))
        data[:, near] += amp[None, :] * _pulse(i, onset[None, :], w, a)
    if g.ground_amplitude:
        data += g.ground_amplitude * _pulse(i, g.ground_delay_ns / g.sample_interval_ns, w, a)
    if rng is not None and g.clutter_amplitude:
        cycles = rng.uniform(0.5, 2.5, n)
        phase = rng.uniform(0, 2 * np.pi, n)
        data += g.clutter_amplitude * np.sin(2 * np.pi * cycles[None, :] * i / D + phase[None, :])
    if rng is not None and g.noise_sigma:
        data += rng.normal(0.0, g.noise_sigma, data.shape)
    return data


def simulate(scene: SimScene, seed: int = 0) -> SensorStreams:
    """Run the scene and return all sensor streams plus ground truth.

    Deterministic in ``(scene, seed)``.
    """
    rng_gpr, rng_imu, rng_wheel = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    imu_cfg = scene.imu_noise
    rate = imu_cfg.rate_hz
    dt = 1.0 / rate
    t, pos, vel, acc, psi, omega = _kinematics(scene.trajectory, rate)
    n = t.size

    # IMU: specific force and yaw rate in the body frame
    accel = np.empty((n, 3))
    for k in range(n):
        accel[k] = so3.rot_z(psi[k]).T @ (acc[k] - GRAVITY)
    gyro = np.zeros((n, 3))
    gyro[:, 2] = omega
    accel += np.asarray(imu_cfg.accel_bias, dtype=float)
    gyro += np.asarray(imu_cfg.gyro_bias, dtype=float)
    if imu_cfg.accel_noise_density:
        accel += rng_imu.normal(0.0, imu_cfg.accel_noise_density * np.sqrt(rate), accel.shape)
    if imu_cfg.gyro_noise_density:
        gyro += rng_imu.normal(0.0, imu_cfg.gyro_noise_density * np.sqrt(rate), gyro.shape)
    imu = ImuStream(t, accel, gyro)

    # wheel: travelled distance along the true path with slip, scale error, ticks
    step = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    s_true = np.concatenate([[0.0], np.cumsum(step)])
    wn = scene.wheel_noise
    slip = np.zeros(n - 1)
    if wn.slip_fraction:
        phi = np.exp(-dt / wn.slip_tau_s)
        e = rng_wheel.normal(0.0, wn.slip_fraction * np.sqrt(1 - phi**2), n - 1)
        x = rng_wheel.normal(0.0, wn.slip_fraction)
        for k in range(n - 1):
            x = phi * x + e[k]
            slip[k] = x
    s_meas = np.concatenate([[0.0], np.cumsum(step * (1.0 + wn.scale_error + slip))])
    if wn.quantization_m:
        s_meas = np.floor(s_meas / wn.quantization_m) * wn.quantization_m
    wt = np.arange(int(round(t[-1] * wn.rate_hz)) + 1) / wn.rate_hz
    wheel = WheelStream(wt, np.interp(wt, t, s_meas))

    truth_t = np.arange(int(round(t[-1] * scene.truth_rate_hz)) + 1) / scene.truth_rate_hz
    truth = GroundTruth(truth_t, np.column_stack([np.interp(truth_t, t, pos[:, j]) for j in range(3)]))

    # radar traces every trace_spacing_m of true travel, with a pre-roll
    g = scene.gpr_model
    n_pre = int(np.floor(g.preroll_m / g.trace_spacing_m))
    n_post = int(np.floor(s_true[-1] / g.trace_spacing_m + 1e-9))
    idx = np.arange(-n_pre, n_post + 1)
    s_nom = idx * g.trace_spacing_m
    s_act = s_nom.copy()
    if g.trigger_jitter:
        s_act = s_act + rng_gpr.normal(0.0, g.trigger_jitter * g.trace_spacing_m, s_act.size)
        s_act = np.maximum.accumulate(s_act)
    xy = np.empty((idx.size, 2))
    tt = np.empty(idx.size)
    pre = s_act < 0
    v_pre = max(scene.trajectory.start_speed, scene.trajectory.cruise_speed)
    xy[pre, 0] = s_act[pre]
    xy[pre, 1] = 0.0
    tt[pre] = s_act[pre] / v_pre
    q = np.clip(s_act[~pre], 0.0, s_true[-1])
    tq, k, frac = _first_crossing(s_true, t, q)
    tt[~pre] = tq
    for j in range(2):
        xy[~pre, j] = pos[k - 1, j] + frac * (pos[k, j] - pos[k - 1, j])
    # keep timestamps strictly increasing when jitter bunches triggers together
    tt = np.maximum.accumulate(tt)
    bump = np.concatenate([[False], np.diff(tt) <= 0])
    if np.any(bump):
        for m in np.nonzero(bump)[0]:
            tt[m] = np.nextafter(max(tt[m], tt[m - 1]), np.inf)
    data = synthesize_traces(scene, xy, rng_gpr)
    meta = GprMeta(g.sample_interval_ns, g.wave_speed_m_per_ns, g.trace_spacing_m)
    gpr = chunk_traces(data, tt, g.window_width, g.sample_interval_ns, g.trace_spacing_m)
    return SensorStreams(gpr, wheel, imu, truth, meta)


def simulate_truth(scene: SimScene):
    """Ground-truth kinematics on the IMU clock: ``(t, position, velocity, heading)``."""
    t, pos, vel, _, psi, _ = _kinematics(scene.trajectory, scene.imu_noise.rate_hz)
    return t, pos, vel, psi
