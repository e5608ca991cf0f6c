"""End-to-end runs: streams -> GPR distances -> odometry per modality -> report."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from . import so3
from .dataio.simulator import SimScene, load_scene, scene_from_dict, simulate
from .dataio.streams import SensorStreams, ingest_dataset
from .errors import EvaluationError, GprOdomError, InvalidInputError
from .evaluation import EvalReport, associate, path_length, rmse, rmse_vs_time
from .fusion.graph import (FusionConfig, build_graph, dead_reckon, initial_state, keyframe_times,
                           preintegrate_intervals, wheel_measurements, wheel_speed_at)
from .fusion.preintegration import ImuNoise
from .fusion.solver import optimize, optimize_sliding
from .fusion.state import RobotState, write_trajectory_csv
from .peak_fit import PeakConfig
from .sfm import (DistanceStream, GprExtractor, SfmConfig, calibrate_k, default_k_coeff, gpr_distance_stream,
                  keyframe_windows, shift_to_distance)
from .signal_core import FilterConfig

log = logging.getLogger(__name__)

MODALITIES = ("gpr-only", "wheel-only", "imu+wheel", "fusion")


def _sub(cls, d):
    if d is None:
        return cls()
    if isinstance(d, cls):
        return d
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise InvalidInputError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass
class PipelineConfig:
    """Run configuration; exactly one of ``dataset`` and ``scene`` is used.

    ``scene`` is a scene mapping, a path to a scene YAML file, or a
    :class:`SimScene`.
    """

    dataset: Optional[str] = None
    schema: Optional[object] = None
    scene: Optional[object] = None
    seed: int = 0
    modalities: Sequence[str] = MODALITIES
    window_width: int = 128
    max_dt: float = 0.1
    fusion: FusionConfig = field(default_factory=FusionConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    peaks: PeakConfig = field(default_factory=PeakConfig)
    sfm: SfmConfig = field(default_factory=SfmConfig)

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        bad = [m for m in self.modalities if m not in MODALITIES]
        if bad:
            raise InvalidInputError(f"unknown modalities {bad}; choose from {list(MODALITIES)}")
        if self.window_width < 2:
            raise InvalidInputError("window_width must be at least 2")

    @classmethod
    def from_dict(cls, d: Optional[dict], base_dir=None) -> "PipelineConfig":
        d = dict(d or {})
        fusion = dict(d.pop("fusion", None) or {})
        if "imu_noise" in fusion:
            fusion["imu_noise"] = _sub(ImuNoise, fusion["imu_noise"])
        if "gravity" in fusion:
            fusion["gravity"] = tuple(fusion["gravity"])
        cfg_fusion = _sub(FusionConfig, fusion)
        nested = {
            "filter": _sub(FilterConfig, d.pop("filter", None)),
            "peaks": _sub(PeakConfig, d.pop("peaks", None)),
            "sfm": _sub(SfmConfig, d.pop("sfm", None)),
        }
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        if base_dir is not None:
            for key in ("dataset", "schema", "scene"):
                if isinstance(d.get(key), str) and not Path(d[key]).is_absolute():
                    d[key] = str(Path(base_dir) / d[key])
        return cls(fusion=cfg_fusion, **nested, **d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        with path.open() as fh:
            return cls.from_dict(yaml.safe_load(fh), base_dir=path.parent)

    def extractor(self, streams: SensorStreams) -> GprExtractor:
        return GprExtractor(streams.gpr_meta.wave_speed_m_per_ns, self.filter, self.peaks, self.sfm)


def load_streams(cfg: PipelineConfig) -> SensorStreams:
    if cfg.dataset is not None:
        return ingest_dataset(cfg.dataset, cfg.schema)
    if cfg.scene is None:
        raise InvalidInputError("config needs a dataset or a scene")
    if isinstance(cfg.scene, SimScene):
        scene = cfg.scene
    elif isinstance(cfg.scene, dict):
        scene = scene_from_dict(cfg.scene)
    else:
        scene = load_scene(cfg.scene)
    return simulate(scene, cfg.seed)


def run_keyframes(streams: SensorStreams, cfg: PipelineConfig) -> np.ndarray:
    w = streams.wheel
    t0, t1 = w.t[0], w.t[-1]
    if streams.imu is not None and len(streams.imu):
        t0, t1 = max(t0, streams.imu.t[0]), min(t1, streams.imu.t[-1])
    times = keyframe_times(t0, t1, cfg.fusion.keyframe_dt)
    if times.size < 2:
        raise InvalidInputError("run shorter than one keyframe interval")
    return times


@dataclass
class GprDistances:
    """Per-interval GPR distances (``None`` where no valid match)."""

    times: np.ndarray
    per_interval: List[Optional[object]]
    stream: DistanceStream
    k_coeff: float

    @property
    def measurements(self):
        return [z for z in self.per_interval if z is not None]


def extract_distances(streams: SensorStreams, cfg: PipelineConfig, times=None) -> GprDistances:
    """SFMs at every keyframe and the shift-derived distances between them.

    The metres-per-column factor comes from the scan spacing when known,
    otherwise it is calibrated against the wheel encoder.
    """
    times = run_keyframes(streams, cfg) if times is None else np.asarray(times, dtype=float)
    windows = keyframe_windows(streams.gpr, times, cfg.window_width)
    wheel_u = np.diff(streams.wheel.distance_at(times))
    directions = np.where(wheel_u < 0, -1.0, 1.0)
    k = cfg.sfm.k_coeff
    spacing = streams.gpr_meta.scan_spacing_m
    if k is None and spacing is not None:
        k = default_k_coeff(spacing, cfg.window_width, cfg.sfm.cols)
    ds = gpr_distance_stream(windows, cfg.extractor(streams), times, k if k is not None else 1.0, directions)
    if k is None:
        k = calibrate_k(ds.matches, list(wheel_u), cfg.sfm.calibration_intervals)
        log.info("calibrated k_coeff = %.5f m/column", k)
    per = []
    for j, m in enumerate(ds.matches):
        z = None
        if m is not None:
            z = shift_to_distance(m, k, float(times[j]), float(times[j + 1]), directions[j],
                                  cfg.sfm.sigma_base, cfg.sfm.sigma_cost)
        per.append(z)
    ds = DistanceStream([z for z in per if z is not None], ds.matches, ds.sfms, sum(z is None for z in per))
    return GprDistances(times, per, ds, float(k))


def _truth_rotations(streams: SensorStreams, times):
    gt = streams.ground_truth
    if gt is None:
        raise InvalidInputError("no heading source: neither IMU nor ground truth present")
    p = np.column_stack([np.interp(times, gt.t, gt.position[:, j]) for j in range(3)])
    d = np.gradient(p[:, :2], axis=0)
    psi = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
    return [so3.rot_z(b - a) for a, b in zip(psi[:-1], psi[1:])], float(psi[0])


class _Runner:
    """Shares expensive intermediate results between modality configurations."""

    def __init__(self, streams: SensorStreams, cfg: PipelineConfig):
        self.streams = streams
        self.cfg = cfg
        self.times = run_keyframes(streams, cfg)
        self._gpr = None
        self._rot = None

    def gpr(self) -> GprDistances:
        if self._gpr is None:
            self._gpr = extract_distances(self.streams, self.cfg, self.times)
        return self._gpr

    def rotations(self):
        if self._rot is None:
            if self.streams.imu is not None:
                pre = preintegrate_intervals(self.streams.imu, self.times, self.cfg.fusion)
                self._rot = ([None if p is None else p.delta_R for p in pre], self.cfg.fusion.initial_yaw)
            else:
                log.warning("no IMU stream: dead reckoning borrows headings from ground truth")
                self._rot = _truth_rotations(self.streams, self.times)
        return self._rot

    def _start(self, speed):
        rots, yaw0 = self.rotations()
        cfg = replace(self.cfg.fusion, initial_yaw=yaw0)
        return rots, initial_state(cfg, self.times[0], speed)

    def gpr_only(self):
        d = self.gpr()
        if not d.measurements:
            raise EvaluationError("no valid GPR distance measurements")
        dist = [None if z is None else z.u_m for z in d.per_interval]
        rots, x0 = self._start(0.0)
        return dead_reckon(self.times, dist, rots, x0)

    def wheel_only(self):
        dist = [z.u_m for z in wheel_measurements(self.streams.wheel, self.times, self.cfg.fusion)]
        rots, x0 = self._start(0.0)
        return dead_reckon(self.times, dist, rots, x0)

    def graph(self, use_gpr):
        gpr = self.gpr().measurements if use_gpr else ()
        if use_gpr and not gpr:
            # every interval lost its GPR factor; the graph degrades to IMU + wheel
            log.warning("fusion: no valid GPR distance measurements")
        graph, init = build_graph(self.streams.imu, self.streams.wheel, gpr, config=self.cfg.fusion)
        f = self.cfg.fusion
        if f.solver == "sliding":
            res = optimize_sliding(graph, init, f.sliding_window)
        else:
            res = optimize(graph, init, max_iter=f.max_iter)
        return res.states, {"initial_loss": res.initial_loss, "loss": res.loss, "iterations": res.iterations,
                            "gpr_factors": graph.count("gpr"), "wheel_factors": graph.count("wheel"),
                            "imu_factors": graph.count("imu")}


_STAGES = {"gpr-only": "gpr odometry", "wheel-only": "wheel odometry", "imu+wheel": "fusion", "fusion": "fusion"}


@dataclass
class PipelineResult:
    report: EvalReport
    trajectories: Dict[str, List[RobotState]]
    gpr: Optional[GprDistances] = None


def run_pipeline(config, out_dir=None, streams: Optional[SensorStreams] = None) -> PipelineResult:
    """Run every enabled modality configuration and evaluate it.

    A failing configuration is recorded in ``report.failures`` as
    ``"<stage>: <message>"`` and does not stop the others.  With ``out_dir``
    the report (``report.json``), one ``trajectory_<name>.csv`` per
    successful configuration and ``rmse_vs_time.csv`` are written.
    """
    cfg = config if isinstance(config, PipelineConfig) else PipelineConfig.from_dict(config)
    if streams is None:
        streams = load_streams(cfg)
    runner = _Runner(streams, cfg)
    trajectories, per_modality, failures, details, curves = {}, {}, {}, {}, {}
    gt = streams.ground_truth
    for name in cfg.modalities:
        try:
            info = {}
            if name == "gpr-only":
                traj = runner.gpr_only()
                g = runner.gpr()
                info = {"gpr_measurements": len(g.measurements), "gpr_skipped": g.stream.skipped,
                        "gpr_distance_m": float(sum(abs(z.u_m) for z in g.measurements)), "k_coeff": g.k_coeff}
            elif name == "wheel-only":
                traj = runner.wheel_only()
            else:
                traj, info = runner.graph(use_gpr=name == "fusion")
        except (GprOdomError, np.linalg.LinAlgError) as exc:
            stage = "gpr extraction" if runner._gpr is None and name in ("gpr-only", "fusion") else _STAGES[name]
            failures[name] = f"{stage}: {exc}"
            per_modality[name] = None
            log.warning("%s failed (%s)", name, failures[name])
            continue
        trajectories[name] = traj
        if gt is not None:
            try:
                pairs = associate(traj, gt, cfg.max_dt)
                per_modality[name] = rmse(pairs)
                curves[name] = rmse_vs_time(pairs)
                info = {**info, "pairs": len(pairs), "dropped": pairs.dropped}
            except EvaluationError as exc:
                failures[name] = f"evaluation: {exc}"
                per_modality[name] = None
        else:
            per_modality[name] = None
        details[name] = info

    ok = [m for m in cfg.modalities if per_modality.get(m) is not None]
    primary = "fusion" if "fusion" in ok else (ok[0] if ok else "")
    length = path_length(gt.position) if gt is not None else 0.0
    report = EvalReport(per_modality[primary] if primary else float("nan"), curves.get(primary, []),
                        per_modality, length, primary, failures, details)
    if out_dir is not None:
        write_outputs(out_dir, report, trajectories, curves)
    return PipelineResult(report, trajectories, runner._gpr)


def write_outputs(out_dir, report: EvalReport, trajectories, curves):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / "report.json")
    for name, traj in trajectories.items():
        write_trajectory_csv(traj, out / f"trajectory_{name}.csv")
    names = sorted(curves)
    rows = {}
    for n in names:
        for t, r in curves[n]:
            rows.setdefault(t, {})[n] = r
    with (out / "rmse_vs_time.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s"] + names)
        for t in sorted(rows):
            w.writerow([repr(t)] + [repr(rows[t][n]) if n in rows[t] else "" for n in names])
    return out
