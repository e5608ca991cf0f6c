"""Sensor stream containers and the on-disk CSV schema.

One file per stream, each with a header row::

    gpr_traces.csv    t_s,trace_index,s0,...,s{D-1}
    imu.csv           t_s,ax,ay,az,gx,gy,gz
    wheel.csv         t_s,dist_m
    ground_truth.csv  t_s,x,y,z

plus ``schema.yaml`` holding the radar constants and, for foreign layouts,
the file/column mapping (see :class:`SchemaConfig`).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from ..errors import DataLoadError, InvalidInputError
from ..signal_core import BScan

log = logging.getLogger(__name__)


def _ro(a, shape_tail=()):
    a = np.array(a, dtype=float, copy=True)
    if shape_tail and (a.ndim != 1 + len(shape_tail) or a.shape[1:] != shape_tail):
        a = a.reshape((-1,) + shape_tail)
    a.setflags(write=False)
    return a


def _check_sorted(name, t):
    if t.size and np.any(np.diff(t) <= 0):
        raise InvalidInputError(f"{name} timestamps must be strictly increasing")


@dataclass(frozen=True)
class ImuStream:
    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _ro(self.t))
        object.__setattr__(self, "accel", _ro(self.accel, (3,)))
        object.__setattr__(self, "gyro", _ro(self.gyro, (3,)))
        _check_sorted("IMU", self.t)
        if not (self.accel.shape[0] == self.gyro.shape[0] == self.t.size):
            raise InvalidInputError("IMU arrays must share length")

    def samples(self):
        """As ``(accel, gyro, t)`` tuples."""
        return [(a, g, t) for a, g, t in zip(self.accel, self.gyro, self.t)]

    def __len__(self):
        return self.t.size


@dataclass(frozen=True)
class WheelStream:
    """Cumulative travelled distance (m) against time."""

    t: np.ndarray
    dist: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _ro(self.t))
        object.__setattr__(self, "dist", _ro(self.dist))
        _check_sorted("wheel", self.t)
        if self.t.shape != self.dist.shape:
            raise InvalidInputError("wheel arrays must share length")

    def distance_at(self, t):
        return np.interp(t, self.t, self.dist)

    def __len__(self):
        return self.t.size


@dataclass(frozen=True)
class GroundTruth:
    t: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", _ro(self.t))
        object.__setattr__(self, "position", _ro(self.position, (3,)))
        _check_sorted("ground truth", self.t)

    def __len__(self):
        return self.t.size


@dataclass(frozen=True)
class GprMeta:
    """Radar constants needed to interpret the traces."""

    sample_interval_ns: float = 0.1
    wave_speed_m_per_ns: float = 0.1
    scan_spacing_m: Optional[float] = None


@dataclass(frozen=True)
class SensorStreams:
    gpr: tuple
    wheel: WheelStream
    imu: Optional[ImuStream] = None
    ground_truth: Optional[GroundTruth] = None
    gpr_meta: GprMeta = GprMeta()

    def __post_init__(self):
        object.__setattr__(self, "gpr", tuple(self.gpr))
        if not self.gpr:
            raise InvalidInputError("GPR stream is mandatory")
        if self.wheel is None:
            raise InvalidInputError("wheel stream is mandatory")

    @property
    def n_traces(self):
        return sum(b.shape[1] for b in self.gpr)


def chunk_traces(data, times, width, sample_interval_ns, scan_spacing_m=None):
    """Split a ``(D, N)`` trace matrix into B-scans of ``width`` columns.

    ``width=None`` keeps a single B-scan; otherwise a trailing partial chunk
    is dropped, giving ``N // width`` windows.
    """
    data = np.asarray(data, dtype=float)
    times = np.asarray(times, dtype=float)
    n = data.shape[1]
    if width is None:
        return (BScan(data, times, sample_interval_ns, scan_spacing_m),)
    if width < 1:
        raise InvalidInputError("window width must be >= 1")
    return tuple(
        BScan(data[:, k * width : (k + 1) * width], times[k * width : (k + 1) * width],
              sample_interval_ns, scan_spacing_m)
        for k in range(n // width)
    )


# ---------------------------------------------------------------- schema

DEFAULT_FILES = {
    "gpr": "gpr_traces.csv",
    "imu": "imu.csv",
    "wheel": "wheel.csv",
    "ground_truth": "ground_truth.csv",
}
DEFAULT_COLUMNS = {
    "gpr": {"time": "t_s", "index": "trace_index", "sample_prefix": "s"},
    "imu": {"time": "t_s", "accel": ["ax", "ay", "az"], "gyro": ["gx", "gy", "gz"]},
    "wheel": {"time": "t_s", "distance": "dist_m"},
    "ground_truth": {"time": "t_s", "position": ["x", "y", "z"]},
}


@dataclass
class SchemaConfig:
    """Maps a recorded dataset's files and columns onto the stream types.

    ``time_scale`` converts the time column to seconds, ``distance_scale``
    converts wheel and ground-truth lengths to metres, ``accel_scale`` and
    ``gyro_scale`` convert IMU readings to m/s^2 and rad/s.
    """

    files: Dict[str, str] = field(default_factory=lambda: dict(DEFAULT_FILES))
    columns: Dict[str, dict] = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_COLUMNS.items()})
    time_scale: float = 1.0
    distance_scale: float = 1.0
    accel_scale: float = 1.0
    gyro_scale: float = 1.0
    window_width: Optional[int] = None
    gpr: GprMeta = field(default_factory=GprMeta)

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "SchemaConfig":
        d = dict(d or {})
        cfg = cls()
        cfg.files.update(d.pop("files", {}) or {})
        for k, v in (d.pop("columns", {}) or {}).items():
            cfg.columns.setdefault(k, {}).update(v)
        gpr = d.pop("gpr", None)
        if gpr:
            cfg.gpr = GprMeta(**gpr)
        for k, v in d.items():
            if not hasattr(cfg, k):
                raise InvalidInputError(f"unknown schema key {k!r}")
            setattr(cfg, k, v)
        return cfg

    @classmethod
    def load(cls, path) -> "SchemaConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gpr"] = asdict(self.gpr)
        return d


def _read_csv(path: Path, required: Sequence[str]):
    """Header-indexed float columns of a CSV file."""
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataLoadError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataLoadError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in required if c not in header]
        if missing:
            raise DataLoadError(f"{path}: missing columns {missing}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataLoadError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise DataLoadError(f"{path}:{lineno}: {exc}") from None
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return {h: arr[:, k] for k, h in enumerate(header)}, header


def _stream_path(root: Path, schema: SchemaConfig, name: str, mandatory: bool):
    p = root / schema.files[name]
    if not p.exists():
        if mandatory:
            raise DataLoadError(f"missing mandatory {name} stream: {p}")
        return None
    return p


def ingest_dataset(root_path, schema_config=None) -> SensorStreams:
    """Load a dataset directory into :class:`SensorStreams`.

    ``schema_config`` may be a :class:`SchemaConfig`, a dict, a path to a
    YAML file, or ``None`` (then ``<root>/schema.yaml`` is used when present).
    Timestamps are shifted so the first wheel sample is at ``t = 0``.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise DataLoadError(f"dataset directory not found: {root}")
    if schema_config is None:
        schema = SchemaConfig.load(root / "schema.yaml") if (root / "schema.yaml").exists() else SchemaConfig()
    elif isinstance(schema_config, SchemaConfig):
        schema = schema_config
    elif isinstance(schema_config, dict):
        schema = SchemaConfig.from_dict(schema_config)
    else:
        schema = SchemaConfig.load(schema_config)

    cols = schema.columns
    ts = schema.time_scale

    p = _stream_path(root, schema, "wheel", True)
    c = cols["wheel"]
    data, _ = _read_csv(p, [c["time"], c["distance"]])
    wt = data[c["time"]] * ts
    if wt.size == 0:
        raise DataLoadError(f"{p}: wheel stream is empty")
    t0 = wt[0]
    wheel = WheelStream(wt - t0, data[c["distance"]] * schema.distance_scale)

    p = _stream_path(root, schema, "gpr", True)
    c = cols["gpr"]
    data, header = _read_csv(p, [c["time"]])
    prefix = c["sample_prefix"]
    sample_cols = sorted((h for h in header if h.startswith(prefix) and h[len(prefix):].isdigit()),
                         key=lambda h: int(h[len(prefix):]))
    if not sample_cols:
        raise DataLoadError(f"{p}: no sample columns with prefix {prefix!r}")
    if data[c["time"]].size == 0:
        raise DataLoadError(f"{p}: GPR stream is empty")
    traces = np.vstack([data[h] for h in sample_cols])
    gt = data[c["time"]] * ts - t0
    meta = schema.gpr
    try:
        gpr = chunk_traces(traces, gt, schema.window_width, meta.sample_interval_ns, meta.scan_spacing_m)
    except InvalidInputError as exc:
        raise DataLoadError(f"{p}: {exc}") from None

    imu = None
    p = _stream_path(root, schema, "imu", False)
    if p is not None:
        c = cols["imu"]
        data, _ = _read_csv(p, [c["time"], *c["accel"], *c["gyro"]])
        imu = ImuStream(
            data[c["time"]] * ts - t0,
            np.column_stack([data[k] for k in c["accel"]]) * schema.accel_scale,
            np.column_stack([data[k] for k in c["gyro"]]) * schema.gyro_scale,
        )

    truth = None
    p = _stream_path(root, schema, "ground_truth", False)
    if p is not None:
        c = cols["ground_truth"]
        data, _ = _read_csv(p, [c["time"], *c["position"]])
        truth = GroundTruth(data[c["time"]] * ts - t0,
                            np.column_stack([data[k] for k in c["position"]]) * schema.distance_scale)

    return SensorStreams(gpr, wheel, imu, truth, meta)


def _write_rows(path: Path, header, columns):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(x)) for x in row])


def export_streams(streams: SensorStreams, root_path, window_width=None) -> Path:
    """Write ``streams`` in the default schema; :func:`ingest_dataset` reads it back."""
    root = Path(root_path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc

    data = np.concatenate([b.data for b in streams.gpr], axis=1)
    times = np.concatenate([b.timestamps_s for b in streams.gpr])
    D = data.shape[0]
    header = ["t_s", "trace_index"] + [f"s{k}" for k in range(D)]
    with (root / DEFAULT_FILES["gpr"]).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for n in range(data.shape[1]):
            w.writerow([repr(float(times[n])), str(n)] + [repr(float(x)) for x in data[:, n]])

    _write_rows(root / DEFAULT_FILES["wheel"], ["t_s", "dist_m"], [streams.wheel.t, streams.wheel.dist])
    if streams.imu is not None:
        imu = streams.imu
        _write_rows(root / DEFAULT_FILES["imu"], ["t_s", "ax", "ay", "az", "gx", "gy", "gz"],
                    [imu.t, *imu.accel.T, *imu.gyro.T])
    if streams.ground_truth is not None:
        g = streams.ground_truth
        _write_rows(root / DEFAULT_FILES["ground_truth"], ["t_s", "x", "y", "z"], [g.t, *g.position.T])

    if window_width is None and len(streams.gpr) > 1:
        window_width = streams.gpr[0].shape[1]
    schema = SchemaConfig(window_width=window_width, gpr=streams.gpr_meta)
    with (root / "schema.yaml").open("w") as fh:
        yaml.safe_dump(schema.to_dict(), fh, sort_keys=False)
    return root
