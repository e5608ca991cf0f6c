"""Trajectory-versus-ground-truth error metrics and the run report."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import so3
from .errors import EvaluationError

log = logging.getLogger(__name__)

HEADING_BASELINE_M = 1.0


@dataclass(frozen=True)
class Pairs:
    """Time-associated estimate/ground-truth positions.

    ``est_yaw0`` is the estimate's heading at its earliest pair, when known
    from an attitude; otherwise alignment derives it from the positions.
    """

    t: np.ndarray
    est: np.ndarray
    gt: np.ndarray
    est_yaw0: Optional[float] = None
    dropped: int = 0

    def __len__(self):
        return self.t.size


def _as_track(traj):
    """``(t, positions, yaw0)`` from states, a GroundTruth, or a ``(t, p)`` pair."""
    if hasattr(traj, "position"):
        return np.asarray(traj.t, float), np.asarray(traj.position, float), None
    if isinstance(traj, tuple) and len(traj) == 2:
        return np.asarray(traj[0], float), np.asarray(traj[1], float).reshape(-1, 3), None
    traj = list(traj)
    if not traj:
        return np.zeros(0), np.zeros((0, 3)), None
    t = np.array([s.timestamp_s for s in traj], dtype=float)
    p = np.array([s.p for s in traj], dtype=float)
    first = traj[int(np.argmin(t))]
    return t, p, so3.yaw(first.R)


def associate(traj, gt, max_dt: float = 0.1) -> Pairs:
    """Pair each estimate with the ground-truth sample nearest in time.

    Estimates with no ground truth within ``max_dt`` are dropped (counted in
    ``Pairs.dropped``).

    Raises
    ------
    EvaluationError
        If either input is empty or nothing pairs up.
    """
    te, pe, yaw0 = _as_track(traj)
    tg, pg, _ = _as_track(gt)
    if te.size == 0 or tg.size == 0:
        raise EvaluationError("cannot associate an empty trajectory")
    order = np.argsort(tg, kind="stable")
    tg, pg = tg[order], pg[order]
    k = np.clip(np.searchsorted(tg, te), 1, max(tg.size - 1, 1))
    if tg.size == 1:
        nearest = np.zeros(te.size, dtype=int)
    else:
        left = tg[k - 1]
        right = tg[k]
        nearest = np.where(np.abs(te - left) <= np.abs(right - te), k - 1, k)
    keep = np.abs(tg[nearest] - te) <= max_dt
    if not np.any(keep):
        raise EvaluationError("no estimate lies within max_dt of a ground-truth sample")
    dropped = int(te.size - keep.sum())
    if dropped:
        log.info("associate: dropped %d of %d estimates without ground truth", dropped, te.size)
    return Pairs(te[keep], pe[keep], pg[nearest[keep]], yaw0, dropped)


def _track_heading(t, p, baseline=HEADING_BASELINE_M):
    order = np.argsort(t, kind="stable")
    p = p[order]
    d = np.linalg.norm(p[:, :2] - p[0, :2], axis=1)
    far = np.nonzero(d >= baseline)[0]
    if far.size == 0:
        return None
    v = p[far[0]] - p[0]
    return math.atan2(v[1], v[0])


def anchor(pairs: Pairs) -> np.ndarray:
    """Estimate positions moved so its earliest pose coincides with ground truth.

    Translation plus a rotation about z; no scale.  The ground-truth heading
    is the direction to the first sample at least 1 m from the start.
    """
    i0 = int(np.argmin(pairs.t))
    gt_h = _track_heading(pairs.t, pairs.gt)
    est_h = pairs.est_yaw0 if pairs.est_yaw0 is not None else _track_heading(pairs.t, pairs.est)
    rot = np.eye(3)
    if gt_h is not None and est_h is not None:
        rot = so3.rot_z(gt_h - est_h)
    return (pairs.est - pairs.est[i0]) @ rot.T + pairs.gt[i0]


def errors(pairs: Pairs, align: bool = True) -> np.ndarray:
    est = anchor(pairs) if align else pairs.est
    return np.linalg.norm(est - pairs.gt, axis=1)


def rmse(pairs: Pairs, align: bool = True) -> float:
    """Root mean square position error over the pairs."""
    if len(pairs) == 0:
        raise EvaluationError("rmse needs at least one pair")
    e = errors(pairs, align)
    return float(np.sqrt(np.mean(e * e)))


def rmse_vs_time(pairs: Pairs, align: bool = True) -> List[Tuple[float, float]]:
    """``(t, rmse over all pairs up to t)`` in time order."""
    order = np.argsort(pairs.t, kind="stable")
    e2 = errors(pairs, align)[order] ** 2
    cum = np.sqrt(np.cumsum(e2) / np.arange(1, e2.size + 1))
    return [(float(t), float(r)) for t, r in zip(pairs.t[order], cum)]


def path_length(positions) -> float:
    p = np.asarray(positions, dtype=float)
    if p.shape[0] < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())


@dataclass
class EvalReport:
    """Summary of one evaluation.

    ``per_modality`` maps configuration name to RMSE, or ``None`` when that
    configuration failed (reason in ``failures``).  ``rmse_m`` and
    ``rmse_vs_time`` describe the primary configuration.
    """

    rmse_m: float
    rmse_vs_time: List[Tuple[float, float]] = field(default_factory=list)
    per_modality: Dict[str, Optional[float]] = field(default_factory=dict)
    trajectory_length_m: float = 0.0
    primary: str = ""
    failures: Dict[str, str] = field(default_factory=dict)
    details: Dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.rmse_m >= 0 or math.isnan(self.rmse_m)):
            raise EvaluationError("rmse_m must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rmse_vs_time"] = [list(x) for x in self.rmse_vs_time]
        if math.isnan(self.rmse_m):
            d["rmse_m"] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["rmse_vs_time"] = [tuple(x) for x in d.get("rmse_vs_time", [])]
        if d.get("rmse_m") is None:
            d["rmse_m"] = float("nan")
        return cls(**d)

    def to_json(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_json(Path(path).read_text())


def evaluate_trajectory(traj, gt, max_dt: float = 0.1, name: str = "estimate") -> EvalReport:
    """Single-trajectory report."""
    pairs = associate(traj, gt, max_dt)
    r = rmse(pairs)
    _, gp, _ = _as_track(gt)
    return EvalReport(r, rmse_vs_time(pairs), {name: r}, path_length(gp), name,
                      details={name: {"pairs": len(pairs), "dropped": pairs.dropped}})
