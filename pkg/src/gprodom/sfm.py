"""Subsurface feature matrices and shift matching.

An SFM is a coarse ``D_S x L_S`` grid holding quantized peak amplitudes
(levels 0..10).  Two SFMs taken a short time apart are aligned by searching
the horizontal shift that minimises their cosine distance; the shift times a
metres-per-column coefficient is the distance travelled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import InvalidInputError, UndefinedSimilarityError
from .peak_fit import PeakConfig, PeakSet, bscan_peaks
from .signal_core import BScan, FilterConfig, detail_retention, remove_background

log = logging.getLogger(__name__)

MAX_LEVEL = 10
_ROUNDING_FLOOR = 1e-9  # foreground below this fraction of the raw peak is treated as empty


@dataclass(frozen=True)
class SFM:
    grid: np.ndarray
    timestamp_s: float = 0.0

    def __post_init__(self):
        grid = np.array(self.grid, dtype=np.int8, copy=True)
        if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 2:
            raise InvalidInputError(f"SFM needs D_S >= 1 and L_S >= 2, got {grid.shape}")
        if grid.min() < 0 or grid.max() > MAX_LEVEL:
            raise InvalidInputError("SFM levels must lie in [0, 10]")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def dims(self):
        return self.grid.shape

    def to_text(self) -> str:
        """Compact text dump: a header then one ``row col level`` line per nonzero cell."""
        rows, cols = np.nonzero(self.grid)
        lines = [f"SFM {self.grid.shape[0]} {self.grid.shape[1]} {self.timestamp_s!r}"]
        lines += [f"{r} {c} {self.grid[r, c]}" for r, c in zip(rows, cols)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SFM":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("SFM "):
            raise InvalidInputError("missing SFM header")
        _, d, l, t = lines[0].split()
        grid = np.zeros((int(d), int(l)), dtype=np.int8)
        for ln in lines[1:]:
            r, c, v = (int(tok) for tok in ln.split())
            grid[r, c] = v
        return cls(grid, float(t))


@dataclass(frozen=True)
class ShiftMatch:
    shift_l: int
    cost: float
    overlap_w: int
    valid: bool


@dataclass(frozen=True)
class DistanceMeasurement:
    u_m: float
    t_from: float
    t_to: float
    sigma_m: float

    def __post_init__(self):
        if not self.t_to > self.t_from:
            raise InvalidInputError("measurement interval must have t_to > t_from")
        if not self.sigma_m > 0:
            raise InvalidInputError("sigma_m must be positive")


@dataclass(frozen=True)
class SfmConfig:
    """SFM construction, matching and distance-conversion settings."""

    rows: int = 64
    cols: int = 64
    max_shift: Optional[int] = None  # None -> cols // 2
    validity_threshold: float = 0.6
    min_overlap: int = 8
    sigma_base: float = 0.02
    sigma_cost: float = 0.5
    window_width: int = 128
    k_coeff: Optional[float] = None  # metres per SFM column; None -> from scan spacing
    calibration_intervals: int = 50

    @property
    def shift_limit(self):
        return self.cols // 2 if self.max_shift is None else self.max_shift


def quantize(amplitude):
    """Grayscale amplitude in [0, 255] to one of the levels 0..10."""
    return np.floor(10.0 * np.asarray(amplitude, dtype=float) / 255.0).astype(int).clip(0, MAX_LEVEL)


def build_sfm(peaks: PeakSet, dims=(64, 64)) -> SFM:
    """Rasterise a peak set onto a ``D_S x L_S`` grid of quantized levels.

    Colliding peaks keep the larger level.
    """
    ds, ls = dims
    if ds < 1 or ls < 2:
        raise InvalidInputError(f"invalid SFM dims {dims}")
    D, L = peaks.source_dims
    grid = np.zeros((ds, ls), dtype=np.int8)
    if peaks.peaks:
        d = np.array([p.d for p in peaks.peaks])
        r = np.array([p.r for p in peaks.peaks])
        m = np.array([p.amplitude for p in peaks.peaks])
        rows = (d * ds) // D
        cols = (r * ls) // L
        np.maximum.at(grid, (rows, cols), quantize(m).astype(np.int8))
    return SFM(grid, peaks.timestamp_s)


def cosine_distance(a, b) -> float:
    """``1 - <a, b> / (|a| |b|)`` with Frobenius inner product and norms."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch {a.shape} vs {b.shape}")
    # rescale first so tiny entries do not underflow when squared
    ma, mb = np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0)
    if ma == 0.0 or mb == 0.0:
        raise UndefinedSimilarityError("cosine distance undefined for an all-zero matrix")
    a = a / ma
    b = b / mb
    na = np.sqrt(np.sum(a * a))
    nb = np.sqrt(np.sum(b * b))
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("cosine distance undefined for an all-zero matrix")
    c = 1.0 - float(np.sum(a * b)) / (na * nb)
    return max(c, 0.0)


def shift_order(max_shift):
    """Candidate shifts ordered so ties resolve toward smaller ``|l|``."""
    order = [0]
    for k in range(1, max_shift + 1):
        order += [-k, k]
    return order


def overlap(s1, s2, l):
    """Column-aligned sub-matrices of two SFM grids for shift ``l``.

    ``s2[:, c + l]`` is compared with ``s1[:, c]``; a positive ``l`` means the
    content of ``s2`` sits ``l`` columns to the right.
    """
    L = s1.shape[1]
    w = L - abs(l)
    j1 = max(0, -l)
    j2 = max(0, l)
    return s1[:, j1 : j1 + w], s2[:, j2 : j2 + w]


def match_shift(s1: SFM, s2: SFM, max_shift: Optional[int] = None,
                validity_threshold: float = 0.6, min_overlap: int = 8) -> ShiftMatch:
    """Exhaustive search of the horizontal shift minimising cosine distance."""
    g1 = np.asarray(s1.grid, dtype=float)
    g2 = np.asarray(s2.grid, dtype=float)
    if g1.shape != g2.shape:
        raise InvalidInputError("SFMs must share dims")
    L = g1.shape[1]
    max_shift = L // 2 if max_shift is None else max_shift
    if not 1 <= max_shift < L:
        raise InvalidInputError(f"max_shift must lie in [1, {L - 1}]")

    # per-column sums let each candidate be scored without re-slicing norms
    sq1 = np.sum(g1 * g1, axis=0)
    sq2 = np.sum(g2 * g2, axis=0)
    c1 = np.concatenate([[0.0], np.cumsum(sq1)])
    c2 = np.concatenate([[0.0], np.cumsum(sq2)])

    best_l, best_cost = 0, np.inf
    for l in shift_order(max_shift):
        w = L - abs(l)
        j1, j2 = max(0, -l), max(0, l)
        n1 = c1[j1 + w] - c1[j1]
        n2 = c2[j2 + w] - c2[j2]
        if n1 == 0.0 or n2 == 0.0:
            continue
        dot = float(np.sum(g1[:, j1 : j1 + w] * g2[:, j2 : j2 + w]))
        cost = 1.0 - dot / np.sqrt(n1 * n2)
        cost = max(cost, 0.0)
        if cost < best_cost - 1e-12:
            best_l, best_cost = l, cost
    if not np.isfinite(best_cost):
        return ShiftMatch(0, np.inf, L, False)
    w = L - abs(best_l)
    return ShiftMatch(best_l, float(best_cost), w, bool(best_cost <= validity_threshold and w >= min_overlap))


def shift_to_distance(m: ShiftMatch, k_coeff: float, t_from: float, t_to: float,
                      direction: float = 1.0, sigma_base: float = 0.02,
                      sigma_cost: float = 0.5) -> Optional[DistanceMeasurement]:
    """Travel distance ``k_coeff * |l|`` for a valid match, else ``None``.

    ``direction`` supplies the sign, which the shift magnitude cannot.
    """
    if not k_coeff > 0:
        raise InvalidInputError("k_coeff must be positive")
    if not m.valid:
        return None
    sign = -1.0 if direction < 0 else 1.0
    return DistanceMeasurement(sign * k_coeff * abs(m.shift_l), t_from, t_to, sigma_base + sigma_cost * m.cost)


def default_k_coeff(scan_spacing_m: float, window_width: int, sfm_cols: int) -> float:
    """Metres per SFM column for traces spaced ``scan_spacing_m`` apart."""
    return scan_spacing_m * window_width / sfm_cols


def calibrate_k(matches: Sequence[ShiftMatch], reference_m: Sequence[float], n_intervals: int = 50) -> float:
    """Least-squares metres-per-column against reference distances.

    Uses the first ``n_intervals`` valid matches with a nonzero shift.
    """
    l, d = [], []
    for m, ref in zip(matches, reference_m):
        if m is None or not m.valid or m.shift_l == 0 or ref is None:
            continue
        l.append(abs(m.shift_l))
        d.append(abs(ref))
        if len(l) == n_intervals:
            break
    if not l:
        raise InvalidInputError("no usable intervals for K calibration")
    l = np.asarray(l, dtype=float)
    return float(np.dot(l, d) / np.dot(l, l))


@dataclass
class GprExtractor:
    """B-scan window to SFM: background removal, filtering, peaks, rasterisation."""

    wave_speed_m_per_ns: float = 0.1
    filter: FilterConfig = field(default_factory=FilterConfig)
    peaks: PeakConfig = field(default_factory=PeakConfig)
    sfm: SfmConfig = field(default_factory=SfmConfig)

    def peak_set(self, b: BScan) -> PeakSet:
        foreground = remove_background(b)
        scale = float(np.abs(b.data).max())
        if float(np.abs(foreground.data).max()) <= _ROUNDING_FLOOR * scale:
            # nothing but rounding residue once the common background is gone
            return PeakSet((), b.shape, float(b.timestamps_s[-1]))
        filtered = detail_retention(foreground, self.filter)
        return bscan_peaks(filtered, self.wave_speed_m_per_ns, self.peaks)

    def __call__(self, b: BScan, timestamp_s: Optional[float] = None) -> SFM:
        s = build_sfm(self.peak_set(b), (self.sfm.rows, self.sfm.cols))
        if timestamp_s is not None:
            s = SFM(s.grid, timestamp_s)
        return s


@dataclass
class DistanceStream:
    """Output of :func:`gpr_distance_stream`.

    ``matches`` has one entry per consecutive window pair, valid or not
    (``None`` when a window was missing); ``measurements`` only the valid ones.
    """

    measurements: List[DistanceMeasurement]
    matches: List[ShiftMatch]
    sfms: List[SFM]
    skipped: int = 0


def gpr_distance_stream(windows: Sequence[BScan], extractor: Optional[GprExtractor] = None,
                        times: Optional[Sequence[float]] = None, k_coeff: Optional[float] = None,
                        directions: Optional[Sequence[float]] = None) -> DistanceStream:
    """Distance measurements between consecutive B-scan windows.

    Parameters
    ----------
    windows : sequence of BScan or None
        Chronological windows of equal width, each overlapping the next.
        ``None`` entries (e.g. keyframes before enough traces exist) yield a
        ``None`` match for both adjacent intervals.
    extractor : GprExtractor
        Filter/peak/SFM configuration.
    times : sequence of float, optional
        Time stamp of each window; defaults to its last column's time.
    k_coeff : float, optional
        Metres per SFM column; derived from the windows' scan spacing when
        omitted.
    directions : sequence of float, optional
        Sign of travel for each interval (e.g. from the wheel encoder).
    """
    ex = extractor or GprExtractor()
    cfg = ex.sfm
    windows = list(windows)
    present = [w for w in windows if w is not None]
    if times is None:
        if len(present) != len(windows):
            raise InvalidInputError("times required when some windows are missing")
        times = [float(w.timestamps_s[-1]) for w in windows]
    if k_coeff is None:
        k_coeff = cfg.k_coeff
    if k_coeff is None and present:
        spacing = present[0].scan_spacing_m
        if spacing is None:
            raise InvalidInputError("k_coeff required when scan spacing is unknown")
        k_coeff = default_k_coeff(spacing, present[0].shape[1], cfg.cols)

    sfms = [None if w is None else ex(w, t) for w, t in zip(windows, times)]
    out, matches = [], []
    skipped = 0
    for k in range(len(sfms) - 1):
        if sfms[k] is None or sfms[k + 1] is None:
            matches.append(None)
            skipped += 1
            continue
        m = match_shift(sfms[k], sfms[k + 1], cfg.shift_limit, cfg.validity_threshold, cfg.min_overlap)
        matches.append(m)
        direction = 1.0 if directions is None else directions[k]
        meas = None
        if m.valid and times[k + 1] > times[k]:
            meas = shift_to_distance(m, k_coeff, times[k], times[k + 1], direction,
                                     cfg.sigma_base, cfg.sigma_cost)
        if meas is None:
            skipped += 1
        else:
            out.append(meas)
    if skipped:
        log.info("GPR matching skipped %d of %d window pairs", skipped, len(matches))
    return DistanceStream(out, matches, sfms, skipped)


def concat_traces(bscans: Sequence[BScan]):
    """Merge B-scan chunks into one ``(data, times)`` pair."""
    data = np.concatenate([b.data for b in bscans], axis=1)
    times = np.concatenate([b.timestamps_s for b in bscans])
    return data, times


def keyframe_windows(bscans: Sequence[BScan], anchor_times: Sequence[float], width: int = 128):
    """Cut one fixed-width window per anchor time.

    The window for time ``t`` holds the last ``width`` traces acquired at or
    before ``t``.  Anchors with fewer than ``width`` earlier traces get
    ``None``.
    """
    data, times = concat_traces(bscans)
    ref = bscans[0]
    out = []
    for t in anchor_times:
        end = int(np.searchsorted(times, t + 1e-9, side="right"))
        if end < width:
            out.append(None)
            continue
        out.append(BScan(data[:, end - width : end], times[end - width : end],
                         ref.sample_interval_ns, ref.scan_spacing_m))
    return out
