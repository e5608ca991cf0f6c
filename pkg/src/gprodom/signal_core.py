"""Radar trace containers and the detail-retention filter.

A B-scan is stored as a ``(D, L)`` array: rows are depth samples, columns are
A-scans in acquisition order.  Both containers are frozen and hold read-only
arrays, so they can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.fft import dct, idct

from .errors import InvalidInputError


def _frozen(array, dtype=float):
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class AScan:
    """One radar trace: amplitude against two-way travel time."""

    samples: np.ndarray
    sample_interval_ns: float
    timestamp_s: float

    def __post_init__(self):
        samples = _frozen(self.samples)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidInputError("A-scan needs a non-empty 1-D sample vector")
        if not self.sample_interval_ns > 0:
            raise InvalidInputError("sample_interval_ns must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def depth(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class BScan:
    """A chronological stack of A-scans.

    Parameters
    ----------
    data : array, shape (D, L)
        Column ``y`` is the ``y``-th A-scan.
    timestamps_s : array, shape (L,)
        Strictly increasing acquisition times.
    sample_interval_ns : float
        Two-way time per depth sample.
    scan_spacing_m : float or None
        Nominal along-track distance between columns, if known.
    """

    data: np.ndarray
    timestamps_s: np.ndarray
    sample_interval_ns: float
    scan_spacing_m: Optional[float] = None

    def __post_init__(self):
        data = _frozen(self.data)
        times = _frozen(self.timestamps_s)
        if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
            raise InvalidInputError(f"B-scan must be a non-empty 2-D array, got shape {data.shape}")
        if times.shape != (data.shape[1],):
            raise InvalidInputError("one timestamp per column required")
        if np.any(np.diff(times) <= 0):
            raise InvalidInputError("column timestamps must be strictly increasing")
        if not self.sample_interval_ns > 0:
            raise InvalidInputError("sample_interval_ns must be positive")
        if self.scan_spacing_m is not None and not self.scan_spacing_m > 0:
            raise InvalidInputError("scan_spacing_m must be positive when given")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "timestamps_s", times)

    @classmethod
    def from_columns(cls, columns: Sequence[AScan], scan_spacing_m=None) -> "BScan":
        if len(columns) == 0:
            raise InvalidInputError("B-scan needs at least one column")
        depth = {c.depth for c in columns}
        dt = {c.sample_interval_ns for c in columns}
        if len(depth) != 1 or len(dt) != 1:
            raise InvalidInputError("all A-scans in a B-scan must share depth and sample interval")
        data = np.stack([c.samples for c in columns], axis=1)
        times = [c.timestamp_s for c in columns]
        return cls(data, times, columns[0].sample_interval_ns, scan_spacing_m)

    @property
    def shape(self):
        """``(D, L)``."""
        return self.data.shape

    @property
    def columns(self):
        return tuple(
            AScan(self.data[:, y], self.sample_interval_ns, float(self.timestamps_s[y]))
            for y in range(self.data.shape[1])
        )

    def with_data(self, data) -> "BScan":
        """Same timing metadata, new samples."""
        return BScan(data, self.timestamps_s, self.sample_interval_ns, self.scan_spacing_m)


@dataclass(frozen=True)
class FilterConfig:
    """Parameters of :func:`detail_retention`.

    ``dc_window`` is the length (in samples) of the moving mean subtracted from
    each trace before the spectral cut; ``None`` means the whole trace, which
    reduces to removing the trace mean.
    """

    dc_window: Optional[int] = None
    cutoff_fraction: float = 0.05
    amplitude_floor: float = 0.1

    def __post_init__(self):
        if self.dc_window is not None and self.dc_window < 1:
            raise InvalidInputError("dc_window must be >= 1")
        if not 0.0 < self.cutoff_fraction < 1.0:
            raise InvalidInputError("cutoff_fraction must lie in (0, 1)")
        if not 0.0 <= self.amplitude_floor < 1.0:
            raise InvalidInputError("amplitude_floor must lie in [0, 1)")


def remove_background(b: BScan) -> BScan:
    """Subtract the across-track mean of every depth row.

    Horizontally constant energy (direct coupling, ground bounce, antenna
    ringing) cancels; anything that changes from trace to trace survives.
    """
    if b is None or b.data.size == 0:
        raise InvalidInputError("empty B-scan")
    data = b.data - b.data.mean(axis=1, keepdims=True)
    return b.with_data(data)


def _moving_mean(x, window):
    # centred moving mean along axis 0, shrinking at the edges
    n = x.shape[0]
    if window >= n:
        return np.broadcast_to(x.mean(axis=0, keepdims=True), x.shape)
    c = np.cumsum(np.vstack([np.zeros((1, x.shape[1])), x]), axis=0)
    half = window // 2
    lo = np.clip(np.arange(n) - half, 0, n)
    hi = np.clip(np.arange(n) - half + window, 0, n)
    return (c[hi] - c[lo]) / (hi - lo)[:, None]


def highpass_columns(data: np.ndarray, cutoff_fraction: float) -> np.ndarray:
    """Zero every DCT-II bin below ``cutoff_fraction`` of Nyquist, per column.

    The even-symmetric extension of the DCT avoids the wrap-around jump a
    plain FFT cut would ring on when a trace starts and ends at different
    levels.  With the orthonormal transform this is an orthogonal projection,
    so applying it twice is the same as applying it once.
    """
    n = data.shape[0]
    coeffs = dct(data, type=2, norm="ortho", axis=0)
    coeffs[np.arange(n) / n < cutoff_fraction] = 0.0  # bin k sits at k/n of Nyquist
    return idct(coeffs, type=2, norm="ortho", axis=0)


def detail_retention(b: BScan, cfg: FilterConfig = FilterConfig()) -> BScan:
    """Suppress slow, weak variation in every trace while keeping the peaks.

    Per column: subtract the moving mean (dewow), drop spectral content below
    ``cfg.cutoff_fraction`` of the Nyquist band, then zero samples smaller
    than ``cfg.amplitude_floor`` times the column's peak magnitude.
    """
    data = b.data
    if data.shape[0] < 4:
        raise InvalidInputError(f"need at least 4 samples per trace, got {data.shape[0]}")
    if not np.all(np.isfinite(data)):
        raise InvalidInputError("B-scan contains non-finite samples")

    window = data.shape[0] if cfg.dc_window is None else cfg.dc_window
    out = data - _moving_mean(data, window)
    out = highpass_columns(out, cfg.cutoff_fraction)
    if cfg.amplitude_floor > 0:
        peak = np.abs(out).max(axis=0, keepdims=True)
        out[np.abs(out) < cfg.amplitude_floor * peak] = 0.0
    return b.with_data(out)
