"""Damped-sinusoid fitting and reflection peak extraction.

Each reflection in a filtered trace is modelled as

    a(i) = beta * exp(-alpha * i) * cos(omega * i + phi) + gamma

and the parameters are estimated by weighted least squares (the maximum
likelihood estimate under independent Gaussian sample noise).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.signal import find_peaks

from .errors import InvalidInputError
from .signal_core import BScan

log = logging.getLogger(__name__)

N_PARAMS = 5
_OMEGA_EPS = 1e-6


@dataclass(frozen=True)
class SinusoidParams:
    beta: float
    alpha: float
    omega: float
    phi: float
    gamma: float

    def __post_init__(self):
        values = self.as_array()
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("sinusoid parameters must be finite")
        if self.alpha < 0:
            raise InvalidInputError("alpha must be non-negative")
        if not 0 < self.omega < np.pi:
            raise InvalidInputError("omega must lie in (0, pi)")

    def as_array(self):
        return np.array([self.beta, self.alpha, self.omega, self.phi, self.gamma], dtype=float)

    @classmethod
    def from_array(cls, x):
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class FitResult:
    """Outcome of :func:`fit_damped_sinusoid`.

    ``objective`` is the weighted sum of squared residuals at ``params``.
    """

    params: SinusoidParams
    objective: float
    converged: bool
    degenerate: bool = False
    iterations: int = 0


@dataclass(frozen=True)
class Peak:
    r: int
    d: int
    amplitude: float


@dataclass(frozen=True)
class PeakSet:
    peaks: tuple
    source_dims: tuple
    timestamp_s: float

    def __post_init__(self):
        object.__setattr__(self, "peaks", tuple(self.peaks))
        D, L = self.source_dims
        for p in self.peaks:
            if not (0 <= p.r < L and 0 <= p.d < D and 0 <= p.amplitude <= 255):
                raise InvalidInputError(f"peak {p} outside source dims {self.source_dims}")

    def __len__(self):
        return len(self.peaks)


def damped_sinusoid(params, index):
    """Evaluate the model at sample positions ``index``."""
    beta, alpha, omega, phi, gamma = np.asarray(
        params.as_array() if isinstance(params, SinusoidParams) else params, dtype=float
    )
    i = np.asarray(index, dtype=float)
    return beta * np.exp(-alpha * i) * np.cos(omega * i + phi) + gamma


def _model_and_jacobian(x, i):
    beta, alpha, omega, phi, gamma = x
    env = np.exp(-alpha * i)
    arg = omega * i + phi
    c, s = np.cos(arg), np.sin(arg)
    model = beta * env * c + gamma
    J = np.empty((i.size, N_PARAMS))
    J[:, 0] = env * c
    J[:, 1] = -i * beta * env * c
    J[:, 2] = -i * beta * env * s
    J[:, 3] = -beta * env * s
    J[:, 4] = 1.0
    return model, J


def objective(params, segment, weights=None, index=None):
    """Weighted squared residual of the model against ``segment``."""
    y = np.asarray(segment, dtype=float)
    i = np.arange(y.size, dtype=float) if index is None else np.asarray(index, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    r = damped_sinusoid(params, i) - y
    return float(np.sum(w * r * r))


_ALPHA_MAX = 5.0  # keeps exp(-alpha * i) finite over negative window indices


def _project(x):
    x[1] = min(max(x[1], 0.0), _ALPHA_MAX)
    x[2] = min(max(x[2], _OMEGA_EPS), np.pi - _OMEGA_EPS)
    return x


def dominant_omega(segment):
    """Angular frequency (rad/sample) of the strongest non-DC spectral line."""
    y = np.asarray(segment, dtype=float)
    y = y - y.mean()
    n_fft = max(256, 1 << int(np.ceil(np.log2(4 * y.size))))
    power = np.abs(np.fft.rfft(y, n=n_fft)) ** 2
    power[0] = 0.0
    k = int(np.argmax(power))
    if 0 < k < power.size - 1:
        # parabolic interpolation of the peak bin
        a, b, c = np.log(power[k - 1 : k + 2] + 1e-300)
        denom = a - 2 * b + c
        if denom < 0:
            k = k + 0.5 * (a - c) / denom
    omega = 2.0 * np.pi * k / n_fft
    return float(np.clip(omega, 1e-3, np.pi - 1e-3))


def initial_guess(segment, index=None, weights=None) -> SinusoidParams:
    """Deterministic starting point for the fit.

    omega comes from the spectrum, alpha starts at 0.01, and the amplitude,
    phase and offset are the linear least-squares solution for that
    (alpha, omega) pair.
    """
    y = np.asarray(segment, dtype=float)
    i = np.arange(y.size, dtype=float) if index is None else np.asarray(index, dtype=float)
    omega = dominant_omega(y)
    alpha = 0.01
    env = np.exp(-alpha * i)
    A = np.column_stack([env * np.cos(omega * i), env * np.sin(omega * i), np.ones_like(i)])
    sw = np.ones_like(y) if weights is None else np.sqrt(np.asarray(weights, dtype=float))
    coef, *_ = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)
    c1, c2, gamma = coef
    # c1 cos + c2 sin == beta cos(. + phi) with beta cos(phi) = c1, beta sin(phi) = -c2
    beta = float(np.hypot(c1, c2))
    phi = float(np.arctan2(-c2, c1)) if beta > 0 else 0.0
    if beta == 0.0:
        beta, phi, gamma = float(np.ptp(y) / 2), 0.0, float(y.mean())
    return SinusoidParams(beta, alpha, omega, phi, float(gamma))


def fit_damped_sinusoid(
    segment,
    init: Optional[SinusoidParams] = None,
    weights=None,
    index=None,
    max_iter: int = 100,
    rel_tol: float = 1e-10,
) -> FitResult:
    """Weighted least-squares fit of the damped sinusoid by Levenberg-Marquardt.

    Parameters
    ----------
    segment : array_like
        Observed samples, at least 6 of them.
    init : SinusoidParams, optional
        Starting point; :func:`initial_guess` is used when omitted.
    weights : array_like, optional
        Per-sample inverse variances (the diagonal of the inverse covariance).
    index : array_like, optional
        Sample positions ``i`` at which ``segment`` was taken. Defaults to
        ``0, 1, ..., n-1``.

    Returns
    -------
    FitResult
        The best iterate.  ``converged`` is False when ``max_iter`` ran out;
        a constant segment returns ``beta=0, gamma=mean`` flagged degenerate.
    """
    y = np.asarray(segment, dtype=float)
    if y.ndim != 1 or y.size < N_PARAMS + 1:
        raise InvalidInputError(f"segment needs at least {N_PARAMS + 1} samples")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("segment contains non-finite samples")
    i = np.arange(y.size, dtype=float) if index is None else np.asarray(index, dtype=float)
    if i.shape != y.shape:
        raise InvalidInputError("index must match segment length")
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != y.shape or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInputError("weights must be finite, non-negative and match the segment")

    if np.ptp(y) == 0.0:
        base = init if init is not None else SinusoidParams(0.0, 0.01, 1.0, 0.0, 0.0)
        params = SinusoidParams(0.0, base.alpha, base.omega, 0.0, float(y.mean()))
        return FitResult(params, objective(params, y, w, i), True, degenerate=True)

    if init is None:
        init = initial_guess(y, i, w)
    x = init.as_array()
    model, J = _model_and_jacobian(x, i)
    r = model - y
    f = float(np.sum(w * r * r))
    lam = 1e-3
    converged = False
    it = 0
    floor = 1e-28 * max(1.0, float(np.sum(w * y * y)))
    while it < max_iter:
        it += 1
        if f <= floor:
            converged = True
            break
        Jw = J * w[:, None]
        H = J.T @ Jw
        g = Jw.T @ r
        D = np.diag(H).copy()
        D[D <= 0] = 1e-12
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(H + lam * np.diag(D), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            x_new = _project(x + step)
            model_new, J_new = _model_and_jacobian(x_new, i)
            r_new = model_new - y
            f_new = float(np.sum(w * r_new * r_new))
            if np.isfinite(f_new) and f_new < f:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            # no descent direction left at working precision
            converged = True
            break
        decrease = f - f_new
        x, J, r, f = x_new, J_new, r_new, f_new
        lam = max(lam / 10.0, 1e-12)
        if decrease <= rel_tol * f or f <= floor:
            converged = True
            break

    if not converged:
        log.debug("damped sinusoid fit stopped after %d iterations", it)
    return FitResult(SinusoidParams.from_array(x), f, converged, False, it)


@dataclass(frozen=True)
class PeakConfig:
    min_prominence: float = 0.1
    max_peaks_per_column: Optional[int] = 4
    refine: bool = True


def _refine_peak(y, c, omega0):
    n = int(np.clip(round(2 * 2 * np.pi / omega0), 8, 64))
    start = max(0, c - n // 2)
    stop = min(y.size, start + n)
    start = max(0, stop - n)
    seg = y[start:stop]
    idx = np.arange(start, stop, dtype=float) - c
    gamma0 = float(seg.mean())
    init = SinusoidParams(float(y[c] - gamma0), 0.01, omega0, 0.0, gamma0)
    # sub-sample placement only needs a coarse optimum
    res = fit_damped_sinusoid(seg, init, index=idx, max_iter=30, rel_tol=1e-6)
    if res.degenerate:
        return c, abs(float(y[c]))
    t = np.linspace(-1.0, 1.0, 41)
    dev = np.abs(damped_sinusoid(res.params, t) - res.params.gamma)
    k = int(np.argmax(dev))
    amp = float(dev[k])
    raw = abs(float(y[c]))
    if not np.isfinite(amp) or amp > 2.0 * raw or amp < 0.5 * raw:
        # fit latched onto something else; keep the raw sample
        return c, raw
    return int(np.clip(c + round(t[k]), 0, y.size - 1)), amp


def extract_peaks(column, min_prominence: float = 0.1, max_peaks: Optional[int] = None, refine: bool = True,
                  reference: Optional[float] = None):
    """Reflection peaks of one filtered trace.

    Returns a list of ``(sample_index, amplitude)`` sorted by index.  Peaks are
    local maxima of ``|column|`` whose prominence is at least
    ``min_prominence * reference``; ``reference`` defaults to the column's
    peak magnitude.  When ``max_peaks`` is set only the most prominent ones
    are kept.
    """
    y = np.asarray(getattr(column, "samples", column), dtype=float)
    mag = np.abs(y)
    top = float(mag.max()) if mag.size else 0.0
    if reference is not None:
        top = float(reference) if top > 0 else 0.0
    if top == 0.0:
        return []
    # pad so a peak at either end still counts
    padded = np.concatenate([[0.0], mag, [0.0]])
    idx, props = find_peaks(padded, prominence=min_prominence * top)
    idx = idx - 1
    if max_peaks is not None and idx.size > max_peaks:
        keep = np.argsort(-props["prominences"], kind="stable")[:max_peaks]
        idx = np.sort(idx[keep])
    if idx.size == 0:
        return []
    if not refine:
        return [(int(c), float(mag[c])) for c in idx]
    omega0 = dominant_omega(y)
    out = [_refine_peak(y, int(c), omega0) for c in idx]
    out.sort(key=lambda p: p[0])
    return out


def peaks_to_coords(
    per_column_peaks: Sequence,
    sample_interval_ns: float,
    wave_speed_m_per_ns: float,
    dims,
    timestamp_s: float = 0.0,
    depth_per_pixel_m: Optional[float] = None,
    global_max: Optional[float] = None,
) -> PeakSet:
    """Convert per-column ``(sample_index, amplitude)`` lists into a PeakSet.

    Travel time ``index * sample_interval_ns`` becomes depth
    ``time * wave_speed / 2`` and then a pixel row of size
    ``depth_per_pixel_m`` (defaults to one sample).  Amplitudes are scaled so
    ``global_max`` (default: the strongest peak) maps to 255.
    """
    if not wave_speed_m_per_ns > 0:
        raise InvalidInputError("wave speed must be positive")
    D, L = dims
    native = sample_interval_ns * wave_speed_m_per_ns / 2.0
    pixel = native if depth_per_pixel_m is None else depth_per_pixel_m
    if global_max is None:
        amps = [a for col in per_column_peaks for _, a in col]
        global_max = max(amps) if amps else 0.0
    peaks = []
    for r, col in enumerate(per_column_peaks):
        for index, amp in col:
            depth = index * sample_interval_ns * wave_speed_m_per_ns / 2.0
            d = int(np.clip(round(depth / pixel), 0, D - 1))
            level = 0.0 if global_max <= 0 else float(np.clip(255.0 * amp / global_max, 0.0, 255.0))
            peaks.append(Peak(r, d, level))
    return PeakSet(tuple(peaks), (D, L), timestamp_s)


def bscan_peaks(b: BScan, wave_speed_m_per_ns: float, cfg: PeakConfig = PeakConfig()) -> PeakSet:
    """Peak set of a filtered B-scan, column by column.

    Prominence is judged against the strongest sample of the whole B-scan so
    reflector-free columns contribute nothing.
    """
    ref = float(np.abs(b.data).max()) if b.data.size else 0.0
    per_column = [
        extract_peaks(b.data[:, y], cfg.min_prominence, cfg.max_peaks_per_column, cfg.refine, ref)
        for y in range(b.shape[1])
    ]
    return peaks_to_coords(
        per_column, b.sample_interval_ns, wave_speed_m_per_ns, b.shape, float(b.timestamps_s[-1])
    )
