import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gprodom.errors import InvalidInputError
from gprodom.peak_fit import (
    Peak,
    PeakConfig,
    PeakSet,
    SinusoidParams,
    bscan_peaks,
    damped_sinusoid,
    extract_peaks,
    fit_damped_sinusoid,
    initial_guess,
    objective,
    peaks_to_coords,
)
from gprodom.signal_core import BScan

TRUE = SinusoidParams(beta=1.0, alpha=0.05, omega=0.8, phi=0.3, gamma=0.1)


def _bump(n, center, amp=1.0, width=3.0):
    i = np.arange(n, dtype=float)
    return amp * np.exp(-(((i - center) / width) ** 2))


def _random_params(rng):
    return SinusoidParams(
        rng.uniform(0.5, 2.0), rng.uniform(0.01, 0.1), rng.uniform(0.3, 2.0),
        rng.uniform(-1.5, 1.5), rng.uniform(-0.5, 0.5),
    )


class TestParams:
    @pytest.mark.parametrize(
        "bad", [dict(alpha=-0.1), dict(omega=0.0), dict(omega=np.pi), dict(beta=np.nan)]
    )
    def test_invariants(self, bad):
        kw = dict(beta=1.0, alpha=0.05, omega=0.8, phi=0.3, gamma=0.1) | bad
        with pytest.raises(InvalidInputError):
            SinusoidParams(**kw)

    def test_model_at_origin(self):
        assert damped_sinusoid(TRUE, [0.0])[0] == pytest.approx(np.cos(0.3) + 0.1)


class TestFit:
    def test_recovers_from_perturbed_init(self):
        y = damped_sinusoid(TRUE, np.arange(64))
        init = SinusoidParams.from_array(TRUE.as_array() * 1.1)
        res = fit_damped_sinusoid(y, init)
        assert res.converged and not res.degenerate
        np.testing.assert_allclose(res.params.as_array(), TRUE.as_array(), rtol=1e-4)

    def test_all_zero_segment_is_degenerate(self):
        res = fit_damped_sinusoid(np.zeros(32))
        assert res.degenerate
        assert res.params.beta == 0.0 and res.params.gamma == 0.0

    def test_constant_segment_keeps_mean(self):
        res = fit_damped_sinusoid(np.full(20, 2.5))
        assert res.degenerate and res.params.gamma == 2.5

    def test_noisy_beta_median_within_five_percent(self):
        rng = np.random.default_rng(7)
        i = np.arange(64)
        clean = damped_sinusoid(TRUE, i)
        betas = [
            fit_damped_sinusoid(clean + rng.normal(0, 0.01 * TRUE.beta, i.size)).params.beta
            for _ in range(100)
        ]
        assert abs(np.median(betas) - TRUE.beta) / TRUE.beta < 0.05

    def test_iteration_cap_returns_unconverged_best(self):
        y = damped_sinusoid(TRUE, np.arange(64))
        init = SinusoidParams(0.2, 0.0, 1.9, -1.0, 0.0)
        res = fit_damped_sinusoid(y, init, max_iter=1)
        assert not res.converged
        assert res.objective <= objective(init, y)

    def test_weights_ignore_outlier(self):
        i = np.arange(48)
        y = damped_sinusoid(TRUE, i)
        y[10] += 5.0
        w = np.ones_like(y)
        w[10] = 0.0
        res = fit_damped_sinusoid(y, weights=w)
        np.testing.assert_allclose(res.params.as_array(), TRUE.as_array(), rtol=1e-4)

    @pytest.mark.parametrize(
        "segment, kwargs",
        [
            (np.zeros(5), {}),
            (np.array([0, 1, np.inf, 1, 0, 1.0]), {}),
            (np.arange(8.0), {"weights": -np.ones(8)}),
            (np.arange(8.0), {"index": np.arange(7.0)}),
        ],
    )
    def test_rejects_bad_input(self, segment, kwargs):
        with pytest.raises(InvalidInputError):
            fit_damped_sinusoid(segment, **kwargs)

    def test_initial_guess_finds_frequency(self):
        y = damped_sinusoid(TRUE, np.arange(64))
        assert initial_guess(y).omega == pytest.approx(TRUE.omega, rel=0.1)

    @pytest.mark.parametrize("seed", range(10))
    def test_local_optimality(self, seed):
        rng = np.random.default_rng(seed)
        p = _random_params(rng)
        i = np.arange(48)
        y = damped_sinusoid(p, i) + rng.normal(0, 0.02, i.size)
        res = fit_damped_sinusoid(y)
        assert res.converged
        x = res.params.as_array()
        f0 = objective(x, y)
        for k, sign in itertools.product(range(5), (-1.0, 1.0)):
            xp = x.copy()
            xp[k] *= 1.0 + sign * 1e-3
            assert objective(xp, y) >= f0 * (1 - 1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_beats_coarse_grid(self, seed):
        rng = np.random.default_rng(100 + seed)
        p = _random_params(rng)
        i = np.arange(rng.integers(16, 65), dtype=float)
        y = damped_sinusoid(p, i) + rng.normal(0, 0.05, i.size)
        alphas = np.linspace(0.0, 0.15, 6)
        omegas = np.linspace(0.2, 2.2, 16)
        phis = np.linspace(-np.pi, np.pi, 16, endpoint=False)
        gammas = np.linspace(-0.6, 0.6, 7)
        a, w, ph, g = np.meshgrid(alphas, omegas, phis, gammas, indexing="ij")
        a, w, ph, g = (v.ravel()[:, None] for v in (a, w, ph, g))
        basis = np.exp(-a * i) * np.cos(w * i + ph)
        target = y - g
        beta = np.sum(basis * target, axis=1, keepdims=True) / np.sum(basis * basis, axis=1, keepdims=True)
        grid_best = np.min(np.sum((beta * basis - target) ** 2, axis=1))
        assert fit_damped_sinusoid(y).objective <= grid_best


def test_random_draw_recovery():
    rng = np.random.default_rng(2024)
    i = np.arange(64)
    for _ in range(100):
        p = _random_params(rng)
        res = fit_damped_sinusoid(damped_sinusoid(p, i))
        np.testing.assert_allclose(res.params.as_array(), p.as_array(), rtol=1e-4)


class TestExtractPeaks:
    def test_single_pulse_location(self):
        peaks = extract_peaks(_bump(256, 120.0))
        assert len(peaks) == 1
        assert 119 <= peaks[0][0] <= 121

    def test_all_zero_column(self):
        assert extract_peaks(np.zeros(64)) == []

    def test_prominence_gate(self):
        col = _bump(256, 60.0, 1.0) + _bump(256, 180.0, 0.05)
        peaks = extract_peaks(col, min_prominence=0.1)
        assert len(peaks) == 1 and abs(peaks[0][0] - 60) <= 1

    def test_oscillating_pulse_main_lobe(self):
        u = np.arange(256, dtype=float) - 110.0
        col = np.where(u >= 0, np.exp(-0.12 * np.maximum(u, 0)) * np.sin(0.63 * u), 0.0)
        c = int(np.argmax(np.abs(col)))
        peaks = extract_peaks(col, max_peaks=1)
        assert len(peaks) == 1 and abs(peaks[0][0] - c) <= 1
        assert peaks[0][1] == pytest.approx(abs(col[c]), rel=0.05)

    def test_accepts_ascan_like(self):
        class Column:
            samples = _bump(64, 30.0)

        assert extract_peaks(Column())[0][0] == 30

    @given(
        arrays(float, st.integers(8, 80), elements=st.floats(-1, 1, allow_nan=False)),
        st.floats(0.0, 1.0),
        st.floats(0.0, 1.0),
    )
    def test_monotone_in_prominence(self, col, p1, p2):
        lo, hi = sorted((p1, p2))
        assert len(extract_peaks(col, hi, refine=False)) <= len(extract_peaks(col, lo, refine=False))

    @given(arrays(float, st.integers(8, 80), elements=st.floats(-1, 1, allow_nan=False)))
    def test_refinement_keeps_count_and_range(self, col):
        raw = extract_peaks(col, 0.2, refine=False)
        fine = extract_peaks(col, 0.2)
        assert len(fine) == len(raw)
        assert all(0 <= k < col.size and a >= 0 for k, a in fine)


class TestCoords:
    def test_identity_resampling(self):
        ps = peaks_to_coords([[(100, 3.0)]], 0.1, 0.1, (256, 1))
        assert ps.peaks[0].d == 100

    def test_global_max_maps_to_255(self):
        ps = peaks_to_coords([[(10, 2.0)], [(20, 4.0)]], 0.1, 0.1, (256, 2))
        assert [p.amplitude for p in ps.peaks] == [127.5, 255.0]

    def test_depth_of_index_200(self):
        ps = peaks_to_coords([[(200, 1.0)]], 0.1, 0.1, (256, 1))
        native = 0.1 * 0.1 / 2
        assert ps.peaks[0].d * native == pytest.approx(1.0)
        coarse = peaks_to_coords([[(200, 1.0)]], 0.1, 0.1, (64, 1), depth_per_pixel_m=0.05)
        assert coarse.peaks[0].d == 20

    def test_peakset_validates_bounds(self):
        with pytest.raises(InvalidInputError):
            PeakSet((Peak(3, 0, 10.0),), (8, 3), 0.0)

    @given(
        st.integers(1, 300),
        st.integers(1, 20),
        st.lists(st.tuples(st.integers(0, 400), st.floats(0.0, 10.0)), max_size=30),
        st.floats(0.01, 0.5),
    )
    def test_coordinates_within_dims(self, D, L, raw, pixel):
        cols = [[] for _ in range(L)]
        for k, item in enumerate(raw):
            cols[k % L].append(item)
        ps = peaks_to_coords(cols, 0.1, 0.1, (D, L), depth_per_pixel_m=pixel)
        assert all(0 <= p.r < L and 0 <= p.d < D and 0 <= p.amplitude <= 255 for p in ps.peaks)

    @given(arrays(float, st.tuples(st.integers(8, 40), st.integers(1, 6)), elements=st.floats(-1, 1, allow_nan=False)))
    def test_bscan_peaks_within_dims(self, data):
        b = BScan(data, np.arange(data.shape[1], dtype=float), 0.1)
        ps = bscan_peaks(b, 0.1, PeakConfig(refine=False))
        assert ps.source_dims == data.shape
        assert all(0 <= p.r < data.shape[1] and 0 <= p.d < data.shape[0] for p in ps.peaks)
