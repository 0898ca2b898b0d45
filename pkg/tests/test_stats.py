import math

import numpy as np
import pytest

from helpers import make_trajectories
from uvchan import cir, evolution as ev, stats
from uvchan.params import DensityCondition, default_table
from uvchan.rng import substream


class TestTsfCf:
    def test_self_correlation_is_one(self):
        rng = substream(1, "fit/selfcorr")
        h = rng.normal(size=500) + 1j * rng.normal(size=500)
        assert stats.tsf_cf(h, h) == pytest.approx(1.0, abs=1e-12)

    def test_single_constant_doppler_path(self):
        # unit-modulus rotating phasor with a random initial phase per seed:
        # the conjugate product removes the phase, leaving exp(j*2*pi*fD*dt).
        f_d = 120.0
        dt = 1e-3
        rng = substream(2, "fit/onepath")
        phases = rng.uniform(0, 2 * math.pi, size=400)
        times = np.arange(0, 64) * dt
        h = np.exp(1j * (2 * math.pi * f_d * times[None, :] + phases[:, None]))
        curve = stats.tacf(h, times, anchor_index=0, max_lag=40)
        assert np.allclose(np.abs(curve.values), 1.0, atol=1e-12)
        expected = np.exp(1j * 2 * math.pi * f_d * curve.lags)
        assert np.allclose(curve.values, expected, atol=1e-12)

    def test_needs_realizations(self):
        with pytest.raises(stats.EstimatorError):
            stats.tsf_cf(np.array([1.0 + 0j]), np.array([1.0 + 0j]))

    def test_anchor_plus_lag_range_checked(self):
        h = np.ones((4, 10), dtype=complex)
        with pytest.raises(stats.EstimatorError):
            stats.tacf(h, np.arange(10) * 1e-3, anchor_index=5, max_lag=5)


class TestCcfFcf:
    def test_link_with_itself(self):
        rng = substream(3, "fit/ccfself")
        h = rng.normal(size=300) + 1j * rng.normal(size=300)
        curve = stats.space_ccf(h, h)
        assert abs(curve.values[0]) == pytest.approx(1.0, abs=1e-12)

    def test_fcf_zero_lag(self):
        rng = substream(4, "fit/fcf")
        grid = rng.normal(size=(200, 16)) + 1j * rng.normal(size=(200, 16))
        freqs = np.linspace(27e9, 29e9, 16)
        curve = stats.fcf(grid, freqs, anchor_freq_index=0, max_lag=0)
        assert abs(curve.values[0]) == pytest.approx(1.0, abs=1e-12)

    def test_independent_inputs_decorrelate(self):
        # independence oracle: two i.i.d. complex-gaussian ensembles
        rng = substream(5, "fit/indep")
        hits = 0
        anchors = 40
        for _ in range(anchors):
            a = rng.normal(size=300) + 1j * rng.normal(size=300)
            b = rng.normal(size=300) + 1j * rng.normal(size=300)
            if abs(stats.space_ccf(a, b).values[0]) < 0.2:
                hits += 1
        assert hits >= 0.95 * anchors

    def test_disjoint_environments_decorrelate(self):
        # links whose visible cluster sets share nothing: here literally two
        # separate environments, so the NLoS components must be independent
        table = default_table()
        law = cir.PowerLawBank.from_table(table, DensityCondition.HIGH)
        window = cir.WindowFunction(0.0, 10.0)
        cfg = ev.EnvConfig(DensityCondition.HIGH)
        n_seeds = 80
        h1 = np.zeros((n_seeds, 4), dtype=complex)
        h2 = np.zeros((n_seeds, 4), dtype=complex)
        for s in range(n_seeds):
            for env_idx, out in ((0, h1), (1, h2)):
                uavs, vehs = make_trajectories()
                state = ev.init_environment(uavs, vehs, table, cfg,
                                            seed=s + env_idx * 100_000)
                for a in range(4):
                    snap = cir.synthesize_link(state, (0, 0), 28e9, 3.1623, 0.3,
                                               cir.GroundModel(), window, 1e-3, law)
                    out[s, a] = snap.h_nlos
                    ev.advance(state, 1e-3)
        hits = sum(
            1 for a in range(4)
            if abs(stats.space_ccf(h1[:, a], h2[:, a]).values[0]) < 0.2
        )
        assert hits == 4


class TestDelaySpread:
    def test_single_ray_zero(self):
        assert stats.rms_delay_spread([3e-7], [0.5]) == 0.0

    def test_two_equal_rays(self):
        delta = 2e-7
        assert stats.rms_delay_spread([4e-7, 4e-7 + delta], [0.3, 0.3]) == \
            pytest.approx(delta / 2, rel=1e-12)

    def test_scale_invariance(self):
        rng = substream(6, "fit/ds")
        d = rng.uniform(1e-7, 1e-6, 20)
        p = rng.uniform(0.01, 1.0, 20)
        a = stats.rms_delay_spread(d, p)
        b = stats.rms_delay_spread(d, p * 7.25)
        assert a == b

    def test_zero_power_rays_ignored(self):
        d = [1e-7, 2e-7, 9e-7]
        p = [0.4, 0.6, 0.0]
        assert stats.rms_delay_spread(d, p) == stats.rms_delay_spread(d[:2], p[:2])

    def test_no_power_is_nan(self):
        assert math.isnan(stats.rms_delay_spread([1e-7], [0.0]))
        assert math.isnan(stats.rms_delay_spread([], []))


class TestTsi:
    def _trace(self, values, dt=1e-3):
        values = np.asarray(values, dtype=float)
        return stats.DelaySpreadTrace(times=np.arange(len(values)) * dt, a2=values)

    def test_constant_trace_censored(self):
        trace = self._trace(np.full(100, 2e-7))
        sample = stats.tsi(trace, anchor_index=10)
        assert sample.censored
        assert sample.tsi == pytest.approx(89e-3)

    def test_immediate_jump(self):
        a2 = np.full(50, 1e-7)
        a2[21:] = 1.2e-7  # +20% jump right after the anchor
        sample = stats.tsi(self._trace(a2), anchor_index=20)
        assert not sample.censored
        assert sample.tsi == pytest.approx(1e-3)

    def test_within_threshold_keeps_going(self):
        a2 = np.full(50, 1e-7)
        a2[21:] = 1.05e-7  # 5% never exceeds the 10% bound
        sample = stats.tsi(self._trace(a2), anchor_index=20)
        assert sample.censored

    def test_truncation_monotonicity(self):
        rng = substream(7, "fit/tsi")
        a2 = 1e-7 * (1.0 + 0.04 * np.cumsum(rng.normal(size=300)))
        a2 = np.abs(a2) + 1e-9
        full = stats.tsi(self._trace(a2), anchor_index=0)
        if not full.censored:
            cut = int(full.tsi / 1e-3) + 50
            shorter = stats.tsi(self._trace(a2[:cut]), anchor_index=0)
            assert shorter.tsi == full.tsi and not shorter.censored
        early = stats.tsi(self._trace(a2[:3]), anchor_index=0)
        assert early.censored or early.tsi <= full.tsi

    def test_undefined_anchor(self):
        a2 = np.full(10, np.nan)
        with pytest.raises(stats.EstimatorError):
            stats.tsi(self._trace(a2), anchor_index=0)


class TestDpsd:
    def _tone_curve(self, f_d=150.0, dt=1e-3, n_lag=50):
        lags = np.arange(n_lag + 1) * dt
        values = np.exp(1j * 2 * math.pi * f_d * lags)
        return stats.CorrelationCurve(kind="tacf", anchor_time=0.0, lags=lags,
                                      values=values, normalized=True)

    def test_tone_peak_within_bin(self):
        f_d = 150.0
        curve = self._tone_curve(f_d)
        spec = stats.dpsd(curve)
        peak = spec.doppler[int(np.argmax(spec.power))]
        unpadded_bin = 1.0 / ((2 * 50 + 1) * 1e-3)
        assert abs(peak - f_d) <= unpadded_bin

    def test_real_even_tacf_gives_symmetric_spectrum(self):
        lags = np.arange(41) * 1e-3
        values = np.exp(-((lags / 8e-3) ** 2)).astype(complex)
        spec = stats.dpsd(stats.CorrelationCurve("tacf", 0.0, lags, values, True))
        assert np.allclose(spec.power, spec.power[::-1], atol=1e-9)

    def test_axis_symmetric_and_nonnegative(self):
        spec = stats.dpsd(self._tone_curve())
        assert np.allclose(spec.doppler, -spec.doppler[::-1], atol=1e-12)
        assert np.all(spec.power >= 0.0)

    def test_total_power_identity(self):
        for curve in (self._tone_curve(), self._tone_curve(f_d=40.0, n_lag=30)):
            spec = stats.dpsd(curve)
            zero_lag = float(np.real(curve.values[0]))
            total = float(spec.power.sum()) / (spec.nfft * spec.window_dc_gain)
            assert total == pytest.approx(zero_lag, rel=1e-6)

    def test_nonuniform_lags_rejected(self):
        lags = np.array([0.0, 1e-3, 3e-3])
        curve = stats.CorrelationCurve("tacf", 0.0, lags, np.ones(3, complex), True)
        with pytest.raises(stats.EstimatorError):
            stats.dpsd(curve)

    def test_pure_function(self):
        curve = self._tone_curve()
        a = stats.dpsd(curve)
        b = stats.dpsd(curve)
        assert np.array_equal(a.power, b.power)


class TestFlatness:
    def test_flat_beats_peaky(self):
        flat = np.ones(256)
        peaky = np.full(256, 1e-9)
        peaky[100] = 1.0
        assert stats.spectral_flatness(flat) == pytest.approx(1.0, abs=1e-9)
        assert stats.spectral_flatness(flat) > stats.spectral_flatness(peaky)

    def test_broadening_raises_flatness(self):
        narrow = np.exp(-0.5 * ((np.arange(256) - 128) / 3.0) ** 2)
        wide = np.exp(-0.5 * ((np.arange(256) - 128) / 30.0) ** 2)
        assert stats.spectral_flatness(wide) > stats.spectral_flatness(narrow)
