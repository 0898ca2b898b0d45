import cmath
import math

import numpy as np
import pytest
from scipy.constants import c as C0

from helpers import make_trajectories
from uvchan import cir, evolution as ev
from uvchan.params import (DensityCondition, Family, PowerDelayParams,
                           ScattererClass, default_table, power_delay_law)
from uvchan.rng import substream


TABLE = default_table()
WINDOW = cir.WindowFunction(0.0, 10.0)
GROUND = cir.GroundModel()
FC = 28e9
LAMBDA = C0 / FC


def make_synth_state(condition=DensityCondition.HIGH, seed=42):
    uavs, vehicles = make_trajectories()
    return ev.init_environment(uavs, vehicles, TABLE, ev.EnvConfig(condition), seed)


class TestLosTap:
    def test_static_endpoints_zero_doppler(self):
        tap = cir.los_tap([0, 0, 10], [100, 0, 2], [0, 0, 0], [0, 0, 0],
                          LAMBDA, 0.0, WINDOW, 0.0)
        assert tap.doppler == 0.0

    def test_head_on_approach_positive(self):
        # closing at 10 m/s: doppler = v * f_c / c
        tap = cir.los_tap([0, 0, 0], [100, 0, 0], [0, 0, 0], [-10, 0, 0],
                          LAMBDA, 0.0, WINDOW, 0.0)
        assert tap.doppler == pytest.approx(10.0 * FC / C0, rel=1e-12)
        assert tap.doppler == pytest.approx(933.9797, abs=1e-3)

    def test_exact_microsecond_delay(self):
        tap = cir.los_tap([0, 0, 0], [C0 * 1e-6, 0, 0], [0, 0, 0], [0, 0, 0],
                          LAMBDA, 0.0, WINDOW, 0.0)
        assert tap.delay == pytest.approx(1e-6, abs=0.0)

    def test_window_zeroes_amplitude(self):
        w = cir.WindowFunction(0.0, 0.5)
        tap = cir.los_tap([0, 0, 0], [10, 0, 0], [0, 0, 0], [0, 0, 0],
                          LAMBDA, 0.0, w, 0.75)
        assert tap.power == 0.0

    def test_degenerate(self):
        with pytest.raises(cir.SynthesisError):
            cir.los_tap([1, 1, 1], [1, 1, 1], [0, 0, 0], [0, 0, 0],
                        LAMBDA, 0.0, WINDOW, 0.0)


class TestGrTap:
    def test_image_path_length(self):
        # mirror the 50 m transmitter below ground and measure to the receiver
        tx, rx = np.array([0.0, 0, 50]), np.array([100.0, 0, 2])
        oracle = float(np.linalg.norm(np.array([0.0, 0, -50]) - rx))
        assert oracle == pytest.approx(math.sqrt(100**2 + 52**2), abs=1e-9)
        tap = cir.gr_tap(tx, rx, [0, 0, 0], [0, 0, 0], LAMBDA, 0.0, GROUND, WINDOW, 0.0)
        assert tap.delay == pytest.approx(oracle / C0, rel=1e-12)
        assert oracle == pytest.approx(112.7120, abs=5e-5)

    def test_grazing_limit_both_polarizations(self):
        for pol in ("vertical", "horizontal"):
            g = cir.GroundModel(rel_permittivity=5.0, polarization=pol)
            gamma = cir.fresnel_reflection(1e-9, g)
            assert abs(gamma) == pytest.approx(1.0, abs=1e-6)
            assert cmath.phase(gamma) == pytest.approx(math.pi, abs=1e-6)

    def test_gr_delay_exceeds_los(self):
        rng = substream(3, "fit/grdelay")
        for _ in range(200):
            tx = np.array([0.0, 0.0, rng.uniform(5, 120)])
            rx = np.array([rng.uniform(10, 200), rng.uniform(-50, 50), rng.uniform(0.5, 3)])
            los = cir.los_tap(tx, rx, [0, 0, 0], [0, 0, 0], LAMBDA, 0.0, WINDOW, 0.0)
            gr = cir.gr_tap(tx, rx, [0, 0, 0], [0, 0, 0], LAMBDA, 0.0, GROUND, WINDOW, 0.0)
            assert gr.delay >= los.delay

    def test_endpoint_on_ground_rejected(self):
        with pytest.raises(cir.SynthesisError):
            cir.gr_tap([0, 0, 50], [100, 0, 0], [0, 0, 0], [0, 0, 0],
                       LAMBDA, 0.0, GROUND, WINDOW, 0.0)


class TestNlosTap:
    def test_static_everything_zero_doppler(self):
        tap = cir.nlos_tap([0, 0, 50], [100, 0, 2], [0, 0, 0], [0, 0, 0],
                           [20, 30, 40], [80, -10, 3], 80e-9, LAMBDA, 0.0,
                           2.6881e6, 31.9204, 0.0, WINDOW, 0.0)
        assert tap.doppler == 0.0

    def test_power_law_value(self):
        # ln P at 400 ns: 2.6881e6 * 4e-7 + 31.9204 = 32.99564
        p = power_delay_law(400e-9, PowerDelayParams(2.6881e6, 31.9204, 19.9350))
        assert -math.log(p) == pytest.approx(32.99564, abs=1e-5)

    def test_tap_power_follows_law(self):
        tap = cir.nlos_tap([0, 0, 50], [100, 0, 2], [0, 0, 0], [0, 0, 0],
                           [20, 30, 40], [80, -10, 3], 80e-9, LAMBDA, 0.0,
                           2.6881e6, 31.9204, 0.0, WINDOW, 0.0)
        assert -math.log(tap.power) == pytest.approx(
            2.6881e6 * tap.delay + 31.9204, rel=1e-12)

    def test_single_bounce_reduction(self):
        # same scatterer on both sides with zero virtual delay
        tx, rx, s = np.array([0.0, 0, 50]), np.array([100.0, 0, 2]), np.array([30.0, 40, 20])
        tap = cir.nlos_tap(tx, rx, [0, 0, 0], [0, 0, 0], s, s, 0.0, LAMBDA, 0.0,
                           2.6881e6, 31.9204, 0.0, WINDOW, 0.0)
        geom = (np.linalg.norm(s - tx) + np.linalg.norm(rx - s)) / C0
        assert tap.delay == pytest.approx(geom, rel=1e-12)

    def test_causality_floor(self):
        # both scatterers hug their endpoints: the visible legs are shorter
        # than the direct path, so the delay is floored at the LoS delay
        tx, rx = np.array([0.0, 0, 50]), np.array([100.0, 0, 2])
        tap = cir.nlos_tap(tx, rx, [0, 0, 0], [0, 0, 0],
                           tx + [0.1, 0, 0.1], rx + [-0.1, 0, 0.1], 0.0,
                           LAMBDA, 0.0, 2.6881e6, 31.9204, 0.0, WINDOW, 0.0)
        los_delay = float(np.linalg.norm(rx - tx)) / C0
        assert tap.delay == pytest.approx(los_delay, rel=1e-12)

    def test_delay_never_undercuts_los(self):
        rng = substream(8, "fit/causality")
        tx, rx = np.array([0.0, 0, 50]), np.array([100.0, 0, 2])
        los_delay = float(np.linalg.norm(rx - tx)) / C0
        for _ in range(500):
            s_a = rng.uniform([-50, -50, 0.5], [150, 50, 80])
            s_z = rng.uniform([-50, -50, 0.5], [150, 50, 10])
            tap = cir.nlos_tap(tx, rx, [0, 0, 0], [0, 0, 0], s_a, s_z,
                               float(rng.exponential(80e-9)), LAMBDA, 0.0,
                               2.6881e6, 31.9204, 0.0, WINDOW, 0.0)
            assert tap.delay >= los_delay


class TestAssemble:
    def _taps(self, n_rays=4, seed=1):
        rng = substream(seed, "fit/assemble")
        taps = [cir.los_tap([0, 0, 50], [100, 0, 2], [0, 0, 0], [0, 0, 0],
                            LAMBDA, 0.0, WINDOW, 0.0),
                cir.gr_tap([0, 0, 50], [100, 0, 2], [0, 0, 0], [0, 0, 0],
                           LAMBDA, 0.0, GROUND, WINDOW, 0.0)]
        for _ in range(n_rays):
            s_a = np.array([rng.uniform(5, 80), rng.uniform(-40, 40), rng.uniform(1, 60)])
            s_z = np.array([rng.uniform(20, 95), rng.uniform(-40, 40), rng.uniform(1, 20)])
            taps.append(cir.nlos_tap([0, 0, 50], [100, 0, 2], [0, 0, 0], [0, 0, 0],
                                     s_a, s_z, 80e-9, LAMBDA, 0.0,
                                     2.6881e6, 31.9204, float(rng.normal(0, 10)),
                                     WINDOW, 0.0))
        return taps

    def test_unit_total_power(self):
        for seed in range(5):
            link = cir.assemble_link_cir(self._taps(seed=seed), ricean=3.1623, eta_gr=0.3)
            assert link.total_power() == pytest.approx(1.0, abs=1e-9)

    def test_huge_ricean_is_pure_los(self):
        link = cir.assemble_link_cir(self._taps(), ricean=1e12, eta_gr=0.3)
        los = [t for t in link.taps if t.kind == cir.TapKind.LOS][0]
        assert los.power == pytest.approx(1.0, abs=1e-9)
        assert sum(t.power for t in link.taps if t.kind != cir.TapKind.LOS) < 1e-9

    def test_zero_ricean_all_nlos(self):
        taps = [t for t in self._taps() if t.kind != cir.TapKind.GROUND_REFLECTION]
        link = cir.assemble_link_cir(taps, ricean=0.0, eta_gr=0.0)
        nlos_power = sum(t.power for t in link.taps if t.kind == cir.TapKind.NLOS)
        assert nlos_power == pytest.approx(1.0, abs=1e-12)

    def test_relative_ray_powers_preserved(self):
        taps = self._taps()
        rays = [t for t in taps if t.kind == cir.TapKind.NLOS]
        link = cir.assemble_link_cir(taps, ricean=2.0, eta_gr=0.3)
        out = [t for t in link.taps if t.kind == cir.TapKind.NLOS]
        for a, b, oa, ob in zip(rays, rays[1:], out, out[1:]):
            assert a.power / b.power == pytest.approx(oa.power / ob.power, rel=1e-9)

    def test_eta_out_of_range(self):
        with pytest.raises(cir.SynthesisError):
            cir.assemble_link_cir(self._taps(), ricean=1.0, eta_gr=1.5)

    def test_needs_exactly_one_los(self):
        taps = [t for t in self._taps() if t.kind != cir.TapKind.LOS]
        with pytest.raises(cir.SynthesisError):
            cir.assemble_link_cir(taps, ricean=1.0, eta_gr=0.3)


class TestTransferFunction:
    def _link(self, seed=2):
        rng = substream(seed, "fit/tf")
        taps = [cir.RayTap(cir.TapKind.LOS, 200e-9, 0.6, 1.0, 0.0),
                cir.RayTap(cir.TapKind.GROUND_REFLECTION, 350e-9, 0.1, 2.0, 0.0)]
        for k in range(5):
            taps.append(cir.RayTap(cir.TapKind.NLOS, float(rng.uniform(3e-7, 9e-7)),
                                   0.06, float(rng.uniform(0, 2 * math.pi)), 0.0))
        return cir.LinkCir(link=(0, 0), time=0.0, ricean=1.0, eta_gr=0.3,
                           eta_nlos=0.7, taps=taps)

    def test_chi_zero_matches_direct_sum_oracle(self):
        link = self._link()
        freqs = np.linspace(FC - 1e9, FC + 1e9, 257)
        tf = cir.transfer_function(link, freqs, 0.0, FC)
        for idx in (0, 57, 128, 256):
            f = freqs[idx]
            oracle = sum(
                math.sqrt(t.power) * cmath.exp(1j * (t.phase + t.accumulated_phase))
                * cmath.exp(-2j * math.pi * f * t.delay)
                for t in link.taps
            )
            assert tf.values[idx] == pytest.approx(oracle, abs=1e-12)

    def test_single_tap_flat_magnitude(self):
        link = cir.LinkCir(link=(0, 0), time=0.0, ricean=1.0, eta_gr=0.3, eta_nlos=0.7,
                           taps=[cir.RayTap(cir.TapKind.LOS, 500e-9, 1.0, 0.3, 0.0)])
        freqs = np.linspace(FC - 1e9, FC + 1e9, 64)
        tf = cir.transfer_function(link, freqs, 0.0, FC)
        assert np.allclose(np.abs(tf.values), 1.0, atol=1e-12)

    def test_factor_is_unity_at_carrier(self):
        link = self._link()
        for chi in (0.0, 1.35, 3.0):
            tf = cir.transfer_function(link, np.array([FC]), chi, FC)
            base = cir.transfer_function(link, np.array([FC]), 0.0, FC)
            assert tf.values[0] == pytest.approx(base.values[0], rel=1e-12)

    def test_chi_shapes_band_edges(self):
        link = self._link()
        freqs = np.array([FC - 1e9, FC + 1e9])
        flat = cir.transfer_function(link, freqs, 0.0, FC)
        shaped = cir.transfer_function(link, freqs, 1.35, FC)
        assert not np.allclose(np.abs(shaped.values), np.abs(flat.values))

    def test_idft_recovers_tap_delays(self):
        taps = [cir.RayTap(cir.TapKind.LOS, 100e-9, 0.5, 0.0, 0.0),
                cir.RayTap(cir.TapKind.NLOS, 300e-9, 0.3, 1.0, 0.0),
                cir.RayTap(cir.TapKind.NLOS, 650e-9, 0.2, 2.0, 0.0)]
        link = cir.LinkCir(link=(0, 0), time=0.0, ricean=1.0, eta_gr=0.0,
                           eta_nlos=1.0, taps=taps)
        bandwidth = 2e9
        n = 4096
        df = bandwidth / n
        freqs = FC + (np.arange(n) - n / 2) * df
        tf = cir.transfer_function(link, freqs, 0.0, FC)
        impulse = np.abs(np.fft.ifft(tf.values))
        found_bins = sorted(np.argsort(impulse)[-3:].tolist())
        expect_bins = sorted(int(round(t.delay * bandwidth)) for t in taps)
        for got, want in zip(found_bins, expect_bins):
            assert abs(got - want) <= 1

    def test_empty_grid_rejected(self):
        with pytest.raises(cir.SynthesisError):
            cir.transfer_function(self._link(), np.array([]), 0.0, FC)


class TestMatrix:
    def _cir(self, i, j):
        return cir.LinkCir(link=(i, j), time=0.0, ricean=1.0, eta_gr=0.3, eta_nlos=0.7,
                           taps=[cir.RayTap(cir.TapKind.LOS, 1e-7, 1.0, 0.0, 0.0)])

    def test_grid_shape_and_indexing(self):
        cirs = {(i, j): self._cir(i, j) for i in range(2) for j in range(3)}
        m = cir.assemble_matrix(cirs, n_uavs=2, n_vehicles=3, time=0.0)
        assert len(m.grid) == 3 and len(m.grid[0]) == 2
        assert m.entry(2, 1).link == (1, 2)

    def test_missing_link_named(self):
        cirs = {(i, j): self._cir(i, j) for i in range(2) for j in range(3)}
        del cirs[(1, 2)]
        with pytest.raises(cir.SynthesisError, match=r"vehicle 2, uav 1"):
            cir.assemble_matrix(cirs, n_uavs=2, n_vehicles=3, time=0.0)


class TestSynthesizeLink:
    def _run(self, steps=50, dt=1e-3, seed=42, collect=False):
        state = make_synth_state(seed=seed)
        law = cir.PowerLawBank.from_table(TABLE, DensityCondition.HIGH)
        window = cir.WindowFunction(0.0, 10.0)
        snaps = []
        for _ in range(steps):
            snaps.append(cir.synthesize_link(state, (0, 0), FC, 3.1623, 0.3,
                                             GROUND, window, dt, law,
                                             collect_taps=collect))
            ev.advance(state, dt)
        return snaps

    def test_power_normalization(self):
        for snap in self._run(20):
            total = abs(snap.h_los) ** 2 + abs(snap.h_gr) ** 2 + float(np.sum(snap.nlos_powers))
            assert total == pytest.approx(1.0, abs=1e-9)

    def test_delay_ordering(self):
        for snap in self._run(20, collect=True):
            taps = snap.cir.taps
            los_delay = [t for t in taps if t.kind == cir.TapKind.LOS][0].delay
            assert all(t.delay >= los_delay - 1e-18 for t in taps)

    def test_phase_derivative_matches_doppler(self):
        state = make_synth_state(seed=9)
        law = cir.PowerLawBank.from_table(TABLE, DensityCondition.HIGH)
        dt = 1e-3
        prev = cir.synthesize_link(state, (0, 0), FC, 3.1623, 0.3, GROUND,
                                   WINDOW, dt, law, collect_taps=True)
        ev.advance(state, dt)
        now = cir.synthesize_link(state, (0, 0), FC, 3.1623, 0.3, GROUND,
                                  WINDOW, dt, law, collect_taps=True)
        f_prev = prev.cir.taps[0].doppler
        f_now = now.cir.taps[0].doppler
        rate = (now.cir.taps[0].accumulated_phase - prev.cir.taps[0].accumulated_phase) / (2 * math.pi * dt)
        assert rate == pytest.approx(0.5 * (f_prev + f_now), rel=1e-12)
        assert rate == pytest.approx(f_now, rel=0.01)

    def test_window_zeroes_everything(self):
        state = make_synth_state(seed=10)
        law = cir.PowerLawBank.from_table(TABLE, DensityCondition.HIGH)
        window = cir.WindowFunction(0.0, 0.5)
        for _ in range(700):
            ev.advance(state, 1e-3)
        snap = cir.synthesize_link(state, (0, 0), FC, 3.1623, 0.3, GROUND,
                                   window, 1e-3, law, collect_taps=True)
        assert snap.h_total == 0.0
        assert all(t.power == 0.0 for t in snap.cir.taps)

    def test_nlos_rays_match_engine(self):
        state = make_synth_state(seed=11)
        law = cir.PowerLawBank.from_table(TABLE, DensityCondition.HIGH)
        twins = state.visible_twins((0, 0))
        assert twins
        taps = cir.nlos_rays(state, (0, 0), twins[0], FC, law, WINDOW)
        assert taps
        snap = cir.synthesize_link(state, (0, 0), FC, 3.1623, 0.3, GROUND,
                                   WINDOW, 1e-3, law, collect_taps=True)
        engine = {t.ray_index: t for t in snap.cir.taps
                  if t.kind == cir.TapKind.NLOS and t.twin_id == twins[0].twin_id}
        for tap in taps:
            assert tap.delay == pytest.approx(engine[tap.ray_index].delay, rel=1e-12)
            assert tap.doppler == pytest.approx(engine[tap.ray_index].doppler, rel=1e-9)
