"""Tests for emission-stream generation and the duty cycle."""

import math

import numpy as np
import pytest

from ionphotons.atom import AtomParams, steady_state
from ionphotons.correlator import cross_correlate, normalize
from ionphotons.emitter import (PS_PER_S, DutyCycle, EmissionStream,
                                PulseParams, apply_duty_cycle,
                                scatter_for_peak_ratio, simulate_cw_stream,
                                simulate_pulsed_stream)
from ionphotons.optics import DetectorParams, OpticsParams, route

GAMMA = 1.0 / 2.6e-9


class TestEmissionStream:
    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            EmissionStream("x", np.array([5, 3], dtype=np.int64), 1e-6)

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            EmissionStream("x", np.array([5, 5], dtype=np.int64), 1e-6)

    def test_rejects_out_of_span(self):
        with pytest.raises(ValueError):
            EmissionStream("x", np.array([2_000_000], dtype=np.int64), 1e-6)

    def test_times_are_read_only(self):
        s = EmissionStream("x", np.array([1, 2], dtype=np.int64), 1e-6)
        with pytest.raises(ValueError):
            s.times[0] = 0


class TestCwStream:
    def test_dark_atom_gives_empty_stream(self):
        s = simulate_cw_stream(AtomParams(rabi=0.0), 1e-3,
                               np.random.default_rng(0))
        assert len(s) == 0

    def test_deterministic_for_fixed_seed(self):
        atom = AtomParams()
        a = simulate_cw_stream(atom, 1e-4, np.random.default_rng(9))
        b = simulate_cw_stream(atom, 1e-4, np.random.default_rng(9))
        np.testing.assert_array_equal(a.times, b.times)

    def test_rejects_bad_span(self):
        with pytest.raises(ValueError):
            simulate_cw_stream(AtomParams(), 0.0, np.random.default_rng(0))

    def test_default_drive_hits_nominal_rate(self):
        # the default Rabi frequency is calibrated for 4e7 emissions/s
        span = 0.02
        s = simulate_cw_stream(AtomParams(), span, np.random.default_rng(4))
        expected = 4.0e7 * span
        assert abs(len(s) - expected) < 3.0 * math.sqrt(expected)

    def test_monotone_and_bounded(self):
        s = simulate_cw_stream(AtomParams(), 1e-3, np.random.default_rng(1))
        assert np.all(np.diff(s.times) > 0)
        assert s.times[0] >= 0
        assert s.times[-1] <= int(round(s.span * PS_PER_S))

    def test_stream_autocorrelation_matches_g2(self):
        # lossless split of one cw stream: the normalized cross-correlation
        # must reproduce the Bloch-equation g2 bin for bin
        from ionphotons.atom import g2_cw

        atom = AtomParams()
        span = 0.025  # ~1e6 emissions
        stream = simulate_cw_stream(atom, span, np.random.default_rng(77))
        assert len(stream) > 900_000
        tags = route([stream], [], OpticsParams(path_efficiency=1.0),
                     DetectorParams(qe=1.0, irf_sigma=0.0),
                     np.random.default_rng(78))
        hist = cross_correlate(tags, 1000, 30000, span=span)
        curve = normalize(hist)
        # bin-averaged theory on the same grid
        edges = np.arange(-30000, 30001, 1000) * 1e-12
        fine = np.linspace(0.0, 30e-9, 3001)
        theory_fine = g2_cw(atom, fine).values
        theory = np.empty(curve.values.size)
        for k in range(theory.size):
            lo, hi = abs(edges[k]), abs(edges[k + 1])
            lo, hi = min(lo, hi), max(lo, hi)
            if edges[k] < 0 <= edges[k + 1]:
                lo = 0.0
            sel = (fine >= lo) & (fine <= hi)
            theory[k] = theory_fine[sel].mean()
        resid = (curve.values - theory) / np.maximum(curve.stat_err, 1e-12)
        assert np.max(np.abs(resid)) < 4.0  # 60 bins, fixed seed
        assert np.mean(np.abs(resid)) < 1.5


class TestPulsedStream:
    def test_at_most_one_photon_per_pulse_and_gap_bound(self):
        pulse = PulseParams(p_exc=1.0, scatter_per_pulse=0.0)
        span = 10_000 * pulse.rep_period
        ion, scatter = simulate_pulsed_stream(pulse, span,
                                              np.random.default_rng(5))
        assert len(scatter) == 0
        rep_ps = int(round(pulse.rep_period * PS_PER_S))
        pulse_idx = ion.times // rep_ps
        assert np.unique(pulse_idx).size == pulse_idx.size  # one per pulse
        gaps = np.diff(ion.times)
        assert np.all(gaps >= rep_ps - 20.0 * pulse.lifetime * PS_PER_S)

    def test_zero_same_pulse_pairs_by_construction(self):
        pulse = PulseParams(p_exc=0.9, scatter_per_pulse=0.0)
        ion, _ = simulate_pulsed_stream(pulse, 1.0e-3, np.random.default_rng(6))
        rep_ps = int(round(pulse.rep_period * PS_PER_S))
        # delays beyond one lifetime tail can cross pulse boundaries; the
        # emission count per pulse index of origin is what is bounded
        idx = ion.times // rep_ps
        collisions = np.sum(np.diff(idx) == 0)
        # colliding indices only arise when a late photon slips past the
        # next pulse time, not from double emission
        assert collisions <= 2

    def test_excitation_probability(self):
        pulse = PulseParams(p_exc=0.2, scatter_per_pulse=0.0)
        n_pulses = 1_000_000
        span = n_pulses * pulse.rep_period + 1e-9
        ion, _ = simulate_pulsed_stream(pulse, span, np.random.default_rng(8))
        expected = 0.2 * n_pulses
        assert abs(len(ion) - expected) < 3.0 * math.sqrt(n_pulses * 0.2 * 0.8)

    def test_scatter_rate(self):
        pulse = PulseParams(p_exc=0.0, scatter_per_pulse=0.01)
        n_pulses = 200_000
        span = n_pulses * pulse.rep_period + 1e-9
        _, scatter = simulate_pulsed_stream(pulse, span,
                                            np.random.default_rng(12))
        expected = n_pulses * 0.01
        assert abs(len(scatter) - expected) < 3.0 * math.sqrt(expected)

    def test_rejects_short_span(self):
        with pytest.raises(ValueError):
            simulate_pulsed_stream(PulseParams(), 10e-9, np.random.default_rng(0))

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            PulseParams(p_exc=1.5)
        with pytest.raises(ValueError):
            PulseParams(rep_period=1e-9, lifetime=2.6e-9)
        with pytest.raises(ValueError):
            PulseParams(scatter_per_pulse=-0.1)


class TestDutyCycle:
    def test_cooling_only_events_removed(self):
        duty = DutyCycle(cool=150e-6, measure=50e-6)
        times = np.array([10, 100_000_000, 149_000_000], dtype=np.int64)  # all in cooling
        stream = EmissionStream("x", times, 400e-6)
        assert len(apply_duty_cycle(stream, duty)) == 0

    def test_huge_measure_window_is_identity(self):
        duty = DutyCycle(cool=1e-9, measure=10.0)
        times = np.arange(1_000, 900_000, 7_919, dtype=np.int64)
        stream = EmissionStream("x", times, 1e-6)
        out = apply_duty_cycle(stream, duty)
        np.testing.assert_array_equal(out.times, times)

    def test_poisson_stream_retained_fraction(self):
        rng = np.random.default_rng(33)
        span = 0.1
        n = 400_000
        times = np.unique(rng.integers(0, int(span * PS_PER_S), n))
        stream = EmissionStream("poisson", np.sort(times), span)
        duty = DutyCycle()  # 150 us / 50 us
        kept = apply_duty_cycle(stream, duty)
        # direct-counting oracle on the same stream
        period = int(round((duty.cool + duty.measure) * PS_PER_S))
        cool_ps = int(round(duty.cool * PS_PER_S))
        oracle = stream.times[(stream.times % period) >= cool_ps]
        np.testing.assert_array_equal(kept.times, oracle)
        frac = len(kept) / len(stream)
        sigma = math.sqrt(0.25 * 0.75 / len(stream))
        assert abs(frac - 0.25) < 3.0 * sigma

    def test_invalid_duty_rejected(self):
        with pytest.raises(ValueError):
            DutyCycle(cool=0.0, measure=1e-6)


class TestScatterCalibration:
    @pytest.mark.parametrize("p,ratio", [(0.2, 0.02), (2e-4, 0.02), (0.5, 0.1)])
    def test_solves_area_ratio(self, p, ratio):
        s = scatter_for_peak_ratio(p, ratio)
        assert (2.0 * p * s + s * s) / (p + s) ** 2 == pytest.approx(ratio, rel=1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            scatter_for_peak_ratio(0.0)
        with pytest.raises(ValueError):
            scatter_for_peak_ratio(0.2, ratio=1.0)
