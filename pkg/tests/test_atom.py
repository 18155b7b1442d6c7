"""Tests for the driven two-level atom: steady state, evolution, g2, waiting times."""

import math

import numpy as np
import pytest

from ionphotons.atom import (AtomParams, BlochState, NoEmissionError,
                             UndefinedCorrelationError, WaitingTimeSampler,
                             evolve, excited_population_transient, g2_cw,
                             rabi_for_rate, steady_state, waiting_time_sample)

GAMMA = 1.0 / 2.6e-9


def closed_form_rho_ee(atom: AtomParams) -> float:
    w2 = atom.rabi ** 2
    return (w2 / 4.0) / (atom.detuning ** 2 + atom.gamma ** 2 / 4.0 + w2 / 2.0)


def analytic_g2_resonant(gamma: float, rabi: float, tau: np.ndarray) -> np.ndarray:
    """Resonant (zero detuning) intensity correlation, derived from the 2x2
    transient of the Bloch equations: eigenvalues -3*gamma/4 +- i*mu with
    mu = sqrt(rabi^2 - gamma^2/16); the hyperbolic branch is obtained by
    letting mu go imaginary."""
    mu = np.sqrt(complex(rabi ** 2 - gamma ** 2 / 16.0))
    t = np.asarray(tau, dtype=float)
    if mu == 0:
        osc = 1.0 + 3.0 * gamma * t / 4.0
    else:
        osc = np.cos(mu * t) + (3.0 * gamma / (4.0 * mu)) * np.sin(mu * t)
    return (1.0 - np.exp(-3.0 * gamma * t / 4.0) * osc).real


class TestSteadyState:
    def test_no_drive_is_ground(self):
        ss = steady_state(AtomParams(rabi=0.0))
        assert ss.rho_ee == pytest.approx(0.0, abs=1e-15)
        assert ss.rho_gg == pytest.approx(1.0, abs=1e-12)

    def test_saturation_limit(self):
        ss = steady_state(AtomParams(rabi=1e3 * GAMMA, detuning=0.0))
        assert ss.rho_ee == pytest.approx(0.5, abs=1e-6)

    def test_quarter_population_point(self):
        # independent oracle: long-time integration from the ground state
        atom = AtomParams(rabi=GAMMA / math.sqrt(2.0), detuning=0.0)
        long_time = evolve(atom, BlochState.ground(), 80.0 / GAMMA)
        ss = steady_state(atom)
        assert ss.rho_ee == pytest.approx(long_time.rho_ee, abs=1e-9)
        assert ss.rho_ee == pytest.approx(0.25, abs=1e-9)
        assert ss.rho_ee == pytest.approx(closed_form_rho_ee(atom), abs=1e-12)

    def test_fixed_point_under_evolution(self):
        atom = AtomParams()
        ss = steady_state(atom)
        again = evolve(atom, ss, 5.0 / GAMMA)
        assert abs(again.rho_ee - ss.rho_ee) < 1e-9
        assert abs(again.rho_gg - ss.rho_gg) < 1e-9

    def test_rejects_nonfinite_params(self):
        with pytest.raises(ValueError):
            AtomParams(gamma=float("nan"))
        with pytest.raises(ValueError):
            AtomParams(rabi=-1.0)
        with pytest.raises(ValueError):
            AtomParams(gamma=0.0)


class TestEvolve:
    def test_dark_atom_stays_ground(self):
        atom = AtomParams(rabi=0.0)
        out = evolve(atom, BlochState.ground(), 7.7e-9)
        assert out.rho_gg == pytest.approx(1.0, abs=1e-12)
        assert out.rho_ee == pytest.approx(0.0, abs=1e-12)

    def test_pure_decay_one_lifetime(self):
        atom = AtomParams(rabi=0.0)
        out = evolve(atom, BlochState.excited(), 2.6e-9)
        assert out.rho_ee == pytest.approx(math.exp(-1.0), abs=1e-6)

    def test_first_rabi_maximum(self):
        atom = AtomParams(rabi=5.0 * GAMMA, detuning=0.0)
        dt = math.pi / atom.rabi
        out = evolve(atom, BlochState.ground(), dt)
        reference = evolve(atom, BlochState.ground(), dt,
                           max_step=dt / 20000.0)
        assert out.rho_ee == pytest.approx(reference.rho_ee, abs=1e-8)
        assert out.rho_ee > 0.75  # near the first maximum of the damped cycle

    def test_rejects_bad_dt(self):
        atom = AtomParams()
        with pytest.raises(ValueError):
            evolve(atom, BlochState.ground(), 0.0)
        with pytest.raises(ValueError):
            evolve(atom, BlochState.ground(), float("inf"))

    def test_fourth_order_convergence(self):
        def as_vec(s):
            return np.array([s.rho_gg, s.rho_ee, s.rho_ge.real, s.rho_ge.imag])

        atom = AtomParams(rabi=2.0 * GAMMA, detuning=-GAMMA / 2.0)
        dt = 4.0 / GAMMA
        ref = as_vec(evolve(atom, BlochState.ground(), dt, max_step=dt / 65536.0))
        errors = []
        for n in (32, 64, 128):
            out = evolve(atom, BlochState.ground(), dt, max_step=dt / n)
            errors.append(np.linalg.norm(as_vec(out) - ref))
        for coarse, fine in zip(errors, errors[1:]):
            assert 10.0 < coarse / fine < 24.0  # halving the step gains ~2^4

    @pytest.mark.parametrize("rabi,det", [(0.3, 0.0), (1.0, -0.5), (6.0, 2.0)])
    def test_trace_and_positivity(self, rabi, det):
        atom = AtomParams(rabi=rabi * GAMMA, detuning=det * GAMMA)
        state = BlochState.ground()
        h = 1.0 / (GAMMA * 50.0)
        for _ in range(40):
            state = evolve(atom, state, 5000.0 * h, max_step=h)
            assert abs(state.rho_gg + state.rho_ee - 1.0) < 1e-9
            assert -1e-12 <= state.rho_ee <= 1.0 + 1e-12


class TestG2:
    def test_zero_delay_is_zero(self):
        curve = g2_cw(AtomParams(), np.array([0.0, 1e-9, 2e-9]))
        assert curve.values[0] == 0.0

    def test_long_delay_decorrelates(self):
        atom = AtomParams()
        curve = g2_cw(atom, np.array([50.0 / GAMMA]))
        assert curve.values[0] == pytest.approx(1.0, abs=1e-3)

    @pytest.mark.parametrize("rabi", [0.5, 1.0, 3.0])
    def test_matches_analytic_resonant_oracle(self, rabi):
        atom = AtomParams(rabi=rabi * GAMMA, detuning=0.0)
        taus = np.linspace(0.0, 20.0 / GAMMA, 400)
        curve = g2_cw(atom, taus)
        oracle = np.maximum(analytic_g2_resonant(GAMMA, atom.rabi, taus), 0.0)
        assert np.max(np.abs(curve.values - oracle)) < 1e-6

    def test_undriven_atom_has_no_correlation(self):
        with pytest.raises(UndefinedCorrelationError):
            g2_cw(AtomParams(rabi=0.0), np.array([0.0, 1e-9]))

    def test_rejects_unsorted_delays(self):
        with pytest.raises(ValueError):
            g2_cw(AtomParams(), np.array([1e-9, 0.5e-9]))


def rk4_no_jump_survival(atom: AtomParams, taus: np.ndarray) -> np.ndarray:
    """Independent oracle: numeric integration of the no-jump amplitudes."""
    def deriv(c):
        cg, ce = c
        return np.array([
            -0.5j * atom.rabi * ce,
            -0.5j * atom.rabi * cg + (1j * atom.detuning - atom.gamma / 2.0) * ce,
        ])
    h_max = min(1.0 / atom.gamma, 1.0 / atom.rabi) / 200.0
    c = np.array([1.0 + 0j, 0.0 + 0j])
    out = np.empty(taus.size)
    prev = 0.0
    for i, tau in enumerate(taus):
        span = tau - prev
        n = max(1, math.ceil(span / h_max))
        h = span / n if n else 0.0
        for _ in range(n):
            k1 = deriv(c)
            k2 = deriv(c + 0.5 * h * k1)
            k3 = deriv(c + 0.5 * h * k2)
            k4 = deriv(c + h * k3)
            c = c + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[i] = float(np.sum(np.abs(c) ** 2))
        prev = tau
    return out


class TestWaitingTimes:
    def test_deterministic_for_fixed_seed(self):
        atom = AtomParams()
        a = WaitingTimeSampler(atom).sample(np.random.default_rng(42), 100)
        b = WaitingTimeSampler(atom).sample(np.random.default_rng(42), 100)
        np.testing.assert_array_equal(a, b)

    def test_undriven_atom_never_emits(self):
        with pytest.raises(NoEmissionError):
            WaitingTimeSampler(AtomParams(rabi=0.0))
        with pytest.raises(NoEmissionError):
            waiting_time_sample(AtomParams(rabi=0.0), np.random.default_rng(0))

    def test_saturated_mean_waiting_time(self):
        atom = AtomParams(rabi=10.0 * GAMMA, detuning=0.0)
        rng = np.random.default_rng(3)
        w = WaitingTimeSampler(atom).sample(rng, 200_000)
        expected = 1.0 / (GAMMA * steady_state(atom).rho_ee)
        sigma = w.std() / math.sqrt(w.size)
        assert abs(w.mean() - expected) < 3.0 * sigma
        assert expected == pytest.approx(1.0 / (0.5 * GAMMA), rel=0.01)

    @pytest.mark.parametrize("rabi,det", [(0.51247, -0.5), (2.0, 0.0), (0.5, 0.0)])
    def test_mean_rate_matches_steady_state(self, rabi, det):
        atom = AtomParams(rabi=rabi * GAMMA, detuning=det * GAMMA)
        rng = np.random.default_rng(11)
        w = WaitingTimeSampler(atom).sample(rng, 400_000)
        expected = 1.0 / (GAMMA * steady_state(atom).rho_ee)
        sigma = w.std() / math.sqrt(w.size)
        assert abs(w.mean() - expected) < 3.0 * sigma

    def test_chi2_against_numeric_no_jump_oracle(self):
        atom = AtomParams()  # detuned default drive
        rng = np.random.default_rng(2024)
        n = 1_000_000
        samples = WaitingTimeSampler(atom).sample(rng, n)
        mean = 1.0 / (GAMMA * steady_state(atom).rho_ee)
        edges = np.linspace(0.0, 8.0 * mean, 41)[1:]
        survival = rk4_no_jump_survival(atom, edges)
        probs = np.diff(np.concatenate([[0.0], 1.0 - survival]))
        probs = np.append(probs, survival[-1])  # overflow bin
        observed = np.histogram(samples, np.concatenate([[0.0], edges]))[0]
        observed = np.append(observed, n - observed.sum())
        expected = n * probs
        assert np.all(expected > 5.0)
        chi2 = float(np.sum((observed - expected) ** 2 / expected))
        dof = probs.size - 1
        assert chi2 < dof + 3.0 * math.sqrt(2.0 * dof)

    def test_critical_damping_parameters(self):
        # degenerate eigenvalue point of the no-jump evolution
        atom = AtomParams(rabi=GAMMA / 2.0, detuning=0.0)
        sampler = WaitingTimeSampler(atom)
        taus = np.linspace(0.0, 30.0 / GAMMA, 500)
        oracle = rk4_no_jump_survival(atom, taus[1:])
        assert np.max(np.abs(sampler.survival(taus[1:]) - oracle)) < 1e-8

    def test_survival_closed_form_vs_oracle(self):
        atom = AtomParams(rabi=1.7 * GAMMA, detuning=0.8 * GAMMA)
        taus = np.linspace(0.0, 25.0 / GAMMA, 400)[1:]
        sampler = WaitingTimeSampler(atom)
        assert np.max(np.abs(sampler.survival(taus)
                             - rk4_no_jump_survival(atom, taus))) < 1e-8


class TestCalibration:
    def test_rabi_for_rate_round_trip(self):
        for rate in (1e6, 4e7, 1.5e8):
            rabi = rabi_for_rate(rate)
            atom = AtomParams(rabi=rabi)
            assert GAMMA * steady_state(atom).rho_ee == pytest.approx(rate, rel=1e-9)

    def test_rate_above_saturation_rejected(self):
        with pytest.raises(ValueError):
            rabi_for_rate(0.6 * GAMMA)


class TestBlochStateValidation:
    def test_trace_violation_rejected(self):
        with pytest.raises(ValueError):
            BlochState(0.6, 0.6, 0j)

    def test_excess_coherence_rejected(self):
        with pytest.raises(ValueError):
            BlochState(0.5, 0.5, 0.9 + 0j)

    def test_transient_starts_quadratically(self):
        atom = AtomParams(rabi=GAMMA, detuning=0.0)
        taus = np.array([1e-12, 2e-12, 4e-12])
        pops = excited_population_transient(atom, taus)
        # rho_ee ~ (rabi*tau/2)^2 for small tau
        expected = (atom.rabi * taus / 2.0) ** 2
        np.testing.assert_allclose(pops, expected, rtol=1e-3)
