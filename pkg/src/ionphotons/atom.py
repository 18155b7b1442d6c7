"""Driven two-level atom: Bloch evolution, intensity correlation, emission waiting times.

The atom is a closed two-level system driven by a classical field (Rabi
frequency ``rabi``, detuning ``detuning``) and damped by spontaneous
emission at rate ``gamma``.  Everything downstream (emission streams,
correlation curves) derives from two objects computed here:

* the density-matrix evolution, integrated with a fixed-step RK4 scheme,
  which yields the normalized intensity correlation g2(tau) as the
  excited-state transient from the ground state divided by its steady
  value, and
* the quantum-jump waiting-time law: after an emission the atom restarts
  in the ground state and the delay to the next emission is distributed
  as w(tau) = gamma * rho_ee of the conditional (no-jump) evolution.

All rates are angular (rad/s), all times are seconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

DEFAULT_LIFETIME = 2.6e-9
DEFAULT_GAMMA = 1.0 / DEFAULT_LIFETIME
DEFAULT_DETUNING = -DEFAULT_GAMMA / 2.0
# Raw emission rate that delivers the nominal detected count rate of
# 4e4/s once the 1e-3 end-to-end detection efficiency is paid.
DEFAULT_EMISSION_RATE = 4.0e7

# Substep rule for the fixed-step integrator: at least this many steps
# per fastest timescale of the problem.
STEPS_PER_TIMESCALE = 50


class NoEmissionError(ValueError):
    """The atom is not driven, so it never emits."""


class UndefinedCorrelationError(ValueError):
    """Normalized correlation is undefined (zero steady-state intensity)."""


def rabi_for_rate(rate: float, gamma: float = DEFAULT_GAMMA,
                  detuning: float = DEFAULT_DETUNING) -> float:
    """Rabi frequency at which the steady emission rate gamma*rho_ee equals ``rate``.

    Inverts the closed-form steady state
    rho_ee = (W^2/4) / (detuning^2 + gamma^2/4 + W^2/2); only rates below
    the saturation limit gamma/2 are reachable.
    """
    if not (0.0 < rate and math.isfinite(rate)):
        raise ValueError(f"rate must be positive and finite, got {rate}")
    rho = rate / gamma
    if rho >= 0.5:
        raise ValueError(
            f"target rate {rate} exceeds the saturation limit {0.5 * gamma}")
    return math.sqrt(rho * (detuning ** 2 + gamma ** 2 / 4.0) / (0.25 - rho / 2.0))


DEFAULT_RABI = rabi_for_rate(DEFAULT_EMISSION_RATE)


@dataclass(frozen=True)
class AtomParams:
    """Drive parameters of the two-level transition (angular rates, rad/s)."""

    gamma: float = DEFAULT_GAMMA
    rabi: float = DEFAULT_RABI
    detuning: float = DEFAULT_DETUNING

    def __post_init__(self) -> None:
        for name in ("gamma", "rabi", "detuning"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"AtomParams.{name} must be finite, got {v}")
        if self.gamma <= 0.0:
            raise ValueError(f"AtomParams.gamma must be > 0, got {self.gamma}")
        if self.rabi < 0.0:
            raise ValueError(f"AtomParams.rabi must be >= 0, got {self.rabi}")


@dataclass(frozen=True)
class BlochState:
    """Density matrix of the two-level atom: populations plus coherence."""

    rho_gg: float
    rho_ee: float
    rho_ge: complex

    _TRACE_TOL = 1e-9

    def __post_init__(self) -> None:
        vals = (self.rho_gg, self.rho_ee, self.rho_ge.real, self.rho_ge.imag)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"BlochState entries must be finite, got {self}")
        if abs(self.rho_gg + self.rho_ee - 1.0) > self._TRACE_TOL:
            raise ValueError(
                f"trace must be 1 within {self._TRACE_TOL}: "
                f"{self.rho_gg} + {self.rho_ee}")
        if not (-self._TRACE_TOL <= self.rho_ee <= 1.0 + self._TRACE_TOL):
            raise ValueError(f"rho_ee out of [0, 1]: {self.rho_ee}")
        if abs(self.rho_ge) ** 2 > self.rho_gg * self.rho_ee + self._TRACE_TOL:
            raise ValueError(f"coherence exceeds the positivity bound: {self}")

    @classmethod
    def ground(cls) -> "BlochState":
        return cls(1.0, 0.0, 0j)

    @classmethod
    def excited(cls) -> "BlochState":
        return cls(0.0, 1.0, 0j)

    def _vector(self) -> np.ndarray:
        return np.array([self.rho_gg, self.rho_ee,
                         self.rho_ge.real, self.rho_ge.imag])

    @staticmethod
    def _from_vector(x: np.ndarray) -> "BlochState":
        return BlochState(float(x[0]), float(x[1]), complex(x[2], x[3]))


@dataclass(frozen=True)
class G2Curve:
    """Normalized intensity correlation on an ordered, non-negative delay grid."""

    delays: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.delays, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if d.shape != v.shape or d.ndim != 1:
            raise ValueError("delays and values must be 1-d arrays of equal length")
        if d.size and (d[0] < 0.0 or np.any(np.diff(d) <= 0.0)):
            raise ValueError("delays must be non-negative and strictly increasing")
        if np.any(v < 0.0) or not np.all(np.isfinite(v)):
            raise ValueError("values must be finite and non-negative")
        object.__setattr__(self, "delays", d)
        object.__setattr__(self, "values", v)


def bloch_matrix(atom: AtomParams) -> np.ndarray:
    """Generator of the Bloch equations on x = (rho_gg, rho_ee, Re rho_ge, Im rho_ge)."""
    g, w, d = atom.gamma, atom.rabi, atom.detuning
    return np.array([
        [0.0,      g,     0.0,      -w],
        [0.0,     -g,     0.0,       w],
        [0.0,      0.0,  -0.5 * g,   d],
        [0.5 * w, -0.5 * w, -d,     -0.5 * g],
    ])


def default_max_step(atom: AtomParams) -> float:
    """Step bound: a fraction of the fastest timescale among 1/gamma, 1/rabi, 1/|detuning|."""
    scale = 1.0 / atom.gamma
    if atom.rabi > 0.0:
        scale = min(scale, 1.0 / atom.rabi)
    if atom.detuning != 0.0:
        scale = min(scale, 1.0 / abs(atom.detuning))
    return scale / STEPS_PER_TIMESCALE


def _rk4_map(m: np.ndarray, h: float) -> np.ndarray:
    """One-step RK4 propagator for the linear system x' = m x."""
    a1 = h * m
    a2 = a1 @ a1
    return (np.eye(m.shape[0]) + a1 + a2 / 2.0
            + a2 @ a1 / 6.0 + a2 @ a2 / 24.0)


def steady_state(atom: AtomParams) -> BlochState:
    """Fixed point of the Bloch evolution (exact solve of the linear system)."""
    m = bloch_matrix(atom)
    a = m.copy()
    a[0] = [1.0, 1.0, 0.0, 0.0]  # replace the redundant row with the trace constraint
    b = np.array([1.0, 0.0, 0.0, 0.0])
    x = np.linalg.solve(a, b)
    return BlochState._from_vector(x)


def evolve(atom: AtomParams, state: BlochState, dt: float,
           max_step: float | None = None) -> BlochState:
    """Propagate a Bloch state by ``dt`` with fixed-step RK4."""
    if not (dt > 0.0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    h_max = default_max_step(atom) if max_step is None else float(max_step)
    if h_max <= 0.0:
        raise ValueError(f"max_step must be > 0, got {h_max}")
    n = max(1, math.ceil(dt / h_max))
    r = _rk4_map(bloch_matrix(atom), dt / n)
    x = state._vector()
    for _ in range(n):
        x = r @ x
    return BlochState._from_vector(x)


def excited_population_transient(atom: AtomParams, delays: np.ndarray,
                                 max_step: float | None = None) -> np.ndarray:
    """rho_ee(tau) starting from the ground state, evaluated exactly at ``delays``.

    The integrator lands on each requested delay by subdividing every
    grid interval into RK4 substeps no longer than the step bound.
    """
    d = np.asarray(delays, dtype=float)
    if d.size == 0:
        return np.empty(0)
    if d[0] < 0.0 or np.any(np.diff(d) <= 0.0):
        raise ValueError("delays must be non-negative and strictly increasing")
    h_max = default_max_step(atom) if max_step is None else float(max_step)
    m = bloch_matrix(atom)
    x = BlochState.ground()._vector()
    out = np.empty(d.size)
    prev = 0.0
    for i, tau in enumerate(d):
        dt = tau - prev
        if dt > 0.0:
            n = max(1, math.ceil(dt / h_max))
            r = _rk4_map(m, dt / n)
            for _ in range(n):
                x = r @ x
        out[i] = x[1]
        prev = tau
    return out


def g2_cw(atom: AtomParams, delays: np.ndarray,
          max_step: float | None = None) -> G2Curve:
    """Normalized intensity correlation of the continuously driven atom.

    g2(tau) is the excited population regrown from the ground state
    (detection projects the atom there) divided by the steady-state
    population; g2(0) = 0 exactly and g2 -> 1 at long delay.
    """
    ss = steady_state(atom)
    if ss.rho_ee <= 0.0:
        raise UndefinedCorrelationError(
            "steady-state emission rate is zero; g2 is undefined")
    pops = excited_population_transient(atom, delays, max_step=max_step)
    return G2Curve(np.asarray(delays, dtype=float),
                   np.maximum(pops, 0.0) / ss.rho_ee)


# ---------------------------------------------------------------------------
# Quantum-jump waiting times
# ---------------------------------------------------------------------------

class WaitingTimeSampler:
    """Inverse-CDF sampler for the delay between successive emissions.

    The no-jump amplitude evolution from the ground state is a 2x2 linear
    system with closed-form solution; the survival probability
    S(tau) = |c_g|^2 + |c_e|^2 is tabulated on an adaptively refined grid
    (midpoint error below ``tol``) out to S <= ``s_floor``, and samples are
    drawn by linear interpolation of the tabulated inverse.  Draws landing
    below the table are extended with the asymptotic exponential tail.
    """

    TOL = 3e-7
    S_FLOOR = 1e-12
    MAX_NODES = 4_000_000

    def __init__(self, atom: AtomParams):
        if atom.rabi <= 0.0:
            raise NoEmissionError("undriven atom never emits")
        self.atom = atom
        g, w, d = atom.gamma, atom.rabi, atom.detuning
        dd = 1j * d - 0.5 * g          # coefficient on c_e in the no-jump system
        bb = -0.5j * w                 # symmetric coupling between c_g and c_e
        s = np.sqrt(dd * dd + 4.0 * bb * bb) / 2.0
        self._lam_plus = dd / 2.0 + s
        self._lam_minus = dd / 2.0 - s
        self._s = s
        self._b = bb
        self._d = dd
        # both eigenvalues are strictly damped for any driven atom
        self._tail_rate = -2.0 * max(self._lam_plus.real, self._lam_minus.real)
        self._degenerate = abs(s) * (1.0 / g) < 1e-12
        self._build_table()

    def survival(self, tau: np.ndarray) -> np.ndarray:
        """No-jump probability S(tau) from the ground state."""
        cg, ce = self._amplitudes(np.asarray(tau, dtype=float))
        return (cg * cg.conj()).real + (ce * ce.conj()).real

    def density(self, tau: np.ndarray) -> np.ndarray:
        """Waiting-time density w(tau) = gamma * |c_e(tau)|^2."""
        _, ce = self._amplitudes(np.asarray(tau, dtype=float))
        return self.atom.gamma * (ce * ce.conj()).real

    def _amplitudes(self, tau: np.ndarray):
        ep = np.exp(self._lam_plus * tau)
        em = np.exp(self._lam_minus * tau)
        if self._degenerate:
            half = np.exp(0.5 * self._d * tau)
            cg = (1.0 - 0.5 * self._d * tau) * half
            ce = self._b * tau * half
        else:
            diff = (ep - em) / (2.0 * self._s)
            cg = 0.5 * (ep + em) - 0.5 * self._d * diff
            ce = self._b * diff
        return cg, ce

    def _build_table(self) -> None:
        g, w = self.atom.gamma, self.atom.rabi
        # horizon where the survival drops below the floor
        t_max = 27.7 / self._tail_rate
        while self.survival(np.array([t_max]))[0] > self.S_FLOOR:
            t_max *= 2.0
        # base grid resolving the fastest oscillation, then midpoint refinement
        fastest = min(1.0 / g, 1.0 / w)
        if self.atom.detuning != 0.0:
            fastest = min(fastest, 1.0 / abs(self.atom.detuning))
        n0 = min(int(t_max / fastest) * 4 + 16, 200_000)
        taus = np.linspace(0.0, t_max, n0)
        for _ in range(40):
            sv = self.survival(taus)
            mids = 0.5 * (taus[:-1] + taus[1:])
            sm = self.survival(mids)
            bad = np.abs(sm - 0.5 * (sv[:-1] + sv[1:])) > self.TOL
            if not bad.any() or taus.size + int(bad.sum()) > self.MAX_NODES:
                break
            taus = np.sort(np.concatenate([taus, mids[bad]]))
        self._tab_tau = taus
        # enforce monotone non-increasing survival against roundoff wiggle
        self._tab_s = np.minimum.accumulate(self.survival(taus))
        self._s_min = float(self._tab_s[-1])
        self._t_max = float(taus[-1])

    def sample(self, rng: np.random.Generator, n: int = 1) -> np.ndarray:
        """Draw ``n`` waiting times (seconds)."""
        u = rng.random(n)
        out = np.empty(n)
        tail = u < self._s_min
        if tail.any():
            ut = np.maximum(u[tail], 1e-300)
            out[tail] = self._t_max + np.log(self._s_min / ut) / self._tail_rate
        body = ~tail
        if body.any():
            ub = u[body]
            # table is descending in S: locate the bracketing cell
            idx = np.searchsorted(-self._tab_s, -ub, side="left")
            idx = np.clip(idx, 1, self._tab_s.size - 1)
            s_hi = self._tab_s[idx - 1]
            s_lo = self._tab_s[idx]
            t_lo = self._tab_tau[idx - 1]
            t_hi = self._tab_tau[idx]
            drop = s_hi - s_lo
            frac = np.where(drop > 0.0, (s_hi - ub) / np.where(drop > 0.0, drop, 1.0), 0.5)
            out[body] = t_lo + frac * (t_hi - t_lo)
        return out

    def mean_emission_rate(self) -> float:
        """Stationary emission rate gamma * rho_ee of the renewal process."""
        return self.atom.gamma * steady_state(self.atom).rho_ee


@lru_cache(maxsize=32)
def _cached_sampler(atom: AtomParams) -> WaitingTimeSampler:
    return WaitingTimeSampler(atom)


def waiting_time_sample(atom: AtomParams, rng: np.random.Generator) -> float:
    """One sample of the delay to the next emission after a detection."""
    return float(_cached_sampler(atom).sample(rng, 1)[0])
