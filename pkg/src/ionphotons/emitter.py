"""Photon emission streams for cw and pulsed excitation.

A stream is the ordered list of emission times of one source, quantized
to integer picoseconds at creation so that downstream correlation
arithmetic is exact and file round-trips are bit-stable.

The cw process is a renewal process: each detection-free interval is an
independent draw from the quantum-jump waiting-time law (the atom
restarts in the ground state after every emission).  Pulsed excitation
produces at most one photon per pulse by construction, plus an optional
diffuse-scatter stream that carries the residual laser light and does
not take part in two-photon interference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .atom import AtomParams, _cached_sampler

PS_PER_S = 1_000_000_000_000

DEFAULT_REP_PERIOD = 37.5e-9
DEFAULT_P_EXC = 0.20
DEFAULT_PULSE_DURATION = 1e-12
DEFAULT_COOL = 150e-6
DEFAULT_MEASURE = 50e-6


def _as_ps(seconds: float) -> int:
    return int(round(seconds * PS_PER_S))


@dataclass(frozen=True)
class EmissionStream:
    """Strictly increasing emission timestamps (integer ps) from one source."""

    source_id: str
    times: np.ndarray
    span: float

    def __post_init__(self) -> None:
        t = np.ascontiguousarray(self.times, dtype=np.int64)
        if t.ndim != 1:
            raise ValueError("times must be a 1-d array")
        if t.size:
            if np.any(np.diff(t) <= 0):
                raise ValueError("times must be strictly increasing")
            if t[0] < 0 or t[-1] > _as_ps(self.span):
                raise ValueError("times must lie within [0, span]")
        if not (self.span > 0.0 and math.isfinite(self.span)):
            raise ValueError(f"span must be positive and finite, got {self.span}")
        t.flags.writeable = False
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return int(self.times.size)


@dataclass(frozen=True)
class PulseParams:
    """Pulsed-excitation parameters.

    ``scatter_per_pulse`` is the mean number of diffuse-scatter detections
    per pulse referenced to the detector (it is not thinned again by the
    optics).  ``pulse_duration`` only sets the arrival window of scatter
    photons; excitation itself is treated as instantaneous.
    """

    rep_period: float = DEFAULT_REP_PERIOD
    p_exc: float = DEFAULT_P_EXC
    lifetime: float = 2.6e-9
    scatter_per_pulse: float = 0.0
    pulse_duration: float = DEFAULT_PULSE_DURATION

    def __post_init__(self) -> None:
        if not (0.0 <= self.p_exc <= 1.0):
            raise ValueError(f"p_exc must be in [0, 1], got {self.p_exc}")
        if not (self.lifetime > 0.0 and math.isfinite(self.lifetime)):
            raise ValueError(f"lifetime must be positive, got {self.lifetime}")
        if not (self.rep_period > self.lifetime):
            raise ValueError(
                f"rep_period {self.rep_period} must exceed lifetime {self.lifetime}")
        if not (self.scatter_per_pulse >= 0.0 and math.isfinite(self.scatter_per_pulse)):
            raise ValueError(
                f"scatter_per_pulse must be >= 0, got {self.scatter_per_pulse}")
        if not (self.pulse_duration > 0.0):
            raise ValueError(
                f"pulse_duration must be > 0, got {self.pulse_duration}")


@dataclass(frozen=True)
class DutyCycle:
    """Alternating cooling (light discarded) and measurement intervals."""

    cool: float = DEFAULT_COOL
    measure: float = DEFAULT_MEASURE

    def __post_init__(self) -> None:
        if not (self.cool > 0.0 and self.measure > 0.0):
            raise ValueError(f"duty intervals must be positive, got {self}")

    @property
    def live_fraction(self) -> float:
        return self.measure / (self.cool + self.measure)


def scatter_for_peak_ratio(detected_prob_per_pulse: float,
                           ratio: float = 0.02) -> float:
    """Scatter level (mean detections/pulse) giving a chosen zero-peak area ratio.

    With a detected single-photon probability p per pulse and scatter mean
    s, the coincidence area at zero delay relative to a side peak is
    (2 p s + s^2) / (p + s)^2; this solves that quadratic for s.
    """
    p = detected_prob_per_pulse
    if not (0.0 < p <= 1.0):
        raise ValueError(f"detected probability must be in (0, 1], got {p}")
    if not (0.0 <= ratio < 1.0):
        raise ValueError(f"ratio must be in [0, 1), got {ratio}")
    a = 1.0 - ratio
    return p * (math.sqrt(a * a + ratio * a) - a) / a


def simulate_cw_stream(atom: AtomParams, span: float,
                       rng: np.random.Generator,
                       source_id: str = "ion") -> EmissionStream:
    """Renewal emission process of a continuously driven atom over ``span`` seconds."""
    if not (span > 0.0 and math.isfinite(span)):
        raise ValueError(f"span must be positive and finite, got {span}")
    if atom.rabi == 0.0:
        return EmissionStream(source_id, np.empty(0, dtype=np.int64), span)
    sampler = _cached_sampler(atom)
    rate = sampler.mean_emission_rate()
    chunks: list[np.ndarray] = []
    t_acc = 0.0
    while t_acc < span:
        remaining = span - t_acc
        est = remaining * rate
        n = int(min(max(est * 1.05 + 4.0 * math.sqrt(est + 1.0) + 16.0, 1024), 4e6))
        waits = sampler.sample(rng, n)
        times = t_acc + np.cumsum(waits)
        chunks.append(times)
        t_acc = float(times[-1])
    all_times = np.concatenate(chunks)
    ticks = np.rint(all_times * PS_PER_S).astype(np.int64)
    ticks = ticks[(ticks >= 0) & (ticks <= _as_ps(span))]
    ticks = np.unique(ticks)  # ps quantization may collide sub-ps waits
    return EmissionStream(source_id, ticks, span)


def simulate_pulsed_stream(pulse: PulseParams, span: float,
                           rng: np.random.Generator,
                           source_id: str = "ion",
                           ) -> tuple[EmissionStream, EmissionStream]:
    """Photon and scatter streams for a periodic train of ultrashort pulses.

    Each pulse excites the atom with probability ``p_exc`` and the single
    resulting photon is emitted after an exponential lifetime delay; a
    second photon within the same pulse cannot occur.  Scatter detections
    are Poisson with the configured per-pulse mean, uniform over the pulse
    duration.
    """
    if not (span > pulse.rep_period):
        raise ValueError(
            f"span {span} must exceed the pulse period {pulse.rep_period}")
    rep_ps = _as_ps(pulse.rep_period)
    span_ps = _as_ps(span)
    n_pulses = int(span_ps // rep_ps)
    pulse_ticks = np.arange(n_pulses, dtype=np.int64) * rep_ps

    excited = rng.random(n_pulses) < pulse.p_exc
    delays = rng.exponential(pulse.lifetime, int(excited.sum()))
    ion_ticks = pulse_ticks[excited] + np.rint(delays * PS_PER_S).astype(np.int64)
    ion_ticks = np.unique(ion_ticks[(ion_ticks >= 0) & (ion_ticks <= span_ps)])

    dur_ps = max(1, _as_ps(pulse.pulse_duration))
    counts = rng.poisson(pulse.scatter_per_pulse, n_pulses)
    scatter_base = np.repeat(pulse_ticks, counts)
    offsets = rng.integers(0, dur_ps, scatter_base.size, dtype=np.int64)
    scatter_ticks = np.unique(scatter_base + offsets)
    scatter_ticks = scatter_ticks[(scatter_ticks >= 0) & (scatter_ticks <= span_ps)]

    return (EmissionStream(source_id, ion_ticks, span),
            EmissionStream("scatter", scatter_ticks, span))


def apply_duty_cycle(stream: EmissionStream, duty: DutyCycle) -> EmissionStream:
    """Keep only events inside measurement windows.

    The cycle starts with cooling: windows [k*T, k*T + cool) discard light
    and [k*T + cool, (k+1)*T) retain it, with T = cool + measure.
    """
    cool_ps = _as_ps(duty.cool)
    period_ps = cool_ps + _as_ps(duty.measure)
    phase = stream.times % period_ps
    kept = stream.times[phase >= cool_ps]
    return EmissionStream(stream.source_id, kept, stream.span)
