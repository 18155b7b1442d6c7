"""Beam-splitter network, two-photon interference, and detection.

Emission streams are routed to two photon counters behind a single
primary beam splitter.  Collection, ancillary-splitter, and iris losses
are collapsed into one per-photon survival probability; detector quantum
efficiency thins independently on top of that.

Two-photon interference is modeled at the pair level: photons from the
two ions are greedily matched by nearest arrival time, and a matched
pair with arrival difference dt leaves through one common output port
("bunches") with probability

    B(dt) = overlap * exp(-dt^2 / (2 * coherence_sigma^2)),

which reproduces a Gaussian coincidence dip of depth ``overlap`` and
width set by the photon duration.  Everything else routes independently.
The bunching decision uses arrival times at the splitter; detector
timing jitter is applied afterwards.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .emitter import PS_PER_S, EmissionStream, _as_ps

# Half width at half depth of the coincidence dip is
# coherence_sigma * sqrt(2 ln 2); the default realizes a 5.3 ns half width.
DIP_HALF_WIDTH_DEFAULT = 5.3e-9
HWHD_FACTOR = math.sqrt(2.0 * math.log(2.0))
COHERENCE_SIGMA_DEFAULT = DIP_HALF_WIDTH_DEFAULT / HWHD_FACTOR

TAG_DTYPE = np.dtype([("channel", "u1"), ("time", "<u8")])


@dataclass(frozen=True)
class OpticsParams:
    """Mode overlap, dip width, splitting ratio, and pre-detector survival."""

    overlap: float = 0.57
    coherence_sigma: float = COHERENCE_SIGMA_DEFAULT
    bs_ratio: float = 0.5
    path_efficiency: float = 0.005

    def __post_init__(self) -> None:
        if not (0.0 <= self.overlap <= 1.0):
            raise ValueError(f"overlap must be in [0, 1], got {self.overlap}")
        if not (self.coherence_sigma > 0.0 and math.isfinite(self.coherence_sigma)):
            raise ValueError(
                f"coherence_sigma must be positive, got {self.coherence_sigma}")
        if not (0.0 < self.bs_ratio < 1.0):
            raise ValueError(f"bs_ratio must be in (0, 1), got {self.bs_ratio}")
        if not (0.0 <= self.path_efficiency <= 1.0):
            raise ValueError(
                f"path_efficiency must be in [0, 1], got {self.path_efficiency}")


@dataclass(frozen=True)
class DetectorParams:
    """Photon-counter properties: efficiency, Gaussian timing jitter, darks."""

    qe: float = 0.20
    irf_sigma: float = 1.0e-9
    dark_rate: float = 0.0
    dead_time: float = 0.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.qe <= 1.0):
            raise ValueError(f"qe must be in [0, 1], got {self.qe}")
        if not (self.irf_sigma >= 0.0 and math.isfinite(self.irf_sigma)):
            raise ValueError(f"irf_sigma must be >= 0, got {self.irf_sigma}")
        if not (self.dark_rate >= 0.0 and math.isfinite(self.dark_rate)):
            raise ValueError(f"dark_rate must be >= 0, got {self.dark_rate}")
        if not (self.dead_time >= 0.0 and math.isfinite(self.dead_time)):
            raise ValueError(f"dead_time must be >= 0, got {self.dead_time}")


def hom_kernel(tau, optics: OpticsParams):
    """Probability that a cross-source pair with time difference ``tau`` bunches."""
    t = np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ValueError("tau must be finite")
    out = optics.overlap * np.exp(-t * t / (2.0 * optics.coherence_sigma ** 2))
    return float(out) if np.isscalar(tau) else out


# ---------------------------------------------------------------------------
# Greedy nearest-time pair matching
# ---------------------------------------------------------------------------

def greedy_pair_match(times_a: np.ndarray, times_b: np.ndarray,
                      max_dt: int) -> tuple[np.ndarray, np.ndarray]:
    """Match photons of two sorted streams greedily by nearest arrival time.

    Globally closest pairs (by |dt|, ties by earlier partner time) are
    matched first; each photon joins at most one pair and pairs farther
    apart than ``max_dt`` are never formed.  Implemented as iterated
    mutual-nearest-neighbor rounds, which yields the same matching as a
    global greedy sweep.  Returns index arrays into the two inputs.
    """
    ia_out: list[np.ndarray] = []
    ib_out: list[np.ndarray] = []
    idx_a = np.arange(times_a.size)
    idx_b = np.arange(times_b.size)
    a = np.asarray(times_a, dtype=np.int64)
    b = np.asarray(times_b, dtype=np.int64)
    while a.size and b.size:
        na = _nearest(a, b, max_dt)
        nb = _nearest(b, a, max_dt)
        ok = na >= 0
        mutual = ok & (nb[np.where(ok, na, 0)] == np.arange(a.size))
        if not mutual.any():
            break
        sel_a = np.nonzero(mutual)[0]
        sel_b = na[sel_a]
        ia_out.append(idx_a[sel_a])
        ib_out.append(idx_b[sel_b])
        keep_a = np.ones(a.size, dtype=bool)
        keep_a[sel_a] = False
        keep_b = np.ones(b.size, dtype=bool)
        keep_b[sel_b] = False
        a, idx_a = a[keep_a], idx_a[keep_a]
        b, idx_b = b[keep_b], idx_b[keep_b]
    if not ia_out:
        empty = np.empty(0, dtype=np.intp)
        return empty, empty
    return np.concatenate(ia_out), np.concatenate(ib_out)


def _nearest(x: np.ndarray, ref: np.ndarray, max_dt: int) -> np.ndarray:
    """Index in ``ref`` of the nearest value to each entry of ``x`` (-1 if none).

    Distance ties prefer the earlier reference time, matching the global
    greedy tie rule.
    """
    pos = np.searchsorted(ref, x)
    left = np.clip(pos - 1, 0, ref.size - 1)
    right = np.clip(pos, 0, ref.size - 1)
    d_left = np.abs(x - ref[left])
    d_right = np.abs(x - ref[right])
    take_left = (d_left <= d_right)
    best = np.where(take_left, left, right)
    dist = np.where(take_left, d_left, d_right)
    return np.where(dist <= max_dt, best, -1)


def greedy_pair_match_reference(times_a: np.ndarray, times_b: np.ndarray,
                                max_dt: int) -> tuple[np.ndarray, np.ndarray]:
    """Literal global greedy matching via a candidate heap (test oracle)."""
    a = np.asarray(times_a, dtype=np.int64)
    b = np.asarray(times_b, dtype=np.int64)
    heap = []
    for i in range(a.size):
        for j in range(b.size):
            d = abs(int(a[i]) - int(b[j]))
            if d <= max_dt:
                heapq.heappush(heap, (d, int(b[j]), int(a[i]), i, j))
    used_a = np.zeros(a.size, dtype=bool)
    used_b = np.zeros(b.size, dtype=bool)
    ia, ib = [], []
    while heap:
        _, _, _, i, j = heapq.heappop(heap)
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = True
        used_b[j] = True
        ia.append(i)
        ib.append(j)
    return np.asarray(ia, dtype=np.intp), np.asarray(ib, dtype=np.intp)


# ---------------------------------------------------------------------------
# Routing and detection
# ---------------------------------------------------------------------------

def route(ion_streams: list[EmissionStream],
          scatter_streams: list[EmissionStream],
          optics: OpticsParams, det: DetectorParams,
          rng: np.random.Generator) -> np.ndarray:
    """Send emission streams through the splitter network onto two counters.

    Ion photons survive path_efficiency * qe independently; the survivors
    of two ions are pair-matched (within 10 coherence widths) and bunched
    per the interference kernel, everything else picks a port
    independently with P(port 1) = bs_ratio.  Scatter streams are already
    referenced to the detector and are not thinned.  Timing jitter, dark
    counts, and dead time are applied last; tags outside [0, span] are
    dropped and the output is sorted by (time, channel).
    """
    if not 1 <= len(ion_streams) <= 2:
        raise ValueError(f"expected 1 or 2 ion streams, got {len(ion_streams)}")
    span = ion_streams[0].span
    for s in list(ion_streams) + list(scatter_streams):
        if s.span != span:
            raise ValueError(
                f"stream spans differ: {s.span} != {span} ({s.source_id})")
    span_ps = _as_ps(span)

    p_surv = optics.path_efficiency * det.qe
    survivors = []
    for s in ion_streams:
        mask = rng.random(len(s)) < p_surv
        survivors.append(s.times[mask])

    times_parts: list[np.ndarray] = []
    chan_parts: list[np.ndarray] = []

    if len(survivors) == 2:
        cutoff = _as_ps(10.0 * optics.coherence_sigma)
        ia, ib = greedy_pair_match(survivors[0], survivors[1], cutoff)
        dt = (survivors[1][ib] - survivors[0][ia]).astype(float) / PS_PER_S
        bunch = rng.random(ia.size) < hom_kernel(dt, optics)
        common = (rng.random(int(bunch.sum())) < optics.bs_ratio).astype(np.uint8)
        for k, surv in enumerate(survivors):
            chan = np.empty(surv.size, dtype=np.uint8)
            paired_idx = ia if k == 0 else ib
            solo = np.ones(surv.size, dtype=bool)
            solo[paired_idx] = False
            chan[solo] = (rng.random(int(solo.sum())) < optics.bs_ratio)
            # bunched partners share one port, broken pairs route independently
            chan[paired_idx[bunch]] = common
            chan[paired_idx[~bunch]] = (
                rng.random(int((~bunch).sum())) < optics.bs_ratio)
            times_parts.append(surv.copy())
            chan_parts.append(chan)
    else:
        surv = survivors[0]
        times_parts.append(surv.copy())
        chan_parts.append(
            (rng.random(surv.size) < optics.bs_ratio).astype(np.uint8))

    for s in scatter_streams:
        times_parts.append(s.times.copy())
        chan_parts.append(
            (rng.random(len(s)) < optics.bs_ratio).astype(np.uint8))

    times = np.concatenate(times_parts) if times_parts else np.empty(0, np.int64)
    chans = np.concatenate(chan_parts) if chan_parts else np.empty(0, np.uint8)

    if det.irf_sigma > 0.0 and times.size:
        jitter = np.rint(
            rng.normal(0.0, det.irf_sigma * PS_PER_S, times.size)).astype(np.int64)
        times = times + jitter

    for ch in (0, 1):
        n_dark = rng.poisson(det.dark_rate * span)
        if n_dark:
            dark_t = rng.integers(0, span_ps + 1, n_dark, dtype=np.int64)
            times = np.concatenate([times, dark_t])
            chans = np.concatenate(
                [chans, np.full(n_dark, ch, dtype=np.uint8)])

    keep = (times >= 0) & (times <= span_ps)
    times, chans = times[keep], chans[keep]
    order = np.lexsort((chans, times))
    times, chans = times[order], chans[order]

    if det.dead_time > 0.0:
        dead_ps = _as_ps(det.dead_time)
        keep = np.ones(times.size, dtype=bool)
        last = [-dead_ps - 1, -dead_ps - 1]
        for i in range(times.size):
            c = chans[i]
            if times[i] - last[c] < dead_ps:
                keep[i] = False
            else:
                last[c] = times[i]
        times, chans = times[keep], chans[keep]

    tags = np.empty(times.size, dtype=TAG_DTYPE)
    tags["channel"] = chans
    tags["time"] = times.astype(np.uint64)
    return tags


def detect_only(stream: EmissionStream, det: DetectorParams,
                rng: np.random.Generator) -> np.ndarray:
    """Detection without the splitter network: thin, jitter, add darks on channel 0."""
    span_ps = _as_ps(stream.span)
    times = stream.times[rng.random(len(stream)) < det.qe].astype(np.int64)
    if det.irf_sigma > 0.0 and times.size:
        times = times + np.rint(
            rng.normal(0.0, det.irf_sigma * PS_PER_S, times.size)).astype(np.int64)
    n_dark = rng.poisson(det.dark_rate * stream.span)
    if n_dark:
        times = np.concatenate(
            [times, rng.integers(0, span_ps + 1, n_dark, dtype=np.int64)])
    times = times[(times >= 0) & (times <= span_ps)]
    times.sort()
    tags = np.empty(times.size, dtype=TAG_DTYPE)
    tags["channel"] = 0
    tags["time"] = times.astype(np.uint64)
    return tags
