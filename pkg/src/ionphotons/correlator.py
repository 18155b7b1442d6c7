"""Coincidence histograms, normalization, and the joint-detection decomposition.

Delays are binned on a signed grid with half-open bins: the zero-delay
bin spans [0, bin_width) and a delay exactly on an edge belongs to the
upper bin, so pairs with start-stop difference in [-window, +window) are
counted.  All pair arithmetic is exact on integer picosecond timestamps.

Every start-stop pair inside the window is counted (multi-stop), which
matches a multi-channel scaler and avoids pile-up bias at high rates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_PS = 1e-12


class UndefinedNormalizationError(ValueError):
    """Normalization requires a positive span and events on both channels."""


class OracleMismatchError(AssertionError):
    """Fast correlation path disagreed with the brute-force oracle."""


@dataclass(frozen=True)
class CorrelationHistogram:
    """Signed-delay coincidence counts plus the metadata needed to normalize."""

    bin_width_ps: int
    window_ps: int
    counts: np.ndarray
    n_start: int
    n_stop: int
    span: float

    def __post_init__(self) -> None:
        if self.bin_width_ps <= 0:
            raise ValueError(f"bin_width_ps must be > 0, got {self.bin_width_ps}")
        if self.window_ps < self.bin_width_ps:
            raise ValueError("window_ps must be at least one bin")
        if self.window_ps % self.bin_width_ps:
            raise ValueError(
                f"window {self.window_ps} not a multiple of bin {self.bin_width_ps}")
        c = np.ascontiguousarray(self.counts, dtype=np.int64)
        if c.shape != (2 * self.window_ps // self.bin_width_ps,):
            raise ValueError("counts length must be 2 * window / bin")
        if np.any(c < 0):
            raise ValueError("counts must be non-negative")
        object.__setattr__(self, "counts", c)

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    def bin_centers(self) -> np.ndarray:
        """Bin centers in seconds."""
        k = np.arange(self.n_bins)
        return (-self.window_ps + (k + 0.5) * self.bin_width_ps) * _PS


@dataclass(frozen=True)
class NormalizedCurve:
    """Dimensionless correlation values on bin centers, with Poisson errors.

    Decomposition output may contain small negative excursions from
    counting noise; they are kept as-is rather than clipped.
    """

    delays: np.ndarray
    values: np.ndarray
    stat_err: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.delays, dtype=float)
        v = np.asarray(self.values, dtype=float)
        e = np.asarray(self.stat_err, dtype=float)
        if not (d.shape == v.shape == e.shape) or d.ndim != 1:
            raise ValueError("delays, values, stat_err must be equal-length 1-d")
        if d.size > 1 and np.any(np.diff(d) <= 0.0):
            raise ValueError("delays must be strictly increasing")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(e))):
            raise ValueError("values and errors must be finite")
        if np.any(e < 0.0):
            raise ValueError("stat_err must be non-negative")
        object.__setattr__(self, "delays", d)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "stat_err", e)


def _split_channels(tags: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = tags["time"].astype(np.int64)
    if np.any(np.diff(t) < 0):
        raise ValueError("tags must be sorted by time")
    ch = tags["channel"]
    return t[ch == 0], t[ch == 1]


def _span_from_tags(tags: np.ndarray) -> float:
    if tags.size < 2:
        return 0.0
    t = tags["time"]
    return float(int(t[-1]) - int(t[0])) * _PS


def cross_correlate(tags: np.ndarray, bin_width_ps: int, window_ps: int,
                    span: float | None = None,
                    _chunk: int = 1 << 20) -> CorrelationHistogram:
    """Histogram of stop-minus-start delays between channels 0 and 1.

    Start events advance monotonically, so each one sees a sliding window
    of candidate stops located by binary search; the pair delays are
    binned with exact integer arithmetic.  Complexity O(N log N + pairs),
    never the all-pairs product.
    """
    t0, t1 = _split_channels(tags)
    n_bins = 2 * window_ps // bin_width_ps  # validated by the constructor below
    if window_ps % bin_width_ps or window_ps < bin_width_ps or bin_width_ps <= 0:
        raise ValueError("window must be a positive multiple of bin_width")
    counts = np.zeros(n_bins, dtype=np.int64)
    w = np.int64(window_ps)
    for start in range(0, t0.size, _chunk):
        a = t0[start:start + _chunk]
        lo = np.searchsorted(t1, a - w, side="left")
        hi = np.searchsorted(t1, a + w, side="left")
        reps = hi - lo
        total = int(reps.sum())
        if total == 0:
            continue
        j = np.repeat(lo, reps) + _ragged_arange(reps)
        d = t1[j] - np.repeat(a, reps)
        counts += np.bincount((d + w) // bin_width_ps, minlength=n_bins)
    return CorrelationHistogram(
        bin_width_ps, window_ps, counts, int(t0.size), int(t1.size),
        _span_from_tags(tags) if span is None else float(span))


def _ragged_arange(reps: np.ndarray) -> np.ndarray:
    """Concatenation of arange(reps[0]), arange(reps[1]), ..."""
    total = int(reps.sum())
    out = np.arange(total, dtype=np.int64)
    offsets = np.repeat(np.cumsum(reps) - reps, reps)
    return out - offsets


def cross_correlate_brute(tags: np.ndarray, bin_width_ps: int, window_ps: int,
                          span: float | None = None,
                          _block: int = 512) -> CorrelationHistogram:
    """All-pairs O(N^2) oracle with the same binning conventions."""
    t0, t1 = _split_channels(tags)
    if window_ps % bin_width_ps or window_ps < bin_width_ps or bin_width_ps <= 0:
        raise ValueError("window must be a positive multiple of bin_width")
    n_bins = 2 * window_ps // bin_width_ps
    counts = np.zeros(n_bins, dtype=np.int64)
    w = np.int64(window_ps)
    for start in range(0, t0.size, _block):
        a = t0[start:start + _block]
        d = t1[None, :] - a[:, None]
        d = d[(d >= -w) & (d < w)]
        counts += np.bincount((d + w) // bin_width_ps, minlength=n_bins)
    return CorrelationHistogram(
        bin_width_ps, window_ps, counts, int(t0.size), int(t1.size),
        _span_from_tags(tags) if span is None else float(span))


def verify_against_brute(tags: np.ndarray, bin_width_ps: int,
                         window_ps: int) -> None:
    """Raise OracleMismatchError unless fast and brute paths agree bin-for-bin."""
    fast = cross_correlate(tags, bin_width_ps, window_ps)
    brute = cross_correlate_brute(tags, bin_width_ps, window_ps)
    if not np.array_equal(fast.counts, brute.counts):
        bad = int(np.nonzero(fast.counts != brute.counts)[0][0])
        raise OracleMismatchError(
            f"fast path disagrees with brute force at bin {bad}: "
            f"{fast.counts[bad]} != {brute.counts[bad]}")


def normalize(hist: CorrelationHistogram,
              live_time: float | None = None) -> NormalizedCurve:
    """Scale counts so uncorrelated Poisson channels sit at 1.

    value = counts * T / (n_start * n_stop * bin_width) with T the total
    span, or the live time when the acquisition was duty-cycle gated.
    Errors are plain per-bin Poisson.
    """
    t = hist.span if live_time is None else float(live_time)
    if t <= 0.0 or hist.n_start <= 0 or hist.n_stop <= 0:
        raise UndefinedNormalizationError(
            f"need positive span and events on both channels, got "
            f"span={t}, n_start={hist.n_start}, n_stop={hist.n_stop}")
    scale = t / (hist.n_start * hist.n_stop * (hist.bin_width_ps * _PS))
    counts = hist.counts.astype(float)
    return NormalizedCurve(hist.bin_centers(), counts * scale,
                           np.sqrt(counts) * scale)


def decompose_p2(p2: NormalizedCurve, g2: NormalizedCurve) -> NormalizedCurve:
    """Cross-source joint-detection component: 2 * P2 - g2.

    Inverts the symmetric-setup identity P2 = (g2 + P2_cross) / 2 that
    holds for equal source rates on a 50/50 splitter; errors combine in
    quadrature.
    """
    if not np.array_equal(p2.delays, g2.delays):
        raise ValueError("curves must share the same delay grid")
    return NormalizedCurve(
        p2.delays,
        2.0 * p2.values - g2.values,
        np.sqrt(4.0 * p2.stat_err ** 2 + g2.stat_err ** 2))


@dataclass(frozen=True)
class PeakMetric:
    index: int
    area: int
    height: int


def peak_metrics(hist: CorrelationHistogram,
                 rep_period: float) -> list[PeakMetric]:
    """Area and peak height in windows of +-rep_period/2 around each comb peak."""
    rep_ps = int(round(rep_period / _PS))
    if hist.window_ps < 2 * rep_ps:
        raise ValueError("window must cover at least two pulse periods")
    centers_ps = hist.bin_centers() / _PS
    k_max = int((hist.window_ps - rep_ps / 2.0) // rep_ps)
    out = []
    for k in range(-k_max, k_max + 1):
        lo = k * rep_ps - rep_ps / 2.0
        hi = k * rep_ps + rep_ps / 2.0
        sel = (centers_ps >= lo) & (centers_ps < hi)
        c = hist.counts[sel]
        out.append(PeakMetric(k, int(c.sum()), int(c.max()) if c.size else 0))
    return out


def zero_peak_ratio(metrics: list[PeakMetric]) -> float:
    """Zero-peak area relative to the mean side-peak area."""
    zero = next(m for m in metrics if m.index == 0)
    sides = [m.area for m in metrics if m.index != 0]
    if not sides:
        raise ValueError("no side peaks inside the correlation window")
    mean_side = float(np.mean(sides))
    if mean_side == 0.0:
        raise ValueError("side peaks are empty")
    return zero.area / mean_side
