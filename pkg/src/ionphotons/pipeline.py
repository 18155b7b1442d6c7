"""End-to-end workflows: simulate -> correlate -> fit -> report.

The figure pipelines reproduce the three headline measurements at desk
scale: the pulsed single-photon comb with its residual zero peak, the cw
one- and two-ion correlation curves, and the interference dip extracted
from the joint-detection decomposition.

Desk-scale note: the canned figure configs raise the collection
efficiency well above the default 1e-3 so that each curve accumulates
1e5..1e6 detected tags in seconds of simulated span.  Normalized
correlation estimates are invariant under loss thinning, so this only
buys statistics, not different physics (the property suite checks that
invariance explicitly).
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .atom import AtomParams, steady_state
from .config import ExperimentConfig, build_config
from .correlator import (CorrelationHistogram, NormalizedCurve,
                         cross_correlate, decompose_p2, normalize,
                         peak_metrics, verify_against_brute, zero_peak_ratio)
from .emitter import (EmissionStream, apply_duty_cycle, simulate_cw_stream,
                      simulate_pulsed_stream)
from .fitkit import FitResult, fit_exponential_peak, fit_gaussian_dip
from .optics import route
from .tagfile import read_tags, write_tags

PS_PER_S = 1_000_000_000_000


class PipelineStageError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""

    def __init__(self, stage: str, original: BaseException):
        super().__init__(f"stage '{stage}' failed: {original}")
        self.stage = stage


def _child_seeds(seed: int, n: int) -> list[int]:
    state = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)
    return [int(v) for v in state]


def build_streams(config: ExperimentConfig
                  ) -> tuple[list[EmissionStream], list[EmissionStream]]:
    """Emission and scatter streams for a config (seeded deterministically)."""
    seeds = _child_seeds(config.seed, 3)
    ions: list[EmissionStream] = []
    scatter: list[EmissionStream] = []
    for i in range(config.n_ions):
        rng = np.random.default_rng(seeds[i])
        if config.mode == "cw":
            ions.append(simulate_cw_stream(config.atom, config.span, rng,
                                           source_id=f"ion{i}"))
        else:
            ion, sct = simulate_pulsed_stream(config.pulse, config.span, rng,
                                              source_id=f"ion{i}")
            ions.append(ion)
            if i == 0:  # one pulsed laser, one scatter stream
                scatter.append(sct)
    if config.duty is not None:
        ions = [apply_duty_cycle(s, config.duty) for s in ions]
        scatter = [apply_duty_cycle(s, config.duty) for s in scatter]
    return ions, scatter


def run_simulate(config: ExperimentConfig, out_path: str | os.PathLike) -> int:
    """Simulate one run and write the detected tags; returns the tag count."""
    ions, scatter = build_streams(config)
    rng_route = np.random.default_rng(_child_seeds(config.seed, 3)[2])
    tags = route(ions, scatter, config.optics, config.detector, rng_route)
    write_tags(out_path, tags)
    return int(tags.size)


def simulate_tags(config: ExperimentConfig) -> np.ndarray:
    """In-memory variant of run_simulate."""
    ions, scatter = build_streams(config)
    rng_route = np.random.default_rng(_child_seeds(config.seed, 3)[2])
    return route(ions, scatter, config.optics, config.detector, rng_route)


# ---------------------------------------------------------------------------
# Histogram CSV
# ---------------------------------------------------------------------------

def write_curve_csv(path: str | os.PathLike, hist: CorrelationHistogram | None,
                    curve: NormalizedCurve, meta: dict[str, object]) -> None:
    """Write '#' metadata lines, a header row, then delay/counts/value/error rows."""
    lines = ["# ionphotons curve"]
    for key, value in meta.items():
        lines.append(f"# {key}={value}")
    lines.append("delay_ps,counts,normalized,stat_err")
    counts = (hist.counts if hist is not None
              else np.zeros(curve.delays.size, dtype=np.int64))
    for d, c, v, e in zip(curve.delays, counts, curve.values, curve.stat_err):
        lines.append(f"{d * 1e12:.10g},{int(c)},{v:.10g},{e:.10g}")
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_curve_csv(path: str | os.PathLike
                   ) -> tuple[NormalizedCurve, np.ndarray, dict[str, str]]:
    """Read a curve CSV back into (curve, counts, metadata)."""
    meta: dict[str, str] = {}
    rows: list[tuple[float, int, float, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("# ").strip()
                if "=" in body:
                    key, value = body.split("=", 1)
                    meta[key.strip()] = value.strip()
                continue
            if line.startswith("delay_ps"):
                continue
            parts = line.split(",")
            rows.append((float(parts[0]), int(parts[1]),
                         float(parts[2]), float(parts[3])))
    if rows:
        delays = np.array([r[0] for r in rows]) * 1e-12
        counts = np.array([r[1] for r in rows], dtype=np.int64)
        curve = NormalizedCurve(delays, np.array([r[2] for r in rows]),
                                np.array([r[3] for r in rows]))
    else:
        curve = NormalizedCurve(np.empty(0), np.empty(0), np.empty(0))
        counts = np.empty(0, dtype=np.int64)
    return curve, counts, meta


def run_correlate(in_path: str | os.PathLike, bin_ps: int, window_ps: int,
                  out_path: str | os.PathLike, oracle: bool = False,
                  span: float | None = None,
                  live_time: float | None = None
                  ) -> tuple[CorrelationHistogram, NormalizedCurve]:
    """Correlate a tag file and write the histogram CSV."""
    tags, header = read_tags(in_path)
    hist = cross_correlate(tags, bin_ps, window_ps, span=span)
    if oracle:
        verify_against_brute(tags, bin_ps, window_ps)
    if tags.size == 0:
        curve = NormalizedCurve(hist.bin_centers(),
                                np.zeros(hist.n_bins), np.zeros(hist.n_bins))
    else:
        curve = normalize(hist, live_time=live_time)
    meta = {"source": os.fspath(in_path), "bin_ps": bin_ps,
            "window_ps": window_ps, "n_start": hist.n_start,
            "n_stop": hist.n_stop, "span_s": f"{hist.span:.10g}",
            "records": header.record_count}
    if live_time is not None:
        meta["live_time_s"] = f"{live_time:.10g}"
    write_curve_csv(out_path, hist, curve, meta)
    return hist, curve


# ---------------------------------------------------------------------------
# Fit dispatch
# ---------------------------------------------------------------------------

def run_fit(in_path: str | os.PathLike, model: str,
            out_path: str | os.PathLike,
            atom_guess: AtomParams | None = None,
            peak_center_ps: float | None = None) -> FitResult:
    """Fit a named model to a curve CSV and write a report plus model curve."""
    from .fitkit import blurred_g2_model, fit_damped_rabi, gaussian_dip_model, \
        two_sided_exp_model

    curve, counts, meta = read_curve_csv(in_path)
    if curve.delays.size == 0:
        raise ValueError(f"no data rows in {in_path}")
    provenance: list[str] = []
    if model == "dip":
        result = fit_gaussian_dip(curve)
        provenance.append("initial guess auto-derived from curve extrema")
        model_vals = gaussian_dip_model(
            curve.delays, result.params["baseline"], result.params["depth"],
            result.params["center"], result.params["sigma"])
        pretty = {"baseline": "", "depth": "", "center": " s",
                  "sigma": " s", "half_width": " s"}
    elif model == "peak":
        bin_ps = int(meta.get("bin_ps", 0)) or _infer_bin_ps(curve)
        window_ps = int(meta.get("window_ps", 0)) or _infer_window_ps(curve, bin_ps)
        hist = CorrelationHistogram(
            bin_ps, window_ps, counts, int(meta.get("n_start", 1)),
            int(meta.get("n_stop", 1)), float(meta.get("span_s", 1.0)))
        if peak_center_ps is None:
            center = float(curve.delays[int(np.argmax(counts))])
            provenance.append("peak center auto-selected at the highest bin")
        else:
            center = peak_center_ps * 1e-12
            provenance.append("peak center user-supplied")
        half_span = abs(center) / 2.0 if center != 0.0 else None
        result = fit_exponential_peak(hist, center, half_span=half_span)
        model_vals = two_sided_exp_model(
            curve.delays, result.params["amplitude"], result.params["center"],
            result.params["decay"])
        pretty = {"amplitude": " counts", "center": " s", "decay": " s"}
    elif model == "rabi":
        guess = atom_guess if atom_guess is not None else AtomParams()
        provenance.append(
            "atom guess " + ("user-supplied" if atom_guess is not None
                             else "package defaults (rate-calibrated drive)"))
        result = fit_damped_rabi(curve, guess)
        fitted = AtomParams(gamma=guess.gamma, rabi=result.params["rabi"],
                            detuning=guess.detuning)
        model_vals = blurred_g2_model(curve.delays, fitted,
                                      result.params["irf_sigma"],
                                      result.params["amplitude"])
        pretty = {"rabi": " rad/s", "irf_sigma": " s", "amplitude": ""}
    else:
        raise ValueError(f"unknown model {model!r}; expected dip, peak, or rabi")

    report = [f"model: {model}", f"input: {os.fspath(in_path)}",
              f"converged: {result.converged} ({result.message})",
              f"iterations: {result.iterations}",
              f"residual_norm: {result.residual_norm:.6g}"]
    for name, value in result.params.items():
        err = result.std_err.get(name, float("nan"))
        report.append(f"{name}: {value:.6g} +- {err:.3g}{pretty.get(name, '')}")
    report.extend(f"note: {p}" for p in provenance)
    _atomic_write_text(out_path, "\n".join(report) + "\n")

    model_csv = os.fspath(out_path) + ".model.csv"
    lines = ["# ionphotons fitted model", "delay_ps,model"]
    lines += [f"{d * 1e12:.10g},{v:.10g}"
              for d, v in zip(curve.delays, model_vals)]
    _atomic_write_text(model_csv, "\n".join(lines) + "\n")
    return result


def _infer_bin_ps(curve: NormalizedCurve) -> int:
    return int(round((curve.delays[1] - curve.delays[0]) * 1e12))


def _infer_window_ps(curve: NormalizedCurve, bin_ps: int) -> int:
    return int(round(-curve.delays[0] * 1e12 + bin_ps / 2))


# ---------------------------------------------------------------------------
# Canned figure pipelines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    name: str
    value: float
    target: float
    tol: float

    @property
    def passed(self) -> bool:
        return math.isfinite(self.value) and abs(self.value - self.target) <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{self.name}: value={self.value:.4g} target={self.target:.4g} "
                f"tol={self.tol:.4g} {status}")


# Desk-scale figure settings: boosted collection, see module docstring.
# The detected rate is kept moderate because the pairwise interference
# model erodes the dip wings when competing partners crowd the matcher;
# the longer span buys the statistics back.
FIG3_SPAN = 0.675
FIG3_PATH_EFF = 0.10
FIG3_BIN_PS = 2_000
FIG3_WINDOW_PS = 30_000
FIG3_BACKGROUND_FRACTION = 0.005  # per-channel darks, 0.5% of the signal rate

FIG2_SPAN = 0.6
FIG2_BIN_PS = 500
FIG2_WINDOW_PS = 150_000


def fig3_config(seed: int, n_ions: int, overlap: float,
                span: float = FIG3_SPAN) -> ExperimentConfig:
    """cw correlation measurement config (detuned drive, 1 ns jitter)."""
    atom = AtomParams()
    raw_rate = atom.gamma * steady_state(atom).rho_ee
    channel_rate = n_ions * raw_rate * FIG3_PATH_EFF / 2.0
    return build_config(
        mode="cw", n_ions=n_ions, span=span, seed=seed,
        optics_kw={"overlap": overlap, "path_efficiency": FIG3_PATH_EFF},
        detector_kw={"qe": 1.0, "irf_sigma": 1.0e-9,
                     "dark_rate": FIG3_BACKGROUND_FRACTION * channel_rate})


def fig2_config(seed: int, span: float = FIG2_SPAN) -> ExperimentConfig:
    """Pulsed single-photon config: duty-cycled pulse train, ideal timing."""
    return build_config(
        mode="pulsed", n_ions=1, span=span, seed=seed,
        optics_kw={"path_efficiency": 1.0},
        detector_kw={"qe": 1.0, "irf_sigma": 0.0, "dark_rate": 0.0},
        duty_kw={"cool": 150e-6, "measure": 50e-6})


def value_at_zero(curve: NormalizedCurve) -> tuple[float, float]:
    """Mean of the two bins straddling zero delay, with combined error."""
    idx = np.argsort(np.abs(curve.delays))[:2]
    val = float(np.mean(curve.values[idx]))
    err = float(np.sqrt(np.sum(curve.stat_err[idx] ** 2)) / idx.size)
    return val, err


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineStageError:
        raise
    except Exception as exc:
        raise PipelineStageError(name, exc) from exc


def _correlate_config(config: ExperimentConfig, bin_ps: int, window_ps: int,
                      outdir: str, stem: str
                      ) -> tuple[CorrelationHistogram, NormalizedCurve]:
    tag_path = os.path.join(outdir, f"{stem}.tags")
    _stage(f"simulate:{stem}", run_simulate, config, tag_path)
    live = config.span * config.duty.live_fraction if config.duty else None
    return _stage(f"correlate:{stem}", run_correlate, tag_path, bin_ps,
                  window_ps, os.path.join(outdir, f"{stem}.csv"),
                  span=config.span, live_time=live)


def run_fig3(seed: int, outdir: str) -> list[Check]:
    """One- and two-ion cw correlation curves and their zero-delay values."""
    os.makedirs(outdir, exist_ok=True)
    seeds = _child_seeds(seed, 3)
    _, g2 = _correlate_config(fig3_config(seeds[0], 1, 0.0),
                              FIG3_BIN_PS, FIG3_WINDOW_PS, outdir, "g2_one_ion")
    _, p2_flat = _correlate_config(fig3_config(seeds[1], 2, 0.0),
                                   FIG3_BIN_PS, FIG3_WINDOW_PS, outdir,
                                   "p2_no_overlap")
    _, p2_dip = _correlate_config(fig3_config(seeds[2], 2, 0.57),
                                  FIG3_BIN_PS, FIG3_WINDOW_PS, outdir,
                                  "p2_overlap")
    g2_zero, g2_err = value_at_zero(g2)
    flat_zero, flat_err = value_at_zero(p2_flat)
    dip_zero, _ = value_at_zero(p2_dip)
    # consistency with the symmetric-setup identity, at 3x the combined error
    combined = math.sqrt(flat_err**2 + (g2_err / 2.0) ** 2)
    checks = [
        Check("g2_zero_one_ion", g2_zero, 0.18, 0.05),
        Check("p2_zero_no_overlap", flat_zero, 0.59, 0.05),
        Check("p2_zero_overlap", dip_zero, 0.31, 0.05),
        Check("p2_equals_half_g2_plus_one", flat_zero - (g2_zero + 1.0) / 2.0,
              0.0, 3.0 * combined),
    ]
    _write_summary(outdir, checks)
    return checks


def run_fig4(seed: int, outdir: str) -> list[Check]:
    """Joint-detection decomposition and the Gaussian interference dip."""
    os.makedirs(outdir, exist_ok=True)
    seeds = _child_seeds(seed, 3)
    _, g2 = _correlate_config(fig3_config(seeds[0], 1, 0.0),
                              FIG3_BIN_PS, FIG3_WINDOW_PS, outdir, "g2_one_ion")
    _, p2_flat = _correlate_config(fig3_config(seeds[1], 2, 0.0),
                                   FIG3_BIN_PS, FIG3_WINDOW_PS, outdir,
                                   "p2_no_overlap")
    _, p2_dip = _correlate_config(fig3_config(seeds[2], 2, 0.57),
                                  FIG3_BIN_PS, FIG3_WINDOW_PS, outdir,
                                  "p2_overlap")
    cross_flat = _stage("decompose:no_overlap", decompose_p2, p2_flat, g2)
    cross_dip = _stage("decompose:overlap", decompose_p2, p2_dip, g2)
    for stem, curve in (("p2_cross_no_overlap", cross_flat),
                        ("p2_cross_overlap", cross_dip)):
        write_curve_csv(os.path.join(outdir, f"{stem}.csv"), None, curve,
                        {"kind": "decomposed", "bin_ps": FIG3_BIN_PS,
                         "window_ps": FIG3_WINDOW_PS})
    fit_dip = _stage("fit:overlap_dip", fit_gaussian_dip, cross_dip)
    # flatness probe: look for a dip of the known interference shape
    cfg = fig3_config(seeds[2], 2, 0.57)
    expected_sigma = math.hypot(cfg.optics.coherence_sigma,
                                math.sqrt(2.0) * cfg.detector.irf_sigma)
    fit_flat = _stage("fit:no_overlap_dip", fit_gaussian_dip, cross_flat,
                      fix={"center": 0.0, "sigma": expected_sigma})
    checks = [
        Check("dip_depth", fit_dip.params["depth"], 0.57, 0.06),
        Check("dip_half_width_ns", fit_dip.params["half_width"] * 1e9, 5.3, 1.0),
        Check("no_overlap_baseline", fit_flat.params["baseline"], 1.0, 0.05),
        Check("no_overlap_depth", fit_flat.params["depth"], 0.0, 0.05),
    ]
    _write_summary(outdir, checks)
    return checks


def run_fig2(seed: int, outdir: str) -> list[Check]:
    """Pulsed antibunching comb: residual zero peak and side-peak lifetime."""
    os.makedirs(outdir, exist_ok=True)
    config = fig2_config(_child_seeds(seed, 1)[0])
    hist, _ = _correlate_config(config, FIG2_BIN_PS, FIG2_WINDOW_PS, outdir,
                                "pulsed_comb")
    metrics = _stage("peaks", peak_metrics, hist, config.pulse.rep_period)
    ratio = _stage("peaks", zero_peak_ratio, metrics)
    fit = _stage("fit:side_peak", fit_exponential_peak, hist,
                 config.pulse.rep_period,
                 half_span=config.pulse.rep_period / 2.0)
    checks = [
        Check("zero_peak_area_ratio", ratio, 0.02, 0.01),
        Check("side_peak_decay_ns", fit.params["decay"] * 1e9, 2.6, 0.2),
    ]
    _write_summary(outdir, checks)
    return checks


_FIGURES = {"fig2": run_fig2, "fig3": run_fig3, "fig4": run_fig4}


def run_figure(name: str, seed: int, outdir: str) -> list[Check]:
    if name not in _FIGURES:
        raise ValueError(f"unknown figure {name!r}; expected one of {sorted(_FIGURES)}")
    return _FIGURES[name](seed, outdir)


def _write_summary(outdir: str, checks: list[Check]) -> None:
    _atomic_write_text(os.path.join(outdir, "summary.txt"),
                       "\n".join(c.line() for c in checks) + "\n")


def _atomic_write_text(path: str | os.PathLike, text: str) -> None:
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
