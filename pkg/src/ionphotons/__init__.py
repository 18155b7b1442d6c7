"""Simulation and analysis of photon correlations from one or two trapped ions.

Submodules: ``atom`` (two-level dynamics and waiting times), ``emitter``
(emission streams), ``optics`` (splitter network and detection),
``correlator`` (coincidence histograms), ``fitkit`` (model fits),
``config``/``tagfile``/``pipeline``/``cli`` (workflows and persistence).
"""

from .atom import (AtomParams, BlochState, G2Curve, NoEmissionError,
                   UndefinedCorrelationError, WaitingTimeSampler, evolve,
                   g2_cw, rabi_for_rate, steady_state, waiting_time_sample)
from .config import ConfigError, ExperimentConfig, build_config, load_config
from .correlator import (CorrelationHistogram, NormalizedCurve,
                         OracleMismatchError, UndefinedNormalizationError,
                         cross_correlate, cross_correlate_brute, decompose_p2,
                         normalize, peak_metrics, zero_peak_ratio)
from .emitter import (DutyCycle, EmissionStream, PulseParams,
                      apply_duty_cycle, scatter_for_peak_ratio,
                      simulate_cw_stream, simulate_pulsed_stream)
from .fitkit import (FitResult, fit_damped_rabi, fit_exponential_peak,
                     fit_gaussian_dip)
from .optics import (TAG_DTYPE, DetectorParams, OpticsParams, detect_only,
                     greedy_pair_match, hom_kernel, route)
from .pipeline import run_correlate, run_figure, run_fit, run_simulate
from .tagfile import TagFileError, read_tags, write_tags

__version__ = "0.1.0"

__all__ = [
    "AtomParams", "BlochState", "G2Curve", "NoEmissionError",
    "UndefinedCorrelationError", "WaitingTimeSampler", "evolve", "g2_cw",
    "rabi_for_rate", "steady_state", "waiting_time_sample",
    "ConfigError", "ExperimentConfig", "build_config", "load_config",
    "CorrelationHistogram", "NormalizedCurve", "OracleMismatchError",
    "UndefinedNormalizationError", "cross_correlate", "cross_correlate_brute",
    "decompose_p2", "normalize", "peak_metrics", "zero_peak_ratio",
    "DutyCycle", "EmissionStream", "PulseParams", "apply_duty_cycle",
    "scatter_for_peak_ratio", "simulate_cw_stream", "simulate_pulsed_stream",
    "FitResult", "fit_damped_rabi", "fit_exponential_peak", "fit_gaussian_dip",
    "TAG_DTYPE", "DetectorParams", "OpticsParams", "detect_only",
    "greedy_pair_match", "hom_kernel", "route",
    "run_correlate", "run_figure", "run_fit", "run_simulate",
    "TagFileError", "read_tags", "write_tags",
]
