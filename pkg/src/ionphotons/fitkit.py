"""Nonlinear least-squares extraction of the headline curve parameters.

A single damped Gauss-Newton core (Levenberg-style multiplicative
damping, numerically differenced Jacobians) serves three small models:

* a Gaussian dip on a flat baseline (interference contrast and width),
* a two-sided exponential peak (emission lifetime),
* the damped-Rabi intensity correlation blurred by detector jitter,
  whose model values are generated numerically by the atom module.

Weights are inverse-variance from the per-bin Poisson errors, falling
back to unit weights whenever any bin reports zero error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .atom import AtomParams, excited_population_transient, steady_state
from .correlator import CorrelationHistogram, NormalizedCurve
from .optics import HWHD_FACTOR  # half width at half depth = HWHD_FACTOR * sigma

MAX_ITERATIONS = 200
REL_JACOBIAN_STEP = 1e-6
TOL_PARAM_CHANGE = 1e-8
TOL_GRADIENT = 1e-10


@dataclass
class FitResult:
    """Converged parameters with curvature-based standard errors."""

    params: dict[str, float]
    std_err: dict[str, float]
    residual_norm: float
    converged: bool
    iterations: int
    message: str = ""
    residual_history: list[float] = field(default_factory=list, repr=False)


def _weights_from_errors(err: np.ndarray) -> np.ndarray:
    if np.any(err <= 0.0):
        return np.ones_like(err)
    return 1.0 / err**2


def damped_least_squares(model, p0, y, weights, scales=None,
                         max_iter: int = MAX_ITERATIONS) -> tuple[np.ndarray, np.ndarray, FitResult]:
    """Minimize sum(w * (model(p) - y)^2) by damped Gauss-Newton.

    ``scales`` sets the characteristic magnitude of each parameter for
    finite-difference steps and the relative-change stopping rule.  A step
    is accepted only if the weighted residual norm decreases, so the
    residual history is non-increasing.  Returns (parameters, covariance,
    FitResult skeleton without named params).
    """
    p = np.asarray(p0, dtype=float).copy()
    y = np.asarray(y, dtype=float)
    w = np.asarray(weights, dtype=float)
    sw = np.sqrt(w)
    if scales is None:
        scales = np.maximum(np.abs(p), 1.0)
    scales = np.asarray(scales, dtype=float)
    unit_weighted = bool(np.allclose(w, 1.0))

    def wres(q):
        return (np.asarray(model(q), dtype=float) - y) * sw

    r = wres(p)
    ssr = float(r @ r)
    history = [ssr]
    lam = 1e-3
    converged = False
    message = "max iterations reached"
    n_iter = 0

    for n_iter in range(1, max_iter + 1):
        jac = _numeric_jacobian(wres, p, scales)
        grad = jac.T @ r
        jtj = jac.T @ jac
        if float(np.linalg.norm(grad)) < TOL_GRADIENT * max(1.0, ssr):
            converged = True
            message = "gradient below tolerance"
            break
        accepted = False
        for _ in range(25):
            a = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-300))
            try:
                step = np.linalg.solve(a, -grad)
            except np.linalg.LinAlgError:
                step = np.linalg.lstsq(a, -grad, rcond=None)[0]
            trial = p + step
            r_trial = wres(trial)
            ssr_trial = float(r_trial @ r_trial)
            if math.isfinite(ssr_trial) and ssr_trial <= ssr:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            message = "no descent step found"
            break
        rel_change = float(np.max(np.abs(step) / np.maximum(np.abs(p), scales)))
        p, r, ssr = trial, r_trial, ssr_trial
        history.append(ssr)
        lam = max(lam * 0.3, 1e-12)
        if rel_change < TOL_PARAM_CHANGE:
            converged = True
            message = "parameter change below tolerance"
            break

    jac = _numeric_jacobian(wres, p, scales)
    jtj = jac.T @ jac
    try:
        cov = np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(jtj)
    dof = max(y.size - p.size, 1)
    if unit_weighted:
        cov = cov * (ssr / dof)
    result = FitResult(params={}, std_err={}, residual_norm=ssr,
                       converged=converged, iterations=n_iter,
                       message=message, residual_history=history)
    return p, cov, result


def _numeric_jacobian(fun, p, scales) -> np.ndarray:
    base = np.asarray(fun(p), dtype=float)
    jac = np.empty((base.size, p.size))
    for i in range(p.size):
        h = REL_JACOBIAN_STEP * max(abs(p[i]), scales[i])
        up, dn = p.copy(), p.copy()
        up[i] += h
        dn[i] -= h
        jac[:, i] = (np.asarray(fun(up)) - np.asarray(fun(dn))) / (2.0 * h)
    return jac


def _finish(result: FitResult, names, p, cov) -> FitResult:
    errs = np.sqrt(np.maximum(np.diag(cov), 0.0))
    result.params = {n: float(v) for n, v in zip(names, p)}
    result.std_err = {n: float(e) for n, e in zip(names, errs)}
    return result


# ---------------------------------------------------------------------------
# Gaussian dip
# ---------------------------------------------------------------------------

def gaussian_dip_model(tau, baseline, depth, center, sigma):
    return baseline * (1.0 - depth * np.exp(-(tau - center) ** 2
                                            / (2.0 * sigma ** 2)))


def fit_gaussian_dip(curve: NormalizedCurve,
                     initial: dict[str, float] | None = None,
                     fix: dict[str, float] | None = None) -> FitResult:
    """Fit baseline * (1 - depth * gaussian) and report the half width at half depth.

    The fitted width is floored at half the grid spacing: a dip narrower
    than one bin cannot be resolved on binned data and would otherwise
    leave the problem degenerate.  ``fix`` pins named parameters (e.g. a
    known dip shape when testing for the presence of a dip).
    """
    tau, y = curve.delays, curve.values
    if tau.size < 5:
        raise ValueError("need at least 5 points spanning the dip")
    guess = _dip_guess(tau, y)
    if initial:
        guess.update(initial)
    fixed = dict(fix or {})
    names = [n for n in ("baseline", "depth", "center", "sigma") if n not in fixed]
    if not names:
        raise ValueError("at least one parameter must stay free")
    sigma_floor = 0.5 * float(np.min(np.diff(tau)))
    span = float(tau[-1] - tau[0])
    all_scales = {"baseline": max(abs(guess["baseline"]), 0.1), "depth": 0.1,
                  "center": span, "sigma": span / 4.0}
    p0 = np.array([guess[n] for n in names])
    scales = np.array([all_scales[n] for n in names])
    w = _weights_from_errors(curve.stat_err)

    def model(p):
        full = dict(fixed)
        full.update(zip(names, p))
        sigma = math.hypot(full["sigma"], sigma_floor)
        return gaussian_dip_model(tau, full["baseline"], full["depth"],
                                  full["center"], sigma)

    p, cov, res = damped_least_squares(model, p0, y, w, scales)
    res = _finish(res, names, p, cov)
    for name, value in fixed.items():
        res.params[name] = float(value)
        res.std_err[name] = 0.0
    if "sigma" in names:  # report the effective (floored) width
        res.params["sigma"] = math.hypot(res.params["sigma"], sigma_floor)
    else:
        res.params["sigma"] = abs(res.params["sigma"])
    res.params["half_width"] = res.params["sigma"] * HWHD_FACTOR
    res.std_err["half_width"] = res.std_err.get("sigma", 0.0) * HWHD_FACTOR
    return res


def _dip_guess(tau: np.ndarray, y: np.ndarray) -> dict[str, float]:
    n_wing = max(2, tau.size // 4)
    baseline = float(np.mean(np.concatenate([y[:n_wing], y[-n_wing:]])))
    if baseline <= 0.0:
        baseline = max(float(np.mean(y)), 1e-12)
    i_min = int(np.argmin(y))
    depth = min(max(1.0 - y[i_min] / baseline, 0.0), 1.0)
    below = y < baseline * (1.0 - 0.5 * depth) if depth > 0 else np.zeros_like(y, bool)
    width_est = (tau[1] - tau[0]) * max(int(below.sum()), 1) if tau.size > 1 else 1.0
    return {"baseline": baseline, "depth": float(depth),
            "center": float(tau[i_min]),
            "sigma": float(width_est / (2.0 * HWHD_FACTOR))}


# ---------------------------------------------------------------------------
# Two-sided exponential peak
# ---------------------------------------------------------------------------

def two_sided_exp_model(tau, amplitude, center, decay):
    return amplitude * np.exp(-np.abs(tau - center) / decay)


def fit_exponential_peak(hist: CorrelationHistogram, peak_center: float,
                         half_span: float | None = None) -> FitResult:
    """Fit A * exp(-|tau - t0| / T) to the counts around one comb peak."""
    centers = hist.bin_centers()
    if half_span is None:
        sel = np.ones(centers.size, dtype=bool)
    else:
        sel = np.abs(centers - peak_center) <= half_span
    tau = centers[sel]
    y = hist.counts[sel].astype(float)
    guess_T = 2.6e-9
    if y.sum() < 10:
        return FitResult(
            params={"amplitude": float(y.max(initial=0.0)),
                    "center": float(peak_center), "decay": guess_T},
            std_err={"amplitude": 0.0, "center": 0.0, "decay": 0.0},
            residual_norm=float("nan"), converged=False, iterations=0,
            message="insufficient counts in peak")
    amp0 = float(y.max())
    c0 = float(tau[int(np.argmax(y))])
    area = float(y.sum()) * (hist.bin_width_ps * 1e-12)
    t0 = max(area / (2.0 * amp0), hist.bin_width_ps * 1e-12 / 2.0)
    w = _weights_from_errors(np.sqrt(np.maximum(y, 0.0)))
    scales = np.array([amp0, max(abs(c0), t0), t0])

    def model(p):
        return two_sided_exp_model(tau, p[0], p[1], abs(p[2]))

    p, cov, res = damped_least_squares(model, np.array([amp0, c0, t0]), y, w,
                                       scales)
    p[2] = abs(p[2])
    if not math.isfinite(res.residual_norm) or p[2] == 0.0:
        res.converged = False
    return _finish(res, ("amplitude", "center", "decay"), p, cov)


# ---------------------------------------------------------------------------
# Damped-Rabi correlation with detector blur
# ---------------------------------------------------------------------------

def blurred_g2_model(delays: np.ndarray, atom: AtomParams, irf_sigma: float,
                     amplitude: float = 1.0) -> np.ndarray:
    """Intensity correlation convolved with the two-detector timing jitter.

    The pair-delay jitter is sqrt(2) * irf_sigma; the correlation is an
    even function of delay, so the transient is evaluated on |tau| and
    convolved against the even extension.
    """
    d = np.asarray(delays, dtype=float)
    ss = steady_state(atom).rho_ee
    if ss <= 0.0:
        raise ValueError("atom has no steady-state emission")
    sigma_d = math.sqrt(2.0) * abs(irf_sigma)
    d_abs_max = float(np.max(np.abs(d))) if d.size else 0.0
    if sigma_d == 0.0:
        pops = excited_population_transient(atom, np.abs(d[np.argsort(np.abs(d))]))
        out = np.empty_like(d)
        out[np.argsort(np.abs(d))] = pops / ss
        return amplitude * out
    step = min(sigma_d / 8.0,
               (1.0 / max(atom.gamma, atom.rabi, abs(atom.detuning) or atom.gamma)) / 8.0)
    half = d_abs_max + 6.0 * sigma_d
    n = int(half / step) + 2
    grid = np.arange(n) * step
    g2_pos = excited_population_transient(atom, grid[1:]) / ss
    g2_grid = np.concatenate([[0.0], g2_pos])
    full = np.concatenate([g2_grid[:0:-1], g2_grid])      # even extension
    kh = int(6.0 * sigma_d / step)
    kx = np.arange(-kh, kh + 1) * step
    kernel = np.exp(-kx**2 / (2.0 * sigma_d**2))
    kernel /= kernel.sum()
    blurred = np.convolve(full, kernel, mode="same")
    full_grid = np.concatenate([-grid[:0:-1], grid])
    return amplitude * np.interp(d, full_grid, blurred)


def fit_damped_rabi(curve: NormalizedCurve, atom_guess: AtomParams,
                    irf_guess: float = 1.0e-9) -> FitResult:
    """Fit (rabi, irf_sigma, amplitude) of the blurred damped-Rabi correlation.

    Decay rate and detuning are taken from ``atom_guess`` and held fixed;
    model curves are generated numerically by the atom module.
    """
    tau = curve.delays
    span = float(np.max(np.abs(tau)))
    need = min(3.0 * 2.0 * math.pi / max(atom_guess.rabi, 1e-300),
               10.0 / atom_guess.gamma)
    if span < need:
        raise ValueError(
            f"curve span {span} too short: need {need} "
            "(3 oscillation periods or 10 lifetimes)")
    w = _weights_from_errors(curve.stat_err)
    p0 = np.array([atom_guess.rabi, irf_guess, 1.0])
    scales = np.array([atom_guess.rabi, max(irf_guess, 0.1 / atom_guess.gamma), 1.0])

    def model(p):
        atom = AtomParams(gamma=atom_guess.gamma, rabi=abs(p[0]),
                          detuning=atom_guess.detuning)
        return blurred_g2_model(tau, atom, abs(p[1]), p[2])

    p, cov, res = damped_least_squares(model, p0, curve.values, w, scales)
    p[0], p[1] = abs(p[0]), abs(p[1])
    return _finish(res, ("rabi", "irf_sigma", "amplitude"), p, cov)
