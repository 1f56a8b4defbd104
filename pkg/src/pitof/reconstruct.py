"""Scattering-free depth from a polarimetric capture.

Pipeline per pixel: PDI decode → decay-rate fit σ → unpolarized mean phase
from σᵢ = ασ → integrated amplitude-to-offset ratio k̄ → unpolarized
backscatter amplitude (quadratic) → phasor subtraction from the cross
channel → depth. The only cross-pixel steps are the two medians (global σ,
α infill during calibration).
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from . import kernels
from .calibration import CalibrationParams
from .errors import ConfigError, DomainError, NumericError, PipelineError
from .forward import SPEED_OF_LIGHT, CameraConfig
from .phasor import CaptureStack, Phasor, decode_taps, tap_subtract, wrap_phase
from .scattering import DEFAULT_QUAD, QuadratureSpec, k_ratio_from_rates

ALPHA_MAX = 1.0 - 1e-9
RESIDUAL_GATE = 1e-8


@dataclass(frozen=True)
class FitConfig:
    """Decay-rate fit settings. ``sigma_bounds`` are in units of 1/φ₀."""

    optimizer: Literal["adam", "bisection"] = "adam"
    learning_rate: float = 0.05
    max_iters: int = 500
    tol: float = 1e-16
    sigma_bounds: tuple = (1e-3, 1e3)
    min_valid_fraction: float = 0.01

    def __post_init__(self):
        if self.optimizer not in ("adam", "bisection"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        lo, hi = self.sigma_bounds
        if not (0 < lo < hi):
            raise ConfigError("sigma_bounds must be positive and increasing")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")


@dataclass(frozen=True)
class SigmaFit:
    sigma_map: np.ndarray
    sigma: float
    residual: np.ndarray
    valid: np.ndarray
    iterations: Optional[np.ndarray] = None


@dataclass(frozen=True)
class AmplitudeSolution:
    amplitude: np.ndarray
    valid: np.ndarray
    alt_branch: np.ndarray
    residual: np.ndarray  # |unsquared constraint| / (k0 s⊥)
    clamped: Optional[np.ndarray] = None


@dataclass(frozen=True)
class BackscatterEstimate:
    phase_p: np.ndarray
    amp_p: np.ndarray
    sigma: float
    sigma_map: np.ndarray
    phase_u: np.ndarray
    amp_u: np.ndarray
    k_ratio: np.ndarray
    valid: np.ndarray
    alt_branch: np.ndarray
    residual: np.ndarray
    fog_detected: bool = True
    timings_ms: dict = field(default_factory=dict)

    @property
    def offset_u(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.amp_u / self.k_ratio


@dataclass(frozen=True)
class DepthMap:
    depth: np.ndarray
    phase: np.ndarray
    amplitude: np.ndarray
    valid: np.ndarray

    @property
    def valid_fraction(self) -> float:
        return float(np.mean(self.valid))


def _camera_for(stack: CaptureStack, mod_freq: Optional[float] = None) -> CameraConfig:
    cam = stack.camera
    if cam is None:
        if mod_freq is None:
            raise ConfigError("no camera config attached to the capture")
        return CameraConfig(width=stack.width, height=stack.height, mod_freq=mod_freq)
    return cam


def _to_depth(phase, amplitude, valid, cam: CameraConfig) -> DepthMap:
    ppm = 4.0 * np.pi * cam.mod_freq / cam.speed_of_light
    phi = np.asarray(phase, dtype=np.float64)
    if cam.illum_phase_offset is not None:
        phi = phi - cam.illum_phase_offset
    depth = phi / ppm
    valid = valid & np.isfinite(depth) & (depth > 0) & (depth < cam.max_range)
    return DepthMap(np.where(valid, depth, np.nan), phase, amplitude, valid)


def pdi_backscatter(stack: CaptureStack, noise_floor: float = 0.0):
    """Polarized backscatter phasor from parallel − cross taps, and its mask."""
    if stack.has_ambient:
        stack = stack.ambient_subtracted()
    p = decode_taps(tap_subtract(stack.parallel, stack.cross))
    valid = ~p.degenerate & (p.amplitude > noise_floor)
    return p, valid


def fit_sigma(phase_p, phi0: float, cfg: FitConfig = FitConfig(), valid=None) -> SigmaFit:
    """Per-pixel σ with f(σ) = φ̄ₛᵖ, and the median over valid pixels."""
    phase_p = np.asarray(phase_p, dtype=np.float64)
    shape = phase_p.shape
    valid = np.ones(shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    valid = valid & np.isfinite(phase_p) & (phase_p > phi0)
    lo, hi = cfg.sigma_bounds[0] / phi0, cfg.sigma_bounds[1] / phi0
    idx = np.flatnonzero(valid)
    target = phase_p.ravel()[idx]
    sigma_map = np.full(phase_p.size, np.nan)
    resid = np.full(phase_p.size, np.nan)
    iters = np.zeros(phase_p.size, dtype=np.int64)
    ok = np.zeros(idx.size, dtype=bool)
    if idx.size:
        if cfg.optimizer == "adam":
            with np.errstate(divide="ignore"):
                s0 = np.clip(1.0 / (target - phi0), lo, hi)
            s, r, it, ok = kernels.fit_adam(target, np.log(s0), phi0, cfg.learning_rate,
                                            cfg.max_iters, cfg.tol, lo, hi)
            iters[idx] = it
        else:
            s, ok = kernels.invert_pol_bisect(target, phi0, lo, hi)
            r = (kernels.mean_phase_pol(np.where(ok, s, 1.0), phi0) - target) ** 2
        sigma_map[idx] = np.where(ok, s, np.nan)
        resid[idx] = r
    fit_valid = np.zeros(phase_p.size, dtype=bool)
    fit_valid[idx] = ok
    fit_valid = fit_valid.reshape(shape)
    frac = fit_valid.mean() if fit_valid.size else 0.0
    if frac < cfg.min_valid_fraction:
        raise PipelineError("fit_sigma", f"only {frac:.2%} of pixels gave a decay-rate fit")
    sigma_map = sigma_map.reshape(shape)
    return SigmaFit(sigma_map, float(np.median(sigma_map[fit_valid])), resid.reshape(shape),
                    fit_valid, iters.reshape(shape))


def predict_unpolarized_phase(sigma, alpha, phi0: float):
    """Unpolarized mean phase with σᵢ = ασ, σₚ = (1−α)σ; α→1 is masked."""
    sigma, alpha = np.broadcast_arrays(np.asarray(sigma, dtype=np.float64),
                                       np.asarray(alpha, dtype=np.float64))
    valid = np.isfinite(sigma) & (sigma > 0) & (alpha > 0) & (alpha < ALPHA_MAX)
    s = np.where(valid, sigma, 1.0)
    a = np.where(valid, alpha, 0.5)
    phase = kernels.mean_phase_unpol(a * s, s, phi0)
    valid &= np.isfinite(phase) & (phase > phi0)
    return np.where(valid, phase, np.nan), valid


def solve_amplitude(cross: Phasor, phase_u, k_ratio, k0: float, valid=None,
                    rtol: float = 1e-9, clamp_infeasible: bool = False) -> AmplitudeSolution:
    """Unpolarized backscatter amplitude from the cross phasor.

    Solves c₁A² − 2c₂A + c₃ = 0 with
    c₁ = 1 − (k₀/k̄)², c₂ = a⊥cos(φ⊥ − φᵤ) − k₀²s⊥/k̄, c₃ = a⊥² − (k₀s⊥)².
    The root (c₂ + √(c₂² − c₁c₃))/c₁ is preferred; the other root is used
    (``alt_branch``) only when the preferred one is infeasible: negative,
    leaving a negative target offset s⊥ − A/k̄, or failing the unsquared
    equation (a spurious root of the squared form). Pixels with no feasible
    root are masked, or with ``clamp_infeasible`` get the preferred root
    projected onto [0, k̄s⊥] and are marked in ``clamped``.
    """
    a = np.asarray(cross.amplitude, dtype=np.float64)
    phi = np.asarray(cross.phase, dtype=np.float64)
    s = np.asarray(cross.offset, dtype=np.float64)
    a, phi, s, phase_u, k = np.broadcast_arrays(a, phi, s, np.asarray(phase_u, dtype=np.float64),
                                                np.asarray(k_ratio, dtype=np.float64))
    valid = np.ones(a.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    valid = valid & np.isfinite(phase_u) & np.isfinite(k) & (k > 0) & (k <= k0) & (s > 0)
    k = np.where(valid, k, k0)
    ratio = k0 / k
    c1 = 1.0 - ratio**2
    c2 = a * np.cos(phi - phase_u) - k0 * ratio * s
    c3 = a**2 - (k0 * s) ** 2
    disc = c2**2 - c1 * c3
    scale = np.maximum(c2**2, np.abs(c1 * c3))
    real = disc >= -1e-12 * scale
    sq = np.sqrt(np.maximum(disc, 0.0))
    q = c2 + np.where(c2 >= 0, sq, -sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        r_q = q / c1
        r_c = np.where(q != 0, c3 / q, 0.0)
    plus = np.where(c2 >= 0, r_q, r_c)
    minus = np.where(c2 >= 0, r_c, r_q)

    tol = rtol * k0 * s

    def residual(root):
        r = np.where(np.isfinite(root), np.maximum(root, 0.0), 0.0)
        lhs = np.hypot(a * np.cos(phi) - r * np.cos(phase_u), a * np.sin(phi) - r * np.sin(phase_u))
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.abs(lhs + r * k0 / k - k0 * s) / (k0 * s)

    def feasible(root, res):
        # a root of the squared equation with a negative right-hand side is spurious,
        # hence the residual gate on top of the sign constraints
        return (np.isfinite(root) & (root >= -tol) & (s - root / k >= -tol / k0)
                & (res <= RESIDUAL_GATE))

    res_p, res_m = residual(plus), residual(minus)
    ok_p, ok_m = feasible(plus, res_p), feasible(minus, res_m)
    use_minus = ~ok_p & ok_m
    amp = np.where(use_minus, minus, plus)
    res = np.where(use_minus, res_m, res_p)
    feasible_any = ok_p | ok_m
    clamped = np.zeros(a.shape, dtype=bool)
    if clamp_infeasible:
        clamped = valid & real & ~feasible_any & np.isfinite(plus)
        amp = np.where(clamped, np.clip(plus, 0.0, k * s), amp)
        res = np.where(clamped, residual(amp), res)
        feasible_any = feasible_any | clamped
    amp = np.clip(amp, 0.0, k * s)
    valid = valid & real & feasible_any
    return AmplitudeSolution(np.where(valid, amp, np.nan), valid, valid & use_minus,
                             np.where(valid, res, np.nan), clamped)


def remove_scattering(cross: Phasor, phase_u, amp_u, noise_floor: float = 0.0):
    """Target phasor a⊥e^{iφ⊥} − āₛᵘe^{iφ̄ₛᵘ}; returns (amplitude, phase, valid)."""
    z = cross.to_complex() - np.asarray(amp_u) * np.exp(1j * np.asarray(phase_u))
    amp = np.abs(z)
    valid = np.isfinite(amp) & (amp > noise_floor)
    return amp, np.where(valid, wrap_phase(np.angle(z)), np.nan), valid


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except (DomainError, NumericError, FloatingPointError) as exc:
        raise PipelineError(name, str(exc)) from exc


def reconstruct_depth(stack: CaptureStack, calib: CalibrationParams,
                      cfg: FitConfig = FitConfig(), *, noise_floor: float = 0.0,
                      per_pixel_sigma: bool = False, global_alpha: bool = False,
                      assume_fog_free: bool = False, clamp_infeasible: bool = False,
                      quad: QuadratureSpec = DEFAULT_QUAD):
    """Full pipeline; returns ``(DepthMap, BackscatterEstimate)``.

    With ``assume_fog_free`` or when the PDI channel carries no polarized
    backscatter, nothing is subtracted and the result equals the cross
    baseline.
    """
    timings = {}
    t0 = time.perf_counter()

    def lap(name):
        nonlocal t0
        t1 = time.perf_counter()
        timings[name] = 1e3 * (t1 - t0)
        t0 = t1

    if calib.alpha.shape != (stack.height, stack.width):
        raise PipelineError("calibration", f"alpha plane {calib.alpha.shape} does not match "
                            f"capture {(stack.height, stack.width)}")
    cam = _camera_for(stack, calib.mod_freq)
    if stack.has_ambient:
        stack = _stage("subtract_ambient", stack.ambient_subtracted)
    cross = decode_taps(stack.cross)
    pdi, pdi_valid = pdi_backscatter(stack, noise_floor)
    lap("decode")
    shape = cross.amplitude.shape
    phi0, k0 = calib.phi0, calib.k0

    fog_free = assume_fog_free or pdi_valid.mean() < cfg.min_valid_fraction
    if fog_free:
        valid = ~cross.degenerate & (cross.amplitude > noise_floor)
        nan = np.full(shape, np.nan)
        est = BackscatterEstimate(np.where(pdi_valid, pdi.phase, np.nan), pdi.amplitude, 0.0,
                                  nan, nan, np.zeros(shape), np.full(shape, k0), valid,
                                  np.zeros(shape, bool), np.zeros(shape), False, timings)
        return _to_depth(cross.phase, cross.amplitude, valid, cam), est

    fit = _stage("fit_sigma", fit_sigma, pdi.phase, phi0, cfg, pdi_valid)
    lap("fit_sigma")
    if per_pixel_sigma:
        sigma_used = np.where(fit.valid, fit.sigma_map, fit.sigma)
    else:
        sigma_used = np.full(shape, fit.sigma)
    alpha = np.full(shape, np.median(calib.alpha)) if global_alpha else calib.alpha

    phase_u, ok_u = _stage("predict_unpolarized_phase", predict_unpolarized_phase,
                           sigma_used, alpha, phi0)
    lap("predict_unpolarized_phase")
    k_ratio = np.full(shape, np.nan)
    if ok_u.any():
        si = alpha[ok_u] * sigma_used[ok_u]
        sp = (1.0 - alpha[ok_u]) * sigma_used[ok_u]
        k_ratio[ok_u] = _stage("k_ratio", k_ratio_from_rates, si, sp, phi0, k0, quad)
    lap("k_ratio")
    sol = _stage("solve_amplitude", solve_amplitude, cross, phase_u, k_ratio, k0,
                 ok_u & ~cross.degenerate, clamp_infeasible=clamp_infeasible)
    lap("solve_amplitude")
    amp_t, phase_t, ok_t = remove_scattering(cross, np.where(sol.valid, phase_u, 0.0),
                                             np.where(sol.valid, sol.amplitude, 0.0),
                                             noise_floor)
    valid = sol.valid & ok_t
    depth = _to_depth(np.where(valid, phase_t, np.nan), amp_t, valid, cam)
    lap("remove_scattering")
    est = BackscatterEstimate(np.where(fit.valid, pdi.phase, np.nan), pdi.amplitude, fit.sigma,
                              fit.sigma_map, phase_u, sol.amplitude, k_ratio, valid,
                              sol.alt_branch, sol.residual, True, timings)
    return depth, est


BASELINES = ("parallel", "cross", "pdi")


def baseline_depth(stack: CaptureStack, which: str, cam: Optional[CameraConfig] = None,
                   noise_floor: float = 0.0) -> DepthMap:
    """Conventional depth: phase of one channel converted directly."""
    if which not in BASELINES:
        raise ConfigError(f"baseline must be one of {BASELINES}, got {which!r}")
    if stack.has_ambient:
        stack = stack.ambient_subtracted()
    if which == "parallel":
        p = decode_taps(stack.parallel)
    elif which == "cross":
        p = decode_taps(stack.cross)
    else:
        p = decode_taps(tap_subtract(stack.parallel, stack.cross))
    cam = cam if cam is not None else _camera_for(stack)
    valid = ~p.degenerate & (p.amplitude > noise_floor)
    return _to_depth(p.phase, p.amplitude, valid, cam)


def noise_floor_from_dark(dark_amplitude, factor: float = 3.0) -> float:
    """``factor`` × median absolute deviation of fog-free dark-frame amplitudes."""
    d = np.asarray(dark_amplitude, dtype=np.float64).ravel()
    return float(factor * np.median(np.abs(d - np.median(d))))


__all__ = [
    "FitConfig", "SigmaFit", "AmplitudeSolution", "BackscatterEstimate", "DepthMap",
    "pdi_backscatter", "fit_sigma", "predict_unpolarized_phase", "solve_amplitude",
    "remove_scattering", "reconstruct_depth", "baseline_depth", "noise_floor_from_dark",
    "SPEED_OF_LIGHT",
]
