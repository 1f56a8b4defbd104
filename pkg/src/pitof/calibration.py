"""Recovery of k₀, the per-pixel intensity fraction α = σᵢ/σ, and φ₀."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.ndimage import generic_filter

from . import kernels
from .errors import CalibrationError, ConfigError
from .forward import CameraConfig
from .phasor import CaptureStack, decode_taps, tap_subtract

ALPHA_EPS = 1e-6
SIGMA_BOUNDS = (1e-3, 1e3)  # multiples of 1/phi0


@dataclass(frozen=True)
class CalibrationParams:
    k0: float
    alpha: np.ndarray
    phi0: float
    mod_freq: float
    alpha_valid: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0 < self.k0 <= 1:
            raise ConfigError(f"k0 must lie in (0, 1], got {self.k0}")
        if not self.phi0 > 0:
            raise ConfigError("phi0 must be > 0")
        if not self.mod_freq > 0:
            raise ConfigError("mod_freq must be > 0")
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if np.any(~((alpha > 0) & (alpha < 1))):
            raise ConfigError("alpha must lie in (0, 1) at every pixel")
        object.__setattr__(self, "alpha", alpha)

    def global_alpha(self) -> "CalibrationParams":
        """Collapse the per-pixel α plane to its median."""
        return replace(self, alpha=np.full_like(self.alpha, np.median(self.alpha)))


def resolve_phi0(cam: CameraConfig) -> float:
    """φ₀ from the camera config, or from the fog onset distance."""
    if cam.phi0 is not None:
        phi0 = float(cam.phi0)
    elif cam.fog_onset_m is not None:
        phi0 = float(cam.phase_per_meter * cam.fog_onset_m)
    else:
        raise ConfigError("camera config defines neither phi0 nor fog_onset_m")
    if not phi0 > 0:
        raise ConfigError("phi0 must be > 0")
    return phi0


def calibrate_k0(reference: CaptureStack, amplitude_floor: float = 0.0) -> float:
    """Median amplitude-to-offset ratio of a fog-free cross-polarized capture."""
    if reference.has_ambient:
        reference = reference.ambient_subtracted()
    p = decode_taps(reference.cross)
    valid = ~p.degenerate & (p.amplitude > amplitude_floor) & (p.offset > 0)
    if not valid.any():
        raise CalibrationError("no valid pixels in the k0 reference capture")
    return float(np.median(p.amplitude[valid] / p.offset[valid]))


@dataclass(frozen=True)
class AlphaCalibration:
    alpha: np.ndarray
    valid: np.ndarray
    sigma: np.ndarray
    sigma_i: np.ndarray


def _fill_invalid(alpha, valid, window):
    if valid.all():
        return alpha
    padded = np.where(valid, alpha, np.nan)
    local = generic_filter(padded, np.nanmedian, size=window, mode="nearest")
    out = np.where(valid, alpha, local)
    still = ~np.isfinite(out)
    if still.any():
        out[still] = np.median(alpha[valid])
    return out


def calibrate_alpha(empty_fog: CaptureStack, phi0: float, amplitude_floor: float = 0.0,
                    fill: bool = True, window: int = 5) -> AlphaCalibration:
    """Per-pixel α from a capture of fog without any target.

    Per pixel: σ from the PDI (polarized) phase by inverting the polarized
    mean-phase model, then σᵢ from the cross (unpolarized) phase with σ held
    fixed; α = σᵢ/σ. Pixels where either inversion fails are flagged and, with
    ``fill``, replaced by the median of valid neighbours.
    """
    if empty_fog.has_ambient:
        empty_fog = empty_fog.ambient_subtracted()
    pdi = decode_taps(tap_subtract(empty_fog.parallel, empty_fog.cross))
    cross = decode_taps(empty_fog.cross)
    shape = pdi.phase.shape
    usable_p = ~pdi.degenerate & (pdi.amplitude > amplitude_floor)
    usable_u = ~cross.degenerate & (cross.amplitude > amplitude_floor)

    lo, hi = SIGMA_BOUNDS[0] / phi0, SIGMA_BOUNDS[1] / phi0
    sigma, ok_s = kernels.invert_pol_bisect(pdi.phase.ravel(), phi0, lo, hi)
    sigma = sigma.reshape(shape)
    ok_s = ok_s.reshape(shape) & usable_p
    target_u = np.where(usable_u & ok_s, cross.phase, np.nan)
    alpha, ok_a = kernels.invert_alpha_bisect(target_u, np.where(ok_s, sigma, 0.0), phi0,
                                              eps=ALPHA_EPS)
    valid = ok_s & ok_a & usable_u
    alpha = np.clip(alpha, ALPHA_EPS, 1.0 - ALPHA_EPS)
    alpha = np.where(valid, alpha, np.nan)
    if fill:
        if not valid.any():
            raise CalibrationError("alpha inversion failed at every pixel "
                                   "(no unpolarized backscatter in the capture?)")
        alpha = _fill_invalid(alpha, valid, window)
    return AlphaCalibration(alpha, valid, np.where(ok_s, sigma, np.nan),
                            np.where(valid, alpha * sigma, np.nan))


def calibrate(reference: CaptureStack, empty_fog: Optional[CaptureStack], cam: CameraConfig,
              global_alpha: Optional[float] = None) -> CalibrationParams:
    """Run all three calibrations. ``global_alpha`` replaces the empty-fog capture."""
    phi0 = resolve_phi0(cam)
    k0 = calibrate_k0(reference)
    if empty_fog is not None:
        res = calibrate_alpha(empty_fog, phi0)
        alpha, valid = res.alpha, res.valid
    elif global_alpha is not None:
        alpha = np.full(cam.shape, float(global_alpha))
        valid = np.ones(cam.shape, dtype=bool)
    else:
        raise ConfigError("alpha calibration needs an empty-fog capture or a global alpha")
    return CalibrationParams(k0, alpha, phi0, cam.mod_freq, valid)
