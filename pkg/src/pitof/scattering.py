"""Analytical backscatter model for fog seen by an iToF camera.

Backscatter is described in *phase units*: a scattering event at modulation
phase φ (round trip) contributes an amplitude density

    polarized:    a_p(φ) = φ⁻² · exp(−σᵢφ) · exp(−σₚφ)
    unpolarized:  a_u(φ) = φ⁻² · exp(−σᵢφ) · (1 − exp(−σₚφ))

for φ ≥ φ₀. The mean phases of these densities have closed forms in the
exponential integral E₁; :func:`backscatter_phasor_integral` evaluates the
same integrals by adaptive quadrature and serves as the independent check.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DomainError, QuadratureError

SATURATION_X = 700.0


@dataclass(frozen=True)
class FogParams:
    """Homogeneous fog. Rates are per radian of modulation phase.

    ``gain`` is the proportionality constant of both amplitude densities
    (backscatter strength relative to a unit-reflectance target); it cancels
    out of every ratio the reconstruction uses.
    """

    sigma_i: float
    sigma_p: float
    phi0: float
    gain: float = 1.0

    def __post_init__(self):
        if not self.sigma_i > 0:
            raise DomainError(f"sigma_i must be > 0, got {self.sigma_i}")
        if not self.sigma_p >= 0:
            raise DomainError(f"sigma_p must be >= 0, got {self.sigma_p}")
        if not self.phi0 > 0:
            raise DomainError(f"phi0 must be > 0, got {self.phi0}")
        if not self.gain >= 0:
            raise DomainError(f"gain must be >= 0, got {self.gain}")

    @property
    def sigma_total(self) -> float:
        return self.sigma_i + self.sigma_p

    @property
    def alpha(self) -> float:
        return self.sigma_i / self.sigma_total

    def scaled(self, factor: float) -> "FogParams":
        """Fog ``factor`` times denser: rates and backscatter strength scale together."""
        return replace(self, sigma_i=self.sigma_i * factor, sigma_p=self.sigma_p * factor,
                       gain=self.gain * factor)

    @classmethod
    def from_total(cls, sigma_total: float, alpha: float, phi0: float, gain: float = 1.0):
        return cls(alpha * sigma_total, (1.0 - alpha) * sigma_total, phi0, gain)


@dataclass(frozen=True)
class QuadratureSpec:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_subdivisions: int = 20000
    tail_decay_lengths: float = 40.0
    min_span: float = 40.0

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("quadrature tolerances must be positive")

    def tail_cutoff(self, phi0, rate):
        """Upper limit beyond which exp(−rate·φ) is negligible."""
        rate = np.asarray(rate, dtype=np.float64)
        with np.errstate(divide="ignore"):
            span = np.where(rate > 0, self.tail_decay_lengths / rate, np.inf)
        return phi0 + np.maximum(span, self.min_span)


DEFAULT_QUAD = QuadratureSpec()


def exp_integral_e1(x):
    """E₁(x) = ∫ₓ^∞ e⁻ᵗ/t dt for x > 0."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(~(x > 0)):
        raise DomainError("E1 is only defined here for x > 0")
    out = kernels.e1_scaled(x) * np.exp(-x)
    return out if out.ndim else float(out)


def _check_phi(phi, fog):
    phi = np.asarray(phi, dtype=np.float64)
    if np.any(phi < fog.phi0):
        raise DomainError("phase below the fog onset phi0")
    return phi


def amp_density_polarized(phi, fog: FogParams):
    phi = _check_phi(phi, fog)
    return fog.gain * np.exp(-fog.sigma_total * phi) / phi**2


def amp_density_unpolarized(phi, fog: FogParams):
    phi = _check_phi(phi, fog)
    return fog.gain * np.exp(-fog.sigma_i * phi) * -np.expm1(-fog.sigma_p * phi) / phi**2


def mean_phase_polarized(sigma_total, phi0, return_flag: bool = False):
    """Mean phase of the polarized density, E₁(x) / (e⁻ˣ/φ₀ − σE₁(x)) with x = σφ₀.

    Evaluated through exp(x)·E₁(x), so no underflow occurs for large ``x``;
    ``return_flag`` additionally reports where ``x`` exceeds the saturation
    threshold (the density is then a near point mass at φ₀).
    """
    sigma_total = np.asarray(sigma_total, dtype=np.float64)
    phi0 = np.asarray(phi0, dtype=np.float64)
    if np.any(~(sigma_total > 0)) or np.any(~(phi0 > 0)):
        raise DomainError("sigma_total and phi0 must be > 0")
    val = kernels.mean_phase_pol(sigma_total, phi0)
    val = val if val.ndim else float(val)
    if return_flag:
        return val, sigma_total * phi0 > SATURATION_X
    return val


def mean_phase_polarized_grad(sigma_total, phi0):
    """(f, df/dσ) of :func:`mean_phase_polarized`."""
    return kernels.mean_phase_pol_grad(sigma_total, phi0)


def mean_phase_unpolarized(sigma_i, sigma_p, phi0):
    """Mean phase of the unpolarized density."""
    sigma_i = np.asarray(sigma_i, dtype=np.float64)
    sigma_p = np.asarray(sigma_p, dtype=np.float64)
    if np.any(~(sigma_p > 0)):
        raise DomainError("no unpolarized component: sigma_p must be > 0")
    if np.any(~(sigma_i > 0)) or not np.all(np.asarray(phi0) > 0):
        raise DomainError("sigma_i and phi0 must be > 0")
    val = kernels.mean_phase_unpol(sigma_i, sigma_i + sigma_p, phi0)
    return val if val.ndim else float(val)


def mean_phase_unpolarized_fog(fog: FogParams):
    return mean_phase_unpolarized(fog.sigma_i, fog.sigma_p, fog.phi0)


def mean_phase_unpolarized_limit(sigma_i, phi0):
    """σₚ → 0⁺ limit of the unpolarized mean phase.

    The density tends to σₚ·e^(−σᵢφ)/φ, whose mean is e^(−x)/(σᵢE₁(x)), x = σᵢφ₀.
    """
    x = np.asarray(sigma_i, dtype=np.float64) * phi0
    return 1.0 / (np.asarray(sigma_i) * kernels.e1_scaled(x))


class BackscatterIntegral(NamedTuple):
    z: complex | np.ndarray  # ∫ a(φ) e^{iφ} dφ
    mass: float | np.ndarray  # ∫ a(φ) dφ
    moment: float | np.ndarray  # ∫ φ a(φ) dφ
    intervals: int | np.ndarray

    @property
    def mean_phase(self):
        return self.moment / self.mass

    @property
    def k_ratio_factor(self):
        return np.abs(self.z) / self.mass


_KINDS = {"polarized": kernels.POLARIZED, "unpolarized": kernels.UNPOLARIZED}


def backscatter_moments(density: str, sigma_i, sigma_p, phi0, upper=None,
                        quad: QuadratureSpec = DEFAULT_QUAD, gain=1.0) -> BackscatterIntegral:
    """Vectorized :func:`backscatter_phasor_integral` over parameter arrays.

    ``upper`` (optional, per element) truncates the integral; otherwise the
    tail cutoff of ``quad`` is used. Identical parameter sets are integrated
    once.
    """
    try:
        kind = _KINDS[density]
    except KeyError:
        raise ValueError(f"density must be one of {sorted(_KINDS)}") from None
    si, sp, p0 = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64)
                                       for v in (sigma_i, sigma_p, phi0)))
    rate = si + sp if kind == kernels.POLARIZED else si
    cutoff = quad.tail_cutoff(p0, rate)
    up = cutoff if upper is None else np.minimum(np.asarray(upper, dtype=np.float64), cutoff)
    si, sp, p0, up = np.broadcast_arrays(si, sp, p0, up)
    shape = si.shape
    params = np.stack([a.ravel() for a in (si, sp, p0, up)], axis=1)
    uniq, inverse = np.unique(params, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    mom, ok, nsub = kernels.quad_moments(np.full(len(uniq), kind), uniq[:, 0], uniq[:, 1],
                                         uniq[:, 2], uniq[:, 3], quad.rel_tol, quad.abs_tol,
                                         quad.max_subdivisions)
    if not np.all(ok):
        bad = uniq[~ok][0]
        raise QuadratureError(
            "backscatter quadrature did not reach tolerance",
            {"sigma_i": bad[0], "sigma_p": bad[1], "phi0": bad[2], "upper": bad[3],
             "max_subdivisions": quad.max_subdivisions, "failures": int((~ok).sum())})
    mom = mom[inverse].reshape(shape + (kernels.N_MOMENTS,)) * np.asarray(gain)[..., None]
    z = mom[..., 1] + 1j * mom[..., 2]
    nsub = nsub[inverse].reshape(shape)
    if not shape:
        return BackscatterIntegral(complex(z), float(mom[..., 0]), float(mom[..., 3]), int(nsub))
    return BackscatterIntegral(z, mom[..., 0], mom[..., 3], nsub)


def backscatter_phasor_integral(density: str, fog: FogParams,
                                quad: QuadratureSpec = DEFAULT_QUAD,
                                upper=None) -> BackscatterIntegral:
    """Z = ∫ a(φ)e^{iφ}dφ and M = ∫ a(φ)dφ over [φ₀, ∞) (or [φ₀, upper])."""
    return backscatter_moments(density, fog.sigma_i, fog.sigma_p, fog.phi0, upper, quad,
                               fog.gain)


def k_ratio_unpolarized(fog: FogParams, k0: float, quad: QuadratureSpec = DEFAULT_QUAD):
    """Amplitude-to-offset ratio of the integrated unpolarized backscatter, k₀‖Z‖/M."""
    return k_ratio_from_rates(fog.sigma_i, fog.sigma_p, fog.phi0, k0, quad)


def k_ratio_from_rates(sigma_i, sigma_p, phi0, k0, quad: QuadratureSpec = DEFAULT_QUAD):
    if not k0 > 0:
        raise DomainError("k0 must be > 0")
    if np.any(~(np.asarray(sigma_p) > 0)):
        raise DomainError("no unpolarized component: sigma_p must be > 0")
    res = backscatter_moments("unpolarized", sigma_i, sigma_p, phi0, quad=quad)
    return k0 * res.k_ratio_factor
