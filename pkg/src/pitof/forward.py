"""Synthetic polarimetric four-tap captures of a scene behind fog.

Image formation per pixel (⊕ is complex phasor addition with offsets adding):

    cross    = ½Sᵘ ⊕ ½Tᵘ
    parallel = Sᵖ ⊕ ½Sᵘ ⊕ ½Tᵘ ⊕ Tᵖ

Tᵘ is the target return, Sᵖ / Sᵘ the polarized and unpolarized backscatter.
Tᵖ is zero unless ``polarized_target_fraction`` is set for stress tests.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from .errors import ConfigError, DomainError
from .phasor import CaptureStack, Phasor, TapSet, encode_taps, wrap_phase
from .scattering import (DEFAULT_QUAD, FogParams, QuadratureSpec, backscatter_moments,
                         mean_phase_polarized, mean_phase_unpolarized)

SPEED_OF_LIGHT = 299_792_458.0
SOURCE_GAIN = 1.0


@dataclass(frozen=True)
class CameraConfig:
    width: int
    height: int
    mod_freq: float = 80e6
    k0: float = 0.71
    phi0: Optional[float] = None
    fog_onset_m: Optional[float] = None
    illum_phase_offset: Optional[np.ndarray] = field(default=None, compare=False)
    speed_of_light: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ConfigError(f"image size must be positive, got {self.width}x{self.height}")
        if not self.mod_freq > 0:
            raise ConfigError("mod_freq must be > 0")
        if not 0 < self.k0 <= 1:
            raise ConfigError("k0 must lie in (0, 1]")
        if self.phi0 is not None and not self.phi0 > 0:
            raise ConfigError("phi0 must be > 0")
        if self.fog_onset_m is not None and not self.fog_onset_m > 0:
            raise ConfigError("fog_onset_m must be > 0")
        if self.illum_phase_offset is not None:
            off = np.broadcast_to(np.asarray(self.illum_phase_offset, dtype=np.float64),
                                  (self.height, self.width))
            object.__setattr__(self, "illum_phase_offset", off)

    @property
    def shape(self):
        return (self.height, self.width)

    @property
    def max_range(self) -> float:
        """Unambiguous range c / 2f."""
        return self.speed_of_light / (2.0 * self.mod_freq)

    @property
    def phase_per_meter(self) -> float:
        return 4.0 * np.pi * self.mod_freq / self.speed_of_light


def depth_to_phase(z, cam: CameraConfig, offset: bool = True):
    z = np.asarray(z, dtype=np.float64)
    if np.any(~((z > 0) & (z < cam.max_range))):
        raise DomainError(f"depth outside the unambiguous range (0, {cam.max_range:.4f}) m")
    phi = cam.phase_per_meter * z
    if offset and cam.illum_phase_offset is not None:
        phi = phi + cam.illum_phase_offset
    return phi


def phase_to_depth(phi, cam: CameraConfig, offset: bool = True):
    phi = np.asarray(phi, dtype=np.float64)
    if offset and cam.illum_phase_offset is not None:
        phi = phi - cam.illum_phase_offset
    return phi / cam.phase_per_meter


@dataclass(frozen=True)
class SceneSpec:
    depth: np.ndarray
    reflectance: np.ndarray = 1.0
    fog: Optional[FogParams] = None
    ambient: np.ndarray = 0.0

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        if depth.ndim != 2:
            raise ConfigError("depth must be a (height, width) plane")
        refl = np.broadcast_to(np.asarray(self.reflectance, dtype=np.float64), depth.shape)
        amb = np.broadcast_to(np.asarray(self.ambient, dtype=np.float64), depth.shape)
        if np.any((refl < 0) | (refl > 1)):
            raise ConfigError("reflectance must lie in [0, 1]")
        if np.any(amb < 0):
            raise ConfigError("ambient must be >= 0")
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "reflectance", refl)
        object.__setattr__(self, "ambient", amb)


@dataclass(frozen=True)
class NoiseSpec:
    """Tap noise. ``gaussian``: std = scale · channel offset of the pixel.
    ``shot``: std = scale · sqrt(tap)."""

    mode: Literal["none", "gaussian", "shot"] = "none"
    scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("none", "gaussian", "shot"):
            raise ConfigError(f"unknown noise mode {self.mode!r}")
        if not self.scale >= 0:
            raise ConfigError("noise scale must be >= 0")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class GroundTruth:
    target: Phasor
    backscatter_p: Phasor
    backscatter_u: Phasor
    depth: np.ndarray
    fog: Optional[FogParams]
    target_phase: np.ndarray


def simulate_target(scene: SceneSpec, cam: CameraConfig) -> Phasor:
    """Unpolarized target return: a = ρ·φ⁻²·exp(−σᵢφ), s = a / k₀."""
    phi = depth_to_phase(scene.depth, cam)
    # attenuation follows path length, so it uses the geometric phase only
    phi_geo = depth_to_phase(scene.depth, cam, offset=False)
    sigma_i = scene.fog.sigma_i if scene.fog is not None else 0.0
    amp = SOURCE_GAIN * scene.reflectance * np.exp(-sigma_i * phi_geo) / phi_geo**2
    return Phasor(amp, wrap_phase(phi), amp / cam.k0)


def _zero_phasor(shape):
    z = np.zeros(shape)
    return Phasor(z, z.copy(), z.copy())


def simulate_backscatter(scene: SceneSpec, cam: CameraConfig,
                         mode: Literal["infinite", "truncated"] = "infinite",
                         phase_model: Literal["mean", "circular"] = "mean",
                         quad: QuadratureSpec = DEFAULT_QUAD):
    """Polarized and unpolarized backscatter phasors per pixel.

    Amplitude is ‖∫a(φ)e^{iφ}dφ‖ and offset ∫a(φ)dφ / k₀ (every scattering
    depth individually has amplitude-to-offset ratio k₀). The phase is the
    amplitude-weighted mean phase for ``phase_model="mean"``, which is exactly
    what the reconstruction inverts, or arg of the integrated phasor for
    ``"circular"``. ``mode="truncated"`` stops the integral at the target.
    """
    shape = scene.depth.shape
    fog = scene.fog
    if fog is None or fog.gain == 0:
        return _zero_phasor(shape), _zero_phasor(shape)
    if mode not in ("infinite", "truncated"):
        raise ConfigError(f"unknown integration mode {mode!r}")
    if phase_model not in ("mean", "circular"):
        raise ConfigError(f"unknown phase model {phase_model!r}")
    upper = None
    if mode == "truncated":
        upper = depth_to_phase(scene.depth, cam, offset=False)
    out = []
    for density in ("polarized", "unpolarized"):
        if density == "unpolarized" and fog.sigma_p == 0:
            out.append(_zero_phasor(shape))
            continue
        res = backscatter_moments(density, fog.sigma_i, fog.sigma_p, fog.phi0, upper, quad,
                                  fog.gain)
        z, mass, moment = (np.broadcast_to(v, shape) for v in (res.z, res.mass, res.moment))
        if phase_model == "circular":
            phase = wrap_phase(np.angle(z))
        elif mode == "infinite":
            closed = (mean_phase_polarized(fog.sigma_total, fog.phi0) if density == "polarized"
                      else mean_phase_unpolarized(fog.sigma_i, fog.sigma_p, fog.phi0))
            phase = np.full(shape, closed)
        else:
            with np.errstate(invalid="ignore", divide="ignore"):
                phase = np.where(mass > 0, moment / mass, 0.0)
        out.append(Phasor(np.abs(z).copy(), phase, mass / cam.k0))
    return out[0], out[1]


def _compose(*parts: Phasor) -> Phasor:
    z = sum(p.to_complex() for p in parts)
    s = sum(p.offset for p in parts)
    return Phasor.from_complex(z, s)


def synthesize_capture(scene: SceneSpec, cam: CameraConfig, noise: NoiseSpec = NoiseSpec(),
                       mode: Literal["infinite", "truncated"] = "infinite",
                       phase_model: Literal["mean", "circular"] = "mean",
                       polarized_target_fraction: float = 0.0,
                       quad: QuadratureSpec = DEFAULT_QUAD):
    """Render a :class:`CaptureStack` and the pre-noise :class:`GroundTruth`."""
    if scene.depth.shape != cam.shape:
        raise ConfigError(f"scene is {scene.depth.shape}, camera is {cam.shape}")
    if not 0 <= polarized_target_fraction < 1:
        raise ConfigError("polarized_target_fraction must lie in [0, 1)")
    target = simulate_target(scene, cam)
    s_p, s_u = simulate_backscatter(scene, cam, mode, phase_model, quad)
    half = lambda p: p.scaled(0.5)
    t_u = target.scaled(1.0 - polarized_target_fraction)
    t_p = target.scaled(polarized_target_fraction)
    cross = _compose(half(s_u), half(t_u))
    parallel = _compose(s_p, half(s_u), half(t_u), t_p)
    amb = scene.ambient
    cross_taps = encode_taps(cross).taps + amb
    par_taps = encode_taps(parallel).taps + amb
    if noise.mode != "none" and noise.scale > 0:
        rng = np.random.default_rng(np.random.SeedSequence(int(noise.seed)))
        # one draw for both channels; scaling it keeps noise ladders coupled
        normals = rng.standard_normal((2,) + par_taps.shape)
        if noise.mode == "gaussian":
            std_p = noise.scale * (parallel.offset + amb)[None]
            std_c = noise.scale * (cross.offset + amb)[None]
        else:
            std_p = noise.scale * np.sqrt(np.maximum(par_taps, 0.0))
            std_c = noise.scale * np.sqrt(np.maximum(cross_taps, 0.0))
        par_taps = par_taps + std_p * normals[0]
        cross_taps = cross_taps + std_c * normals[1]
    has_amb = bool(np.any(amb > 0))
    stack = CaptureStack(TapSet(par_taps), TapSet(cross_taps),
                         amb.copy() if has_amb else None, amb.copy() if has_amb else None, cam)
    gt = GroundTruth(t_u, s_p, s_u, scene.depth.copy(), scene.fog,
                     depth_to_phase(scene.depth, cam))
    return stack, gt


# ---------------------------------------------------------------------------
# canned scenes
# ---------------------------------------------------------------------------

BASE_FOG = dict(sigma_i=0.06, sigma_p=0.04, gain=0.01)
PRESET_FACTORS = {"thin": 1.0, "medium": 2.0, "thick": 4.0}


def preset_fog(name: str, phi0: float, base: Optional[dict] = None) -> FogParams:
    """Fog density ladder: thin/medium/thick scale the base fog by 1, 2, 4."""
    try:
        factor = PRESET_FACTORS[name]
    except KeyError:
        raise ConfigError(f"unknown fog preset {name!r}; choose from {sorted(PRESET_FACTORS)}")
    b = dict(BASE_FOG if base is None else base)
    return FogParams(phi0=phi0, **b).scaled(factor)


def staircase_depth(height: int, width: int, near: float = 0.3, far: float = 1.5,
                    steps: int = 5) -> np.ndarray:
    """Depth plane of ``steps`` vertical bands from ``near`` to ``far``."""
    levels = np.linspace(near, far, steps)
    cols = np.minimum((np.arange(width) * steps) // width, steps - 1)
    return np.broadcast_to(levels[cols], (height, width)).copy()


def default_camera(width: int = 64, height: int = 48, fog_onset_m: float = 0.05,
                   **kwargs) -> CameraConfig:
    cam = CameraConfig(width=width, height=height, fog_onset_m=fog_onset_m, **kwargs)
    return CameraConfig(width=width, height=height, phi0=cam.phase_per_meter * fog_onset_m,
                        fog_onset_m=fog_onset_m, **kwargs)
