"""Four-tap phasor codec and phasor arithmetic.

Tap samples are labelled ψ ∈ {0°, 45°, 90°, 135°}; the correlation phase of a
label is 2ψ. The forward model used by :func:`encode_taps` is

    i_ψ = s − a·cos(φ − 2ψ)

which is the convention that :func:`decode_taps` inverts exactly. All functions
work element-wise on arrays, so a "per-pixel phasor" is simply a
:class:`Phasor` whose fields are ``(H, W)`` arrays.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

TWO_PI = 2.0 * np.pi
TAP_LABELS_DEG = (0, 45, 90, 135)
_CORR_PHASE = np.deg2rad([0.0, 90.0, 180.0, 270.0])


def wrap_phase(phi):
    """Wrap to [0, 2π). Guards the ``-tiny % 2π == 2π`` rounding case."""
    w = np.mod(phi, TWO_PI)
    return np.where(w >= TWO_PI, 0.0, w)


@dataclass(frozen=True)
class Phasor:
    amplitude: np.ndarray
    phase: np.ndarray
    offset: np.ndarray
    degenerate: Optional[np.ndarray] = None

    @classmethod
    def from_complex(cls, z, offset) -> "Phasor":
        z = np.asarray(z, dtype=np.complex128)
        return cls(np.abs(z), wrap_phase(np.angle(z)), np.asarray(offset, dtype=np.float64))

    def to_complex(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phase)

    def __add__(self, other: "Phasor") -> "Phasor":
        return Phasor.from_complex(self.to_complex() + other.to_complex(),
                                   self.offset + other.offset)

    def __sub__(self, other: "Phasor") -> "Phasor":
        return Phasor.from_complex(self.to_complex() - other.to_complex(),
                                   self.offset - other.offset)

    def scaled(self, k) -> "Phasor":
        return Phasor(self.amplitude * k, self.phase, self.offset * k)

    @property
    def shape(self):
        return np.shape(self.amplitude)


@dataclass(frozen=True)
class TapSet:
    """Four correlation samples stacked on axis 0: ``taps[k]`` is label ``45°·k``.

    ``difference`` marks tap sets produced by subtraction (PDI); only those are
    expected to contain negative samples. ``clamped`` is set by
    :func:`subtract_ambient` where a tap had to be clipped at zero.
    """

    taps: np.ndarray
    difference: bool = False
    clamped: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.shape[:1] != (4,):
            raise ValueError(f"expected 4 taps on axis 0, got shape {taps.shape}")
        if not np.all(np.isfinite(taps)):
            raise ValueError("tap samples must be finite")
        object.__setattr__(self, "taps", taps)

    @classmethod
    def from_values(cls, i0, i45, i90, i135, difference=False) -> "TapSet":
        return cls(np.stack(np.broadcast_arrays(*[np.asarray(v, dtype=np.float64)
                                                  for v in (i0, i45, i90, i135)])),
                   difference=difference)

    i0 = property(lambda self: self.taps[0])
    i45 = property(lambda self: self.taps[1])
    i90 = property(lambda self: self.taps[2])
    i135 = property(lambda self: self.taps[3])

    @property
    def shape(self):
        return self.taps.shape[1:]

    def scaled(self, k) -> "TapSet":
        return TapSet(self.taps * k, self.difference)


def decode_taps(taps: TapSet) -> Phasor:
    """Amplitude, phase and offset from four tap samples.

    Where both quadrature differences are exactly zero the phase is set to 0
    and ``degenerate`` is True for that element.
    """
    t = taps.taps
    y = t[3] - t[1]
    x = t[2] - t[0]
    degenerate = (x == 0.0) & (y == 0.0)
    amplitude = 0.5 * np.hypot(y, x)
    phase = wrap_phase(np.arctan2(y, x))
    offset = 0.25 * (t[0] + t[1] + t[2] + t[3])
    return Phasor(amplitude, np.where(degenerate, 0.0, phase), offset, degenerate)


def encode_taps(p: Phasor) -> TapSet:
    a = np.asarray(p.amplitude, dtype=np.float64)
    if np.any(a < 0):
        raise ValueError("amplitude must be non-negative")
    phi = np.asarray(p.phase, dtype=np.float64)
    s = np.asarray(p.offset, dtype=np.float64)
    a, phi, s = np.broadcast_arrays(a, phi, s)
    shape = (4,) + (1,) * a.ndim
    corr = _CORR_PHASE.reshape(shape)
    return TapSet(s[None] - a[None] * np.cos(phi[None] - corr))


def tap_subtract(x: TapSet, y: TapSet) -> TapSet:
    return TapSet(x.taps - y.taps, difference=True)


def subtract_ambient(taps: TapSet, ambient, tolerance: float = 0.0) -> TapSet:
    """Remove an ambient level from every tap.

    Taps driven below ``-tolerance`` are clamped at zero, a warning is issued
    and the affected elements are marked in ``clamped``. Negatives within the
    tolerance are left alone (sensor noise).
    """
    ambient = np.asarray(ambient, dtype=np.float64)
    if np.any(ambient < 0):
        raise ValueError("ambient level must be non-negative")
    out = taps.taps - ambient[None] if ambient.ndim else taps.taps - ambient
    clamped = None
    if not taps.difference:
        low = out < -tolerance
        if low.any():
            warnings.warn(f"{int(low.sum())} tap samples clamped at zero after ambient "
                          "subtraction", RuntimeWarning, stacklevel=2)
            out = np.where(low, 0.0, out)
            clamped = low.any(axis=0)
    return TapSet(out, taps.difference, clamped)


def phasor_to_complex(p: Phasor):
    """``(a·exp(iφ), s)``."""
    return p.to_complex(), p.offset


@dataclass(frozen=True)
class CaptureStack:
    """Parallel- and cross-polarized tap planes of one scene, plus ambient frames."""

    parallel: TapSet
    cross: TapSet
    ambient_parallel: Optional[np.ndarray] = None
    ambient_cross: Optional[np.ndarray] = None
    camera: object = None  # CameraConfig

    def __post_init__(self):
        if self.parallel.shape != self.cross.shape:
            raise ValueError("parallel and cross tap planes differ in shape: "
                             f"{self.parallel.shape} vs {self.cross.shape}")
        if len(self.parallel.shape) != 2:
            raise ValueError("tap planes must be (height, width) images")
        for name in ("ambient_parallel", "ambient_cross"):
            amb = getattr(self, name)
            if amb is not None:
                amb = np.broadcast_to(np.asarray(amb, dtype=np.float64), self.parallel.shape)
                object.__setattr__(self, name, amb)

    @property
    def height(self) -> int:
        return self.parallel.shape[0]

    @property
    def width(self) -> int:
        return self.parallel.shape[1]

    @property
    def has_ambient(self) -> bool:
        return self.ambient_parallel is not None or self.ambient_cross is not None

    def ambient_subtracted(self, tolerance: float = 0.0) -> "CaptureStack":
        par, cr = self.parallel, self.cross
        if self.ambient_parallel is not None:
            par = subtract_ambient(par, self.ambient_parallel, tolerance)
        if self.ambient_cross is not None:
            cr = subtract_ambient(cr, self.ambient_cross, tolerance)
        return CaptureStack(par, cr, camera=self.camera)

    def scaled(self, k) -> "CaptureStack":
        amb = lambda a: None if a is None else a * k
        return CaptureStack(self.parallel.scaled(k), self.cross.scaled(k),
                            amb(self.ambient_parallel), amb(self.ambient_cross), self.camera)
