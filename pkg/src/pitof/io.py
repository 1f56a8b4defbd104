"""On-disk formats: PITF tap containers, raw float32 planes, JSON manifests
and calibration files. Every writer is atomic (temp file, then rename)."""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .calibration import CalibrationParams
from .errors import ConfigError, FormatError
from .phasor import CaptureStack, TapSet

MAGIC = b"PITF"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIH")
_DESC = struct.Struct("<BB")

POLARIZATIONS = ("parallel", "cross", "ambient_par", "ambient_cross")
TAP_CODES = {0: 0, 45: 1, 90: 2, 135: 3, None: 255}
_TAP_LABELS = {v: k for k, v in TAP_CODES.items()}


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _f32le(arr) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


# ---------------------------------------------------------------------------
# PITF tap container
# ---------------------------------------------------------------------------

def _planes_of(stack: CaptureStack):
    for pol, taps in (("parallel", stack.parallel), ("cross", stack.cross)):
        for k, label in enumerate((0, 45, 90, 135)):
            yield pol, label, taps.taps[k]
    if stack.ambient_parallel is not None:
        yield "ambient_par", None, stack.ambient_parallel
    if stack.ambient_cross is not None:
        yield "ambient_cross", None, stack.ambient_cross


def encode_tapstack(stack: CaptureStack) -> bytes:
    planes = list(_planes_of(stack))
    h, w = stack.height, stack.width
    out = [_HEADER.pack(MAGIC, FORMAT_VERSION, w, h, len(planes))]
    out += [_DESC.pack(POLARIZATIONS.index(pol), TAP_CODES[label]) for pol, label, _ in planes]
    out += [_f32le(np.broadcast_to(p, (h, w))) for _, _, p in planes]
    return b"".join(out)


def decode_tapstack(data: bytes, camera=None) -> CaptureStack:
    if len(data) < _HEADER.size:
        raise FormatError("file too short for a PITF header")
    magic, version, w, h, n = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported PITF version {version}")
    if w == 0 or h == 0:
        raise FormatError("PITF image has zero size")
    head = _HEADER.size + _DESC.size * n
    expected = head + 4 * w * h * n
    if len(data) != expected:
        raise FormatError(f"PITF size mismatch: {len(data)} bytes, header implies {expected}")
    planes = {}
    for i in range(n):
        pol, tap = _DESC.unpack_from(data, _HEADER.size + _DESC.size * i)
        if pol >= len(POLARIZATIONS) or tap not in _TAP_LABELS:
            raise FormatError(f"invalid plane descriptor ({pol}, {tap})")
        key = (POLARIZATIONS[pol], _TAP_LABELS[tap])
        if key in planes:
            raise FormatError(f"duplicate plane {key}")
        if key[0].startswith("ambient") != (key[1] is None):
            raise FormatError(f"inconsistent descriptor {key}")
        off = head + 4 * w * h * i
        planes[key] = np.frombuffer(data, dtype="<f4", count=w * h, offset=off) \
            .reshape(h, w).astype(np.float64)
    taps = {}
    for pol in ("parallel", "cross"):
        try:
            taps[pol] = TapSet(np.stack([planes[(pol, lab)] for lab in (0, 45, 90, 135)]))
        except KeyError:
            raise FormatError(f"missing {pol} tap plane") from None
        except ValueError as exc:
            raise FormatError(str(exc)) from None
    return CaptureStack(taps["parallel"], taps["cross"], planes.get(("ambient_par", None)),
                        planes.get(("ambient_cross", None)), camera)


def write_tapstack(path, stack: CaptureStack) -> None:
    atomic_write(path, encode_tapstack(stack))


def read_tapstack(path, camera=None) -> CaptureStack:
    return decode_tapstack(Path(path).read_bytes(), camera)


# ---------------------------------------------------------------------------
# raw planes with a JSON sidecar
# ---------------------------------------------------------------------------

def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def write_plane(path, plane, meta: Optional[dict] = None) -> None:
    """Row-major float32 LE plane at ``path`` plus ``path.json`` with its size."""
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ValueError("plane must be 2-D")
    info = {"width": int(plane.shape[1]), "height": int(plane.shape[0]),
            "dtype": "float32", "byteorder": "little"}
    if meta:
        info["meta"] = meta
    atomic_write(path, _f32le(plane))
    atomic_write(sidecar_path(path), (json.dumps(info, indent=2) + "\n").encode())


def read_plane(path, shape=None):
    """Read a raw plane; the shape comes from ``shape`` or the sidecar."""
    path = Path(path)
    meta = {}
    if shape is None:
        try:
            info = json.loads(sidecar_path(path).read_text())
            shape = (int(info["height"]), int(info["width"]))
            meta = info.get("meta", {})
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad plane sidecar for {path}: {exc}") from None
    data = path.read_bytes()
    if len(data) != 4 * shape[0] * shape[1]:
        raise FormatError(f"{path}: {len(data)} bytes does not match shape {shape}")
    plane = np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float64)
    return plane, meta


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}


def _obj(props: dict, required, strict: bool) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": not strict}


def manifest_schema(strict: bool = False) -> dict:
    camera = _obj({"width": {"type": "integer", "minimum": 1},
                   "height": {"type": "integer", "minimum": 1},
                   "mod_freq": _POS, "k0": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                   "phi0": {"type": ["number", "null"], "exclusiveMinimum": 0},
                   "fog_onset_m": {"type": ["number", "null"], "exclusiveMinimum": 0},
                   "speed_of_light": _POS},
                  ("width", "height", "mod_freq", "k0", "phi0"), strict)
    fog = _obj({"sigma_i": _POS, "sigma_p": {"type": "number", "minimum": 0},
                "phi0": _POS, "gain": {"type": "number", "minimum": 0},
                "preset": {"type": ["string", "null"]}},
               ("sigma_i", "sigma_p", "phi0"), strict)
    noise = _obj({"mode": {"enum": ["none", "gaussian", "shot"]},
                  "scale": {"type": "number", "minimum": 0},
                  "seed": {"type": "integer", "minimum": 0}}, ("mode", "scale", "seed"), strict)
    scene = _obj({"kind": {"type": "string"}, "near": _POS, "far": _POS,
                  "steps": {"type": "integer", "minimum": 1},
                  "reflectance": {"type": "number", "minimum": 0, "maximum": 1},
                  "ambient": {"type": "number", "minimum": 0}}, ("kind",), strict)
    simulation = _obj({"mode": {"enum": ["infinite", "truncated"]},
                       "phase_model": {"enum": ["mean", "circular"]},
                       "polarized_target_fraction": {"type": "number", "minimum": 0,
                                                     "exclusiveMaximum": 1}},
                      ("mode",), strict)
    files = {"type": "object", "additionalProperties": {"type": "string"}}
    provenance = _obj({"seed": {"type": "integer", "minimum": 0},
                       "tool_version": {"type": "string"},
                       "command": {"type": "string"}}, ("tool_version",), strict)
    return _obj({"format": {"const": "pitof-manifest"}, "version": {"const": 1},
                 "camera": camera, "fog": {"oneOf": [{"type": "null"}, fog]},
                 "noise": noise, "scene": scene, "simulation": simulation, "files": files,
                 "provenance": provenance},
                ("format", "version", "camera", "fog", "provenance"), strict)


def validate_manifest(doc: dict, strict: bool = False) -> dict:
    try:
        jsonschema.validate(doc, manifest_schema(strict))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"manifest invalid at {where}: {exc.message}") from None
    return doc


def write_json(path, doc: dict) -> None:
    atomic_write(path, (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode())


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None


def write_manifest(path, doc: dict, strict: bool = False) -> None:
    write_json(path, validate_manifest(doc, strict))


def read_manifest(path, strict: bool = False) -> dict:
    return validate_manifest(read_json(path), strict)


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------

def alpha_path_for(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".alpha.f32")


def write_calibration(path, calib: CalibrationParams) -> None:
    """JSON scalars plus the α plane as float32 next to it."""
    alpha_file = alpha_path_for(path)
    doc = {"format": "pitof-calibration", "version": 1, "k0": calib.k0, "phi0": calib.phi0,
           "mod_freq": calib.mod_freq, "width": int(calib.alpha.shape[1]),
           "height": int(calib.alpha.shape[0]), "alpha_file": alpha_file.name}
    if calib.alpha_valid is not None:
        doc["alpha_valid_fraction"] = float(np.mean(calib.alpha_valid))
    write_plane(alpha_file, calib.alpha)
    write_json(path, doc)


def read_calibration(path) -> CalibrationParams:
    doc = read_json(path)
    try:
        if doc.get("format") != "pitof-calibration":
            raise FormatError(f"{path}: not a calibration file")
        shape = (int(doc["height"]), int(doc["width"]))
        alpha, _ = read_plane(Path(path).with_name(doc["alpha_file"]), shape)
        return CalibrationParams(float(doc["k0"]), alpha, float(doc["phi0"]),
                                 float(doc["mod_freq"]))
    except KeyError as exc:
        raise FormatError(f"{path}: missing field {exc}") from None


def float32_exact(arr) -> np.ndarray:
    """Round to the float32 grid, i.e. what a plane looks like after a round trip."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)
