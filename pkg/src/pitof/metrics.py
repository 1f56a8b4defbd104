"""Depth-map error metrics, the metrics CSV and the intensity decay curve."""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError
from .scattering import FogParams

METRIC_COLUMNS = ("scene", "method", "fog_preset", "rmse_cm", "rel_error", "std_dev_cm",
                  "valid_fraction", "runtime_ms")
METRICS_HEADER = "# rel_error = mean over valid pixels of |d - d_gt| / d_gt (mean variant)"
DECAY_COLUMNS = ("distance_m", "intensity_nofog", "intensity_fog", "intensity_fog_polarizer")


def _masked(depth, gt, valid):
    depth = np.asarray(depth, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if depth.shape != gt.shape:
        raise ConfigError(f"depth map {depth.shape} and ground truth {gt.shape} differ in shape")
    mask = np.isfinite(depth) & np.isfinite(gt) & (gt > 0)
    if valid is not None:
        mask &= np.asarray(valid, dtype=bool)
    return depth[mask], gt[mask], mask


def rmse_cm(depth, gt, valid=None) -> float:
    d, g, _ = _masked(depth, gt, valid)
    return float(100.0 * np.sqrt(np.mean((d - g) ** 2))) if d.size else float("nan")


def rel_error(depth, gt, valid=None) -> float:
    d, g, _ = _masked(depth, gt, valid)
    return float(np.mean(np.abs(d - g) / g)) if d.size else float("nan")


def std_dev_cm(depth, gt, valid=None) -> float:
    """Standard deviation of the signed error, in cm."""
    d, g, _ = _masked(depth, gt, valid)
    return float(100.0 * np.std(d - g)) if d.size else float("nan")


def valid_fraction(depth, gt, valid=None) -> float:
    _, _, mask = _masked(depth, gt, valid)
    return float(mask.mean())


@dataclass(frozen=True)
class MetricsRow:
    scene: str
    method: str
    fog_preset: str
    rmse_cm: float
    rel_error: float
    std_dev_cm: float
    valid_fraction: float
    runtime_ms: float


def evaluate(depth, gt, valid=None, *, scene="", method="", fog_preset="",
             runtime_ms: float = float("nan")) -> MetricsRow:
    return MetricsRow(scene, method, fog_preset, rmse_cm(depth, gt, valid),
                      rel_error(depth, gt, valid), std_dev_cm(depth, gt, valid),
                      valid_fraction(depth, gt, valid), float(runtime_ms))


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def append_metrics(path, rows: Iterable[MetricsRow]) -> None:
    """Append rows; a new file gets the definition comment and the header first."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if new:
        buf.write(METRICS_HEADER + "\n")
        w.writerow(METRIC_COLUMNS)
    for row in rows:
        w.writerow([_fmt(v) for v in asdict(row).values()])
    with open(path, "a", newline="") as fh:
        fh.write(buf.getvalue())


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for rec in csv.DictReader(lines):
        out.append(MetricsRow(rec["scene"], rec["method"], rec["fog_preset"],
                              *(float(rec[c]) for c in METRIC_COLUMNS[3:])))
    return out


def decay_curve(distances, fog: FogParams, phase_per_meter: float) -> np.ndarray:
    """Columns of :data:`DECAY_COLUMNS` for each distance.

    No fog: 1/φ². Fog: 1/φ² · exp(−σᵢφ). Fog behind a polarizer: an extra
    exp(−σₚφ) factor (only the polarization-preserving part passes).
    """
    z = np.asarray(distances, dtype=np.float64)
    if np.any(~(z > 0)):
        raise ConfigError("distances must be > 0")
    phi = phase_per_meter * z
    nofog = 1.0 / phi**2
    fog_i = nofog * np.exp(-fog.sigma_i * phi)
    fog_pol = fog_i * np.exp(-fog.sigma_p * phi)
    return np.column_stack([z, nofog, fog_i, fog_pol])


def write_decay_curve(path, table: np.ndarray) -> None:
    from .io import atomic_write

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DECAY_COLUMNS)
    for row in table:
        w.writerow([repr(float(v)) for v in row])
    atomic_write(path, buf.getvalue().encode())


def read_decay_curve(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != DECAY_COLUMNS:
        raise ConfigError(f"unexpected decay-curve header {rows[0]}")
    return np.array([[float(v) for v in r] for r in rows[1:]])
