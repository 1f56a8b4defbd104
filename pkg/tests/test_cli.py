import json
import subprocess
import sys

import numpy as np
import pytest

from pitof.cli import main
from pitof.io import read_calibration, read_manifest, read_plane, write_json
from pitof.metrics import read_decay_curve, read_metrics


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def thick(tmp_path_factory):
    """Reference, empty-fog and staircase captures under the thick preset, calibrated."""
    d = tmp_path_factory.mktemp("thick")
    assert run("simulate", "--out-dir", d, "--name", "ref", "--scene", "reference") == 0
    assert run("simulate", "--out-dir", d, "--name", "empty", "--scene", "empty-fog",
               "--preset", "thick") == 0
    assert run("simulate", "--out-dir", d, "--name", "scene", "--preset", "thick") == 0
    assert run("calibrate", "--reference", d / "ref.pitf", "--empty-fog", d / "empty.pitf",
               "--out", d / "calib.json") == 0
    return d


def test_simulate_deterministic(tmp_path):
    for sub in ("a", "b"):
        assert run("--seed", 11, "simulate", "--out-dir", tmp_path / sub, "--preset", "medium",
                   "--noise", "gaussian") == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    assert "capture.pitf" in names and "capture.manifest.json" in names
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    run("--seed", 12, "simulate", "--out-dir", tmp_path / "c", "--preset", "medium",
        "--noise", "gaussian")
    assert (tmp_path / "c" / "capture.pitf").read_bytes() != \
        (tmp_path / "a" / "capture.pitf").read_bytes()


def test_simulate_manifest_is_strict_valid(tmp_path):
    assert run("--strict-manifest", "simulate", "--out-dir", tmp_path) == 0
    doc = read_manifest(tmp_path / "capture.manifest.json", strict=True)
    assert doc["fog"]["preset"] == "thin"
    assert doc["provenance"]["seed"] == 0


def test_exit_codes(tmp_path, thick):
    assert run("simulate", "--out-dir", tmp_path, "--width", 0) == 2
    assert run("simulate", "--out-dir", tmp_path, "--scene", "empty-fog", "--preset", "none") == 2
    assert run("calibrate", "--reference", thick / "ref.pitf", "--out", tmp_path / "c.json") == 2
    assert run("reconstruct", "--capture", thick / "scene.pitf", "--method", "bogus",
               "--out-dir", tmp_path) == 1
    assert run("frobnicate") == 1
    assert run("--threads", -1, "simulate", "--out-dir", tmp_path) == 1
    assert run("reconstruct", "--capture", tmp_path / "missing.pitf", "--method", "cross",
               "--out-dir", tmp_path) == 3
    (tmp_path / "junk.pitf").write_bytes(b"not a capture")
    write_json(tmp_path / "junk.manifest.json",
               json.loads((thick / "scene.manifest.json").read_text()))
    assert run("reconstruct", "--capture", tmp_path / "junk.pitf", "--method", "cross",
               "--out-dir", tmp_path) == 3


def test_strict_manifest_rejects_unknown_key(tmp_path, thick):
    doc = json.loads((thick / "scene.manifest.json").read_text())
    doc["camera"]["lens"] = "wide"
    (tmp_path / "scene.pitf").write_bytes((thick / "scene.pitf").read_bytes())
    write_json(tmp_path / "scene.manifest.json", doc)
    args = ("reconstruct", "--capture", tmp_path / "scene.pitf", "--method", "cross",
            "--out-dir", tmp_path)
    assert run(*args) == 0
    assert run("--strict-manifest", *args) == 2


def test_calibrate_recovers_and_rereads(thick, tmp_path):
    calib = read_calibration(thick / "calib.json")
    assert calib.k0 == pytest.approx(0.71, abs=1e-6)
    assert abs(np.median(calib.alpha) - 0.6) < 1e-4
    from pitof.io import write_calibration
    write_calibration(tmp_path / "again.json", calib)
    again = read_calibration(tmp_path / "again.json")
    assert (again.k0, again.phi0, again.mod_freq) == (calib.k0, calib.phi0, calib.mod_freq)
    np.testing.assert_array_equal(again.alpha, calib.alpha)


def test_reconstruct_thick_valid_fraction(thick, tmp_path):
    assert run("reconstruct", "--capture", thick / "scene.pitf", "--calibration",
               thick / "calib.json", "--out-dir", tmp_path) == 0
    diag = json.loads((tmp_path / "scene.diagnostics.json").read_text())
    assert diag["valid_fraction"] > 0.95 and diag["fog_detected"]
    for plane in ("depth", "valid", "sigma", "phase_u", "amp_u"):
        assert (tmp_path / f"scene.{plane}.f32").exists()
    depth, _ = read_plane(tmp_path / "scene.depth.f32")
    gt, _ = read_plane(thick / "scene.depth.f32")
    valid = read_plane(tmp_path / "scene.valid.f32")[0] > 0.5
    assert 100 * np.sqrt(np.mean((depth[valid] - gt[valid]) ** 2)) < 0.1


def test_zero_fog_manifest_ours_equals_cross(thick, tmp_path):
    assert run("simulate", "--out-dir", tmp_path, "--name", "clear", "--preset", "none",
               "--noise", "gaussian") == 0
    assert read_manifest(tmp_path / "clear.manifest.json")["fog"] is None
    for method in ("ours", "cross"):
        assert run("reconstruct", "--capture", tmp_path / "clear.pitf", "--calibration",
                   thick / "calib.json", "--method", method, "--name", method,
                   "--out-dir", tmp_path) == 0
    a = (tmp_path / "ours.depth.f32").read_bytes()
    assert a == (tmp_path / "cross.depth.f32").read_bytes()


def test_evaluate_appends_rows(thick, tmp_path):
    out = tmp_path / "metrics.csv"
    for method in ("ours", "cross"):
        extra = ("--calibration", thick / "calib.json") if method == "ours" else ()
        assert run("reconstruct", "--capture", thick / "scene.pitf", *extra, "--method", method,
                   "--name", method, "--out-dir", tmp_path) == 0
        assert run("evaluate", "--depth", tmp_path / f"{method}.depth.f32", "--ground-truth",
                   thick / "scene.depth.f32", "--out", out, "--method", method,
                   "--fog-preset", "thick") == 0
    rows = read_metrics(out)
    assert [r.method for r in rows] == ["ours", "cross"]
    assert rows[0].rmse_cm < rows[1].rmse_cm
    assert all(np.isfinite(r.runtime_ms) for r in rows)
    assert run("evaluate", "--depth", tmp_path / "ours.depth.f32", "--ground-truth",
               tmp_path / "nothing.f32", "--out", out) == 3


def test_decay_curve_command(tmp_path):
    out = tmp_path / "decay.csv"
    assert run("decay-curve", "--sigma-i", 0.6, "--sigma-p", 0.4, "--distances",
               "0.2,0.4,0.8", "--out", out) == 0
    t = read_decay_curve(out)
    np.testing.assert_allclose(t[1:, 1] / t[:-1, 1], 0.25, rtol=1e-12)
    assert run("decay-curve", "--preset", "none", "--out", out) == 2


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "pitof", "--version"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "pitof" in res.stdout
