"""``pitof`` command line: simulate, calibrate, reconstruct, evaluate, decay-curve.

Exit codes: 0 ok, 1 usage, 2 config, 3 IO, 4 numeric.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import backend_name, set_threads
from .calibration import CalibrationParams, calibrate
from .errors import ConfigError, DomainError, FormatError, NumericError
from .forward import (SPEED_OF_LIGHT, CameraConfig, NoiseSpec, SceneSpec, preset_fog,
                      staircase_depth, synthesize_capture)
from .io import (read_calibration, read_manifest, read_plane, read_tapstack, write_calibration,
                 write_json, write_manifest, write_plane, write_tapstack)
from .metrics import append_metrics, decay_curve, evaluate, write_decay_curve
from .reconstruct import BASELINES, FitConfig, baseline_depth, reconstruct_depth
from .scattering import FogParams

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4
METHODS = ("ours",) + BASELINES
PRESETS = ("none", "thin", "medium", "thick")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def manifest_path_for(capture) -> Path:
    p = Path(capture)
    return p.with_name(p.name.removesuffix(".pitf") + ".manifest.json")


def camera_from_manifest(doc: dict) -> CameraConfig:
    c = doc["camera"]
    return CameraConfig(width=c["width"], height=c["height"], mod_freq=c["mod_freq"],
                        k0=c["k0"], phi0=c.get("phi0"), fog_onset_m=c.get("fog_onset_m"),
                        speed_of_light=c.get("speed_of_light", SPEED_OF_LIGHT))


def _load_capture(path, args, manifest=None):
    mpath = Path(manifest) if manifest else manifest_path_for(path)
    doc = read_manifest(mpath, strict=args.strict_manifest)
    cam = camera_from_manifest(doc)
    stack = read_tapstack(path, cam)
    if (stack.height, stack.width) != cam.shape:
        raise ConfigError(f"capture is {stack.height}x{stack.width} but manifest says "
                          f"{cam.height}x{cam.width}")
    return stack, doc


def _fog_from_args(args, phi0):
    if args.sigma_i is not None or args.sigma_p is not None:
        if args.sigma_i is None or args.sigma_p is None:
            raise ConfigError("--sigma-i and --sigma-p must be given together")
        return FogParams(args.sigma_i, args.sigma_p, phi0, args.gain), None
    if args.preset == "none":
        return None, None
    return preset_fog(args.preset, phi0), args.preset


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    if args.width <= 0 or args.height <= 0:
        raise ConfigError(f"image size must be positive, got {args.width}x{args.height}")
    probe = CameraConfig(args.width, args.height, args.mod_freq, args.k0,
                         fog_onset_m=args.fog_onset_m, speed_of_light=args.speed_of_light)
    phi0 = args.phi0 if args.phi0 is not None else probe.phase_per_meter * args.fog_onset_m
    cam = CameraConfig(args.width, args.height, args.mod_freq, args.k0, phi0=phi0,
                       fog_onset_m=args.fog_onset_m, speed_of_light=args.speed_of_light)
    fog, preset = _fog_from_args(args, phi0)
    if args.scene == "reference":
        fog = None
    reflectance = 0.0 if args.scene == "empty-fog" else args.reflectance
    if args.scene == "empty-fog" and fog is None:
        raise ConfigError("an empty-fog capture needs fog (--preset or --sigma-i/--sigma-p)")
    depth = staircase_depth(args.height, args.width, args.near, args.far, args.steps)
    noise = NoiseSpec(args.noise, args.noise_scale if args.noise != "none" else 0.0, args.seed)
    scene = SceneSpec(depth, reflectance, fog, args.ambient)
    stack, gt = synthesize_capture(scene, cam, noise, args.mode, args.phase_model)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"capture": f"{args.name}.pitf"}
    write_tapstack(out / files["capture"], stack)
    if args.scene != "empty-fog":
        files["depth"] = f"{args.name}.depth.f32"
        write_plane(out / files["depth"], gt.depth, {"units": "m", "kind": "ground_truth"})
    doc = {
        "format": "pitof-manifest", "version": 1,
        "camera": {"width": cam.width, "height": cam.height, "mod_freq": cam.mod_freq,
                   "k0": cam.k0, "phi0": phi0, "fog_onset_m": cam.fog_onset_m,
                   "speed_of_light": cam.speed_of_light},
        "fog": None if fog is None else {"sigma_i": fog.sigma_i, "sigma_p": fog.sigma_p,
                                         "phi0": fog.phi0, "gain": fog.gain, "preset": preset},
        "noise": {"mode": noise.mode, "scale": noise.scale, "seed": noise.seed},
        "scene": {"kind": args.scene, "near": args.near, "far": args.far, "steps": args.steps,
                  "reflectance": reflectance, "ambient": args.ambient},
        "simulation": {"mode": args.mode, "phase_model": args.phase_model},
        "files": files,
        "provenance": {"seed": args.seed, "tool_version": __version__,
                       "command": "simulate"},
    }
    write_manifest(out / f"{args.name}.manifest.json", doc, strict=args.strict_manifest)
    print(f"wrote {out / files['capture']}")
    return EXIT_OK


def cmd_calibrate(args):
    if args.empty_fog is None and args.global_alpha is None:
        raise ConfigError("alpha calibration needs --empty-fog or --global-alpha")
    ref, doc = _load_capture(args.reference, args)
    cam = ref.camera
    empty = _load_capture(args.empty_fog, args)[0] if args.empty_fog else None
    if empty is not None and (empty.height, empty.width) != cam.shape:
        raise ConfigError("reference and empty-fog captures differ in size")
    calib = calibrate(ref, empty, cam, global_alpha=args.global_alpha)
    write_calibration(args.out, calib)
    print(json.dumps({"k0": calib.k0, "phi0": calib.phi0,
                      "alpha_median": float(np.median(calib.alpha)),
                      "alpha_valid_fraction": float(np.mean(calib.alpha_valid))}))
    return EXIT_OK


def cmd_reconstruct(args):
    stack, doc = _load_capture(args.capture, args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = args.name or Path(args.capture).name.removesuffix(".pitf")
    t0 = time.perf_counter()
    diag = {"method": args.method, "backend": backend_name()}
    if args.method == "ours":
        if args.calibration is None:
            raise ConfigError("method 'ours' needs --calibration")
        calib = read_calibration(args.calibration)
        if (stack.height, stack.width) != calib.alpha.shape:
            raise ConfigError("calibration and capture differ in size")
        cfg = FitConfig(optimizer=args.optimizer)
        depth, est = reconstruct_depth(stack, calib, cfg, noise_floor=args.noise_floor,
                                       per_pixel_sigma=args.per_pixel_sigma,
                                       global_alpha=args.global_alpha,
                                       assume_fog_free=doc["fog"] is None,
                                       clamp_infeasible=args.clamp_infeasible)
        runtime = 1e3 * (time.perf_counter() - t0)
        sigma_plane = est.sigma_map if args.per_pixel_sigma else np.full(depth.depth.shape,
                                                                         est.sigma)
        write_plane(out / f"{name}.sigma.f32", sigma_plane, {"units": "1/rad"})
        write_plane(out / f"{name}.phase_u.f32", est.phase_u, {"units": "rad"})
        write_plane(out / f"{name}.amp_u.f32", est.amp_u)
        diag.update(sigma=est.sigma, fog_detected=est.fog_detected,
                    alt_branch_pixels=int(est.alt_branch.sum()),
                    stage_ms=est.timings_ms)
    else:
        depth = baseline_depth(stack, args.method, stack.camera, args.noise_floor)
        runtime = 1e3 * (time.perf_counter() - t0)
    write_plane(out / f"{name}.depth.f32", depth.depth, {"units": "m", "method": args.method})
    write_plane(out / f"{name}.valid.f32", depth.valid.astype(np.float32))
    diag.update(valid_fraction=depth.valid_fraction, runtime_ms=runtime)
    write_json(out / f"{name}.diagnostics.json", diag)
    print(f"{args.method}: valid_fraction={depth.valid_fraction:.4f} runtime_ms={runtime:.1f}")
    return EXIT_OK


def cmd_evaluate(args):
    depth, _ = read_plane(args.depth)
    gt, _ = read_plane(args.ground_truth)
    valid = None
    vpath = Path(args.valid) if args.valid else Path(str(args.depth).removesuffix(".depth.f32")
                                                          + ".valid.f32")
    if args.valid or vpath.exists():
        valid = read_plane(vpath)[0] > 0.5
    runtime = args.runtime_ms
    if runtime is None:
        dpath = Path(str(args.depth).removesuffix(".depth.f32") + ".diagnostics.json")
        runtime = json.loads(dpath.read_text())["runtime_ms"] if dpath.exists() else float("nan")
    row = evaluate(depth, gt, valid, scene=args.scene, method=args.method,
                   fog_preset=args.fog_preset, runtime_ms=runtime)
    append_metrics(args.out, [row])
    print(f"rmse_cm={row.rmse_cm:.4f} rel_error={row.rel_error:.5f} "
          f"std_dev_cm={row.std_dev_cm:.4f} valid_fraction={row.valid_fraction:.4f}")
    return EXIT_OK


def cmd_decay_curve(args):
    cam = CameraConfig(1, 1, args.mod_freq, speed_of_light=args.speed_of_light)
    phi0 = args.phi0 if args.phi0 is not None else cam.phase_per_meter * args.fog_onset_m
    fog, _ = _fog_from_args(args, phi0)
    if fog is None:
        raise ConfigError("decay curve needs fog (--preset or --sigma-i/--sigma-p)")
    if args.distances:
        dist = np.array([float(v) for v in args.distances.split(",")])
    else:
        dist = np.linspace(args.near, args.far, args.num)
    write_decay_curve(args.out, decay_curve(dist, fog, cam.phase_per_meter))
    print(f"wrote {args.out} ({len(dist)} rows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_camera(p, size=True):
    if size:
        p.add_argument("--width", type=int, default=64)
        p.add_argument("--height", type=int, default=48)
        p.add_argument("--k0", type=float, default=0.71)
    p.add_argument("--mod-freq", type=float, default=80e6)
    p.add_argument("--fog-onset-m", type=float, default=0.05)
    p.add_argument("--phi0", type=float, default=None, help="overrides --fog-onset-m")
    p.add_argument("--speed-of-light", type=float, default=SPEED_OF_LIGHT)


def _add_fog(p):
    p.add_argument("--preset", choices=PRESETS, default="thin")
    p.add_argument("--sigma-i", type=float, default=None)
    p.add_argument("--sigma-p", type=float, default=None)
    p.add_argument("--gain", type=float, default=0.01, help="backscatter strength")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pitof", description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0, help="noise seed (default 0)")
    ap.add_argument("--threads", type=int, default=0, help="worker threads (0: all)")
    ap.add_argument("--strict-manifest", action="store_true",
                    help="reject unknown manifest keys")
    ap.add_argument("--version", action="version", version=f"pitof {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic capture")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name", default="capture")
    p.add_argument("--scene", choices=("staircase", "reference", "empty-fog"),
                   default="staircase")
    _add_camera(p)
    _add_fog(p)
    p.add_argument("--near", type=float, default=0.3)
    p.add_argument("--far", type=float, default=1.5)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--reflectance", type=float, default=1.0)
    p.add_argument("--ambient", type=float, default=0.0)
    p.add_argument("--noise", choices=("none", "gaussian", "shot"), default="none")
    p.add_argument("--noise-scale", type=float, default=0.01)
    p.add_argument("--mode", choices=("infinite", "truncated"), default="infinite")
    p.add_argument("--phase-model", choices=("mean", "circular"), default="mean")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="recover k0, alpha and phi0")
    p.add_argument("--reference", required=True, help="fog-free capture (.pitf)")
    p.add_argument("--empty-fog", default=None, help="fog capture without target (.pitf)")
    p.add_argument("--global-alpha", type=float, default=None,
                   help="use this alpha everywhere instead of an empty-fog capture")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("reconstruct", help="depth from a capture")
    p.add_argument("--capture", required=True)
    p.add_argument("--calibration", default=None)
    p.add_argument("--method", choices=METHODS, default="ours")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--name", default=None)
    p.add_argument("--optimizer", choices=("adam", "bisection"), default="adam")
    p.add_argument("--per-pixel-sigma", action="store_true")
    p.add_argument("--global-alpha", action="store_true", help="use the median alpha")
    p.add_argument("--noise-floor", type=float, default=0.0)
    p.add_argument("--clamp-infeasible", action="store_true",
                   help="project infeasible amplitudes instead of masking the pixel")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="append a metrics row")
    p.add_argument("--depth", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--valid", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--scene", default="scene")
    p.add_argument("--method", default="ours")
    p.add_argument("--fog-preset", default="")
    p.add_argument("--runtime-ms", type=float, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("decay-curve", help="model intensity versus distance")
    _add_camera(p, size=False)
    _add_fog(p)
    p.add_argument("--near", type=float, default=0.1)
    p.add_argument("--far", type=float, default=1.8)
    p.add_argument("--num", type=int, default=50)
    p.add_argument("--distances", default=None, help="comma-separated list in meters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decay_curve)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 0 or args.seed < 0:
        print("pitof: error: --threads and --seed must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    set_threads(args.threads)
    try:
        return args.func(args)
    except (ConfigError, DomainError) as exc:
        print(f"pitof: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"pitof: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError) as exc:
        print(f"pitof: IO error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"pitof: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
