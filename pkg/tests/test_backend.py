"""The numba kernels and their numpy twins must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest

from pitof import kernels
from pitof._backend import ENV_FLAG, HAVE_NUMBA

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
rng = np.random.default_rng(11)


@needs_numba
def test_e1_scaled():
    x = np.concatenate([np.geomspace(1e-10, 1e3, 400), [1.0, 1.0 + 1e-12]])
    np.testing.assert_allclose(kernels.e1_scaled_nb(x), kernels.e1_scaled_np(x), rtol=1e-14)


@needs_numba
def test_mean_phases():
    s = np.geomspace(1e-3, 1e3, 300)
    a = rng.uniform(0.01, 0.99, s.size)
    for p0 in (0.05, 0.3, 1.0):
        np.testing.assert_allclose(kernels.mean_phase_pol_nb(s, p0),
                                   kernels.mean_phase_pol_np(s, p0), rtol=1e-13)
        np.testing.assert_allclose(kernels.mean_phase_unpol_nb(a * s, s, p0),
                                   kernels.mean_phase_unpol_np(a * s, s, p0), rtol=1e-12)


@needs_numba
def test_fit_adam_and_bisect():
    p0 = 0.3
    sig = np.geomspace(0.05, 50, 40)
    target = kernels.mean_phase_pol_np(sig, p0)
    theta0 = np.log(1.0 / (target - p0))
    lo, hi = 1e-3 / p0, 1e3 / p0
    nb = kernels.fit_adam_nb(target, theta0, p0, 0.05, 500, 1e-16, lo, hi)
    npy = kernels.fit_adam_np(target, theta0, p0, 0.05, 500, 1e-16, lo, hi)
    np.testing.assert_allclose(nb[0], npy[0], rtol=1e-10)
    np.testing.assert_array_equal(nb[2], npy[2])
    b_nb, ok_nb = kernels.invert_pol_bisect_nb(target, p0, lo, hi)
    b_np, ok_np = kernels.invert_pol_bisect_np(target, p0, lo, hi)
    assert ok_nb.all() and ok_np.all()
    np.testing.assert_allclose(b_nb, b_np, rtol=1e-12)
    np.testing.assert_allclose(b_nb, sig, rtol=1e-10)


@needs_numba
def test_alpha_bisect():
    s = rng.uniform(0.1, 5, 50)
    a = rng.uniform(0.05, 0.95, 50)
    t = kernels.mean_phase_unpol_np(a * s, s, 0.2)
    a_nb, ok_nb = kernels.invert_alpha_bisect_nb(t, s, 0.2)
    a_np, ok_np = kernels.invert_alpha_bisect_np(t, s, 0.2)
    assert ok_nb.all() and ok_np.all()
    np.testing.assert_allclose(a_nb, a_np, atol=1e-11)
    np.testing.assert_allclose(a_nb, a, atol=1e-9)


@needs_numba
def test_quadrature():
    n = 12
    kind = np.tile([kernels.POLARIZED, kernels.UNPOLARIZED], n // 2)
    si, sp = rng.uniform(0.05, 3, (2, n))
    p0 = rng.uniform(0.05, 1.0, n)
    up = p0 + rng.uniform(1.0, 60.0, n)
    args = (kind, si, sp, p0, up, 1e-9, 1e-12, 20000)
    m_nb, ok_nb, n_nb = kernels.quad_moments_nb(*args)
    m_np, ok_np, n_np = kernels.quad_moments_np(*args)
    assert ok_nb.all() and ok_np.all()
    np.testing.assert_allclose(m_nb, m_np, rtol=1e-12, atol=1e-16)
    np.testing.assert_array_equal(n_nb, n_np)


_SCRIPT = """
import numpy as np
from pitof import backend_name
from pitof.calibration import CalibrationParams
from pitof.forward import SceneSpec, default_camera, staircase_depth, synthesize_capture
from pitof.reconstruct import reconstruct_depth
from pitof.scattering import FogParams
cam = default_camera(width=16, height=12)
fog = FogParams(0.6, 0.4, cam.phi0, gain=0.01)
stack, gt = synthesize_capture(SceneSpec(staircase_depth(12, 16), fog=fog), cam)
calib = CalibrationParams(cam.k0, np.full(cam.shape, 0.6), cam.phi0, cam.mod_freq)
d, est = reconstruct_depth(stack, calib)
print(backend_name(), repr(float(np.abs(d.depth - gt.depth).max())), repr(est.sigma))
"""


def _run(env_extra):
    env = dict(os.environ, **env_extra)
    out = subprocess.run([sys.executable, "-c", _SCRIPT], env=env, capture_output=True,
                         text=True, check=True)
    return out.stdout.split()


def test_env_flag_selects_numpy_and_results_match():
    name_np, err_np, sig_np = _run({ENV_FLAG: "1"})
    assert name_np == "numpy"
    assert float(err_np) < 1e-6
    if HAVE_NUMBA:
        name_nb, err_nb, sig_nb = _run({ENV_FLAG: "0"})
        assert name_nb == "numba"
        assert float(sig_nb) == pytest.approx(float(sig_np), rel=1e-10)


@needs_numba
def test_benchmark_script_runs():
    script = os.path.join(os.path.dirname(__file__), "..", "benchmarks", "bench_kernels.py")
    res = subprocess.run([sys.executable, script, "--pixels", "64", "--repeat", "1"],
                         capture_output=True, text=True, timeout=300)
    assert res.returncode == 0, res.stderr
    assert "fit_adam" in res.stdout and "quad_moments" in res.stdout
