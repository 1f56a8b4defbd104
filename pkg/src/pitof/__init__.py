"""Descattering of iToF depth in fog from polarized phasor captures."""

__version__ = "0.1.0"

from ._backend import backend_name, set_threads
from .calibration import (CalibrationParams, calibrate, calibrate_alpha, calibrate_k0,
                          resolve_phi0)
from .errors import (CalibrationError, ConfigError, DomainError, FormatError, NumericError,
                     PipelineError, PitofError, QuadratureError)
from .forward import (CameraConfig, GroundTruth, NoiseSpec, SceneSpec, default_camera,
                      depth_to_phase, phase_to_depth, preset_fog, simulate_backscatter,
                      simulate_target, staircase_depth, synthesize_capture)
from .phasor import (CaptureStack, Phasor, TapSet, decode_taps, encode_taps, phasor_to_complex,
                     subtract_ambient, tap_subtract)
from .reconstruct import (BackscatterEstimate, DepthMap, FitConfig, baseline_depth, fit_sigma,
                          pdi_backscatter, predict_unpolarized_phase, reconstruct_depth,
                          remove_scattering, solve_amplitude)
from .scattering import (FogParams, QuadratureSpec, amp_density_polarized,
                         amp_density_unpolarized, backscatter_phasor_integral, exp_integral_e1,
                         k_ratio_unpolarized, mean_phase_polarized, mean_phase_unpolarized)
