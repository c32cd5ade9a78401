"""Recovery of continuously mixed causal mechanisms from latent representations."""

from .basis import (ConditionalSampler, analytic_basis, DomainBasis, estimate_basis, estimate_delta_approx,
                    perturb_basis)
from .diagnostics import (DiagnosticsReport, check_pointwise_bound, compute_snr_eff,
                          ks_two_sample, verify_assumption)
from .encoder import EncoderDistortion, EncoderSim, encode, oracle_encoder, random_distortion
from .errors import (CalibrationDegenerateError, CapacityViolationError, DegenerateBasisError,
                     InvalidDistortionError, InvalidInputError, InversionError, MechmixError,
                     UndefinedCorrelationError)
from .generator import (MechanismSet, MixingSchedule, TrajectoryBundle, build_mechanism_set,
                        effective_transition, make_schedule, make_violation_schedule,
                        mix_to_observations, simulate)
from .harness import ExperimentConfig, preset, run_single, run_sweep
from .metrics import ScoreCard, mae, mcc, w_trajectory_correlation, weight_correlation
from .recovery import (RecoveryResult, SmoothingConfig, calibrate_linear_map, calibrate_two_point,
                       project_simplex, recover_pointwise, select_lambda_gcv, smooth_tv,
                       smooth_window)

__version__ = "0.1.0"
