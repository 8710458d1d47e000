"""Pilot-free optimal control over wireless fading channels.

Control commands double as implicit pilots: a Kalman predictor infers the
fading state from plant transitions, and a quantized coupled-Riccati
controller closes the loop without any dedicated channel probing.
"""

__version__ = "0.1.0"

from .errors import CareDivergenceError, ConfigError, NumericalError
from .models import (ChannelProcess, NonlinearPlantSpec, PlantModel, PlantState,
                     Saturation, complex_normal, generic_channel_apply, saturate,
                     step_channel, step_linear_plant, step_nonlinear_plant)
from .ofdm import (OfdmLink, PermutationReport, apply_time_channel, dft_matrix,
                   effective_gains, effective_link, freq_response, ofdm_demodulate,
                   ofdm_modulate, taps_for_subcarrier_gains, validate_permutation)
from .predictors import (BlindSvdPredictor, InterpolatedLsPredictor, LsPredictor,
                         Observation, PilotLsPredictor, PredictorState,
                         blind_svd_estimate, initial_predictor_state,
                         interpolated_ls, kf_estimate, kf_predict, ls_estimate,
                         nmse, pilot_ls, prediction_error_bound)
from .nonlinear_predictors import (ekf_step, initial_widened_state,
                                   observation_jacobian, ukf_step, ukf_weights,
                                   unwiden_matrix, widen_matrix)
from .quantizer import (QuantGrid, all_representatives, quantize, quantize_batch,
                        representative, successor_map)
from .riccati import (KernelTable, StepSchedule, bellman_bias, care_policy_iteration,
                      care_riccati_rhs, care_value_iteration, control_gain,
                      control_input, dare_gain, default_sigma_bar,
                      finite_horizon_kernel, load_kernel_table, sa_kernel_update,
                      save_kernel_table, solve_dare, stabilizing_check)
from .control_baselines import PidController, PidGains, nominal_lqr
from .harness import (ExperimentConfig, RunResult, SummaryRow, TrialRecord,
                      default_linear_ofdm_config, default_nonlinear_mimo_config,
                      emit_results, format_config, measure_signal_power,
                      parse_config, pilot_overhead, run_trial, sigma_n2_for_snr,
                      snr_sweep)
