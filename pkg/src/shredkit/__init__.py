"""Sparse-sensor reconstruction and forecasting of spatio-temporal fields.

SHRED (a stacked LSTM over a lag window of sensor readings feeding a shallow
decoder), the shallow-decoder baseline and gappy POD with QR-pivot sensor
placement, built on a small reverse-mode autodiff core and a from-scratch
Jacobi SVD.
"""

from .errors import (CellFailureError, ConfigError, ConvergenceError, DegenerateTruthError, FormatError,
                     IllConditionedError, InvalidArgumentError, InvalidInputError, ShapeError, ShredkitError,
                     StateError, TrainingDivergedError)
from .linalg import qr_pivoted, solve_linear, svd_thin, truncate
from .pod import (PodBasis, SensorSet, fit_pod, gappy_reconstruct, placement_objective, qr_place_sensors,
                  random_place_sensors)
from .datasets import (FieldSeries, NoiseSpec, add_noise, gen_low_rank, gen_rotating_blobs, gen_traveling_waves,
                       load_field_file, make_windows, sample_sensors, save_field_file, split_interspersed,
                       split_temporal)
from .models import (ShredModel, SdnModel, TrainConfig, build_forecaster, build_sdn, build_shred, rollout,
                     shred_forward, train)
from .checkpoint import load_checkpoint, save_checkpoint
from .harness import (EnsembleSummary, ExperimentConfig, ForecastResult, TrialResult, reconstruction_error,
                      run_ensemble, run_forecast_experiment, run_noise_sweep, run_trial)

__version__ = "0.1.0"
