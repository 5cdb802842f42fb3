"""Moving-horizon state estimation for quadrotors with GP model corrections."""

import os

# The estimator solves many tiny dense systems; a threaded BLAS only adds
# timing jitter there. Takes effect only if numpy is not yet loaded.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

from .gp import GpTriplet, fit_triplet
from .harness import (ExperimentSpec, run_comparison, run_payload_study, sweep_horizon,
                      train_gp)
from .mhe import EstimatorConfig, MovingHorizonEstimator, default_weights
from .models import ModelKind, NominalParams
from .sim import FlightConfig, SensorConfig, Trajectory, run_flight

__all__ = [
    "EstimatorConfig", "ExperimentSpec", "FlightConfig", "GpTriplet", "ModelKind",
    "MovingHorizonEstimator", "NominalParams", "SensorConfig", "Trajectory",
    "default_weights", "fit_triplet", "run_comparison", "run_flight", "run_payload_study",
    "sweep_horizon", "train_gp",
]
__version__ = "0.1.0"
