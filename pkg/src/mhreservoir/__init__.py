"""Competitive multi-head reservoir computing for continual learning of
dynamical systems: data generation, incremental ridge readouts, drift
detection, and the full evaluation protocol."""

__version__ = "0.1.0"

from .dynsys import (EnvironmentDataset, IntegratorConfig, StandardizationStats,
                     SystemKind, SystemSpec, Trajectory, build_continual_dataset,
                     derivative, generate_environment, integrate, load_dataset,
                     save_dataset)
from .errors import (ConfigError, DegenerateDataError, DivergenceError,
                     IntegrityError, NumericalError)
from .experiment import (AggregateResult, ExperimentConfig, RunResult, Setting,
                         SweepPoint, aggregate, default_experiment_config,
                         detection_accuracy, run_continual, run_experiment,
                         run_multi_task, run_naive_continual, run_single_task,
                         split_seed, sweep_lambda, sweep_threshold)
from .federated import HeadAccumulator, merge_accumulators, new_accumulator
from .multihead import (LearnerConfig, MultiHeadLearner, TrainStepReport,
                        load_checkpoint, new_learner, save_checkpoint)
from .reservoir import (ReservoirConfig, ReservoirWeights, embed, init_reservoir,
                        load_reservoir, ridge_solve, save_reservoir, step)

__all__ = [
    "__version__",
    # dynsys
    "SystemKind", "SystemSpec", "IntegratorConfig", "Trajectory",
    "StandardizationStats", "EnvironmentDataset", "derivative", "integrate",
    "generate_environment", "build_continual_dataset", "save_dataset",
    "load_dataset",
    # reservoir
    "ReservoirConfig", "ReservoirWeights", "init_reservoir", "step", "embed",
    "ridge_solve", "save_reservoir", "load_reservoir",
    # federated
    "HeadAccumulator", "new_accumulator", "merge_accumulators",
    # multihead
    "LearnerConfig", "MultiHeadLearner", "TrainStepReport", "new_learner",
    "save_checkpoint", "load_checkpoint",
    # experiment
    "ExperimentConfig", "Setting", "RunResult", "AggregateResult", "SweepPoint",
    "default_experiment_config", "split_seed", "run_continual", "run_single_task",
    "run_multi_task", "run_naive_continual", "run_experiment", "aggregate",
    "sweep_threshold", "sweep_lambda", "detection_accuracy",
    # errors
    "ConfigError", "DegenerateDataError", "DivergenceError", "IntegrityError",
    "NumericalError",
]
