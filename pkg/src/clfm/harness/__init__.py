"""Config-driven experiment pipeline: datasets, training stages, metrics,
checkpoints, and the command line front end."""

from .config import (ConfigError, DatasetConfig, NetworkConfig,
                     ConstraintConfig, EvaluationConfig, ExperimentConfig,
                     experiment_defaults, load_config, dump_config)
from .metrics import MetricsReport, compute_metrics, sample_vae_prior
from .checkpoint import (Checkpoint, CheckpointError, checkpoint_save,
                         checkpoint_load)
from .experiments import StageError, run_experiment, run_sweep

__all__ = [
    "ConfigError", "DatasetConfig", "NetworkConfig", "ConstraintConfig",
    "EvaluationConfig", "ExperimentConfig", "experiment_defaults",
    "load_config", "dump_config",
    "MetricsReport", "compute_metrics", "sample_vae_prior",
    "Checkpoint", "CheckpointError", "checkpoint_save", "checkpoint_load",
    "StageError", "run_experiment", "run_sweep",
]
