"""Constrained latent flow matching for generative modeling of random fields.

The package layers as follows: ``autodiff`` is a self-contained reverse-mode
engine on float64 numpy arrays; ``networks`` builds encoder and branch/trunk
decoder parameter sets on top of it; ``vae`` and ``flow`` implement the two
training phases; ``constraints`` supplies the statistical and physical
residual terms; ``fieldgen`` holds the synthetic data generators used for
training and evaluation; ``model`` wraps the pipeline in a fit/sample
estimator; ``harness`` adds configs, checkpoints, metrics and the ``clfm``
command line.
"""

from . import autodiff, constraints, fieldgen, flow, networks, optim, vae
from .constraints import PhysicalConstraint, StatisticalConstraint
from .flow import (FlowTrainConfig, VelocityNet, generate_fields,
                   init_velocity_net, rk4_sample, train_flow)
from .model import ConstrainedLatentFlow
from .vae import MeasurementOperator, TrainConfig, VaeModel, train_vae

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "autodiff", "constraints", "fieldgen", "flow", "networks", "optim",
    "vae",
    "StatisticalConstraint", "PhysicalConstraint",
    "FlowTrainConfig", "VelocityNet", "generate_fields", "init_velocity_net",
    "rk4_sample", "train_flow",
    "ConstrainedLatentFlow",
    "MeasurementOperator", "TrainConfig", "VaeModel", "train_vae",
]
