"""Bidirectional discrete process matching on numpy.

Submodules: ``numcore`` (reverse-mode autodiff), ``field`` (velocity MLP),
``flow`` (Euler rollouts), ``losses``, ``datasets``, ``trainer``,
``evaluate`` and ``cli``.
"""

from .datasets import ToyDataset, make_toy, minibatch
from .evaluate import EvalReport, evaluate, transport_error
from .field import VelocityField, eval_field, init_field
from .flow import TimeGrid, backward_rollout, forward_rollout, synthesize, uniform_grid
from .losses import KernelSpec, PairwiseMetric, bidpm_loss, cfm_loss, mmd_squared, rf_loss
from .trainer import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "EvalReport", "KernelSpec", "PairwiseMetric", "TimeGrid", "ToyDataset", "TrainConfig", "TrainResult",
    "VelocityField", "backward_rollout", "bidpm_loss", "cfm_loss", "eval_field", "evaluate", "forward_rollout",
    "init_field", "make_toy", "minibatch", "mmd_squared", "rf_loss", "synthesize", "train", "transport_error",
    "uniform_grid",
]
