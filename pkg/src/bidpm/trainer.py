"""Training loops: process matching and the RF / CFM baselines."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable

import numpy as np

from . import numcore as nc
from .datasets import Minibatch, ToyDataset, minibatch
from .field import FieldInit, VelocityField, init_field, parse_embedding
from .flow import TimeGrid, make_grid, uniform_grid
from .losses import KernelSpec, LossBreakdown, PairwiseMetric, bidpm_loss, cfm_loss, rf_loss
from .rng import Stream

log = logging.getLogger(__name__)

METHODS = ("bidpm", "rf", "icfm", "otcfm")


class TrainError(RuntimeError):
    pass


class NonFiniteGradient(TrainError):
    pass


class TrainingDiverged(TrainError):
    """Raised on a non-finite loss; ``state`` is the last good state."""

    def __init__(self, message: str, state: "TrainState"):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class TrainConfig:
    method: str = "bidpm"
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 20000
    batch_size: int = 256
    lambda_u: float = 0.2
    ema_decay: float = 0.999
    grid_steps: int = 2
    grid_points: tuple[float, ...] | None = None
    grid_weights: tuple[float, ...] | None = None
    seed: int = 0
    clip_norm: float | None = 10.0
    log_interval: int = 1
    bandwidths: tuple[float, ...] = (0.25, 0.5, 1.0, 2.0)
    cfm_sigma: float = 0.0
    hidden: int = 128
    depth: int = 3
    embedding: str = "fourier-4"

    def problems(self) -> list[str]:
        out = []
        if self.method not in METHODS:
            out.append(f"method: must be one of {METHODS}, got {self.method!r}")
        if not self.lr >= 0:
            out.append(f"lr: must be >= 0, got {self.lr}")
        if not 0 <= self.ema_decay < 1:
            out.append(f"ema_decay: must lie in [0, 1), got {self.ema_decay}")
        if not self.lambda_u >= 0:
            out.append(f"lambda_u: must be >= 0, got {self.lambda_u}")
        if self.steps < 0:
            out.append(f"steps: must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            out.append(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.grid_steps < 1:
            out.append(f"grid_steps: must be >= 1, got {self.grid_steps}")
        if self.log_interval < 1:
            out.append(f"log_interval: must be >= 1, got {self.log_interval}")
        if self.cfm_sigma < 0:
            out.append(f"cfm_sigma: must be >= 0, got {self.cfm_sigma}")
        if self.hidden < 1 or self.depth < 1:
            out.append("hidden/depth: must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0):
            out.append("beta1/beta2/eps: out of range")
        try:
            parse_embedding(self.embedding)
        except ValueError as e:
            out.append(f"embedding: {e}")
        try:
            KernelSpec(tuple(self.bandwidths))
        except ValueError as e:
            out.append(f"bandwidths: {e}")
        try:
            self.grid()
        except ValueError as e:
            out.append(f"grid: {e}")
        return out

    def validate(self):
        problems = self.problems()
        if problems:
            raise TrainError("invalid training config:\n  " + "\n  ".join(problems))

    def grid(self) -> TimeGrid:
        if self.grid_points is not None:
            return make_grid(self.grid_points, self.grid_weights)
        return uniform_grid(self.grid_steps, self.grid_weights)

    def kernel(self) -> KernelSpec:
        return KernelSpec(tuple(self.bandwidths))


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "OptimizerState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimizerState,
              config: TrainConfig) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """Bias-corrected Adam; returns new parameter and state objects."""
    for name, g in grads.items():
        if name not in params or g.shape != params[name].shape:
            raise TrainError(f"gradient {name} does not match any parameter shape")
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for {name} at optimizer step {state.step + 1}")
    t = state.step + 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        new_m[name] = m
        new_v[name] = v
        new_p[name] = p - config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)
    return new_p, OptimizerState(new_m, new_v, t)


def ema_update(shadow: dict[str, np.ndarray], live: dict[str, np.ndarray], decay: float) -> dict[str, np.ndarray]:
    if not 0 <= decay < 1:
        raise TrainError(f"EMA decay must lie in [0, 1), got {decay}")
    out = {}
    for name, s in shadow.items():
        if live[name].shape != s.shape:
            raise TrainError(f"EMA shape mismatch for {name}: {s.shape} vs {live[name].shape}")
        out[name] = decay * s + (1.0 - decay) * live[name]
    return out


# ------------------------------------------------------------------- records


@dataclass
class TrainRecord:
    step: int
    loss: LossBreakdown
    grad_norm: float
    wall_ms: float

    def row(self) -> tuple:
        """Deterministic part of the record (everything except wall time)."""
        return (self.step, self.loss.total, self.loss.paired, self.loss.unpaired, self.grad_norm)


@dataclass
class TrainState:
    field: VelocityField
    ema: dict[str, np.ndarray]
    opt: OptimizerState
    step: int = 0

    @property
    def ema_field(self) -> VelocityField:
        return self.field.with_arrays(self.ema)

    def copy(self) -> "TrainState":
        return TrainState(self.field, dict(self.ema), OptimizerState(dict(self.opt.m), dict(self.opt.v), self.opt.step),
                          self.step)


@dataclass
class TrainResult:
    field: VelocityField
    ema_field: VelocityField
    records: list[TrainRecord]
    state: TrainState
    warnings: list[str] = dc_field(default_factory=list)


def new_state(dim: int, config: TrainConfig) -> TrainState:
    field = init_field(dim, config.hidden, parse_embedding(config.embedding), FieldInit(config.seed),
                       depth=config.depth)
    arrays = field.named_arrays()
    return TrainState(field, {k: v.copy() for k, v in arrays.items()}, OptimizerState.zeros_like(arrays), 0)


# -------------------------------------------------------------- step losses


def batch_loss(field: VelocityField, batch: Minibatch, config: TrainConfig, step: int) -> LossBreakdown:
    """Training loss for one minibatch under ``config.method``."""
    if config.method == "bidpm":
        return bidpm_loss(field, (batch.x_paired, batch.z_paired), (batch.x_unpaired, batch.z_unpaired),
                          config.grid(), PairwiseMetric(), config.kernel(), config.lambda_u)

    # baselines regress on every row; unpaired rows are coupled in draw order
    x = np.concatenate([batch.x_paired, batch.x_unpaired])
    z = np.concatenate([batch.z_paired, batch.z_unpaired])
    if len(x) != len(z):
        raise TrainError("baseline batches need equally sized source and target halves")
    stream = Stream(config.seed, "baseline", step)
    t = stream.child("t").uniform(len(x))
    if config.method == "rf":
        loss = rf_loss(field, x, z, t)
    else:
        noise = stream.child("xi").normal(x.size).reshape(x.shape) if config.cfm_sigma > 0 else None
        loss = cfm_loss(field, x, z, t, config.method, config.cfm_sigma, noise)
    value = loss.item()
    return LossBreakdown(value, value, 0.0, 0.0, [], [], [], tensor=loss)


def _global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def train(dataset: ToyDataset, config: TrainConfig, state: TrainState | None = None,
          callback: Callable[[TrainRecord, TrainState], None] | None = None) -> TrainResult:
    """Run ``config.steps`` optimizer steps (continuing from ``state`` if given).

    Each step draws minibatch ``state.step`` from the dataset stream, evaluates
    the method's loss on a fresh tape, back-propagates through every Euler
    step, clips the global gradient norm, applies Adam and updates the EMA.
    """
    config.validate()
    if len(dataset.source) == 0 or len(dataset.target) == 0:
        raise TrainError("empty dataset")
    state = state.copy() if state is not None else new_state(dataset.dim, config)
    if state.field.dim != dataset.dim:
        raise TrainError(f"field dimension {state.field.dim} != dataset dimension {dataset.dim}")

    records: list[TrainRecord] = []
    warnings: list[str] = []
    for _ in range(config.steps):
        t0 = time.perf_counter()
        batch = minibatch(dataset, config.batch_size, config.seed, state.step)
        for w in batch.warnings:
            if w not in warnings:
                warnings.append(w)
                log.warning("minibatch: %s", w)
        field = state.field
        try:
            with nc.Tape():
                breakdown = batch_loss(field, batch, config, state.step)
            grads = nc.backward(breakdown.tensor, field.params)
        except nc.NonFiniteError as e:
            raise TrainingDiverged(f"non-finite loss at step {state.step}: {e}", state) from e
        if not math.isfinite(breakdown.total):
            raise TrainingDiverged(f"non-finite loss at step {state.step}", state)

        norm = _global_norm(grads)
        if not math.isfinite(norm):
            raise TrainingDiverged(f"non-finite gradient at step {state.step}", state)
        if config.clip_norm is not None and norm > config.clip_norm:
            factor = config.clip_norm / norm
            grads = {k: g * factor for k, g in grads.items()}

        params, opt = adam_step(field.named_arrays(), grads, state.opt, config)
        ema = ema_update(state.ema, params, config.ema_decay)
        breakdown.tensor = None
        rec = TrainRecord(state.step, breakdown, norm, 1000.0 * (time.perf_counter() - t0))
        state = TrainState(field.with_arrays(params), ema, opt, state.step + 1)
        if rec.step % config.log_interval == 0:
            records.append(rec)
            log.debug("step %d loss %.6g grad %.3g", rec.step, breakdown.total, norm)
        if callback is not None:
            callback(rec, state)
    return TrainResult(state.field, state.ema_field, records, state, warnings)


def train_baseline(dataset: ToyDataset, config: TrainConfig, state: TrainState | None = None,
                   callback=None) -> TrainResult:
    if config.method not in ("rf", "icfm", "otcfm"):
        raise TrainError(f"train_baseline needs method rf, icfm or otcfm, got {config.method!r}")
    return train(dataset, config, state, callback)


def with_overrides(config: TrainConfig, **changes) -> TrainConfig:
    return replace(config, **changes)
