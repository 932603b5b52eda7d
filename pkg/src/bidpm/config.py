"""Flat ``section.key = value`` experiment configuration.

Example::

    # fully paired, 2-step
    method = bidpm
    seed = 0
    data.rho = 1.0
    grid.steps = 2
    train.steps = 2000

Unknown keys and invalid values are collected and reported together.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path
from typing import Any, Callable

from .datasets import GaussianRingSpec, ToyDataset, check_bijection, make_toy, rotation_map
from .trainer import METHODS, TrainConfig


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class DataConfig:
    components: int = 8
    n_per_component: int = 128
    source_radius: float = 1.0
    source_std: float = 0.1
    target_radius: float = 1.4
    target_std: float = 0.06
    pi: tuple[int, ...] | None = None  # None: rotation by one component
    rho: float = 1.0
    coupled: bool = True

    def component_map(self) -> tuple[int, ...]:
        return self.pi if self.pi is not None else rotation_map(self.components)


@dataclass(frozen=True)
class EvalConfig:
    n_per_component: int = 32
    seed: int = 1000
    steps: int = 0  # 0: the training grid for bidpm, 10 Euler steps for baselines
    use_ema: bool = True


@dataclass(frozen=True)
class SweepConfig:
    grid_steps: tuple[int, ...] = ()
    rho: tuple[float, ...] = ()
    method: tuple[str, ...] = ()
    jobs: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = dc_field(default_factory=DataConfig)
    train: TrainConfig = dc_field(default_factory=TrainConfig)
    eval: EvalConfig = dc_field(default_factory=EvalConfig)
    sweep: SweepConfig = dc_field(default_factory=SweepConfig)
    out: str = "runs/default"
    checkpoint_interval: int = 0

    @property
    def seed(self) -> int:
        return self.train.seed

    @property
    def method(self) -> str:
        return self.train.method

    def problems(self) -> list[str]:
        out = list(self.train.problems())
        d = self.data
        if d.components < 1:
            out.append("data.components: must be >= 1")
        if d.n_per_component < 1:
            out.append("data.n_per_component: must be >= 1")
        for name in ("source_radius", "target_radius"):
            if not getattr(d, name) > 0:
                out.append(f"data.{name}: must be > 0")
        for name in ("source_std", "target_std"):
            if not getattr(d, name) >= 0:
                out.append(f"data.{name}: must be >= 0")
        if not 0 <= d.rho <= 1:
            out.append(f"data.rho: must lie in [0, 1], got {d.rho}")
        if d.pi is not None:
            try:
                check_bijection(d.pi, d.components)
            except ValueError as e:
                out.append(f"data.pi: {e}")
        if self.eval.n_per_component < 1:
            out.append("eval.n_per_component: must be >= 1")
        if self.eval.steps < 0:
            out.append("eval.steps: must be >= 0")
        for m in self.sweep.method:
            if m not in METHODS:
                out.append(f"sweep.method: unknown method {m!r}")
        for r in self.sweep.rho:
            if not 0 <= r <= 1:
                out.append(f"sweep.rho: {r} outside [0, 1]")
        for n in self.sweep.grid_steps:
            if n < 1:
                out.append(f"sweep.grid_steps: {n} < 1")
        if self.sweep.jobs < 1:
            out.append("sweep.jobs: must be >= 1")
        if self.checkpoint_interval < 0:
            out.append("train.checkpoint_interval: must be >= 0")
        return out

    def validate(self) -> "ExperimentConfig":
        problems = self.problems()
        if problems:
            raise ConfigError(problems)
        return self

    def eval_grid_steps(self) -> int:
        if self.eval.steps:
            return self.eval.steps
        return self.train.grid_steps if self.method == "bidpm" else 10


# ----------------------------------------------------------------- schema


def _to_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected true/false, got {s!r}")


def _list_of(conv: Callable[[str], Any]) -> Callable[[str], tuple]:
    def parse(s: str) -> tuple:
        s = s.strip()
        if not s:
            return ()
        return tuple(conv(p.strip()) for p in s.split(","))
    return parse


def _optional(conv):
    def parse(s: str):
        return None if s.strip().lower() in ("none", "") else conv(s)
    return parse


def _pi(s: str):
    s = s.strip()
    if s.lower() in ("none", "", "rotate"):
        return None
    return _list_of(int)(s)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)


# key -> (section attribute or None for top level, field name, parser)
SCHEMA: dict[str, tuple[str | None, str, Callable[[str], Any]]] = {
    "method": ("train", "method", str.strip),
    "seed": ("train", "seed", int),
    "out": (None, "out", str.strip),
    "data.components": ("data", "components", int),
    "data.n_per_component": ("data", "n_per_component", int),
    "data.source_radius": ("data", "source_radius", float),
    "data.source_std": ("data", "source_std", float),
    "data.target_radius": ("data", "target_radius", float),
    "data.target_std": ("data", "target_std", float),
    "data.pi": ("data", "pi", _pi),
    "data.rho": ("data", "rho", float),
    "data.coupled": ("data", "coupled", _to_bool),
    "field.hidden": ("train", "hidden", int),
    "field.depth": ("train", "depth", int),
    "field.embedding": ("train", "embedding", str.strip),
    "grid.steps": ("train", "grid_steps", int),
    "grid.points": ("train", "grid_points", _optional(_list_of(float))),
    "grid.weights": ("train", "grid_weights", _optional(_list_of(float))),
    "loss.bandwidths": ("train", "bandwidths", _list_of(float)),
    "loss.cfm_sigma": ("train", "cfm_sigma", float),
    "train.steps": ("train", "steps", int),
    "train.batch_size": ("train", "batch_size", int),
    "train.lr": ("train", "lr", float),
    "train.beta1": ("train", "beta1", float),
    "train.beta2": ("train", "beta2", float),
    "train.eps": ("train", "eps", float),
    "train.lambda_u": ("train", "lambda_u", float),
    "train.ema_decay": ("train", "ema_decay", float),
    "train.clip_norm": ("train", "clip_norm", _optional(float)),
    "train.log_interval": ("train", "log_interval", int),
    "train.checkpoint_interval": (None, "checkpoint_interval", int),
    "eval.n_per_component": ("eval", "n_per_component", int),
    "eval.seed": ("eval", "seed", int),
    "eval.steps": ("eval", "steps", int),
    "eval.use_ema": ("eval", "use_ema", _to_bool),
    "sweep.grid_steps": ("sweep", "grid_steps", _list_of(int)),
    "sweep.rho": ("sweep", "rho", _list_of(float)),
    "sweep.method": ("sweep", "method", _list_of(str)),
    "sweep.jobs": ("sweep", "jobs", int),
}


def apply_overrides(cfg: ExperimentConfig, values: dict[str, Any]) -> ExperimentConfig:
    """Set already-typed values by dotted key."""
    sections: dict[str, dict[str, Any]] = {}
    top: dict[str, Any] = {}
    for key, value in values.items():
        section, name, _ = SCHEMA[key]
        if section is None:
            top[name] = value
        else:
            sections.setdefault(section, {})[name] = value
    for section, changes in sections.items():
        top[section] = replace(getattr(cfg, section), **changes)
    return replace(cfg, **top)


def parse_config(text: str) -> ExperimentConfig:
    problems: list[str] = []
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            problems.append(f"{key}: unknown key (line {lineno})")
            continue
        try:
            values[key] = SCHEMA[key][2](value)
        except ValueError as e:
            problems.append(f"{key}: {e}")
    if problems:
        raise ConfigError(problems)
    cfg = apply_overrides(ExperimentConfig(), values)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


def config_to_text(cfg: ExperimentConfig) -> str:
    """Canonical rendering: every key, fixed order; parses back to an equal config."""
    lines = []
    for key, (section, name, _) in SCHEMA.items():
        obj = cfg if section is None else getattr(cfg, section)
        lines.append(f"{key} = {_fmt(getattr(obj, name))}")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ helpers


def derive_seed(base: int, *parts) -> int:
    """Per-run seed from a base seed and a combination tuple."""
    h = hashlib.blake2b(repr((int(base),) + tuple(parts)).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "little") >> 1


def ring_specs(cfg: ExperimentConfig, seed: int) -> tuple[GaussianRingSpec, GaussianRingSpec]:
    d = cfg.data
    return (GaussianRingSpec(d.components, d.source_radius, d.source_std, seed),
            GaussianRingSpec(d.components, d.target_radius, d.target_std, seed))


def build_dataset(cfg: ExperimentConfig) -> ToyDataset:
    src, tgt = ring_specs(cfg, cfg.seed)
    d = cfg.data
    return make_toy(d.n_per_component, d.rho, d.component_map(), cfg.seed, src, tgt, d.coupled)


def build_test_set(cfg: ExperimentConfig) -> ToyDataset:
    """Held-out fully paired set drawn with ``eval.seed``."""
    src, tgt = ring_specs(cfg, cfg.eval.seed)
    d = cfg.data
    return make_toy(cfg.eval.n_per_component, 1.0, d.component_map(), cfg.eval.seed, src, tgt, d.coupled)

