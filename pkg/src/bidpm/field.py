"""Time-conditioned MLP velocity field u(x, t)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import numcore as nc
from .rng import Stream


class FieldError(ValueError):
    pass


@dataclass(frozen=True)
class FieldInit:
    seed: int = 0
    final_scale: float = 1e-2


def init_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))


def parse_embedding(embedding: str) -> int:
    """Embedding width E for ``"raw"`` or ``"fourier-K"``."""
    if embedding == "raw":
        return 1
    if embedding.startswith("fourier-"):
        try:
            k = int(embedding.split("-", 1)[1])
        except ValueError:
            raise FieldError(f"bad embedding {embedding!r}") from None
        if k >= 1:
            return 2 * k
    raise FieldError(f"bad embedding {embedding!r}; expected 'raw' or 'fourier-K'")


def embedding_name(width: int) -> str:
    if width == 1:
        return "raw"
    if width >= 2 and width % 2 == 0:
        return f"fourier-{width // 2}"
    raise FieldError(f"time embedding width must be 1 or a positive even number, got {width}")


def time_features(t: np.ndarray, width: int) -> np.ndarray:
    """(B, E) time features: raw t, or interleaved sin/cos(2^k pi t)."""
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    if width == 1:
        return t
    freqs = np.pi * 2.0 ** np.arange(width // 2)
    ang = t * freqs
    out = np.empty((t.shape[0], width))
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


@dataclass
class VelocityField:
    dim: int
    hidden: int
    depth: int
    embed_width: int
    params: list[nc.Parameter] = dc_field(repr=False)

    @property
    def widths(self) -> list[int]:
        return [self.dim + self.embed_width] + [self.hidden] * self.depth + [self.dim]

    @property
    def embedding(self) -> str:
        return embedding_name(self.embed_width)

    @property
    def n_layers(self) -> int:
        return self.depth + 1

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {p.name: p.data for p in self.params}

    def with_arrays(self, arrays: dict[str, np.ndarray]) -> "VelocityField":
        params = []
        for p in self.params:
            new = np.asarray(arrays[p.name], dtype=np.float64)
            if new.shape != p.shape:
                raise FieldError(f"{p.name}: expected shape {p.shape}, got {new.shape}")
            params.append(nc.Parameter(new, p.name))
        return VelocityField(self.dim, self.hidden, self.depth, self.embed_width, params)

    def flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.params])

    def __call__(self, x, t):
        return eval_field(self, x, t)


def _param_names(depth: int) -> list[str]:
    names = []
    for i in range(depth + 1):
        names += [f"layers.{i}.weight", f"layers.{i}.bias"]
    return names


def init_field(dim: int = 2, hidden: int = 128, embed_width: int = 8, init: FieldInit = FieldInit(),
               depth: int = 3) -> VelocityField:
    if dim < 1 or hidden < 1 or depth < 1:
        raise FieldError(f"invalid widths: dim={dim}, hidden={hidden}, depth={depth}")
    embedding_name(embed_width)
    widths = [dim + embed_width] + [hidden] * depth + [dim]
    stream = Stream(init.seed, "field-init")
    params = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        a = init_bound(fan_in, fan_out)
        if i == depth:
            a *= init.final_scale
        u = stream.child(i).uniform(fan_in * fan_out)
        w = (2.0 * u - 1.0) * a
        params.append(nc.Parameter(w.reshape(fan_in, fan_out), f"layers.{i}.weight"))
        params.append(nc.Parameter(np.zeros(fan_out), f"layers.{i}.bias"))
    return VelocityField(dim, hidden, depth, embed_width, params)


def zeros_like_field(field: VelocityField) -> VelocityField:
    return field.with_arrays({p.name: np.zeros(p.shape) for p in field.params})


def eval_field(field: VelocityField, x, t) -> nc.Tensor:
    """Velocity at points ``x`` (B, D) and time ``t`` (scalar or one per row)."""
    x = nc.as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != field.dim:
        raise FieldError(f"point batch shape {x.shape} does not match field dimension {field.dim}")
    t_arr = np.asarray(t, dtype=np.float64)
    if t_arr.ndim == 0:
        t_arr = np.full(x.shape[0], float(t_arr))
    elif t_arr.shape != (x.shape[0],):
        raise FieldError(f"time array shape {t_arr.shape} does not match batch of {x.shape[0]}")
    if t_arr.size and (t_arr.min() < 0.0 or t_arr.max() > 1.0):
        raise FieldError("time must lie in [0, 1]")

    h = nc.concat_cols(x, time_features(t_arr, field.embed_width))
    ps = field.params
    for i in range(field.depth):
        h = nc.silu(nc.add_row(nc.matmul(h, ps[2 * i]), ps[2 * i + 1]))
    return nc.add_row(nc.matmul(h, ps[-2]), ps[-1])
