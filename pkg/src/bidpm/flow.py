"""Time grids and the discrete Euler forward/backward processes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numcore as nc


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    points: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        pts, ws = self.points, self.weights
        if len(pts) < 2:
            raise GridError("a grid needs at least two points (N >= 1)")
        if pts[0] != 0.0 or pts[-1] != 1.0:
            raise GridError(f"grid must start at 0 and end at 1, got {pts[0]} .. {pts[-1]}")
        if any(b <= a for a, b in zip(pts, pts[1:])):
            raise GridError("grid points must be strictly increasing")
        if len(ws) != len(pts):
            raise GridError(f"expected {len(pts)} weights, got {len(ws)}")
        if any(w < 0 for w in ws):
            raise GridError("grid weights must be non-negative")

    @property
    def n_steps(self) -> int:
        return len(self.points) - 1

    def steps(self) -> list[float]:
        return [b - a for a, b in zip(self.points, self.points[1:])]

    def is_uniform(self, tol: float = 1e-12) -> bool:
        h = 1.0 / self.n_steps
        return all(abs(s - h) <= tol for s in self.steps())

    def scaled(self, c: float) -> "TimeGrid":
        return TimeGrid(self.points, tuple(c * w for w in self.weights))


def default_weights(n: int) -> tuple[float, ...]:
    """1 at both endpoints, 0.5 at interior points."""
    return tuple(1.0 if k in (0, n) else 0.5 for k in range(n + 1))


def uniform_grid(n: int, weights: Sequence[float] | None = None) -> TimeGrid:
    if int(n) != n or n < 1:
        raise GridError(f"step count must be >= 1, got {n}")
    n = int(n)
    points = tuple(k / n for k in range(n + 1))
    return TimeGrid(points, tuple(weights) if weights is not None else default_weights(n))


def make_grid(points: Sequence[float], weights: Sequence[float] | None = None) -> TimeGrid:
    pts = tuple(float(p) for p in points)
    return TimeGrid(pts, tuple(weights) if weights is not None else default_weights(len(pts) - 1))


# a velocity is anything mapping (points tensor, time) -> tensor of the same shape
Velocity = Callable[[nc.Tensor, float], nc.Tensor]


def _check_dim(field, batch: nc.Tensor):
    dim = getattr(field, "dim", None)
    if batch.data.ndim != 2 or (dim is not None and batch.shape[1] != dim):
        raise GridError(f"batch shape {batch.shape} does not match field dimension {dim}")


def forward_rollout(field: Velocity, x0, grid: TimeGrid) -> list[nc.Tensor]:
    """States X^f_{t_0..t_N}, starting from ``x0`` at t=0."""
    x = nc.as_tensor(x0)
    _check_dim(field, x)
    states = [x]
    pts = grid.points
    for n in range(1, len(pts)):
        u = field(x, pts[n - 1])
        x = nc.add(x, nc.scale(u, pts[n] - pts[n - 1]))
        states.append(x)
    return states


def backward_rollout(field: Velocity, z1, grid: TimeGrid) -> list[nc.Tensor]:
    """States X^b_{t_0..t_N}, starting from ``z1`` at t=1 and stepping down."""
    z = nc.as_tensor(z1)
    _check_dim(field, z)
    pts = grid.points
    states = [z]
    for n in range(len(pts) - 1, 0, -1):
        u = field(z, pts[n])
        z = nc.add(z, nc.scale(u, pts[n - 1] - pts[n]))
        states.append(z)
    states.reverse()
    return states


def synthesize(field: Velocity, batch, grid: TimeGrid, direction: str = "forward") -> np.ndarray:
    """Transport ``batch`` across the grid without recording a tape."""
    if direction not in ("forward", "backward"):
        raise GridError(f"direction must be 'forward' or 'backward', got {direction!r}")
    with nc.no_tape():
        if direction == "forward":
            return forward_rollout(field, batch, grid)[-1].data.copy()
        return backward_rollout(field, batch, grid)[0].data.copy()
