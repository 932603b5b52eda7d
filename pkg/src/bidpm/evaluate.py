"""Transport metrics, centroid audits and straight-direction diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Mapping, Sequence

import numpy as np

from . import numcore as nc
from .flow import TimeGrid, forward_rollout, synthesize, uniform_grid
from .losses import KernelSpec, PairwiseMetric, mmd_squared, paired_match_loss


class EvalError(ValueError):
    pass


class HypothesisViolated(EvalError):
    """The diagnostic's assumptions (e.g. a uniform grid) do not hold."""


def transport_error(field, x: np.ndarray, z: np.ndarray, grid: TimeGrid,
                    direction: str = "forward") -> tuple[float, float]:
    """Mean and std of |synthesized - partner| over paired rows."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if len(x) == 0:
        raise EvalError("transport_error needs a non-empty paired set")
    if x.shape != z.shape:
        raise EvalError(f"paired sets differ in shape: {x.shape} vs {z.shape}")
    if direction == "forward":
        d = np.linalg.norm(synthesize(field, x, grid, "forward") - z, axis=1)
    else:
        d = np.linalg.norm(synthesize(field, z, grid, "backward") - x, axis=1)
    return float(d.mean()), float(d.std())


@dataclass
class TheoremDiagnostics:
    max_deviation: float
    endpoint_gap: float
    residual_loss: float


def check_theorem1(field, x: np.ndarray, z: np.ndarray, grid: TimeGrid) -> TheoremDiagnostics:
    """How far the field is from the constant direction X_N - X_0 at visited nodes.

    Rolls forward from ``x``; compares u(X_n, t_n) with the forward
    displacement X_N - X_0 at every node n = 0..N, row by row.
    """
    if not grid.is_uniform():
        raise HypothesisViolated("the constant-direction result assumes equal step sizes")
    x = np.asarray(x, dtype=np.float64)
    with nc.no_tape():
        states = forward_rollout(field, x, grid)
        disp = states[-1].data - states[0].data
        dev = 0.0
        for xn, tn in zip(states, grid.points):
            u = field(xn, tn).data
            dev = max(dev, float(np.linalg.norm(u - disp, axis=1).max()))
        u0 = field(states[0], grid.points[0]).data
        u1 = field(states[-1], grid.points[-1]).data
        gap = float(np.linalg.norm(u0 - u1, axis=1).max())
        loss, _ = paired_match_loss(field, x, z, grid, PairwiseMetric())
    return TheoremDiagnostics(dev, gap, loss.item())


@dataclass
class Proposition1Report:
    steps: list[int]
    gaps: list[float]
    slope: float
    intercept: float

    def bound(self, n: int) -> float:
        return self.slope / n + self.intercept


def endpoint_gap(field, x: np.ndarray, z: np.ndarray) -> float:
    """max over rows of |u(x, 0) - (z - x)|."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    with nc.no_tape():
        u = field(x, 0.0).data
    return float(np.linalg.norm(u - (z - x), axis=1).max())


def check_proposition1(fields: Mapping[int, object], x: np.ndarray, z: np.ndarray) -> Proposition1Report:
    """Endpoint gaps per step count, with a least-squares fit gap ~ C/N + r."""
    if not fields:
        raise EvalError("need at least one trained field")
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise EvalError(f"mismatched pair shapes {x.shape} vs {z.shape}")
    steps = sorted(fields)
    gaps = [endpoint_gap(fields[n], x, z) for n in steps]
    if len(steps) >= 2:
        A = np.stack([1.0 / np.asarray(steps, dtype=float), np.ones(len(steps))], axis=1)
        (slope, intercept), *_ = np.linalg.lstsq(A, np.asarray(gaps), rcond=None)
    else:
        slope, intercept = 0.0, gaps[0]
    return Proposition1Report(steps, gaps, float(slope), float(intercept))


def centroid_audit(synthesized: np.ndarray, labels, target_means: np.ndarray,
                   pi: Sequence[int]) -> list[float]:
    """Distance from each source component's synthesized centroid to target mean pi(k)."""
    if labels is None:
        raise EvalError("centroid audit needs component labels")
    labels = np.asarray(labels)
    synthesized = np.asarray(synthesized, dtype=np.float64)
    if len(labels) != len(synthesized):
        raise EvalError("one label per synthesized point is required")
    out = []
    for k in range(len(pi)):
        mask = labels == k
        if not mask.any():
            out.append(float("nan"))
            continue
        centroid = synthesized[mask].mean(axis=0)
        out.append(float(np.linalg.norm(centroid - target_means[pi[k]])))
    return out


def free_velocity_solve(x: np.ndarray, z: np.ndarray, n_steps: int, weights: Sequence[float] | None = None,
                        tol: float = 1e-10, max_iter: int = 200000) -> tuple[np.ndarray, float, int]:
    """Minimise the matching loss over N+1 free node velocities (no network).

    Node n carries its own velocity u_n, so X^f_n = x + h sum_{k<n} u_k and
    X^b_n = z - h sum_{k>n} u_k.  Plain gradient descent from zero until the
    loss drops below ``tol``.  Returns (velocities (N+1, D), loss, iterations).
    """
    grid = uniform_grid(n_steps, weights)
    h = 1.0 / n_steps
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    D = x.shape[1]
    metric = PairwiseMetric()
    nodes = [nc.Parameter(np.zeros((1, D)), f"u{n}") for n in range(n_steps + 1)]

    def loss_fn(us):
        fwd = [nc.Tensor(x)]
        for n in range(1, n_steps + 1):
            fwd.append(nc.add(fwd[-1], nc.scale(us[n - 1], h)))
        bwd = [nc.Tensor(z)]
        for n in range(n_steps, 0, -1):
            bwd.append(nc.sub(bwd[-1], nc.scale(us[n], h)))
        bwd.reverse()
        total = None
        for w, a, b in zip(grid.weights, fwd, bwd):
            piece = nc.scale(metric(a, b), w)
            total = piece if total is None else nc.add(total, piece)
        return total

    # Hessian eigenvalues are at most ~2 w_max (N h)^2 = 2 w_max
    lr = 0.5 / max(grid.weights)
    loss = float("inf")
    for it in range(max_iter):
        loss, grads = nc.value_and_grad(loss_fn, nodes, nodes)
        if loss < tol:
            break
        nodes = [nc.Parameter(p.data - lr * grads[p.name], p.name) for p in nodes]
    else:
        it = max_iter
    return np.concatenate([p.data for p in nodes]), loss, it


# ----------------------------------------------------------------- reports


@dataclass
class EvalReport:
    method: str
    n_steps: int
    rho: float
    forward_mean: float
    forward_std: float
    backward_mean: float
    backward_std: float
    mmd2: float
    centroid_distances: list[float] = dc_field(default_factory=list)
    theorem: TheoremDiagnostics | None = None

    @property
    def centroid_max(self) -> float:
        vals = [d for d in self.centroid_distances if d == d]
        return max(vals) if vals else float("nan")


def evaluate(field, x: np.ndarray, z: np.ndarray, grid: TimeGrid, *, source_labels=None,
             target_means: np.ndarray | None = None, pi: Sequence[int] | None = None,
             target_all: np.ndarray | None = None, kernel: KernelSpec = KernelSpec(),
             method: str = "bidpm", rho: float = 1.0) -> EvalReport:
    """Full report on a paired test set (x[i] partnered with z[i])."""
    fm, fs = transport_error(field, x, z, grid, "forward")
    bm, bs = transport_error(field, x, z, grid, "backward")
    synth = synthesize(field, x, grid, "forward")
    reference = z if target_all is None else target_all
    with nc.no_tape():
        mmd = mmd_squared(synth, reference, kernel).item()
    centroids = []
    if source_labels is not None and target_means is not None and pi is not None:
        centroids = centroid_audit(synth, source_labels, target_means, pi)
    theorem = check_theorem1(field, x, z, grid) if grid.is_uniform() else None
    return EvalReport(method, grid.n_steps, rho, fm, fs, bm, bs, mmd, centroids, theorem)
