"""Process-matching objective, MMD, and the RF / CFM baseline losses."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from . import numcore as nc
from .assignment import ot_pairing
from .flow import TimeGrid, backward_rollout, forward_rollout

DEFAULT_BANDWIDTHS = (0.25, 0.5, 1.0, 2.0)


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class PairwiseMetric:
    """Row-aligned distance between two batches.

    ``squared-L2-mean``: mean over rows of the squared Euclidean distance.
    """

    kind: str = "squared-L2-mean"

    def __post_init__(self):
        if self.kind != "squared-L2-mean":
            raise LossError(f"unsupported metric {self.kind!r}")

    def __call__(self, a: nc.Tensor, b: nc.Tensor) -> nc.Tensor:
        if a.shape != b.shape:
            raise LossError(f"metric needs aligned batches, got {a.shape} and {b.shape}")
        return nc.scale(nc.mean_square(nc.sub(a, b)), a.shape[1])


@dataclass(frozen=True)
class KernelSpec:
    """Sum of RBF kernels exp(-|x-y|^2 / (2 sigma^2)) over ``bandwidths``."""

    bandwidths: tuple[float, ...] = DEFAULT_BANDWIDTHS
    kind: str = "rbf"

    def __post_init__(self):
        if self.kind != "rbf":
            raise LossError(f"unsupported kernel {self.kind!r}")
        if not self.bandwidths:
            raise LossError("kernel needs at least one bandwidth")
        if any(not s > 0 for s in self.bandwidths):
            raise LossError(f"bandwidths must be positive, got {self.bandwidths}")

    def value(self, sqdist: np.ndarray) -> np.ndarray:
        return sum(np.exp(-sqdist / (2.0 * s * s)) for s in self.bandwidths)


@dataclass
class LossBreakdown:
    total: float
    paired: float
    unpaired: float
    lambda_u: float
    per_timepoint: list[float] = dc_field(default_factory=list)
    paired_terms: list[float] = dc_field(default_factory=list)
    unpaired_terms: list[float] = dc_field(default_factory=list)
    tensor: nc.Tensor | None = dc_field(default=None, repr=False)


def _rows(x) -> nc.Tensor:
    t = nc.as_tensor(x)
    if t.data.ndim != 2:
        raise LossError(f"expected a (rows, dim) batch, got shape {t.shape}")
    return t


def _weighted_sum(terms: Sequence[nc.Tensor], weights: Sequence[float]) -> nc.Tensor:
    total = None
    for term, w in zip(terms, weights):
        piece = nc.scale(term, w)
        total = piece if total is None else nc.add(total, piece)
    return total


def _paired_terms(fwd, bwd, grid: TimeGrid, metric: PairwiseMetric, rows: slice | None = None):
    terms = []
    for xf, zb in zip(fwd, bwd):
        if rows is not None:
            xf = nc.take_rows(xf, rows.start, rows.stop)
            zb = nc.take_rows(zb, rows.start, rows.stop)
        terms.append(metric(xf, zb))
    return terms


def paired_match_loss(field, x, z, grid: TimeGrid, metric: PairwiseMetric = PairwiseMetric()):
    """sum_n w_n d(X^f_{t_n}, X^b_{t_n}) with row i of x paired to row i of z.

    Returns ``(loss tensor, [weighted per-timepoint values])``.
    """
    x, z = _rows(x), _rows(z)
    if x.shape != z.shape:
        raise LossError(f"paired batches differ: {x.shape} vs {z.shape}")
    terms = _paired_terms(forward_rollout(field, x, grid), backward_rollout(field, z, grid), grid, metric)
    weighted = [w * t.item() for w, t in zip(grid.weights, terms)]
    return _weighted_sum(terms, grid.weights), weighted


def mmd_squared(a, b, kernel: KernelSpec = KernelSpec()) -> nc.Tensor:
    """Biased (V-statistic) squared MMD between two point sets."""
    a, b = _rows(a), _rows(b)
    m, n = a.shape[0], b.shape[0]
    if m == 0 or n == 0:
        raise LossError("mmd_squared needs two non-empty batches")
    if a.shape[1] != b.shape[1]:
        raise LossError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d_aa = nc.pairwise_sqdist(a, a)
    d_bb = nc.pairwise_sqdist(b, b)
    d_ab = nc.pairwise_sqdist(a, b)

    def ksum(d):
        total = None
        for s in kernel.bandwidths:
            piece = nc.sum_all(nc.exp(nc.scale(d, -1.0 / (2.0 * s * s))))
            total = piece if total is None else nc.add(total, piece)
        return total

    # keep (aa + bb) - 2 ab in this order: identical sets cancel to exactly 0
    k_aa = nc.scale(ksum(d_aa), 1.0 / (m * m))
    k_bb = nc.scale(ksum(d_bb), 1.0 / (n * n))
    k_ab = nc.scale(ksum(d_ab), 1.0 / (m * n))
    return nc.sub(nc.add(k_aa, k_bb), nc.scale(k_ab, 2.0))


def _mmd_terms(fwd, bwd, kernel):
    return [mmd_squared(xf, zb, kernel) for xf, zb in zip(fwd, bwd)]


def unpaired_match_loss(field, x_u, z_u, grid: TimeGrid, kernel: KernelSpec = KernelSpec()):
    """sum_n w_n MMD^2(forward states of x_u, backward states of z_u)."""
    x_u, z_u = _rows(x_u), _rows(z_u)
    if x_u.shape[0] == 0 or z_u.shape[0] == 0:
        raise LossError("unpaired pools must be non-empty")
    terms = _mmd_terms(forward_rollout(field, x_u, grid), backward_rollout(field, z_u, grid), kernel)
    weighted = [w * t.item() for w, t in zip(grid.weights, terms)]
    return _weighted_sum(terms, grid.weights), weighted


def _empty(batch) -> bool:
    return batch is None or np.asarray(getattr(batch, "data", batch)).shape[0] == 0


def bidpm_loss(field, paired, unpaired, grid: TimeGrid, metric: PairwiseMetric = PairwiseMetric(),
               kernel: KernelSpec = KernelSpec(), lambda_u: float = 0.0) -> LossBreakdown:
    """L = L^p + lambda_u L^u.

    Each side's MMD set is its unpaired samples together with its paired
    samples from the same batch.  With empty unpaired pools (or
    ``lambda_u == 0``) the unpaired term is skipped and reported as 0.
    """
    if lambda_u < 0:
        raise LossError(f"lambda_u must be >= 0, got {lambda_u}")
    x_p, z_p = paired
    x_u, z_u = unpaired if unpaired is not None else (None, None)
    has_pairs = not _empty(x_p)
    use_unpaired = lambda_u > 0 and not (_empty(x_u) or _empty(z_u))
    if has_pairs:
        x_p, z_p = _rows(x_p), _rows(z_p)
        if x_p.shape != z_p.shape:
            raise LossError(f"paired batches differ: {x_p.shape} vs {z_p.shape}")
    if not has_pairs and not use_unpaired:
        raise LossError("nothing to train on: no paired rows and no active unpaired term")

    n_pts = grid.n_steps + 1
    if use_unpaired:
        x_u, z_u = _rows(x_u), _rows(z_u)
        xs = nc.concat_rows(x_p, x_u) if has_pairs else x_u
        zs = nc.concat_rows(z_p, z_u) if has_pairs else z_u
    else:
        xs, zs = x_p, z_p
    fwd = forward_rollout(field, xs, grid)
    bwd = backward_rollout(field, zs, grid)

    if has_pairs:
        if use_unpaired:
            p_terms = _paired_terms(fwd, bwd, grid, metric, slice(0, x_p.shape[0]))
        else:
            p_terms = _paired_terms(fwd, bwd, grid, metric)
        lp = _weighted_sum(p_terms, grid.weights)
        p_vals = [w * t.item() for w, t in zip(grid.weights, p_terms)]
    else:
        lp = None
        p_vals = [0.0] * n_pts

    if use_unpaired:
        u_terms = _mmd_terms(fwd, bwd, kernel)
        lu = _weighted_sum(u_terms, grid.weights)
        u_vals = [w * t.item() for w, t in zip(grid.weights, u_terms)]
        weighted_u = nc.scale(lu, lambda_u)
        total = weighted_u if lp is None else nc.add(lp, weighted_u)
    else:
        lu = None
        u_vals = [0.0] * n_pts
        total = lp

    return LossBreakdown(
        total=total.item(),
        paired=lp.item() if lp is not None else 0.0,
        unpaired=lu.item() if lu is not None else 0.0,
        lambda_u=lambda_u,
        per_timepoint=[p + lambda_u * u for p, u in zip(p_vals, u_vals)],
        paired_terms=p_vals,
        unpaired_terms=u_vals,
        tensor=total,
    )


# ----------------------------------------------------------------- baselines


def _aligned(x, z):
    x, z = _rows(x), _rows(z)
    if x.shape != z.shape:
        raise LossError(f"baseline batches must be aligned, got {x.shape} and {z.shape}")
    return x, z


def _check_times(t, rows: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    if t.shape != (rows,):
        raise LossError(f"need one time sample per row ({rows}), got {t.shape}")
    if t.min() < 0 or t.max() > 1:
        raise LossError("time samples must lie in [0, 1]")
    return t


def _regression(field, xt: np.ndarray, t: np.ndarray, target: np.ndarray) -> nc.Tensor:
    u = field(nc.Tensor(xt), t)
    return nc.scale(nc.mean_square(nc.sub(u, nc.Tensor(target))), target.shape[1])


def rf_loss(field, x, z, t_samples) -> nc.Tensor:
    """Mean over rows of |u(X_t, t) - (z - x)|^2 along X_t = (1-t) x + t z."""
    x, z = _aligned(x, z)
    t = _check_times(t_samples, x.shape[0])
    xd, zd = x.data, z.data
    xt = (1.0 - t)[:, None] * xd + t[:, None] * zd
    return _regression(field, xt, t, zd - xd)


def cfm_loss(field, x, z, t_samples, variant: str = "icfm", sigma: float = 0.0, noise=None) -> nc.Tensor:
    """I-CFM / OT-CFM regression loss.

    Conditional path mean (1-t) x + t z with constant scale ``sigma``; the
    target velocity is z - x since the scale has zero time derivative.
    ``otcfm`` first re-pairs the batch by minimum squared-distance assignment.
    """
    if sigma < 0:
        raise LossError(f"sigma must be >= 0, got {sigma}")
    if variant not in ("icfm", "otcfm"):
        raise LossError(f"unknown CFM variant {variant!r}")
    x, z = _aligned(x, z)
    t = _check_times(t_samples, x.shape[0])
    xd, zd = x.data, z.data
    if variant == "otcfm":
        zd = zd[ot_pairing(xd, zd)]
    mu = (1.0 - t)[:, None] * xd + t[:, None] * zd
    if sigma > 0:
        if noise is None:
            raise LossError("sigma > 0 needs a noise array")
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != mu.shape:
            raise LossError(f"noise shape {noise.shape} does not match batch {mu.shape}")
        mu = mu + sigma * noise
    return _regression(field, mu, t, zd - xd)
