"""8-Gaussian ring benchmarks with component pairing maps and paired/unpaired splits."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .rng import Stream

log = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class GaussianRingSpec:
    components: int = 8
    radius: float = 1.0
    std: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.components < 1:
            raise DatasetError(f"component count must be >= 1, got {self.components}")
        if not self.radius > 0:
            raise DatasetError(f"radius must be > 0, got {self.radius}")
        if not self.std >= 0:
            raise DatasetError(f"std must be >= 0, got {self.std}")

    def means(self) -> np.ndarray:
        k = np.arange(self.components)
        ang = 2.0 * np.pi * k / self.components
        return np.stack([self.radius * np.cos(ang), self.radius * np.sin(ang)], axis=1)


SOURCE_RING = GaussianRingSpec(8, 1.0, 0.1)
TARGET_RING = GaussianRingSpec(8, 1.4, 0.06)


def rotation_map(k: int, shift: int = 1) -> tuple[int, ...]:
    return tuple((i + shift) % k for i in range(k))


def check_bijection(pi: Sequence[int], k: int) -> tuple[int, ...]:
    pi = tuple(int(p) for p in pi)
    if sorted(pi) != list(range(k)):
        raise DatasetError(f"component map {pi} is not a bijection on 0..{k - 1}")
    return pi


def gen_ring(spec: GaussianRingSpec, n_per_component: int,
             noise_components: Sequence[int] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``n_per_component`` points from each ring component, component-major.

    Component ``k`` draws its standard normals from noise block
    ``noise_components[k]`` (default ``k``); sharing blocks between two rings
    couples their samples draw-by-draw.
    """
    if n_per_component < 1:
        raise DatasetError(f"n_per_component must be >= 1, got {n_per_component}")
    K = spec.components
    blocks = list(range(K)) if noise_components is None else list(noise_components)
    if len(blocks) != K:
        raise DatasetError("noise_components needs one entry per component")
    means = spec.means()
    stream = Stream(spec.seed, "ring-noise")
    pts = np.empty((K * n_per_component, 2))
    for k in range(K):
        xi = stream.child(blocks[k]).normal(2 * n_per_component).reshape(n_per_component, 2)
        pts[k * n_per_component:(k + 1) * n_per_component] = means[k] + spec.std * xi
    labels = np.repeat(np.arange(K), n_per_component)
    return pts, labels


@dataclass
class ToyDataset:
    """Source/target samples with a component map and paired/unpaired split.

    ``paired_source[i]`` and ``paired_target[i]`` index partner rows of
    ``source`` and ``target``; the ``unpaired_*`` arrays are the remaining rows.
    """

    source: np.ndarray
    target: np.ndarray
    source_labels: np.ndarray
    target_labels: np.ndarray
    pi: tuple[int, ...]
    paired_source: np.ndarray
    paired_target: np.ndarray
    unpaired_source: np.ndarray
    unpaired_target: np.ndarray
    source_spec: GaussianRingSpec = dc_field(default_factory=lambda: SOURCE_RING)
    target_spec: GaussianRingSpec = dc_field(default_factory=lambda: TARGET_RING)
    rho: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("source", "target", "source_labels", "target_labels", "paired_source",
                     "paired_target", "unpaired_source", "unpaired_target"):
            arr = getattr(self, name)
            arr.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.source.shape[1]

    @property
    def n_paired(self) -> int:
        return len(self.paired_source)

    @property
    def source_means(self) -> np.ndarray:
        return self.source_spec.means()

    @property
    def target_means(self) -> np.ndarray:
        return self.target_spec.means()

    def paired_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.source[self.paired_source], self.target[self.paired_target]


def make_paired(source, target, pi: Sequence[int], rho: float, seed: int = 0, *,
                source_spec: GaussianRingSpec | None = None,
                target_spec: GaussianRingSpec | None = None) -> ToyDataset:
    """Pair ``round(rho * n)`` source rows with target rows.

    A source row of component ``k`` (its ``j``-th draw) is paired with the
    ``j``-th draw of target component ``pi[k]``.  Which source rows are paired
    is chosen by a seeded permutation.
    """
    src, src_lab = source
    tgt, tgt_lab = target
    src_lab = np.asarray(src_lab)
    tgt_lab = np.asarray(tgt_lab)
    if not 0.0 <= rho <= 1.0:
        raise DatasetError(f"paired fraction must lie in [0, 1], got {rho}")
    K = int(max(src_lab.max(), tgt_lab.max())) + 1
    pi = check_bijection(pi, K)
    n = len(src)

    src_rank = _draw_rank(src_lab)
    tgt_by_key = {(int(lab), int(r)): i for i, (lab, r) in enumerate(zip(tgt_lab, _draw_rank(tgt_lab)))}
    n_pairs = int(round(rho * n))
    order = Stream(seed, "pairing").permutation(n)

    chosen_src, chosen_tgt = [], []
    for i in order:
        if len(chosen_src) == n_pairs:
            break
        key = (pi[int(src_lab[i])], int(src_rank[i]))
        if key not in tgt_by_key:
            raise DatasetError(
                f"target component {key[0]} has no draw #{key[1]} to pair with source row {i}")
        chosen_src.append(int(i))
        chosen_tgt.append(tgt_by_key[key])
    if len(chosen_src) < n_pairs:
        raise DatasetError("not enough rows to realise the requested paired fraction")

    ps = np.asarray(chosen_src, dtype=np.int64)
    pt = np.asarray(chosen_tgt, dtype=np.int64)
    us = np.setdiff1d(np.arange(n), ps)
    ut = np.setdiff1d(np.arange(len(tgt)), pt)
    return ToyDataset(
        source=np.array(src, dtype=np.float64), target=np.array(tgt, dtype=np.float64),
        source_labels=src_lab.astype(np.int64), target_labels=tgt_lab.astype(np.int64),
        pi=pi, paired_source=ps, paired_target=pt, unpaired_source=us, unpaired_target=ut,
        source_spec=source_spec or SOURCE_RING, target_spec=target_spec or TARGET_RING,
        rho=float(rho), seed=int(seed),
    )


def _draw_rank(labels: np.ndarray) -> np.ndarray:
    """Position of each row among rows of the same label, in row order."""
    rank = np.empty(len(labels), dtype=np.int64)
    seen: dict[int, int] = {}
    for i, lab in enumerate(labels):
        lab = int(lab)
        rank[i] = seen.get(lab, 0)
        seen[lab] = rank[i] + 1
    return rank


def make_toy(n_per_component: int = 128, rho: float = 1.0, pi: Sequence[int] | None = None,
             seed: int = 0, source: GaussianRingSpec | None = None,
             target: GaussianRingSpec | None = None, coupled: bool = True) -> ToyDataset:
    """Two 8-Gaussian rings of different shape joined by a component map.

    With ``coupled`` the target draw paired with a source draw reuses that
    source draw's standard-normal noise, so partners are a deterministic
    (piecewise affine) function of each other.
    """
    src_spec = GaussianRingSpec(**{**_spec_kwargs(source or SOURCE_RING), "seed": seed})
    tgt_spec = GaussianRingSpec(**{**_spec_kwargs(target or TARGET_RING), "seed": seed})
    if src_spec.components != tgt_spec.components:
        raise DatasetError("source and target rings need the same component count")
    K = src_spec.components
    pi = check_bijection(pi if pi is not None else rotation_map(K), K)
    src = gen_ring(src_spec, n_per_component)
    if coupled:
        inverse = [0] * K
        for k, pk in enumerate(pi):
            inverse[pk] = k
        tgt = gen_ring(tgt_spec, n_per_component, noise_components=inverse)
    else:
        tgt = gen_ring(GaussianRingSpec(**{**_spec_kwargs(tgt_spec), "seed": seed + 1}), n_per_component)
    return make_paired(src, tgt, pi, rho, seed, source_spec=src_spec, target_spec=tgt_spec)


def _spec_kwargs(spec: GaussianRingSpec) -> dict:
    return {"components": spec.components, "radius": spec.radius, "std": spec.std, "seed": spec.seed}


# ---------------------------------------------------------------- minibatches


@dataclass
class Minibatch:
    x_paired: np.ndarray
    z_paired: np.ndarray
    x_unpaired: np.ndarray
    z_unpaired: np.ndarray
    warnings: list[str] = dc_field(default_factory=list)


def _stream_take(pool: np.ndarray, count: int, stream: Stream, step: int) -> np.ndarray:
    """Rows ``[step*count, (step+1)*count)`` of the concatenated per-epoch permutations."""
    size = len(pool)
    start = step * count
    out = np.empty(count, dtype=np.int64)
    filled = 0
    while filled < count:
        epoch, offset = divmod(start + filled, size)
        perm = stream.child(epoch).permutation(size)
        take = min(count - filled, size - offset)
        out[filled:filled + take] = pool[perm[offset:offset + take]]
        filled += take
    return out


def minibatch(dataset: ToyDataset, batch_size: int, seed: int, step: int) -> Minibatch:
    """Batch ``step`` of a deterministic, per-epoch reshuffled stream.

    Half the rows come from the paired pool and half from the unpaired pools
    when both exist; otherwise the single non-empty pool fills the batch.
    """
    if batch_size < 1:
        raise DatasetError(f"batch size must be >= 1, got {batch_size}")
    has_p = dataset.n_paired > 0
    has_u = len(dataset.unpaired_source) > 0 and len(dataset.unpaired_target) > 0
    if not has_p and not has_u:
        raise DatasetError("dataset has no samples to draw")
    warnings: list[str] = []
    if has_p and has_u:
        if batch_size % 2:
            raise DatasetError(f"batch size must be even when mixing pools, got {batch_size}")
        n_p = n_u = batch_size // 2
    elif has_p:
        n_p, n_u = batch_size, 0
    else:
        n_p, n_u = 0, batch_size

    base = Stream(seed, "minibatch")
    D = dataset.dim
    xp = zp = np.zeros((0, D))
    xu = zu = np.zeros((0, D))
    if n_p:
        pool = np.arange(dataset.n_paired)
        if n_p > len(pool):
            warnings.append(f"paired pool has {len(pool)} rows < {n_p} requested; using {len(pool)}")
            n_p = len(pool)
        idx = _stream_take(pool, n_p, base.child("paired"), step)
        xp = dataset.source[dataset.paired_source[idx]]
        zp = dataset.target[dataset.paired_target[idx]]
    if n_u:
        for side, pool in (("source", dataset.unpaired_source), ("target", dataset.unpaired_target)):
            k = n_u
            if k > len(pool):
                warnings.append(f"unpaired {side} pool has {len(pool)} rows < {k} requested; using {len(pool)}")
                k = len(pool)
            idx = _stream_take(pool, k, base.child("unpaired", side), step)
            if side == "source":
                xu = dataset.source[idx]
            else:
                zu = dataset.target[idx]
    for w in warnings:
        log.debug("minibatch: %s", w)
    return Minibatch(xp, zp, xu, zu, warnings)


# -------------------------------------------------------------- normalization


def normalization(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate (center, half-range) mapping ``points`` into [-1, 1]."""
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    half = np.where(half > 0, half, 1.0)
    return center, half


def normalize(points: np.ndarray, center: np.ndarray, half: np.ndarray) -> np.ndarray:
    return (points - center) / half


def denormalize(points: np.ndarray, center: np.ndarray, half: np.ndarray) -> np.ndarray:
    return points * half + center

