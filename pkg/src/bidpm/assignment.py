"""Exact rectangular linear assignment by shortest augmenting paths.

Rows are inserted one at a time; each insertion runs a Dijkstra-like search
over reduced costs (dual potentials ``u``, ``v``) and augments along the
cheapest alternating path.  O(n^2 m) overall, inner loop vectorised over
columns.
"""

from __future__ import annotations

import numpy as np


def linear_sum_assignment(cost) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-cost matching of every row (or every column, if fewer) of ``cost``.

    Returns ``(rows, cols)`` sorted by row, in the same convention as
    ``scipy.optimize.linear_sum_assignment``.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError(f"cost must be a matrix, got shape {c.shape}")
    if not np.isfinite(c).all():
        raise ValueError("cost matrix contains non-finite entries")
    if c.shape[0] > c.shape[1]:
        cols, rows = linear_sum_assignment(c.T)
        order = np.argsort(rows)
        return rows[order], cols[order]
    n, m = c.shape
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)

    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    # owner[j] = 1-based row matched to 1-based column j; column 0 is the virtual root
    owner = np.zeros(m + 1, dtype=np.int64)
    way = np.zeros(m + 1, dtype=np.int64)

    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used
            free[0] = False
            reduced = c[i0 - 1] - u[i0] - v[1:]
            better = free[1:] & (reduced < minv[1:])
            idx = np.nonzero(better)[0] + 1
            minv[idx] = reduced[idx - 1]
            way[idx] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    rows = []
    cols = []
    for j in range(1, m + 1):
        if owner[j]:
            rows.append(owner[j] - 1)
            cols.append(j - 1)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    order = np.argsort(rows)
    return rows[order], cols[order]


def sq_euclidean_cost(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def ot_pairing(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Permutation ``p`` such that pairing x[i] with z[p[i]] minimises total squared distance."""
    rows, cols = linear_sum_assignment(sq_euclidean_cost(x, z))
    perm = np.empty(len(rows), dtype=np.int64)
    perm[rows] = cols
    return perm
