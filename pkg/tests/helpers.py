"""Small shared builders for the test-suite."""

import numpy as np

from bidpm import numcore as nc
from bidpm.field import init_field


def const_field(c, dim=None, hidden=4, embed_width=1):
    """A real VelocityField whose output is exactly ``c`` everywhere: zero weights, final bias c."""
    c = np.asarray(c, dtype=np.float64)
    f = init_field(dim or c.shape[0], hidden, embed_width, depth=1)
    arrays = {k: np.zeros_like(v) for k, v in f.named_arrays().items()}
    arrays["layers.1.bias"] = c.copy()
    return f.with_arrays(arrays)


def scalar_field(fn):
    """Plain callable field u(x, t) = fn(t) broadcast over a (B, 1) batch."""
    def u(x, t):
        x = nc.as_tensor(x)
        return nc.Tensor(np.full(x.shape, fn(t)))
    return u


def brute_mmd(a, b, bandwidths):
    """Double-loop V-statistic, written independently of the library."""
    def k(p, q):
        d = float(np.sum((p - q) ** 2))
        return sum(np.exp(-d / (2 * s * s)) for s in bandwidths)

    m, n = len(a), len(b)
    saa = sum(k(a[i], a[j]) for i in range(m) for j in range(m))
    sbb = sum(k(b[i], b[j]) for i in range(n) for j in range(n))
    sab = sum(k(a[i], b[j]) for i in range(m) for j in range(n))
    return saa / m ** 2 + sbb / n ** 2 - 2 * sab / (m * n)


# acceptance results, filled by test_acceptance and printed by conftest
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} | {detail}"
    ACCEPTANCE[number] = line
    print(line)
