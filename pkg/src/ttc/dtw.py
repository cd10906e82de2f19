"""Dynamic time warping with a Sakoe-Chiba band over multivariate sequences."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np


@dataclass(frozen=True)
class DtwConfig:
    """``window`` is the band half-width in samples; ``None`` means unconstrained."""

    window: int | None = None
    normalization: str = "none"

    def __post_init__(self):
        if self.window is not None and self.window < 0:
            raise ValueError("window must be >= 0")
        if self.normalization not in ("none", "by_length"):
            raise ValueError(f"unknown normalization {self.normalization!r}")


@nb.njit(cache=True)
def _dtw_band(a, b, window):
    n, m = a.shape[0], b.shape[0]
    inf = np.inf
    prev = np.full(m + 1, inf)
    cur = np.full(m + 1, inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[:] = inf
        lo = max(1, i - window)
        hi = min(m, i + window)
        for j in range(lo, hi + 1):
            d = 0.0
            for k in range(a.shape[1]):
                diff = a[i - 1, k] - b[j - 1, k]
                d += diff * diff
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = d + best
        prev, cur = cur, prev
    return prev[m]


def _as_seq(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return np.ascontiguousarray(x)


def dtw_distance(a, b, config: DtwConfig = DtwConfig()) -> float:
    """Square root of the cheapest warping path cost (squared Euclidean local cost)."""
    a, b = _as_seq(a), _as_seq(b)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sequences must be non-empty")
    if a.shape[1] != b.shape[1]:
        raise ValueError("sequences differ in dimensionality")
    window = max(len(a), len(b)) if config.window is None else int(config.window)
    if abs(len(a) - len(b)) > window:
        raise ValueError(f"band of {window} cannot connect lengths {len(a)} and {len(b)}")
    cost = _dtw_band(a, b, window)
    dist = math.sqrt(cost)
    if config.normalization == "by_length":
        dist /= max(len(a), len(b))
    return dist


def window_for(fraction: float, n: int, m: int) -> int:
    """Band width for a fraction of the longer length, widened to stay feasible."""
    return max(int(math.ceil(fraction * max(n, m))), abs(n - m))
