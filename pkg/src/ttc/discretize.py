"""Partitions of the real line into symbol cells: equiprobable (MEP) and
supervised recursive minimal-entropy splits with MDL stopping (RMEP)."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

MEP = "MEP"
RMEP = "RMEP"

# two candidate splits whose class entropies differ by less than this are tied;
# the lower threshold wins
ENTROPY_TIE = 1e-12


@dataclass(frozen=True, eq=False)
class Partition:
    thresholds: np.ndarray
    method: str = MEP
    channel_id: str = ""

    def __post_init__(self):
        th = np.asarray(self.thresholds, dtype=float).reshape(-1)
        if len(th) > 1 and np.any(np.diff(th) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if not np.all(np.isfinite(th)):
            raise ValueError("thresholds must be finite")
        th.setflags(write=False)
        object.__setattr__(self, "thresholds", th)

    @property
    def alphabet_size(self) -> int:
        return len(self.thresholds) + 1

    def to_dict(self) -> dict:
        return {"thresholds": self.thresholds.tolist(), "method": self.method, "channel_id": self.channel_id}

    @classmethod
    def from_dict(cls, d: dict) -> "Partition":
        return cls(np.array(d["thresholds"], dtype=float), d["method"], d.get("channel_id", ""))


@dataclass(frozen=True, eq=False)
class SymbolSequence:
    unit_id: str
    channel_id: str
    symbols: np.ndarray
    alphabet_size: int

    def __len__(self) -> int:
        return len(self.symbols)


def fit_mep(values, alphabet_size: int, channel_id: str = "") -> Partition:
    """Equiprobable partition: thresholds at the ``j/|Phi|`` linear-interpolation quantiles.

    When heavy ties make adjacent quantiles coincide, duplicates are merged
    and the partition has fewer cells than requested.
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    if alphabet_size < 2:
        raise ValueError("alphabet_size must be >= 2 for MEP")
    if len(values) == 0:
        raise ValueError("no values to partition")
    n_distinct = len(np.unique(values))
    if n_distinct < alphabet_size:
        raise ValueError(
            f"only {n_distinct} distinct values for {alphabet_size} symbols; use a smaller alphabet"
        )
    qs = np.arange(1, alphabet_size) / alphabet_size
    th = np.quantile(values, qs, method="linear")
    uniq = np.unique(th)
    if len(uniq) < len(th):
        warnings.warn(
            f"channel {channel_id!r}: tied quantiles, MEP alphabet reduced to {len(uniq) + 1}",
            stacklevel=2,
        )
    return Partition(uniq, MEP, channel_id)


def _entropy2(ones: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Binary class entropy in bits for ``ones`` positives out of ``n``."""
    p1 = np.divide(ones, n, out=np.zeros_like(ones, dtype=float), where=n > 0)
    p0 = 1.0 - p1
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p1 > 0, p1 * np.log2(p1), 0.0) + np.where(p0 > 0, p0 * np.log2(p0), 0.0))
    return h


def _n_classes(ones, n) -> int:
    return int(ones > 0) + int(ones < n)


def mdl_threshold(n: int, ones: int, ones_left: int, n_left: int) -> tuple[float, float]:
    """Return ``(gain, bound)`` for a split; the MDL criterion accepts iff gain > bound."""
    n_right = n - n_left
    ones_right = ones - ones_left
    h = float(_entropy2(np.array(ones), np.array(n)))
    h0 = float(_entropy2(np.array(ones_left), np.array(n_left)))
    h1 = float(_entropy2(np.array(ones_right), np.array(n_right)))
    gain = h - (n_left / n) * h0 - (n_right / n) * h1
    c = _n_classes(ones, n)
    c0 = _n_classes(ones_left, n_left)
    c1 = _n_classes(ones_right, n_right)
    delta = math.log2(3**c - 2) - (c * h - c0 * h0 - c1 * h1)
    return gain, (math.log2(n - 1) + delta) / n


def best_split(v: np.ndarray, y: np.ndarray) -> tuple[int, float] | None:
    """Best boundary index ``i`` (left = ``v[:i]``) of sorted ``v`` and its weighted entropy.

    Only positions between distinct consecutive values are candidates.
    """
    n = len(v)
    if n < 2:
        return None
    cand = np.flatnonzero(v[1:] > v[:-1]) + 1
    if len(cand) == 0:
        return None
    c1 = np.concatenate([[0], np.cumsum(y)])
    total = c1[-1]
    n_left = cand.astype(float)
    n_right = n - n_left
    ones_left = c1[cand].astype(float)
    ones_right = total - ones_left
    h = (n_left * _entropy2(ones_left, n_left) + n_right * _entropy2(ones_right, n_right)) / n
    hmin = h.min()
    k = int(np.flatnonzero(h <= hmin + ENTROPY_TIE)[0])
    return int(cand[k]), float(h[k])


def rmep_decisions(values, labels, max_depth: int = 6) -> list[tuple[float, float, float, bool]]:
    """Every split RMEP considered, as ``(threshold, gain, bound, accepted)``.

    Each candidate boundary is the midpoint between the two neighbouring
    distinct values. Recursion stops when a split fails the MDL test or
    ``max_depth`` levels have been split; depth-limited cells are not listed.
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(np.int64)
    if len(values) != len(labels):
        raise ValueError("values and labels differ in length")
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite values")
    order = np.argsort(values, kind="stable")
    v, y = values[order], labels[order]

    out = []
    stack = [(0, len(v), 0)]
    while stack:
        lo, hi, depth = stack.pop()
        if depth >= max_depth or hi - lo < 2:
            continue
        found = best_split(v[lo:hi], y[lo:hi])
        if found is None:
            continue
        i, _ = found
        seg = y[lo:hi]
        gain, bound = mdl_threshold(hi - lo, int(seg.sum()), int(seg[:i].sum()), i)
        theta = (v[lo + i - 1] + v[lo + i]) / 2.0
        accepted = gain > bound
        out.append((float(theta), gain, bound, bool(accepted)))
        if accepted:
            stack.append((lo, lo + i, depth + 1))
            stack.append((lo + i, hi, depth + 1))
    return out


def fit_rmep(values, labels, max_depth: int = 6, channel_id: str = "") -> Partition:
    """Recursive minimal-entropy partition with the Fayyad-Irani MDL stop."""
    cuts = [t for t, _, _, ok in rmep_decisions(values, labels, max_depth) if ok]
    return Partition(np.array(sorted(cuts)), RMEP, channel_id)


def first_rmep_threshold(values, labels) -> float | None:
    """The root split of :func:`fit_rmep` before any MDL test."""
    values = np.asarray(values, dtype=float)
    order = np.argsort(values, kind="stable")
    v, y = values[order], np.asarray(labels)[order].astype(np.int64)
    found = best_split(v, y)
    if found is None:
        return None
    i, _ = found
    return (v[i - 1] + v[i]) / 2.0


def symbolize(values, partition: Partition) -> np.ndarray:
    """Cell index of each value; a value equal to a threshold goes to the upper cell."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite value cannot be symbolized")
    return np.searchsorted(partition.thresholds, values, side="right").astype(np.int64)


def apply_partition(series_channel, partition: Partition, unit_id: str = "") -> SymbolSequence:
    return SymbolSequence(unit_id, partition.channel_id, symbolize(series_channel, partition), partition.alphabet_size)
