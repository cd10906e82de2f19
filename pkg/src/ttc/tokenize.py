"""Fixed-length tokenization of symbol sequences and Markov-order estimation
from conditional mutual information with a within-context permutation test."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .discretize import SymbolSequence

log = logging.getLogger(__name__)

ALPHABET = "0123456789abcdefghijklmnopqrstuvwxyz"
_ALPHABET_ARR = np.array(list(ALPHABET), dtype="<U1")


@dataclass(frozen=True, eq=False)
class TokenStream:
    unit_id: str
    channel_id: str
    tokens: tuple[str, ...]
    token_length: int
    dropped_tail: int

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class OrderEstimate:
    estimated_order: int
    cmi_by_order: tuple[tuple[int, float, float], ...] = field(default_factory=tuple)
    method: str = "cmi"


def render_symbols(symbols: np.ndarray) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=np.int64)
    if len(symbols) and (symbols.min() < 0 or symbols.max() >= len(ALPHABET)):
        raise ValueError(f"symbols must lie in [0, {len(ALPHABET)}) to be rendered")
    return _ALPHABET_ARR[symbols]


def tokenize_fixed(seq: SymbolSequence, L: int) -> TokenStream:
    """Split into consecutive non-overlapping words of ``L`` symbols; the tail is dropped."""
    if L < 1:
        raise ValueError("token length must be >= 1")
    if seq.alphabet_size > len(ALPHABET):
        raise ValueError(f"alphabet of {seq.alphabet_size} symbols exceeds {len(ALPHABET)}")
    T = len(seq.symbols)
    K = T // L
    if K == 0:
        log.warning("unit %s channel %s: %d symbols shorter than token length %d", seq.unit_id, seq.channel_id, T, L)
        return TokenStream(seq.unit_id, seq.channel_id, (), L, T)
    chars = np.ascontiguousarray(render_symbols(seq.symbols[: K * L]).reshape(K, L))
    tokens = chars.view(f"<U{L}").reshape(K)
    return TokenStream(seq.unit_id, seq.channel_id, tuple(tokens.tolist()), L, T - K * L)


def _as_arrays(seqs) -> list[np.ndarray]:
    if isinstance(seqs, SymbolSequence) or (isinstance(seqs, np.ndarray) and seqs.ndim == 1):
        seqs = [seqs]
    return [np.asarray(s.symbols if isinstance(s, SymbolSequence) else s, dtype=np.int64) for s in seqs]


def _alphabet_size(seqs, arrays) -> int:
    sizes = [s.alphabet_size for s in seqs if isinstance(s, SymbolSequence)]
    top = max((int(a.max()) + 1 for a in arrays if len(a)), default=1)
    return max(sizes + [top])


def _grams(arrays: list[np.ndarray], lag: int, q: int):
    """Split every (lag+1)-gram into (oldest symbol, context code, newest symbol)."""
    firsts, ctxs, lasts = [], [], []
    weights = q ** np.arange(lag - 2, -1, -1, dtype=np.int64) if lag > 1 else None
    for a in arrays:
        if len(a) < lag + 1:
            continue
        w = sliding_window_view(a, lag + 1)
        firsts.append(w[:, 0])
        lasts.append(w[:, -1])
        ctxs.append(w[:, 1:-1] @ weights if lag > 1 else np.zeros(len(w), dtype=np.int64))
    if not firsts:
        raise ValueError(f"no {lag + 1}-grams available")
    return np.concatenate(firsts), np.concatenate(ctxs), np.concatenate(lasts)


def _cmi_from_codes(a: np.ndarray, g: np.ndarray, b: np.ndarray, n_groups: int, q: int) -> float:
    """Plug-in I(b; a | g) in nats; ``g`` must be dense ids in [0, n_groups)."""
    n = len(a)
    joint = np.bincount((g * q + a) * q + b, minlength=n_groups * q * q).reshape(n_groups, q, q)
    c_ga = joint.sum(axis=2)
    c_gb = joint.sum(axis=1)
    c_g = c_ga.sum(axis=1)
    nz = joint > 0
    num = joint * c_g[:, None, None]
    den = c_ga[:, :, None] * c_gb[:, None, :]
    return float(np.sum(joint[nz] * np.log(num[nz] / den[nz])) / n)


def _prepare(arrays, lag, q):
    a, ctx, b = _grams(arrays, lag, q)
    uniq, g = np.unique(ctx, return_inverse=True)
    return a, g.astype(np.int64), b, len(uniq)


def conditional_mutual_information(seqs, order: int, alphabet_size: int | None = None) -> float:
    """Empirical ``I(s_m ; s_{m-order} | s_{m-1}, ..., s_{m-order+1})`` in bits.

    Counts of ``(order+1)``-grams are pooled over all sequences.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    arrays = _as_arrays(seqs)
    q = alphabet_size or _alphabet_size(seqs if not isinstance(seqs, SymbolSequence) else [seqs], arrays)
    a, g, b, G = _prepare(arrays, order, q)
    return max(0.0, _cmi_from_codes(a, g, b, G, q)) / math.log(2.0)


def cmi_permutation_test(
    seqs, order: int, n_shuffles: int = 100, alpha: float = 0.05, seed=0, alphabet_size: int | None = None
) -> tuple[float, float, bool]:
    """Test ``CMI(order) = 0`` by shuffling the oldest symbol within each context.

    Returns ``(cmi_bits, threshold_bits, accepted)``; the null is accepted iff
    the observed CMI is at most the ``1 - alpha`` quantile of the shuffled CMIs.
    """
    arrays = _as_arrays(seqs)
    q = alphabet_size or _alphabet_size(seqs if not isinstance(seqs, SymbolSequence) else [seqs], arrays)
    a, g, b, G = _prepare(arrays, order, q)
    observed = _cmi_from_codes(a, g, b, G, q)
    idx = np.argsort(g, kind="stable")
    a_s, g_s, b_s = a[idx], g[idx], b[idx]
    bounds = np.flatnonzero(np.diff(g_s)) + 1
    segments = np.split(np.arange(len(a_s)), bounds)
    rng = np.random.default_rng(seed)
    null = np.empty(n_shuffles)
    for i in range(n_shuffles):
        if len(segments) <= 64:
            perm = np.concatenate([rng.permutation(s) for s in segments])
        else:
            perm = np.argsort(g_s + rng.random(len(g_s)), kind="stable")
        null[i] = _cmi_from_codes(a_s[perm], g_s, b_s, G, q)
    threshold = float(np.percentile(null, 100.0 * (1.0 - alpha)))
    ln2 = math.log(2.0)
    return max(observed, 0.0) / ln2, max(threshold, 0.0) / ln2, bool(observed <= threshold)


def estimate_markov_order(
    seqs,
    max_order: int = 10,
    n_shuffles: int = 100,
    alpha: float = 0.05,
    seed=0,
    alphabet_size: int | None = None,
    min_grams_factor: int = 10,
) -> OrderEstimate:
    """Smallest order ``k`` whose lag-``k+1`` conditional mutual information is not significant.

    Candidate orders run from 0 upwards. Testing order ``k`` needs at least
    ``min_grams_factor * |Phi|**(k+1)`` grams; when data run out the last
    order that could not be ruled out is returned with a warning.
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    arrays = _as_arrays(seqs)
    q = alphabet_size or _alphabet_size(seqs if not isinstance(seqs, SymbolSequence) else [seqs], arrays)
    ss = np.random.SeedSequence(seed if isinstance(seed, int) else list(seed))
    rows = []
    for k, child in zip(range(0, max_order + 1), ss.spawn(max_order + 1)):
        lag = k + 1
        n_grams = sum(max(0, len(a) - lag) for a in arrays)
        if n_grams < min_grams_factor * q ** (k + 1):
            log.warning("only %d grams, too few to test Markov order %d; returning %d", n_grams, k, k)
            return OrderEstimate(k, tuple(rows))
        cmi, thr, accepted = cmi_permutation_test(arrays, lag, n_shuffles, alpha, child, q)
        rows.append((k, cmi, thr))
        if accepted:
            return OrderEstimate(k, tuple(rows))
    log.warning("no order up to %d accepted zero CMI", max_order)
    return OrderEstimate(max_order, tuple(rows))


def combine_orders(orders: Iterable[int]) -> int:
    """One document-wide token length from per-channel orders: rounded median, at least 1."""
    orders = list(orders)
    if not orders:
        raise ValueError("no orders to combine")
    return max(1, int(math.floor(float(np.median(orders)) + 0.5)))


def tokenize_all(seqs: Sequence[SymbolSequence], L: int) -> list[TokenStream]:
    return [tokenize_fixed(s, L) for s in seqs]
