"""Linear SVM for sparse feature vectors.

Objective: ``0.5 * (|w|^2 + b^2) + C * sum(max(0, 1 - y (w.x + b)))`` with
labels mapped 0/1 -> -1/+1. The bias is handled as an extra constant
feature, so it is regularized like the weights.

Two deterministic solvers:

``"pegasos"``
    epoch-wise stochastic subgradient descent with step ``1 / (lam * t)``,
    ``lam = 1 / (C n)``. At the end of every epoch the primal objective is
    evaluated; an epoch that does not improve on the best iterate is rolled
    back (pocket rule), so epoch-end objectives never increase.
``"dcd"``
    dual coordinate descent, converging to the exact optimum; used where
    solutions must agree to high precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class SvmModel:
    weights: np.ndarray
    bias: float
    C: float
    objective: float = float("nan")
    epochs: int = 0
    objective_history: tuple[float, ...] = ()
    solver: str = "pegasos"

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not np.all(np.isfinite(w)) or not np.isfinite(self.bias):
            raise ValueError("SVM weights must be finite")
        if not self.C > 0:
            raise ValueError("C must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def decision_function(self, X) -> np.ndarray:
        X = as_csr(X, len(self.weights))
        return X @ self.weights + self.bias

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0).astype(np.int64)

    def flipped(self) -> "SvmModel":
        return SvmModel(-self.weights, -self.bias, self.C, self.objective, self.epochs, (), self.solver)

    def scaled(self, factor: float) -> "SvmModel":
        return SvmModel(self.weights * factor, self.bias * factor, self.C, solver=self.solver)


def as_csr(X, dim: int | None = None) -> sp.csr_matrix:
    from .features import BowVector, to_csr

    if sp.issparse(X):
        X = X.tocsr()
    elif isinstance(X, (list, tuple)) and X and isinstance(X[0], BowVector):
        X = to_csr(X, dim)
    elif isinstance(X, BowVector):
        X = to_csr([X], dim)
    else:
        X = sp.csr_matrix(np.atleast_2d(np.asarray(X, dtype=float)))
    if dim is not None and X.shape[1] != dim:
        if X.shape[1] < dim:
            X = sp.csr_matrix((X.data, X.indices, X.indptr), shape=(X.shape[0], dim))
        else:
            raise ValueError(f"feature dimension {X.shape[1]} exceeds model dimension {dim}")
    return X


@nb.njit(cache=True)
def _margins(indptr, indices, data, w, b):
    n = len(indptr) - 1
    out = np.empty(n)
    for i in range(n):
        s = b
        for p in range(indptr[i], indptr[i + 1]):
            s += w[indices[p]] * data[p]
        out[i] = s
    return out


@nb.njit(cache=True)
def _objective(indptr, indices, data, y, w, b, C):
    m = _margins(indptr, indices, data, w, b)
    loss = 0.0
    for i in range(len(y)):
        h = 1.0 - y[i] * m[i]
        if h > 0:
            loss += h
    return 0.5 * (np.dot(w, w) + b * b) + C * loss


@nb.njit(cache=True)
def _shuffle(order):
    for i in range(len(order) - 1, 0, -1):
        j = np.random.randint(0, i + 1)
        order[i], order[j] = order[j], order[i]


@nb.njit(cache=True)
def _pegasos(indptr, indices, data, y, C, epochs, seed, dim):
    np.random.seed(seed)
    n = len(y)
    order = np.arange(n)
    lam = 1.0 / (C * n)
    radius = 1.0 / np.sqrt(lam)
    xx = np.empty(n)
    for i in range(n):
        s = 1.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * data[p]
        xx[i] = s
    # w = scale * v, bias = scale * vb; vv = |v|^2 + vb^2
    v = np.zeros(dim)
    vb = 0.0
    vv = 0.0
    scale = 1.0
    best_w = np.zeros(dim)
    best_b = 0.0
    best_obj = _objective(indptr, indices, data, y, best_w, best_b, C)
    history = np.empty(epochs)
    t = 0
    for e in range(epochs):
        _shuffle(order)
        for k in range(n):
            i = order[k]
            t += 1
            eta = 1.0 / (lam * t)
            raw = vb
            for p in range(indptr[i], indptr[i + 1]):
                raw += v[indices[p]] * data[p]
            m = raw * scale
            if t == 1:
                v[:] = 0.0
                vb = 0.0
                vv = 0.0
                raw = 0.0
                scale = 1.0
            else:
                scale *= 1.0 - 1.0 / t
            if y[i] * m < 1.0:
                step = eta * y[i] / scale
                for p in range(indptr[i], indptr[i + 1]):
                    v[indices[p]] += step * data[p]
                vb += step
                vv += 2.0 * step * raw + step * step * xx[i]
            norm = scale * np.sqrt(max(vv, 0.0))
            if norm > radius:
                scale *= radius / norm
            if scale < 1e-9 or scale > 1e9:
                v *= scale
                vb *= scale
                vv = np.dot(v, v) + vb * vb
                scale = 1.0
        w = v * scale
        b = vb * scale
        obj = _objective(indptr, indices, data, y, w, b, C)
        if obj <= best_obj:
            best_obj = obj
            best_w[:] = w
            best_b = b
        else:
            v[:] = best_w
            vb = best_b
            scale = 1.0
        vv = np.dot(v, v) + vb * vb
        history[e] = best_obj
    return best_w, best_b, best_obj, history


@nb.njit(cache=True)
def _dcd(indptr, indices, data, y, C, seed, max_epochs, dim, tol):
    np.random.seed(seed)
    n = len(y)
    order = np.arange(n)
    alpha = np.zeros(n)
    w = np.zeros(dim)
    b = 0.0
    qd = np.empty(n)
    for i in range(n):
        s = 1.0
        for p in range(indptr[i], indptr[i + 1]):
            s += data[p] * data[p]
        qd[i] = s
    epochs = 0
    for e in range(max_epochs):
        epochs = e + 1
        _shuffle(order)
        pg_max = -np.inf
        pg_min = np.inf
        for k in range(n):
            i = order[k]
            g = b
            for p in range(indptr[i], indptr[i + 1]):
                g += w[indices[p]] * data[p]
            g = y[i] * g - 1.0
            if alpha[i] == 0.0:
                pg = min(g, 0.0)
            elif alpha[i] == C:
                pg = max(g, 0.0)
            else:
                pg = g
            pg_max = max(pg_max, pg)
            pg_min = min(pg_min, pg)
            if pg != 0.0:
                old = alpha[i]
                new = min(max(old - g / qd[i], 0.0), C)
                d = (new - old) * y[i]
                if d != 0.0:
                    alpha[i] = new
                    for p in range(indptr[i], indptr[i + 1]):
                        w[indices[p]] += d * data[p]
                    b += d
        if pg_max - pg_min < tol:
            break
    return w, b, epochs


def train_svm(
    X, y, C: float = 1.0, epochs: int | None = None, seed: int = 0, solver: str = "pegasos", tol: float = 1e-10,
    dim: int | None = None,
) -> SvmModel:
    """Train a linear SVM on rows of ``X`` (sparse matrix, dense array or BowVectors).

    ``epochs`` defaults to 200 for pegasos and 5000 (an upper bound) for dcd.
    """
    X = as_csr(X, dim)
    y = np.asarray(y).reshape(-1)
    n = X.shape[0]
    if n != len(y):
        raise ValueError("X and y differ in length")
    if n < 2 or len(np.unique(y)) < 2:
        raise ValueError("SVM training needs at least one example of each class")
    if not C > 0:
        raise ValueError("C must be positive")
    ys = np.where(y > 0, 1.0, -1.0)
    X.sort_indices()
    indptr = X.indptr.astype(np.int64)
    indices = X.indices.astype(np.int64)
    data = X.data.astype(float)
    # numba keeps its own Mersenne Twister; seeding it makes the shuffles reproducible
    kseed = int(np.random.SeedSequence(seed).generate_state(1)[0] & 0x7FFFFFFF)
    if solver == "pegasos":
        epochs = 200 if epochs is None else epochs
        w, b, obj, hist = _pegasos(indptr, indices, data, ys, float(C), epochs, kseed, X.shape[1])
        return SvmModel(w, float(b), float(C), float(obj), epochs, tuple(hist.tolist()), solver)
    if solver == "dcd":
        epochs = 5000 if epochs is None else epochs
        w, b, run = _dcd(
            indptr, indices, data, ys, float(C), kseed, epochs, X.shape[1], tol
        )
        obj = _objective(indptr, indices, data, ys, w, b, float(C))
        return SvmModel(w, float(b), float(C), float(obj), int(run), (), solver)
    raise ValueError(f"unknown solver {solver!r}")


def predict_svm(model: SvmModel, x) -> tuple[int, float]:
    """Label (1 iff margin > 0) and margin for a single vector."""
    margin = float(model.decision_function(x)[0])
    return int(margin > 0), margin


def objective(model: SvmModel, X, y) -> float:
    X = as_csr(X, len(model.weights))
    ys = np.where(np.asarray(y) > 0, 1.0, -1.0)
    m = X @ model.weights + model.bias
    return float(0.5 * (model.weights @ model.weights + model.bias**2) + model.C * np.maximum(0, 1 - ys * m).sum())
