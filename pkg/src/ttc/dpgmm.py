"""Dirichlet-process Gaussian mixture fitted by truncated stick-breaking
variational inference (coordinate ascent on the evidence lower bound).

Data are standardized internally; fitted parameters are reported in the
original units. Component precisions have Normal-Gamma priors per dimension
for ``covariance_type="diag"`` and Normal-Wishart priors for ``"full"``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln, digamma, gammaln, logsumexp, multigammaln

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class DpgmmModel:
    """Point summary of a fitted mixture.

    ``covariances`` has shape ``(K, D)`` for diagonal models and
    ``(K, D, D)`` for full ones. ``elbo_history`` holds one value per
    coordinate-ascent sweep.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    covariance_type: str = "diag"
    elbo_history: tuple[float, ...] = ()
    converged: bool = True
    concentration: float = 1.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        cov = np.asarray(self.covariances, dtype=float)
        if self.covariance_type not in ("diag", "full"):
            raise ValueError(f"unknown covariance_type {self.covariance_type!r}")
        if self.covariance_type == "diag":
            cov = cov.reshape(mu.shape)
            if np.any(cov <= 0):
                raise ValueError("diagonal covariances must be positive")
        elif cov.shape != mu.shape + (mu.shape[1],):
            raise ValueError("full covariances must have shape (K, D, D)")
        if abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
            raise ValueError("weights must lie on the simplex")
        for name, v in (("weights", w), ("means", mu), ("covariances", cov)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "elbo_history", tuple(float(e) for e in self.elbo_history))

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_logpdf(self, X) -> np.ndarray:
        """``log N(x; mu_k, Sigma_k)`` for every row of ``X`` and component ``k``."""
        X = _as_2d(X, self.dim)
        if self.covariance_type == "diag":
            var = self.covariances
            quad = (
                (X**2) @ (1.0 / var).T
                - 2.0 * X @ (self.means / var).T
                + np.sum(self.means**2 / var, axis=1)
            )
            logdet = np.sum(np.log(var), axis=1)
        else:
            K = self.n_components
            quad = np.empty((X.shape[0], K))
            logdet = np.empty(K)
            for k in range(K):
                chol = np.linalg.cholesky(self.covariances[k])
                sol = np.linalg.solve(chol, (X - self.means[k]).T)
                quad[:, k] = np.sum(sol**2, axis=0)
                logdet[k] = 2.0 * np.sum(np.log(np.diag(chol)))
        quad = np.maximum(quad, 0.0)
        return -0.5 * (self.dim * LOG_2PI + logdet + quad)

    def loglik(self, X) -> np.ndarray:
        """Mixture log-density of every row of ``X``."""
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logsumexp(self.component_logpdf(X) + logw, axis=1)

    def responsibilities(self, X) -> np.ndarray:
        """Posterior component membership under the point-estimate mixture."""
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        lp = self.component_logpdf(X) + logw
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "covariance_type": self.covariance_type,
            "elbo_history": list(self.elbo_history),
            "converged": self.converged,
            "concentration": self.concentration,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DpgmmModel":
        return cls(
            np.array(d["weights"]), np.array(d["means"]), np.array(d["covariances"]),
            d["covariance_type"], tuple(d.get("elbo_history", ())), d.get("converged", True),
            d.get("concentration", 1.0),
        )


def dpgmm_loglik(model: DpgmmModel, x) -> float:
    """Log mixture density of a single observation vector."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (model.dim,):
        raise ValueError(f"expected a vector of length {model.dim}, got shape {x.shape}")
    return float(model.loglik(x[None, :])[0])


def _as_2d(X, dim: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if dim == 1 else X[None, :]
    if X.shape[1] != dim:
        raise ValueError(f"expected {dim} columns, got {X.shape[1]}")
    return X


def _kmeanspp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _kl_beta(a, b, a0, b0):
    return (
        betaln(a0, b0) - betaln(a, b)
        + (a - a0) * digamma(a) + (b - b0) * digamma(b)
        + (a0 - a + b0 - b) * digamma(a + b)
    )


def _kl_gamma(a, b, a0, b0):
    # shape/rate parametrization
    return (a - a0) * digamma(a) - gammaln(a) + gammaln(a0) + a0 * (np.log(b) - np.log(b0)) + a * (b0 - b) / b


def _multidigamma(x, d):
    return sum(digamma(x + (1 - i) / 2.0) for i in range(1, d + 1))


class _StickBreaking:
    def __init__(self, K: int, alpha: float):
        self.K, self.alpha = K, alpha
        self.g1 = np.ones(K - 1)
        self.g2 = np.full(K - 1, alpha)

    def update(self, Nk):
        tail = np.cumsum(Nk[::-1])[::-1]
        self.g1 = 1.0 + Nk[:-1]
        self.g2 = self.alpha + tail[1:]

    def expected_log_pi(self):
        s = digamma(self.g1 + self.g2)
        elog_v = np.append(digamma(self.g1) - s, 0.0)
        elog_1mv = digamma(self.g2) - s
        return elog_v + np.concatenate([[0.0], np.cumsum(elog_1mv)])

    def expected_pi(self):
        ev = self.g1 / (self.g1 + self.g2)
        rest = np.concatenate([[1.0], np.cumprod(1.0 - ev)])
        return np.append(ev, 1.0) * rest

    def kl(self):
        return float(np.sum(_kl_beta(self.g1, self.g2, 1.0, self.alpha)))


class _DiagComponents:
    def __init__(self, D: int):
        self.m0 = np.zeros(D)
        self.beta0, self.a0 = 1.0, 1.0
        self.b0 = np.ones(D)

    def update(self, X, r, Nk):
        Ns = np.maximum(Nk, 1e-300)[:, None]
        xbar = (r.T @ X) / Ns
        S = np.maximum((r.T @ (X**2)) / Ns - xbar**2, 0.0)
        self.beta = self.beta0 + Nk
        self.m = (self.beta0 * self.m0 + Nk[:, None] * xbar) / self.beta[:, None]
        self.a = self.a0 + 0.5 * Nk
        self.b = self.b0 + 0.5 * (
            Nk[:, None] * S + (self.beta0 * Nk / self.beta)[:, None] * (xbar - self.m0) ** 2
        )

    def expected_loglik(self, X):
        D = X.shape[1]
        e_tau = self.a[:, None] / self.b
        e_logtau = digamma(self.a)[:, None] - np.log(self.b)
        quad = (X**2) @ e_tau.T - 2.0 * X @ (e_tau * self.m).T + np.sum(e_tau * self.m**2, axis=1)
        quad = np.maximum(quad, 0.0) + D / self.beta
        return 0.5 * np.sum(e_logtau, axis=1) - 0.5 * D * LOG_2PI - 0.5 * quad

    def kl(self):
        a = self.a[:, None]
        kl_tau = _kl_gamma(a, self.b, self.a0, self.b0)
        ratio = self.beta0 / self.beta[:, None]
        kl_mu = 0.5 * (ratio - 1.0 - np.log(ratio) + self.beta0 * (a / self.b) * (self.m - self.m0) ** 2)
        return float(np.sum(kl_tau + kl_mu))

    def point_estimates(self):
        return self.m, self.b / self.a[:, None]


class _FullComponents:
    def __init__(self, D: int, cov: np.ndarray):
        self.D = D
        self.m0 = np.zeros(D)
        self.beta0 = 1.0
        self.nu0 = float(D)
        self.W0inv = self.nu0 * cov
        self.W0 = np.linalg.inv(self.W0inv)

    def update(self, X, r, Nk):
        K, D = r.shape[1], self.D
        Ns = np.maximum(Nk, 1e-300)
        xbar = (r.T @ X) / Ns[:, None]
        self.beta = self.beta0 + Nk
        self.nu = self.nu0 + Nk
        self.m = (self.beta0 * self.m0 + Nk[:, None] * xbar) / self.beta[:, None]
        self.W = np.empty((K, D, D))
        for k in range(K):
            Xc = X - xbar[k]
            S = (Xc * r[:, k : k + 1]).T @ Xc
            dm = (xbar[k] - self.m0)[:, None]
            Winv = self.W0inv + S + (self.beta0 * Nk[k] / self.beta[k]) * (dm @ dm.T)
            Winv = 0.5 * (Winv + Winv.T)
            self.W[k] = np.linalg.inv(Winv)
            self.W[k] = 0.5 * (self.W[k] + self.W[k].T)

    def _logdet_W(self):
        return np.array([np.linalg.slogdet(w)[1] for w in self.W])

    def expected_loglik(self, X):
        n, D = X.shape
        K = len(self.beta)
        e_logdet = _multidigamma(self.nu / 2.0, D) + D * math.log(2.0) + self._logdet_W()
        out = np.empty((n, K))
        for k in range(K):
            Xc = X - self.m[k]
            quad = self.nu[k] * np.sum((Xc @ self.W[k]) * Xc, axis=1) + D / self.beta[k]
            out[:, k] = 0.5 * e_logdet[k] - 0.5 * D * LOG_2PI - 0.5 * quad
        return out

    def kl(self):
        D = self.D
        total = 0.0
        logdet_W0inv = np.linalg.slogdet(self.W0inv)[1]
        for k in range(len(self.beta)):
            W, nu = self.W[k], self.nu[k]
            A = self.W0inv @ W
            kl_w = (
                -0.5 * self.nu0 * (logdet_W0inv + np.linalg.slogdet(W)[1])
                + 0.5 * nu * (np.trace(A) - D)
                + multigammaln(self.nu0 / 2.0, D) - multigammaln(nu / 2.0, D)
                + 0.5 * (nu - self.nu0) * _multidigamma(nu / 2.0, D)
            )
            ratio = self.beta0 / self.beta[k]
            dm = self.m[k] - self.m0
            kl_mu = 0.5 * (D * ratio - D - D * math.log(ratio) + self.beta0 * nu * dm @ W @ dm)
            total += kl_w + kl_mu
        return float(total)

    def point_estimates(self):
        covs = np.array([np.linalg.inv(nu * W) for nu, W in zip(self.nu, self.W)])
        return self.m, 0.5 * (covs + np.transpose(covs, (0, 2, 1)))


def fit_dpgmm(
    X,
    n_components: int = 20,
    concentration: float = 1.0,
    covariance_type: str = "diag",
    max_iter: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
) -> DpgmmModel:
    """Fit a truncated DP mixture to the rows of ``X``.

    Stops when the relative ELBO change falls below ``tol``; if ``max_iter``
    sweeps pass first a warning is logged and the last (best) model returned.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, D = X.shape
    if n < 2:
        raise ValueError("need at least two observations")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite observations")
    shift = X.mean(axis=0)
    scale = X.std(axis=0)
    if np.any(scale == 0):
        raise ValueError(f"constant dimension(s) {np.flatnonzero(scale == 0).tolist()}")
    Z = (X - shift) / scale

    K = max(1, min(int(n_components), n))
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(Z, K, rng)
    d2 = np.sum((Z[:, None, :] - centers[None, :, :]) ** 2, axis=2) if n * K * D < 5e7 else None
    if d2 is None:
        d2 = np.column_stack([np.sum((Z - c) ** 2, axis=1) for c in centers])
    r = np.zeros((n, K))
    r[np.arange(n), np.argmin(d2, axis=1)] = 1.0

    sticks = _StickBreaking(K, concentration) if K > 1 else None
    if covariance_type == "diag":
        comps = _DiagComponents(D)
    elif covariance_type == "full":
        comps = _FullComponents(D, np.cov(Z, rowvar=False).reshape(D, D) + 1e-6 * np.eye(D))
    else:
        raise ValueError(f"unknown covariance_type {covariance_type!r}")

    const = -n * float(np.sum(np.log(scale)))
    history: list[float] = []
    converged = False
    for _ in range(max_iter):
        Nk = r.sum(axis=0)
        comps.update(Z, r, Nk)
        if sticks is not None:
            sticks.update(Nk)
            log_rho = comps.expected_loglik(Z) + sticks.expected_log_pi()
        else:
            log_rho = comps.expected_loglik(Z)
        norm = logsumexp(log_rho, axis=1, keepdims=True)
        r = np.exp(log_rho - norm)
        elbo = float(norm.sum()) - comps.kl() - (sticks.kl() if sticks is not None else 0.0) + const
        history.append(elbo)
        if len(history) > 1 and abs(history[-1] - history[-2]) <= tol * abs(history[-1]):
            converged = True
            break
    if not converged:
        log.warning("DPGMM did not converge in %d iterations", max_iter)

    weights = sticks.expected_pi() if sticks is not None else np.ones(1)
    weights = weights / weights.sum()
    m, cov = comps.point_estimates()
    means = m * scale + shift
    if covariance_type == "diag":
        covs = cov * scale**2
    else:
        covs = cov * np.outer(scale, scale)[None, :, :]
    return DpgmmModel(weights, means, covs, covariance_type, tuple(history), converged, concentration)
