"""Negative binomial density and maximum-likelihood GLM fit.

Parameterization (used everywhere in this package): y ~ NB(eta, gamma) with
E[y] = eta and Var[y] = eta + eta^2/gamma, so gamma -> inf recovers the
Poisson and small gamma means strong overdispersion. The fit profiles gamma
(method-of-moments start, golden-section refinement of the profile
likelihood) around an IRLS update of the coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._kernels import nb_loglik_sum, nb_logpmf_out
from .data import CountDataset, DesignMatrix
from .exceptions import (
    ConvergenceError,
    DomainError,
    SingularDesignError,
    UnderdispersionError,
)

_GOLDEN_TOL = 1e-8
_MAX_IRLS = 100


@dataclass(frozen=True)
class NBParams:
    """Mean/dispersion pair of a single NB distribution."""

    eta: float
    gamma: float

    def __post_init__(self):
        if not (self.eta > 0.0) or not math.isfinite(self.eta):
            raise DomainError(f"eta must be positive, got {self.eta}")
        if not (self.gamma > 0.0) or not math.isfinite(self.gamma):
            raise DomainError(f"gamma must be positive, got {self.gamma}")

    @property
    def variance(self) -> float:
        return self.eta + self.eta**2 / self.gamma


@dataclass(frozen=True)
class GlmFit:
    """Maximum-likelihood NB GLM result.

    ``cov_beta`` is sigma2_hat * (X^T X)^{-1} (the prior covariance consumed
    by the hierarchical sampler); ``cov_info`` is the inverse of the final
    weighted information matrix (used for standard errors).
    """

    beta_hat: np.ndarray
    gamma_hat: float
    sigma2_hat: float
    cov_beta: np.ndarray
    cov_info: np.ndarray
    deviance: float
    loglik: float
    converged: bool
    n_iter: int
    loglik_path: tuple[float, ...]

    @property
    def se_beta(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov_info))


def nb_logpmf(y, params: NBParams | None = None, *, eta=None, gamma=None):
    """NB log-pmf at count(s) y; scalar in, scalar out.

    Accepts either an NBParams or explicit eta/gamma. Vector y with scalar
    parameters returns a vector.
    """
    if params is not None:
        eta, gamma = params.eta, params.gamma
    if eta is None or gamma is None:
        raise DomainError("eta and gamma are required")
    if not (eta > 0.0) or not (gamma > 0.0):
        raise DomainError("eta and gamma must be positive")
    y_arr = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if np.any(y_arr < 0):
        raise DomainError("counts must be non-negative")
    eta_arr = np.full(y_arr.shape[0], float(eta))
    out = np.empty(y_arr.shape[0])
    nb_logpmf_out(eta_arr, float(gamma), y_arr, out)
    return float(out[0]) if np.isscalar(y) or np.asarray(y).ndim == 0 else out


def nb_loglik(y, eta, gamma: float) -> float:
    """Sum of NB log-pmf over records (vector eta)."""
    y = np.ascontiguousarray(y, dtype=np.int64)
    eta = np.ascontiguousarray(eta, dtype=np.float64)
    return float(nb_loglik_sum(eta, float(gamma), y))


def mom_dispersion(y) -> float:
    """Method-of-moments dispersion: mean^2 / (variance - mean)."""
    y = np.asarray(y, dtype=np.float64)
    if y.size < 2:
        raise UnderdispersionError("need at least two observations")
    mean = float(np.mean(y))
    var = float(np.var(y, ddof=1))
    if var <= mean:
        raise UnderdispersionError(
            f"sample variance {var:.6g} does not exceed mean {mean:.6g}; "
            "NB mixture unidentified"
        )
    return mean**2 / (var - mean)


_LL_NOISE = 1e-9


def _irls_given_gamma(X, y, beta, gamma, loglik_path, grad_tol):
    """IRLS updates for fixed gamma, step-halving on likelihood decrease.

    Monotone up to float noise (_LL_NOISE); iterates until the score norm
    drops below grad_tol / 2 or the step stops improving.
    """
    ll = nb_loglik(y, np.exp(X @ beta), gamma)
    for _ in range(_MAX_IRLS):
        eta = np.exp(X @ beta)
        if np.linalg.norm(_score(X, y, eta, gamma)) < 0.5 * grad_tol:
            break
        w = eta * gamma / (gamma + eta)
        z = X @ beta + (y - eta) / eta
        wx = X * w[:, None]
        try:
            beta_new = np.linalg.solve(X.T @ wx, wx.T @ z)
        except np.linalg.LinAlgError as exc:
            raise SingularDesignError(str(exc)) from exc
        step = beta_new - beta
        scale = 1.0
        ll_new = nb_loglik(y, np.exp(X @ (beta + step)), gamma)
        while ll_new < ll - _LL_NOISE and scale > 1e-8:
            scale *= 0.5
            ll_new = nb_loglik(y, np.exp(X @ (beta + scale * step)), gamma)
        if ll_new < ll - _LL_NOISE:
            break
        beta = beta + scale * step
        loglik_path.append(ll_new)
        ll = ll_new
    return beta, ll


def _golden_section(fun, lo, hi, tol):
    """Maximize a unimodal function on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while abs(b - a) > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return (a + b) / 2.0


def _score(X, y, eta, gamma):
    return X.T @ ((y - eta) * gamma / (gamma + eta))


def saturated_loglik(y, gamma, eps: float = 1e-8) -> float:
    """NB log-likelihood at eta = y (eta = eps for zero counts)."""
    y = np.asarray(y, dtype=np.float64)
    eta = np.maximum(y, eps)
    return nb_loglik(y.astype(np.int64), eta, gamma)


def fit_nb_glm(
    dataset: CountDataset,
    design: DesignMatrix,
    *,
    max_outer: int = 100,
    grad_tol: float = 1e-6,
    gamma_bracket: tuple[float, float] = (1e-4, 1e6),
) -> GlmFit:
    """Fit the NB GLM with log link by IRLS, profiling the dispersion.

    Raises SingularDesignError for rank-deficient designs and
    ConvergenceError (carrying the last iterate) when the coefficient score
    norm does not reach ``grad_tol``.
    """
    X = design.rows
    y = np.asarray(dataset.y, dtype=np.float64)
    n, ncol = X.shape
    if np.linalg.matrix_rank(X) < ncol:
        raise SingularDesignError("design matrix is rank deficient")

    try:
        gamma = mom_dispersion(y)
    except UnderdispersionError:
        gamma = 100.0
    gamma = min(max(gamma, gamma_bracket[0] * 10), gamma_bracket[1] / 10)

    beta = np.zeros(ncol)
    beta[0] = math.log(max(np.mean(y), 0.1))
    loglik_path: list[float] = []
    ll = -np.inf
    for outer in range(1, max_outer + 1):
        beta, ll_beta = _irls_given_gamma(X, y, beta, gamma, loglik_path, grad_tol)
        eta = np.exp(X @ beta)

        def profile(log_g):
            return nb_loglik(dataset.y, eta, math.exp(log_g))

        log_gamma = _golden_section(
            profile, math.log(gamma_bracket[0]), math.log(gamma_bracket[1]), _GOLDEN_TOL
        )
        ll_new = profile(log_gamma)
        if ll_new >= ll_beta:
            gamma = math.exp(log_gamma)
        else:
            ll_new = ll_beta
        loglik_path.append(ll_new)
        grad = _score(X, y, eta, gamma)
        if np.linalg.norm(grad) < grad_tol and abs(ll_new - ll) < 1e-10:
            ll = ll_new
            break
        ll = ll_new

    eta = np.exp(X @ beta)
    grad = _score(X, y, eta, gamma)
    converged = bool(np.linalg.norm(grad) < grad_tol)

    w = eta * gamma / (gamma + eta)
    info = X.T @ (X * w[:, None])
    cov_info = np.linalg.inv(info)
    pearson = float(np.sum((y - eta) ** 2 / (eta + eta**2 / gamma)))
    dof = max(n - ncol, 1)
    sigma2_hat = pearson / dof
    cov_beta = sigma2_hat * np.linalg.inv(X.T @ X)
    deviance = 2.0 * (saturated_loglik(y, gamma) - ll)

    fit = GlmFit(
        beta_hat=beta,
        gamma_hat=float(gamma),
        sigma2_hat=sigma2_hat,
        cov_beta=cov_beta,
        cov_info=cov_info,
        deviance=float(deviance),
        loglik=float(ll),
        converged=converged,
        n_iter=outer,
        loglik_path=tuple(loglik_path),
    )
    if not converged:
        raise ConvergenceError(
            f"score norm {np.linalg.norm(grad):.3g} above {grad_tol} after {outer} outer iterations",
            last_fit=fit,
        )
    return fit
