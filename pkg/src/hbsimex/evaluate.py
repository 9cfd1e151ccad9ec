"""Model-selection metrics and chain diagnostics.

WAIC follows -2 * (LPPD - penalty) with the penalty equal to the per-point
posterior variance (unbiased, divisor J-1) of the log pointwise density;
per-point penalties are exposed for observation-level overfitting audits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ._kernels import nb_logpmf_out
from .data import CountDataset, DesignMatrix
from .exceptions import DomainError, PenaltyUndefinedError, UndefinedStatisticError
from .glm import saturated_loglik
from .sampler import Chain

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricReport:
    lppd: float
    waic: float
    penalty: float
    per_point_penalty: np.ndarray
    scaled_deviance: float | None = None
    msle: float | None = None
    dw: dict[str, float] | None = None

    def to_dict(self) -> dict:
        return {
            "lppd": self.lppd,
            "waic": self.waic,
            "penalty": self.penalty,
            "scaled_deviance": self.scaled_deviance,
            "msle": self.msle,
            "dw": self.dw,
        }


def pointwise_loglik_hb(
    beta_draws: np.ndarray,
    C_draws: np.ndarray,
    gamma_draws: np.ndarray,
    dataset: CountDataset,
    design: DesignMatrix,
) -> np.ndarray:
    """Per-draw per-record NB log density, (J, N), for per-cohort draws."""
    J = beta_draws.shape[0]
    N = dataset.n
    out = np.empty((J, N))
    slopes = design.slopes
    y = np.ascontiguousarray(dataset.y, dtype=np.int64)
    buf = np.empty(N)
    for j_c in range(1, dataset.m + 1):
        rows = np.flatnonzero(dataset.cohorts == j_c)
        W = np.ascontiguousarray(slopes[rows])
        y_c = np.ascontiguousarray(y[rows])
        buf_c = np.empty(rows.shape[0])
        for h in range(J):
            eta = C_draws[h, j_c - 1] * np.exp(W @ beta_draws[h, j_c - 1])
            nb_logpmf_out(eta, float(gamma_draws[h, j_c - 1]), y_c, buf_c)
            out[h, rows] = buf_c
    del buf
    return out


def pointwise_loglik_glm(
    beta_draws: np.ndarray,
    gamma: float,
    dataset: CountDataset,
    design: DesignMatrix,
) -> np.ndarray:
    """Per-draw per-record NB log density for pooled-coefficient draws."""
    X = design.rows
    y = np.ascontiguousarray(dataset.y, dtype=np.int64)
    J = beta_draws.shape[0]
    out = np.empty((J, dataset.n))
    buf = np.empty(dataset.n)
    for h in range(J):
        eta = np.exp(X @ beta_draws[h])
        nb_logpmf_out(np.ascontiguousarray(eta), float(gamma), y, buf)
        out[h] = buf
    return out


def lppd_from_loglik(loglik: np.ndarray) -> float:
    """sum_i log( mean_j exp(loglik[j, i]) ), via log-sum-exp."""
    J = loglik.shape[0]
    if J < 1:
        raise PenaltyUndefinedError("need at least one draw")
    per_point = logsumexp(loglik, axis=0) - np.log(J)
    if np.any(np.isneginf(per_point)):
        idx = np.flatnonzero(np.isneginf(per_point))
        log.warning("lppd is -inf: zero likelihood at points %s", idx.tolist())
    return float(np.sum(per_point))


def waic_from_loglik(loglik: np.ndarray) -> MetricReport:
    """WAIC report from a (J, N) log-density matrix (needs J >= 2)."""
    if loglik.shape[0] < 2:
        raise PenaltyUndefinedError("WAIC penalty needs at least two draws")
    lppd = lppd_from_loglik(loglik)
    per_point = np.var(loglik, axis=0, ddof=1)
    penalty = float(np.sum(per_point))
    return MetricReport(
        lppd=lppd,
        waic=-2.0 * (lppd - penalty),
        penalty=penalty,
        per_point_penalty=per_point,
    )


def _chain_loglik(chain: Chain, dataset: CountDataset, design: DesignMatrix, thin: int = 1):
    return pointwise_loglik_hb(
        chain.beta_draws[::thin], chain.C_draws[::thin], chain.gamma_draws[::thin],
        dataset, design,
    )


def lppd(chain: Chain, dataset: CountDataset, design: DesignMatrix, thin: int = 1) -> float:
    return lppd_from_loglik(_chain_loglik(chain, dataset, design, thin))


def waic(chain: Chain, dataset: CountDataset, design: DesignMatrix, thin: int = 1) -> MetricReport:
    return waic_from_loglik(_chain_loglik(chain, dataset, design, thin))


def durbin_watson(trace) -> float:
    """DW statistic of a mean-centered trace; near 2 for uncorrelated draws."""
    trace = np.asarray(trace, dtype=np.float64)
    if trace.size < 3:
        raise UndefinedStatisticError("Durbin-Watson needs at least 3 points")
    e = trace - np.mean(trace)
    denom = float(np.sum(e**2))
    if denom == 0.0:
        raise UndefinedStatisticError("zero-variance trace")
    return float(np.sum(np.diff(e) ** 2) / denom)


def nb_unit_deviance_sum(eta, y, gamma) -> float:
    """2 * (saturated - model) NB log-likelihood, scalar or per-record gamma."""
    eta = np.asarray(eta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(eta <= 0) or not np.all(np.isfinite(eta)):
        raise DomainError("predictions must be positive and finite")
    gamma_arr = np.broadcast_to(np.asarray(gamma, dtype=np.float64), y.shape)
    total = 0.0
    y_int = np.ascontiguousarray(y, dtype=np.int64)
    for g in np.unique(gamma_arr):
        sel = gamma_arr == g
        yv = y[sel]
        buf = np.empty(int(sel.sum()))
        nb_logpmf_out(np.ascontiguousarray(eta[sel]), float(g), np.ascontiguousarray(y_int[sel]), buf)
        total += 2.0 * (saturated_loglik(yv, float(g)) - float(np.sum(buf)))
    return total


def scaled_deviance(eta, y, gamma, dispersion: float = 1.0) -> float:
    """NB deviance divided by a dispersion scale (1 = unscaled)."""
    if dispersion <= 0:
        raise DomainError("dispersion must be positive")
    return nb_unit_deviance_sum(eta, y, gamma) / dispersion


def glm_scaled_deviance(fit, dataset: CountDataset, design: DesignMatrix) -> float:
    """Deviance of a GLM fit scaled by its Pearson dispersion estimate."""
    eta = np.exp(design.rows @ fit.beta_hat)
    return scaled_deviance(eta, dataset.y, fit.gamma_hat, dispersion=fit.sigma2_hat)


def msle(predicted, observed) -> float:
    """Mean squared logarithmic error on the log1p scale."""
    predicted = np.asarray(predicted, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if np.any(predicted <= 0) or not np.all(np.isfinite(predicted)):
        raise DomainError("predictions must be positive and finite")
    return float(np.mean((np.log1p(predicted) - np.log1p(observed)) ** 2))


@dataclass(frozen=True)
class CorrelationSummary:
    """Posterior distribution of the cross-cohort (C, slope) correlation."""

    corr_draws: np.ndarray
    mean_pairs: np.ndarray  # (m, 2) posterior-mean (C_j, beta_j)
    degenerate: bool
    warning: str | None = None


def intercept_slope_correlation(chain: Chain, slope_index: int = 0) -> CorrelationSummary:
    """Per-draw correlation across cohorts of (C_j, beta_j[slope_index])."""
    m = chain.m
    if m < 2:
        raise UndefinedStatisticError("correlation needs at least two cohorts")
    C = chain.C_draws
    B = chain.beta_draws[:, :, slope_index]
    mean_pairs = np.column_stack([C.mean(axis=0), B.mean(axis=0)])
    Cc = C - C.mean(axis=1, keepdims=True)
    Bc = B - B.mean(axis=1, keepdims=True)
    num = np.sum(Cc * Bc, axis=1)
    den = np.sqrt(np.sum(Cc**2, axis=1) * np.sum(Bc**2, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = num / den
    degenerate = bool(np.any(den == 0.0))
    warning = None
    if degenerate:
        warning = "zero cross-cohort variance in some draws; correlation undefined there"
    elif m == 2:
        degenerate = True
        warning = "two cohorts: per-draw correlation is degenerate (+/-1)"
    return CorrelationSummary(
        corr_draws=corr, mean_pairs=mean_pairs, degenerate=degenerate, warning=warning
    )


def chain_summary(chain: Chain, dw_thin: int = 10) -> dict:
    """Posterior summaries, acceptance rates and thinned DW per trace."""
    q = (0.025, 0.5, 0.975)
    cohorts = {}
    rates = chain.acceptance_rates()
    for j in range(chain.m):
        params = {}
        traces = {name: chain.beta_draws[:, j, i] for i, name in enumerate(chain.param_names)}
        traces["C"] = chain.C_draws[:, j]
        traces["gamma"] = chain.gamma_draws[:, j]
        for name, tr in traces.items():
            entry = {
                "mean": float(np.mean(tr)) if tr.size else None,
                "sd": float(np.std(tr, ddof=1)) if tr.size > 1 else None,
                "quantiles": {str(p): float(np.quantile(tr, p)) for p in q} if tr.size else None,
            }
            thinned = tr[::dw_thin]
            if thinned.size >= 3 and np.std(thinned) > 0:
                entry["dw"] = durbin_watson(thinned)
            params[name] = entry
        cohorts[chain.cohort_labels[j]] = {
            "parameters": params,
            "acceptance": {
                block: float(rates[j, i]) for i, block in enumerate(chain.block_names)
            },
        }
    return {
        "iterations_kept": chain.H,
        "burn_in": chain.burn_in,
        "lambda": chain.lambda_used,
        "seed": chain.seed,
        "warnings": list(chain.warnings),
        "cohorts": cohorts,
    }
