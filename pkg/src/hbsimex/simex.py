"""Simulation-extrapolation over a pluggable estimator.

Any estimator mapping a CountDataset to a parameter vector can be wrapped:
for each contamination level lambda on the grid, B contaminated copies of
the dataset are scored, the estimates are averaged, a polynomial is fitted
to the (lambda, mean) points per parameter, and the fit is evaluated at
lambda = -1. Grid cells carry independently derived seeds so serial and
parallel execution produce identical traces.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import CountDataset, with_error_prone
from .errors import contaminate
from .exceptions import ConfigError, SimexEstimatorError, SingularFitError

_DEGREES = {"linear": 1, "quadratic": 2}
DEFAULT_LAMBDA_GRID = (0.0, 0.5, 1.0, 1.5, 2.0)


@dataclass(frozen=True)
class SimexConfig:
    """Contamination grid and simulation settings."""

    sigma2_eps: float
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    n_sims: int = 100
    extrapolant: str = "quadratic"
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        grid = tuple(float(v) for v in self.lambda_grid)
        object.__setattr__(self, "lambda_grid", grid)
        if self.extrapolant not in _DEGREES:
            raise ConfigError(f"unknown extrapolant {self.extrapolant!r}")
        if not grid or grid[0] != 0.0:
            raise ConfigError("lambda grid must start at 0")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("lambda grid must be strictly increasing")
        if any(v < 0 for v in grid):
            raise ConfigError("lambda grid must be non-negative")
        if len(grid) < self.degree + 1:
            raise ConfigError(
                f"{self.extrapolant} extrapolation needs at least {self.degree + 1} grid points"
            )
        if self.n_sims < 1:
            raise ConfigError("n_sims must be >= 1")
        if self.sigma2_eps < 0:
            raise ConfigError("sigma2_eps must be non-negative")

    @property
    def degree(self) -> int:
        return _DEGREES[self.extrapolant]


@dataclass(frozen=True)
class ExtrapolationResult:
    value: float
    coeffs: np.ndarray
    residual: float


@dataclass(frozen=True)
class SimexTrace:
    """Averaged estimates per contamination level plus the lambda=-1 value."""

    lambdas: np.ndarray
    means: np.ndarray
    sds: np.ndarray
    extrapolated: np.ndarray
    fit_coeffs: np.ndarray
    fit_residuals: np.ndarray
    jackknife_se: np.ndarray
    param_names: tuple[str, ...] = field(default_factory=tuple)

    def point(self, name: str) -> float:
        return float(self.extrapolated[self.param_names.index(name)])


def extrapolate(points, degree: int) -> ExtrapolationResult:
    """Least-squares polynomial through (lambda, value) pairs, evaluated at -1.

    Exact interpolation when the number of distinct lambdas equals
    degree + 1; duplicate lambdas that reduce the rank below degree + 1
    raise SingularFitError.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ConfigError("points must be (lambda, value) pairs")
    if degree not in (1, 2):
        raise ConfigError(f"degree must be 1 or 2, got {degree}")
    lam, val = pts[:, 0], pts[:, 1]
    if np.unique(lam).size < degree + 1:
        raise SingularFitError(
            f"need {degree + 1} distinct lambda values, got {np.unique(lam).size}"
        )
    V = np.vander(lam, degree + 1, increasing=True)
    coeffs, _, _, _ = np.linalg.lstsq(V, val, rcond=None)
    fitted = V @ coeffs
    residual = float(np.sum((val - fitted) ** 2))
    powers = np.power(-1.0, np.arange(degree + 1))
    return ExtrapolationResult(value=float(coeffs @ powers), coeffs=coeffs, residual=residual)


def _cell_seed(seed: int, t: int, b: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(t, b))


def _run_cell(estimator, dataset, config: SimexConfig, t: int, b: int) -> np.ndarray:
    lam = config.lambda_grid[t]
    rng = np.random.Generator(np.random.PCG64(_cell_seed(config.seed, t, b)))
    x = dataset.x[:, dataset.error_prone_index]
    w = contaminate(x, lam, config.sigma2_eps, rng=rng)
    try:
        est = np.asarray(estimator(with_error_prone(dataset, w)), dtype=np.float64)
    except Exception as exc:
        raise SimexEstimatorError(str(exc), lam=lam, sim_index=b) from exc
    if est.ndim != 1:
        raise SimexEstimatorError("estimator must return a 1-D vector", lam=lam, sim_index=b)
    return est


def run_simex(
    estimator,
    dataset: CountDataset,
    config: SimexConfig,
    param_names: tuple[str, ...] | None = None,
) -> SimexTrace:
    """Average ``estimator`` over contaminated replicates and extrapolate."""
    T, B = len(config.lambda_grid), config.n_sims
    cells = [(t, b) for t in range(T) for b in range(B)]
    results: dict[tuple[int, int], np.ndarray] = {}
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            futures = {
                (t, b): pool.submit(_run_cell, estimator, dataset, config, t, b)
                for t, b in cells
            }
        for key, fut in futures.items():
            results[key] = fut.result()
    else:
        for t, b in cells:
            results[(t, b)] = _run_cell(estimator, dataset, config, t, b)

    K = results[(0, 0)].shape[0]
    estimates = np.empty((T, B, K))
    for (t, b), est in results.items():
        if est.shape[0] != K:
            raise SimexEstimatorError(
                "estimator returned inconsistent lengths", lam=config.lambda_grid[t], sim_index=b
            )
        estimates[t, b] = est

    means = estimates.mean(axis=1)
    sds = estimates.std(axis=1, ddof=1) if B > 1 else np.zeros((T, K))
    lam = np.asarray(config.lambda_grid)

    extrapolated = np.empty(K)
    coeffs = np.empty((K, config.degree + 1))
    residuals = np.empty(K)
    for k in range(K):
        res = extrapolate(np.column_stack([lam, means[:, k]]), config.degree)
        extrapolated[k] = res.value
        coeffs[k] = res.coeffs
        residuals[k] = res.residual

    if B > 1:
        jack = np.empty((B, K))
        for b in range(B):
            keep = [bb for bb in range(B) if bb != b]
            loo_means = estimates[:, keep, :].mean(axis=1)
            for k in range(K):
                jack[b, k] = extrapolate(
                    np.column_stack([lam, loo_means[:, k]]), config.degree
                ).value
        jackknife_se = np.sqrt((B - 1) / B * np.sum((jack - jack.mean(axis=0)) ** 2, axis=0))
    else:
        jackknife_se = np.full(K, np.nan)

    if param_names is None:
        param_names = tuple(f"theta{k}" for k in range(K))
    return SimexTrace(
        lambdas=lam,
        means=means,
        sds=sds,
        extrapolated=extrapolated,
        fit_coeffs=coeffs,
        fit_residuals=residuals,
        jackknife_se=jackknife_se,
        param_names=tuple(param_names),
    )


def trace_to_csv(trace: SimexTrace, path) -> None:
    """Plot-ready rows: lambda, parameter, mean, sd."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "parameter", "mean", "sd"])
        for t, lam in enumerate(trace.lambdas):
            for k, name in enumerate(trace.param_names):
                writer.writerow([repr(float(lam)), name, repr(float(trace.means[t, k])),
                                 repr(float(trace.sds[t, k]))])


def trace_to_json(trace: SimexTrace) -> dict:
    return {
        "lambdas": [float(v) for v in trace.lambdas],
        "parameters": list(trace.param_names),
        "extrapolated": {
            name: float(trace.extrapolated[k]) for k, name in enumerate(trace.param_names)
        },
        "jackknife_se": {
            name: (None if np.isnan(trace.jackknife_se[k]) else float(trace.jackknife_se[k]))
            for k, name in enumerate(trace.param_names)
        },
        "fit_coeffs": {
            name: [float(c) for c in trace.fit_coeffs[k]]
            for k, name in enumerate(trace.param_names)
        },
        "fit_residuals": {
            name: float(trace.fit_residuals[k]) for k, name in enumerate(trace.param_names)
        },
    }
