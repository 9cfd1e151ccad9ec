"""Ground-truth synthetic data for the estimation pipelines.

Cohort parameters are drawn from a joint with known cross-cohort
correlation rho between log C_j and the error-prone slope beta_j; the
latent covariate U is Gaussian and the observed covariate is U plus
Gaussian measurement error. Counts are NB draws whose mean uses the TRUE
covariate, so attenuation of naive fits is by construction.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import CountDataset
from .exceptions import ParameterError


@dataclass(frozen=True)
class TruthSpec:
    """Generating-parameter specification."""

    slope_mean: float = 0.5
    slope_sd: float = 0.0
    log_intercept_mean: float = 1.0
    log_intercept_sd: float = 0.0
    rho: float = 0.0
    log_gamma_mean: float = 0.0
    log_gamma_sd: float = 0.0
    u_mean: float = 0.0
    sigma2_u: float = 1.0
    sigma2_eps: float = 0.0
    extra_slopes: tuple[float, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "extra_slopes", tuple(float(b) for b in self.extra_slopes))
        if not -1.0 < self.rho < 1.0:
            raise ParameterError(f"rho must lie in (-1, 1), got {self.rho}")
        if self.sigma2_u < 0 or self.sigma2_eps < 0:
            raise ParameterError("variances must be non-negative")
        if self.slope_sd < 0 or self.log_intercept_sd < 0 or self.log_gamma_sd < 0:
            raise ParameterError("spread parameters must be non-negative")
        for name in (
            "slope_mean", "slope_sd", "log_intercept_mean", "log_intercept_sd",
            "rho", "log_gamma_mean", "log_gamma_sd", "u_mean", "sigma2_u", "sigma2_eps",
        ):
            if not np.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")


@dataclass(frozen=True)
class GroundTruth:
    """Everything the generator knew: per-cohort parameters and latent U."""

    beta: np.ndarray  # (m,) error-prone slope per cohort
    C: np.ndarray  # (m,)
    gamma: np.ndarray  # (m,)
    extra_slopes: tuple[float, ...]
    U: np.ndarray  # (n,) latent covariate
    rho: float
    sigma2_u: float
    sigma2_eps: float
    seed: int
    spec: TruthSpec


def generate(m: int, n_per: int, spec: TruthSpec, seed: int) -> tuple[CountDataset, GroundTruth]:
    """Draw a hierarchical NB dataset plus its generating truth.

    Deterministic under the seed. y ~ NB(C_j * exp(beta_j U + extra terms),
    gamma_j) via the Poisson-Gamma mixture; the stored dataset covariate is
    x = U + eps with eps ~ Normal(0, sigma2_eps).
    """
    if m < 1 or n_per < 1:
        raise ParameterError("need m >= 1 cohorts and n_per >= 1 records")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    cov = spec.rho * spec.log_intercept_sd * spec.slope_sd
    joint_cov = np.array(
        [[spec.log_intercept_sd**2, cov], [cov, spec.slope_sd**2]]
    )
    # svd handles the degenerate (zero-spread) covariances cholesky rejects
    draws = rng.multivariate_normal(
        [spec.log_intercept_mean, spec.slope_mean], joint_cov, size=m, method="svd"
    )
    C_j = np.exp(draws[:, 0])
    beta_j = draws[:, 1]
    gamma_j = np.exp(rng.normal(spec.log_gamma_mean, spec.log_gamma_sd, size=m))

    n = m * n_per
    cohorts = np.repeat(np.arange(1, m + 1), n_per)
    U = rng.normal(spec.u_mean, np.sqrt(spec.sigma2_u), size=n)
    x_obs = U + rng.normal(0.0, np.sqrt(spec.sigma2_eps), size=n)

    n_extra = len(spec.extra_slopes)
    extras = rng.standard_normal((n, n_extra)) if n_extra else np.empty((n, 0))

    lin = beta_j[cohorts - 1] * U
    if n_extra:
        lin = lin + extras @ np.asarray(spec.extra_slopes)
    eta = C_j[cohorts - 1] * np.exp(lin)
    rate = rng.gamma(shape=gamma_j[cohorts - 1], scale=eta / gamma_j[cohorts - 1])
    y = rng.poisson(rate)

    names = ("x1",) + tuple(f"z{i + 1}" for i in range(n_extra))
    dataset = CountDataset.from_arrays(
        y=y,
        x=np.column_stack([x_obs, extras]) if n_extra else x_obs[:, None],
        cohorts=cohorts,
        error_prone_index=0,
        covariate_names=names,
    )
    truth = GroundTruth(
        beta=beta_j,
        C=C_j,
        gamma=gamma_j,
        extra_slopes=spec.extra_slopes,
        U=U,
        rho=spec.rho,
        sigma2_u=spec.sigma2_u,
        sigma2_eps=spec.sigma2_eps,
        seed=seed,
        spec=spec,
    )
    return dataset, truth


def truth_to_json(truth: GroundTruth, path) -> None:
    """Ground-truth sidecar next to the dataset CSV."""
    payload = {
        "beta": truth.beta.tolist(),
        "C": truth.C.tolist(),
        "gamma": truth.gamma.tolist(),
        "extra_slopes": list(truth.extra_slopes),
        "U": truth.U.tolist(),
        "rho": truth.rho,
        "sigma2_u": truth.sigma2_u,
        "sigma2_eps": truth.sigma2_eps,
        "seed": truth.seed,
        "spec": asdict(truth.spec),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)


def truth_from_json(path) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    spec_kwargs = dict(payload["spec"])
    spec_kwargs["extra_slopes"] = tuple(spec_kwargs.get("extra_slopes", ()))
    return GroundTruth(
        beta=np.asarray(payload["beta"]),
        C=np.asarray(payload["C"]),
        gamma=np.asarray(payload["gamma"]),
        extra_slopes=tuple(payload["extra_slopes"]),
        U=np.asarray(payload["U"]),
        rho=payload["rho"],
        sigma2_u=payload["sigma2_u"],
        sigma2_eps=payload["sigma2_eps"],
        seed=payload["seed"],
        spec=TruthSpec(**spec_kwargs),
    )
