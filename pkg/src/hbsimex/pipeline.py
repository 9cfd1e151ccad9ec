"""Runnable estimation pipelines: naive GLM, GLM+SIMEX, HB and HB+SIMEX.

The HB+SIMEX estimate wraps the whole per-cohort sampler in the SIMEX
engine: chains run on contaminated copies of the data across the lambda
grid, per-cohort posterior means (log scale for C and gamma) are averaged
per level and extrapolated to lambda = -1. Metric ensembles: GLM-family
models use Laplace pseudo-posterior draws N(beta_hat, cov_info); HB+SIMEX
shifts the lambda=0 chain so per-cohort means match the extrapolated
values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import evaluate
from .data import CountDataset, DesignMatrix, build_design, subset, with_error_prone
from .exceptions import ConfigError, ParameterError
from .glm import GlmFit, fit_nb_glm, mom_dispersion
from .sampler import Chain, FixedHypers, default_hypers, run_chain
from .simex import SimexConfig, SimexTrace, run_simex

MODELS = ("glm", "glm-simex", "hb", "hb-simex")


@dataclass(frozen=True)
class SplitResult:
    train: CountDataset
    test: CountDataset
    train_indices: np.ndarray
    test_indices: np.ndarray
    warnings: tuple[str, ...] = field(default_factory=tuple)


def split_dataset(
    dataset: CountDataset, train_per: int, test_per: int, seed: int
) -> SplitResult:
    """Per-cohort seeded train/test split.

    Cohorts with enough records are split without replacement; smaller
    cohorts are bootstrapped with replacement from disjoint halves, and a
    single-record cohort reuses its record in both splits (warned).
    """
    if train_per < 1 or test_per < 1:
        raise ParameterError("split sizes must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    warnings: list[str] = []
    for j in range(1, dataset.m + 1):
        rows = np.flatnonzero(dataset.cohorts == j)
        perm = rng.permutation(rows)
        if rows.size >= train_per + test_per:
            train_idx.append(perm[:train_per])
            test_idx.append(perm[train_per : train_per + test_per])
        elif rows.size >= 2:
            half = rows.size // 2
            train_idx.append(perm[rng.integers(0, half, size=train_per)])
            test_idx.append(perm[half + rng.integers(0, rows.size - half, size=test_per)])
            warnings.append(
                f"cohort {dataset.cohort_labels[j - 1]}: {rows.size} records; "
                "bootstrapped the split with replacement"
            )
        else:
            train_idx.append(np.repeat(perm, train_per))
            test_idx.append(np.repeat(perm, test_per))
            warnings.append(
                f"cohort {dataset.cohort_labels[j - 1]}: single record reused in both splits"
            )
    return SplitResult(
        train=subset(dataset, np.concatenate(train_idx)),
        test=subset(dataset, np.concatenate(test_idx)),
        train_indices=np.concatenate(train_idx),
        test_indices=np.concatenate(test_idx),
        warnings=tuple(warnings),
    )


@dataclass(frozen=True)
class HyperOptions:
    """Hyperparameter overrides threaded into default_hypers."""

    alpha: float = 0.01
    s: float = 0.001
    t: float = 1.0
    u: float = 1.0
    v: float = 1.0
    sigma_e_scale: float | None = None
    prior_mean_C: float | None = None
    prior_mean_gamma: float | None = None


@dataclass(frozen=True)
class SamplerOptions:
    iterations: int = 2000
    burn_in: int = 1000
    chains: int = 1
    seed: int = 0
    greedy_accept: bool = False
    gamma_anchor: str = "gamma"
    target_accept: float = 0.3


@dataclass(frozen=True)
class ModelRun:
    """Everything a fitted pipeline produced."""

    model: str
    glm_fit: GlmFit | None
    params: dict
    simex_trace: SimexTrace | None
    chain: Chain | None
    metrics_train: evaluate.MetricReport
    metrics_test: evaluate.MetricReport | None
    warnings: tuple[str, ...] = field(default_factory=tuple)


def glm_param_names(design: DesignMatrix) -> tuple[str, ...]:
    return design.column_names + ("log_gamma",)


def glm_estimator(dataset: CountDataset) -> np.ndarray:
    """Plug-in estimator for SIMEX: full coefficient vector plus log gamma."""
    design = build_design(dataset)
    fit = fit_nb_glm(dataset, design)
    return np.concatenate([fit.beta_hat, [math.log(fit.gamma_hat)]])


def laplace_draws(center: np.ndarray, cov: np.ndarray, n_draws: int, seed: int) -> np.ndarray:
    """Pseudo-posterior coefficient draws from the asymptotic normal."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(9,))))
    L = np.linalg.cholesky(cov + 1e-12 * np.eye(cov.shape[0]))
    return center + rng.standard_normal((n_draws, center.shape[0])) @ L.T


def glm_metrics(
    center: np.ndarray,
    gamma: float,
    cov: np.ndarray,
    dataset: CountDataset,
    design: DesignMatrix,
    *,
    n_draws: int,
    seed: int,
) -> evaluate.MetricReport:
    draws = laplace_draws(center, cov, n_draws, seed)
    report = evaluate.waic_from_loglik(
        evaluate.pointwise_loglik_glm(draws, gamma, dataset, design)
    )
    eta = np.exp(design.rows @ center)
    pearson = float(np.mean((dataset.y - eta) ** 2 / (eta + eta**2 / gamma)))
    return evaluate.MetricReport(
        lppd=report.lppd,
        waic=report.waic,
        penalty=report.penalty,
        per_point_penalty=report.per_point_penalty,
        scaled_deviance=evaluate.scaled_deviance(
            eta, dataset.y, gamma, dispersion=max(pearson, 1e-12)
        ),
        msle=evaluate.msle(eta, dataset.y),
    )


def hb_predict_eta(beta_draws, C_draws, dataset: CountDataset, design: DesignMatrix) -> np.ndarray:
    """Posterior-mean eta per record."""
    slopes = design.slopes
    total = np.zeros(dataset.n)
    J = beta_draws.shape[0]
    for j_c in range(1, dataset.m + 1):
        rows = np.flatnonzero(dataset.cohorts == j_c)
        W = slopes[rows]
        acc = np.zeros(rows.shape[0])
        for h in range(J):
            acc += C_draws[h, j_c - 1] * np.exp(W @ beta_draws[h, j_c - 1])
        total[rows] = acc / J
    return total


def hb_metrics(
    beta_draws,
    C_draws,
    gamma_draws,
    dataset: CountDataset,
    design: DesignMatrix,
    *,
    max_draws: int = 400,
) -> evaluate.MetricReport:
    thin = max(1, beta_draws.shape[0] // max_draws)
    bd, cd, gd = beta_draws[::thin], C_draws[::thin], gamma_draws[::thin]
    report = evaluate.waic_from_loglik(
        evaluate.pointwise_loglik_hb(bd, cd, gd, dataset, design)
    )
    eta = hb_predict_eta(bd, cd, dataset, design)
    gamma_per_record = gd.mean(axis=0)[dataset.cohorts - 1]
    pearson = float(
        np.mean((dataset.y - eta) ** 2 / (eta + eta**2 / gamma_per_record))
    )
    return evaluate.MetricReport(
        lppd=report.lppd,
        waic=report.waic,
        penalty=report.penalty,
        per_point_penalty=report.per_point_penalty,
        scaled_deviance=evaluate.scaled_deviance(
            eta, dataset.y, gamma_per_record, dispersion=max(pearson, 1e-12)
        ),
        msle=evaluate.msle(eta, dataset.y),
    )


def _corrected_center(trace: SimexTrace, n_coef: int) -> tuple[np.ndarray, float]:
    est = trace.extrapolated
    return est[:n_coef], math.exp(est[n_coef])


def run_glm(
    train: CountDataset,
    test: CountDataset | None,
    *,
    waic_draws: int = 400,
    seed: int = 0,
) -> ModelRun:
    design = build_design(train)
    fit = fit_nb_glm(train, design)
    metrics_train = glm_metrics(
        fit.beta_hat, fit.gamma_hat, fit.cov_info, train, design,
        n_draws=waic_draws, seed=seed,
    )
    metrics_test = None
    if test is not None:
        metrics_test = glm_metrics(
            fit.beta_hat, fit.gamma_hat, fit.cov_info, test, build_design(test),
            n_draws=waic_draws, seed=seed,
        )
    params = {
        "coefficients": dict(zip(glm_param_names(design)[:-1], fit.beta_hat.tolist())),
        "gamma": fit.gamma_hat,
        "sigma2_hat": fit.sigma2_hat,
        "se": dict(zip(glm_param_names(design)[:-1], fit.se_beta.tolist())),
    }
    return ModelRun(
        model="glm",
        glm_fit=fit,
        params=params,
        simex_trace=None,
        chain=None,
        metrics_train=metrics_train,
        metrics_test=metrics_test,
    )


def run_glm_simex(
    train: CountDataset,
    test: CountDataset | None,
    simex_config: SimexConfig,
    *,
    waic_draws: int = 400,
    seed: int = 0,
) -> ModelRun:
    design = build_design(train)
    naive = fit_nb_glm(train, design)
    trace = run_simex(glm_estimator, train, simex_config, param_names=glm_param_names(design))
    center, gamma_c = _corrected_center(trace, design.n_columns)
    metrics_train = glm_metrics(
        center, gamma_c, naive.cov_info, train, design, n_draws=waic_draws, seed=seed
    )
    metrics_test = None
    if test is not None:
        metrics_test = glm_metrics(
            center, gamma_c, naive.cov_info, test, build_design(test),
            n_draws=waic_draws, seed=seed,
        )
    params = {
        "coefficients": dict(zip(glm_param_names(design)[:-1], center.tolist())),
        "gamma": gamma_c,
        "naive_coefficients": dict(
            zip(glm_param_names(design)[:-1], naive.beta_hat.tolist())
        ),
        "naive_gamma": naive.gamma_hat,
        "jackknife_se": dict(zip(trace.param_names, trace.jackknife_se.tolist())),
    }
    return ModelRun(
        model="glm-simex",
        glm_fit=naive,
        params=params,
        simex_trace=trace,
        chain=None,
        metrics_train=metrics_train,
        metrics_test=metrics_test,
    )


def build_anchored_hypers(
    train: CountDataset,
    design: DesignMatrix,
    hyper_options: HyperOptions,
    *,
    simex_config: SimexConfig | None = None,
) -> tuple[FixedHypers, GlmFit, SimexTrace | None]:
    """GLM (optionally SIMEX-corrected) anchors for the hierarchy."""
    naive = fit_nb_glm(train, design)
    trace = None
    beta_anchor = None
    prior_mean_C = hyper_options.prior_mean_C
    prior_mean_gamma = hyper_options.prior_mean_gamma
    if simex_config is not None:
        trace = run_simex(glm_estimator, train, simex_config, param_names=glm_param_names(design))
        center, gamma_c = _corrected_center(trace, design.n_columns)
        beta_anchor = center[1:]
        if prior_mean_C is None:
            prior_mean_C = math.exp(center[0])
        if prior_mean_gamma is None:
            prior_mean_gamma = gamma_c
    if prior_mean_gamma is None:
        try:
            prior_mean_gamma = mom_dispersion(train.y)
        except Exception:
            prior_mean_gamma = naive.gamma_hat
    fixed = default_hypers(
        naive,
        design,
        train.n,
        alpha=hyper_options.alpha,
        s=hyper_options.s,
        t=hyper_options.t,
        u=hyper_options.u,
        v=hyper_options.v,
        sigma_e_scale=hyper_options.sigma_e_scale,
        prior_mean_C=prior_mean_C,
        prior_mean_gamma=prior_mean_gamma,
        beta_anchor=beta_anchor,
    )
    return fixed, naive, trace


def run_hb(
    train: CountDataset,
    test: CountDataset | None,
    sampler_options: SamplerOptions,
    hyper_options: HyperOptions = HyperOptions(),
    *,
    waic_draws: int = 400,
) -> ModelRun:
    """Plain hierarchical chain at lambda = 0 with GLM anchors."""
    design = build_design(train)
    fixed, naive, _ = build_anchored_hypers(train, design, hyper_options)
    chain = run_chain(
        train,
        design,
        fixed,
        H=sampler_options.iterations,
        burn_in=sampler_options.burn_in,
        seed=sampler_options.seed,
        greedy_accept=sampler_options.greedy_accept,
        gamma_anchor=sampler_options.gamma_anchor,
        target_accept=sampler_options.target_accept,
    )
    metrics_train = hb_metrics(
        chain.beta_draws, chain.C_draws, chain.gamma_draws, train, design,
        max_draws=waic_draws,
    )
    metrics_test = None
    if test is not None:
        metrics_test = hb_metrics(
            chain.beta_draws, chain.C_draws, chain.gamma_draws, test, build_design(test),
            max_draws=waic_draws,
        )
    params = _per_cohort_params(chain)
    return ModelRun(
        model="hb",
        glm_fit=naive,
        params=params,
        simex_trace=None,
        chain=chain,
        metrics_train=metrics_train,
        metrics_test=metrics_test,
        warnings=chain.warnings,
    )


def _per_cohort_params(chain: Chain) -> dict:
    out = {}
    for j, label in enumerate(chain.cohort_labels):
        entry = {
            name: float(chain.beta_draws[:, j, i].mean())
            for i, name in enumerate(chain.param_names)
        }
        entry["C"] = float(chain.C_draws[:, j].mean())
        entry["gamma"] = float(chain.gamma_draws[:, j].mean())
        out[label] = entry
    return out


def hb_simex_estimator_factory(
    fixed: FixedHypers,
    sampler_options: SamplerOptions,
):
    """Posterior-mean estimator for SIMEX wrapping the whole sampler.

    Returns per-cohort [beta..., log C, log gamma] concatenated; the chain
    seed is fixed so the estimator is deterministic given its input data
    (contamination variability comes from the SIMEX cells).
    """

    def estimator(dataset: CountDataset) -> np.ndarray:
        design = build_design(dataset)
        chain = run_chain(
            dataset,
            design,
            fixed,
            H=sampler_options.iterations,
            burn_in=sampler_options.burn_in,
            seed=sampler_options.seed,
            greedy_accept=sampler_options.greedy_accept,
            gamma_anchor=sampler_options.gamma_anchor,
            target_accept=sampler_options.target_accept,
            store_hypers=False,
        )
        blocks = []
        for j in range(chain.m):
            blocks.append(chain.beta_draws[:, j].mean(axis=0))
            blocks.append(
                [
                    np.log(chain.C_draws[:, j]).mean(),
                    np.log(chain.gamma_draws[:, j]).mean(),
                ]
            )
        return np.concatenate(blocks)

    return estimator


def hb_simex_param_names(design: DesignMatrix, cohort_labels) -> tuple[str, ...]:
    names = []
    for label in cohort_labels:
        names.extend(f"{label}:{p}" for p in design.slope_names)
        names.extend([f"{label}:log_C", f"{label}:log_gamma"])
    return tuple(names)


def run_hb_simex(
    train: CountDataset,
    test: CountDataset | None,
    simex_config: SimexConfig,
    sampler_options: SamplerOptions,
    hyper_options: HyperOptions = HyperOptions(),
    *,
    waic_draws: int = 400,
) -> ModelRun:
    """Hierarchical chains across the contamination grid, extrapolated."""
    design = build_design(train)
    fixed, naive, anchor_trace = build_anchored_hypers(
        train, design, hyper_options, simex_config=simex_config
    )
    estimator = hb_simex_estimator_factory(fixed, sampler_options)
    trace = run_simex(
        estimator,
        train,
        simex_config,
        param_names=hb_simex_param_names(design, train.cohort_labels),
    )

    base_chain = run_chain(
        train,
        design,
        fixed,
        H=sampler_options.iterations,
        burn_in=sampler_options.burn_in,
        seed=sampler_options.seed,
        greedy_accept=sampler_options.greedy_accept,
        gamma_anchor=sampler_options.gamma_anchor,
        target_accept=sampler_options.target_accept,
    )

    m, P = train.m, fixed.n_slopes
    per = P + 2
    corrected = trace.extrapolated.reshape(m, per)
    beta_star = corrected[:, :P]
    logC_star = corrected[:, P]
    loggamma_star = corrected[:, P + 1]

    beta_shift = beta_star - base_chain.beta_draws.mean(axis=0)
    beta_draws = base_chain.beta_draws + beta_shift
    C_draws = base_chain.C_draws * np.exp(
        logC_star - np.log(base_chain.C_draws).mean(axis=0)
    )
    gamma_draws = base_chain.gamma_draws * np.exp(
        loggamma_star - np.log(base_chain.gamma_draws).mean(axis=0)
    )

    metrics_train = hb_metrics(
        beta_draws, C_draws, gamma_draws, train, design, max_draws=waic_draws
    )
    metrics_test = None
    if test is not None:
        metrics_test = hb_metrics(
            beta_draws, C_draws, gamma_draws, test, build_design(test),
            max_draws=waic_draws,
        )

    params = {}
    for j, label in enumerate(train.cohort_labels):
        entry = {name: float(beta_star[j, i]) for i, name in enumerate(design.slope_names)}
        entry["C"] = float(np.exp(logC_star[j]))
        entry["gamma"] = float(np.exp(loggamma_star[j]))
        params[label] = entry

    return ModelRun(
        model="hb-simex",
        glm_fit=naive,
        params=params,
        simex_trace=trace,
        chain=base_chain,
        metrics_train=metrics_train,
        metrics_test=metrics_test,
        warnings=base_chain.warnings,
    )


def run_model(
    model: str,
    train: CountDataset,
    test: CountDataset | None,
    *,
    simex_config: SimexConfig | None = None,
    sampler_options: SamplerOptions | None = None,
    hyper_options: HyperOptions = HyperOptions(),
    waic_draws: int = 400,
    seed: int = 0,
) -> ModelRun:
    if model not in MODELS:
        raise ConfigError(f"unknown model {model!r}; choose one of {MODELS}")
    if model == "glm":
        return run_glm(train, test, waic_draws=waic_draws, seed=seed)
    if model == "glm-simex":
        if simex_config is None:
            raise ConfigError("glm-simex needs SIMEX settings")
        return run_glm_simex(train, test, simex_config, waic_draws=waic_draws, seed=seed)
    if sampler_options is None:
        sampler_options = SamplerOptions(seed=seed)
    if model == "hb":
        return run_hb(train, test, sampler_options, hyper_options, waic_draws=waic_draws)
    if simex_config is None:
        raise ConfigError("hb-simex needs SIMEX settings")
    return run_hb_simex(
        train, test, simex_config, sampler_options, hyper_options, waic_draws=waic_draws
    )
