"""NB density, MoM dispersion and the maximum-likelihood GLM fit."""

import math
from fractions import Fraction

import numpy as np
import pytest

from hbsimex.data import CountDataset, build_design
from hbsimex.exceptions import (
    ConvergenceError,
    DomainError,
    SingularDesignError,
    UnderdispersionError,
)
from hbsimex.glm import NBParams, fit_nb_glm, mom_dispersion, nb_logpmf
from hbsimex.synthetic import TruthSpec, generate


def test_logpmf_zero_count_closed_form():
    # P(0) = (gamma/(gamma+eta))^gamma; eta=1, gamma=1 -> log(1/2)
    assert nb_logpmf(0, NBParams(1.0, 1.0)) == pytest.approx(math.log(0.5), abs=1e-12)
    assert nb_logpmf(0, NBParams(2.0, 3.0)) == pytest.approx(3 * math.log(3 / 5), abs=1e-12)


def test_pmf_normalizes():
    y = np.arange(0, 501)
    total = np.exp(nb_logpmf(y, eta=6.92, gamma=0.28)).sum()
    assert total == pytest.approx(1.0, abs=1e-8)


def test_pmf_normalization_grid():
    y = np.arange(0, 5001)
    for eta in (0.1, 1.0, 10.0):
        for gamma in (0.25, 1.0, 4.0):
            total = np.exp(nb_logpmf(y, eta=eta, gamma=gamma)).sum()
            assert total == pytest.approx(1.0, abs=1e-8), (eta, gamma)


def exact_factorial_logpmf(y: int, eta: float, gamma: int) -> float:
    """Brute-force oracle for integer gamma via exact factorial ratios."""
    ratio = Fraction(1)
    for k in range(y):
        ratio *= Fraction(gamma + k)
    ratio /= Fraction(math.factorial(y))
    p = gamma / (gamma + eta)
    q = eta / (gamma + eta)
    return math.log(float(ratio)) + gamma * math.log(p) + y * math.log(q) if y else gamma * math.log(p)


@pytest.mark.parametrize("gamma", [1, 2, 5])
@pytest.mark.parametrize("eta", [0.5, 3.0, 11.0])
def test_pmf_matches_factorial_oracle(eta, gamma):
    for y in range(21):
        expected = exact_factorial_logpmf(y, eta, gamma)
        assert nb_logpmf(y, eta=eta, gamma=float(gamma)) == pytest.approx(
            expected, rel=1e-10, abs=1e-10
        )


def test_logpmf_domain_errors():
    with pytest.raises(DomainError):
        NBParams(-1.0, 1.0)
    with pytest.raises(DomainError):
        NBParams(1.0, 0.0)
    with pytest.raises(DomainError):
        nb_logpmf(0, eta=0.0, gamma=1.0)


def test_overdispersion_invariant():
    params = NBParams(3.0, 2.0)
    assert params.variance > params.eta


def test_mom_paper_moments():
    # two points at mean +/- sqrt(var/2) have ddof=1 variance exactly `var`
    d = math.sqrt(177.7 / 2)
    y = np.array([6.92 - d, 6.92 + d])
    assert float(np.mean(y)) == pytest.approx(6.92)
    assert float(np.var(y, ddof=1)) == pytest.approx(177.7)
    expected = 6.92**2 / (177.7 - 6.92)
    assert mom_dispersion(y) == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(0.2804, abs=2e-4)


def test_mom_monte_carlo_recovery():
    rng = np.random.default_rng(123)
    gamma, eta = 2.0, 5.0
    rate = rng.gamma(gamma, eta / gamma, size=100_000)
    y = rng.poisson(rate).astype(float)
    assert 1.8 <= mom_dispersion(y) <= 2.2


def test_mom_degenerate_sample():
    with pytest.raises(UnderdispersionError):
        mom_dispersion(np.full(10, 4.0))


def _simple_dataset(y, x=None):
    n = len(y)
    if x is None:
        x = np.zeros((n, 1))
    return CountDataset.from_arrays(y=y, x=x, cohorts=np.ones(n, dtype=int))


def test_intercept_only_mle_is_log_mean():
    rng = np.random.default_rng(5)
    rate = rng.gamma(1.5, 4.0 / 1.5, size=400)
    y = rng.poisson(rate)
    ds = CountDataset.from_arrays(y=y, x=rng.normal(size=(400, 1)), cohorts=np.ones(400, int))
    design = build_design(ds)
    design_intercept_only = type(design)(
        rows=np.ones((400, 1)),
        column_map={},
        column_names=("(intercept)",),
        error_prone_column=-1,
    )
    fit = fit_nb_glm(ds, design_intercept_only)
    assert fit.beta_hat[0] == pytest.approx(math.log(np.mean(y)), abs=1e-6)


def test_fit_recovers_truth_within_3se():
    ds, truth = generate(
        1, 5000,
        TruthSpec(slope_mean=0.3, log_intercept_mean=0.5, log_gamma_mean=math.log(2.0),
                  sigma2_u=1.0, sigma2_eps=0.0),
        seed=77,
    )
    design = build_design(ds)
    fit = fit_nb_glm(ds, design)
    se = fit.se_beta
    assert abs(fit.beta_hat[0] - 0.5) < 3 * se[0]
    assert abs(fit.beta_hat[1] - 0.3) < 3 * se[1]
    assert fit.converged


def test_duplicated_column_is_singular():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(50, 1))
    ds = CountDataset.from_arrays(
        y=rng.poisson(3, 50), x=np.column_stack([x, x]), cohorts=np.ones(50, int)
    )
    with pytest.raises(SingularDesignError):
        fit_nb_glm(ds, build_design(ds))


def test_loglik_path_is_monotone():
    ds, _ = generate(
        1, 600, TruthSpec(slope_mean=0.4, log_gamma_mean=0.0, sigma2_u=1.0), seed=3
    )
    fit = fit_nb_glm(ds, build_design(ds))
    path = np.asarray(fit.loglik_path)
    assert np.all(np.diff(path) >= -1e-9)


def test_scale_equivariance():
    ds, _ = generate(
        1, 800, TruthSpec(slope_mean=0.4, log_gamma_mean=0.3, sigma2_u=1.0), seed=11
    )
    fit = fit_nb_glm(ds, build_design(ds))
    c = 4.0
    ds_scaled = CountDataset.from_arrays(y=ds.y, x=ds.x * c, cohorts=ds.cohorts)
    fit_scaled = fit_nb_glm(ds_scaled, build_design(ds_scaled))
    assert fit_scaled.beta_hat[1] == pytest.approx(fit.beta_hat[1] / c, rel=1e-5)
    assert fit_scaled.beta_hat[0] == pytest.approx(fit.beta_hat[0], abs=1e-5)


def test_cov_beta_is_sigma2_xtx_inverse():
    ds, _ = generate(1, 500, TruthSpec(slope_mean=0.2, log_gamma_mean=0.5, sigma2_u=1.0), seed=21)
    design = build_design(ds)
    fit = fit_nb_glm(ds, design)
    X = design.rows
    expected = fit.sigma2_hat * np.linalg.inv(X.T @ X)
    np.testing.assert_allclose(fit.cov_beta, expected, rtol=1e-10)
    # symmetric PSD
    np.testing.assert_allclose(fit.cov_beta, fit.cov_beta.T)
    assert np.all(np.linalg.eigvalsh(fit.cov_beta) > 0)


def test_convergence_error_carries_last_fit():
    ds, _ = generate(1, 300, TruthSpec(slope_mean=0.4, log_gamma_mean=0.0, sigma2_u=1.0), seed=9)
    with pytest.raises(ConvergenceError) as err:
        fit_nb_glm(ds, build_design(ds), max_outer=1, grad_tol=1e-300)
    assert err.value.last_fit is not None
    assert not err.value.last_fit.converged
