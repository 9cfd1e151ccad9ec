"""Metropolis-within-Gibbs sampler for the hierarchical NB mixed model.

Cohorts are conditionally independent given the pooled GLM anchors, so the
chain is m per-cohort samplers sharing FixedHypers. Each iteration updates,
per cohort: the slope prior covariance (inverse Wishart), its mean
(conjugate MVN), the slopes (Metropolis, preconditioned Gaussian walk), the
intercept-prior concentration k (Gamma), the dispersion-prior concentration
a (Gamma), the intercept C (Metropolis on log scale) and the dispersion
gamma (Metropolis on log scale). The adaptive Gamma priors for C and gamma
are centred on the running mean of past draws (starting at the init), with
rate concentration/mean.

Acceptance is standard Metropolis by default; ``greedy_accept`` reproduces
the literal accept-only-if-ratio>=1 rule. ``gamma_anchor`` selects whether
the dispersion prior is centred on past gamma draws (default) or on past C
draws (the literal printed rule).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky as _cholesky
from scipy.linalg import solve_triangular

from ._kernels import nb_loglik_sum
from .data import CountDataset, DesignMatrix
from .errors import contaminate
from .exceptions import NumericError, ParameterError

_BLOCKS = ("beta", "C", "gamma")
_STUCK_LIMIT = 500


@dataclass(frozen=True)
class FixedHypers:
    """Constants of the hierarchy, shared by every cohort.

    ``beta_anchor`` is the pooled (optionally SIMEX-corrected) GLM slope
    estimate feeding the hyper-prior mean; ``Sigma_0`` is the slopes block
    of sigma2_hat * (X^T X)^{-1}; ``g`` is the total record count n*m.
    """

    nu: float
    tau: float
    s: float
    t: float
    u: float
    v: float
    alpha: float
    Sigma_E: np.ndarray
    Sigma_0: np.ndarray
    g: float
    prior_mean_C: float
    prior_mean_gamma: float
    beta_anchor: np.ndarray

    def __post_init__(self):
        Sigma_E = np.asarray(self.Sigma_E, dtype=np.float64)
        Sigma_0 = np.asarray(self.Sigma_0, dtype=np.float64)
        anchor = np.asarray(self.beta_anchor, dtype=np.float64)
        object.__setattr__(self, "Sigma_E", Sigma_E)
        object.__setattr__(self, "Sigma_0", Sigma_0)
        object.__setattr__(self, "beta_anchor", anchor)
        P = anchor.shape[0]
        if Sigma_E.shape != (P, P) or Sigma_0.shape != (P, P):
            raise ParameterError("Sigma_E / Sigma_0 must be P x P")
        if not self.nu > P + 1:
            raise ParameterError(f"nu must exceed P+1={P + 1}, got {self.nu}")
        for name in ("tau", "s", "t", "u", "v"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive")
        if self.g < 1:
            raise ParameterError("g must be >= 1")
        if not (self.prior_mean_C > 0 and self.prior_mean_gamma > 0):
            raise ParameterError("prior means must be positive")
        np.linalg.cholesky(Sigma_E)

    @property
    def n_slopes(self) -> int:
        return int(self.beta_anchor.shape[0])


def default_hypers(
    glm_fit,
    design: DesignMatrix,
    n_records: int,
    *,
    alpha: float = 0.01,
    s: float = 0.001,
    t: float = 1.0,
    u: float = 1.0,
    v: float = 1.0,
    sigma_e_scale: float | None = None,
    Sigma_E: np.ndarray | None = None,
    prior_mean_C: float | None = None,
    prior_mean_gamma: float | None = None,
    beta_anchor: np.ndarray | None = None,
) -> FixedHypers:
    """Non-informative defaults: nu=(alpha+1)+(P+1)+1, tau=alpha+1,
    Sigma_E=diag(Sigma_0), g = total records."""
    P = len(design.slope_names)
    Sigma_0 = np.asarray(glm_fit.cov_beta)[1:, 1:]
    if Sigma_E is None:
        Sigma_E = np.diag(np.diag(Sigma_0)).copy()
        if sigma_e_scale is not None:
            Sigma_E = Sigma_E * sigma_e_scale
    return FixedHypers(
        nu=(alpha + 1.0) + (P + 1.0) + 1.0,
        tau=alpha + 1.0,
        s=s,
        t=t,
        u=u,
        v=v,
        alpha=alpha,
        Sigma_E=Sigma_E,
        Sigma_0=Sigma_0,
        g=float(n_records),
        prior_mean_C=float(prior_mean_C if prior_mean_C is not None else math.exp(glm_fit.beta_hat[0])),
        prior_mean_gamma=float(prior_mean_gamma if prior_mean_gamma is not None else glm_fit.gamma_hat),
        beta_anchor=(np.asarray(glm_fit.beta_hat)[1:] if beta_anchor is None else beta_anchor),
    )


@dataclass(frozen=True)
class InitState:
    """Starting values; the hyper draws Lambda, k, a are resampled before
    first use, so only beta, C, gamma and mu matter."""

    beta: np.ndarray  # (m, P)
    C: np.ndarray  # (m,)
    gamma: np.ndarray  # (m,)
    mu: np.ndarray  # (m, P)

    def __post_init__(self):
        for name in ("beta", "C", "gamma", "mu"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
            if not np.all(np.isfinite(arr)):
                raise ParameterError(f"init {name} must be finite")
        if np.any(self.C <= 0) or np.any(self.gamma <= 0):
            raise ParameterError("init C and gamma must be positive")


def default_init(fixed: FixedHypers, m: int) -> InitState:
    P = fixed.n_slopes
    return InitState(
        beta=np.tile(fixed.beta_anchor, (m, 1)),
        C=np.full(m, fixed.prior_mean_C),
        gamma=np.full(m, fixed.prior_mean_gamma),
        mu=np.tile(fixed.beta_anchor, (m, 1)),
    )


@dataclass(frozen=True)
class Chain:
    """Post-burn-in draws for every cohort plus acceptance bookkeeping."""

    beta_draws: np.ndarray  # (H, m, P)
    C_draws: np.ndarray  # (H, m)
    gamma_draws: np.ndarray  # (H, m)
    mu_draws: np.ndarray  # (H, m, P)
    k_draws: np.ndarray  # (H, m)
    a_draws: np.ndarray  # (H, m)
    Lambda_draws: np.ndarray | None  # (H, m, P, P)
    accept_counts: np.ndarray  # (m, 3) for blocks (beta, C, gamma)
    attempts: int
    H: int  # kept iterations (post burn-in)
    burn_in: int
    seed: int
    lambda_used: float
    sigma2_eps: float
    param_names: tuple[str, ...]
    cohort_labels: tuple[str, ...]
    block_names: tuple[str, ...] = _BLOCKS
    warnings: tuple[str, ...] = field(default_factory=tuple)
    final_steps: np.ndarray | None = None

    @property
    def m(self) -> int:
        return int(self.C_draws.shape[1])

    def acceptance_rates(self) -> np.ndarray:
        if self.attempts == 0:
            return np.zeros_like(self.accept_counts, dtype=np.float64)
        return self.accept_counts / float(self.attempts)


def _chol_with_jitter(mat: np.ndarray) -> np.ndarray:
    try:
        return _cholesky(mat, lower=True)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-10 * max(float(np.mean(np.diag(mat))), 1e-30)
    try:
        return _cholesky(mat + jitter * np.eye(mat.shape[0]), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"scale matrix not positive definite: {exc}") from exc


def sample_invwishart(dof: float, scale: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-Wishart draw via the Bartlett decomposition.

    Requires dof > P - 1; E[X] = scale / (dof - P - 1) when dof > P + 1.
    """
    P = scale.shape[0]
    if not dof > P - 1:
        raise ParameterError(f"inverse-Wishart dof must exceed P-1={P - 1}")
    Ls = _chol_with_jitter(scale)
    A = np.zeros((P, P))
    for i in range(P):
        A[i, i] = math.sqrt(rng.chisquare(dof - i))
    if P > 1:
        A[np.tril_indices(P, -1)] = rng.standard_normal(P * (P - 1) // 2)
    # X = Ls A^{-T} A^{-1} Ls^T  (inverse of the Wishart(dof, scale^{-1}) draw)
    B = solve_triangular(A, Ls.T, lower=True)
    return B.T @ B


def sample_mvn(mean: np.ndarray, chol_lower: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return mean + chol_lower @ rng.standard_normal(mean.shape[0])


def sample_Lambda(beta_j, mu_j, fixed: FixedHypers, rng) -> np.ndarray:
    """Slope-prior covariance draw: IW(nu + P, tau*Sigma_E + dev dev^T)."""
    beta_j = np.asarray(beta_j, dtype=np.float64)
    mu_j = np.asarray(mu_j, dtype=np.float64)
    P = beta_j.shape[0]
    dev = beta_j - mu_j
    scale = fixed.tau * fixed.Sigma_E + np.outer(dev, dev)
    return sample_invwishart(fixed.nu + P, scale, rng)


def mu_weights(g: float) -> tuple[float, float]:
    """Convex weights on (anchor, beta_j): ((nm)^-1, 1) / ((nm)^-1 + 1)."""
    w = 1.0 / g
    return w / (w + 1.0), 1.0 / (w + 1.0)


def sample_mu(beta_j, Lambda_chol, fixed: FixedHypers, rng, anchor=None) -> np.ndarray:
    """Slope-prior mean draw: MVN mixing the GLM anchor with the cohort slopes."""
    if anchor is None:
        anchor = fixed.beta_anchor
    w_anchor, w_beta = mu_weights(fixed.g)
    mean = w_anchor * np.asarray(anchor) + w_beta * np.asarray(beta_j)
    denom = math.sqrt(1.0 / fixed.g + 1.0)
    return sample_mvn(mean, Lambda_chol / denom, rng)


def sample_k(fixed: FixedHypers, rng) -> float:
    """Intercept-prior concentration: Gamma(shape=s, scale=t)."""
    return float(rng.gamma(fixed.s, fixed.t))


def sample_a(k_j: float, gamma_prev: float, fixed: FixedHypers, rng) -> float:
    """Dispersion-prior concentration: Gamma(shape=k+u, scale=gamma+v)."""
    return float(rng.gamma(k_j + fixed.u, gamma_prev + fixed.v))


def _mh_accept(log_ratio: float, rng, greedy: bool) -> bool:
    if math.isnan(log_ratio):
        return False
    if greedy:
        return log_ratio >= 0.0
    if log_ratio >= 0.0:
        return True
    # 1 - u lies in (0, 1], so the log is always defined
    return math.log1p(-rng.uniform()) < log_ratio


def _mvn_quad(dev: np.ndarray, chol_lower: np.ndarray) -> float:
    z = solve_triangular(chol_lower, dev, lower=True)
    return -0.5 * float(z @ z)


def sample_beta_mh(
    beta_j,
    loglik_fn,
    mu_j,
    Lambda_chol,
    step: float,
    rng,
    greedy: bool = False,
) -> tuple[np.ndarray, bool]:
    """One Metropolis update of the slope vector.

    Proposal: beta + step * L z (Gaussian walk preconditioned by the prior
    Cholesky factor). Target: loglik(beta) + log MVN(beta | mu, Lambda).
    Non-finite proposal targets auto-reject.
    """
    beta_j = np.asarray(beta_j, dtype=np.float64)
    mu_j = np.asarray(mu_j, dtype=np.float64)
    cur = loglik_fn(beta_j) + _mvn_quad(beta_j - mu_j, Lambda_chol)
    prop = beta_j + step * (Lambda_chol @ rng.standard_normal(beta_j.shape[0]))
    cand = loglik_fn(prop) + _mvn_quad(prop - mu_j, Lambda_chol)
    if not math.isfinite(cand):
        return beta_j, False
    if _mh_accept(cand - cur, rng, greedy):
        return prop, True
    return beta_j, False


def adaptive_gamma_rate(concentration: float, past_sum: float, past_count: int) -> float:
    """The printed prior rate: concentration * count / (sum of past draws)."""
    if past_sum <= 0 or past_count < 1:
        raise ParameterError("past draws of a positive parameter must have a positive sum")
    return concentration * past_count / past_sum


def _log_walk_mh(
    value: float,
    logtarget,
    step: float,
    rng,
    greedy: bool,
) -> tuple[float, bool]:
    """Random walk on log(value) with Jacobian correction."""
    cur_ll = logtarget(value) + math.log(value)
    prop = value * math.exp(step * rng.standard_normal())
    cand_ll = logtarget(prop) + math.log(prop)
    if not math.isfinite(cand_ll):
        return value, False
    if _mh_accept(cand_ll - cur_ll, rng, greedy):
        return prop, True
    return value, False


def sample_C_mh(
    C_j: float,
    loglik_fn,
    k_j: float,
    past_sum: float,
    past_count: int,
    step: float,
    rng,
    greedy: bool = False,
) -> tuple[float, bool]:
    """One Metropolis update of the intercept on the log scale.

    Prior: Gamma(shape=k_j, rate=k_j * count / sum past C) — mean equal to
    the running mean of past draws.
    """
    rate = adaptive_gamma_rate(k_j, past_sum, past_count)

    def logtarget(c):
        return loglik_fn(c) + (k_j - 1.0) * math.log(c) - rate * c

    return _log_walk_mh(C_j, logtarget, step, rng, greedy)


def sample_gamma_mh(
    gamma_j: float,
    loglik_fn,
    a_j: float,
    past_sum: float,
    past_count: int,
    step: float,
    rng,
    greedy: bool = False,
) -> tuple[float, bool]:
    """One Metropolis update of the dispersion on the log scale.

    Prior: Gamma(shape=a_j, rate=a_j * count / sum of past anchor draws);
    the anchor sum is past gamma draws by default, past C draws under the
    printed variant.
    """
    rate = adaptive_gamma_rate(a_j, past_sum, past_count)

    def logtarget(g):
        return loglik_fn(g) + (a_j - 1.0) * math.log(g) - rate * g

    return _log_walk_mh(gamma_j, logtarget, step, rng, greedy)


def _cohort_rngs(seed: int, m: int, cohort_seed_keys) -> list[np.random.Generator]:
    if cohort_seed_keys is None:
        cohort_seed_keys = list(range(1, m + 1))
    if len(cohort_seed_keys) != m:
        raise ParameterError("cohort_seed_keys length must equal m")
    return [
        np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(1, int(key)))))
        for key in cohort_seed_keys
    ]


def run_chain(
    dataset: CountDataset,
    design: DesignMatrix,
    fixed: FixedHypers,
    init: InitState | None = None,
    *,
    H: int,
    burn_in: int,
    lambda_t: float = 0.0,
    sigma2_eps: float = 0.0,
    seed: int = 0,
    greedy_accept: bool = False,
    gamma_anchor: str = "gamma",
    cohort_seed_keys=None,
    target_accept: float = 0.3,
    store_hypers: bool = True,
) -> Chain:
    """Run the full update schedule for H total iterations.

    The error-prone design column is contaminated once at level lambda_t
    (fixed for the whole chain); draws after ``burn_in`` are stored.
    Deterministic given the seed: per-cohort RNG streams are derived from
    (seed, cohort key), the contamination stream from (seed, 0).
    """
    if H < burn_in or burn_in < 0:
        raise ParameterError("need H >= burn_in >= 0")
    if gamma_anchor not in ("gamma", "printed"):
        raise ParameterError(f"unknown gamma_anchor {gamma_anchor!r}")

    m = dataset.m
    P = fixed.n_slopes
    if P != len(design.slope_names):
        raise ParameterError("FixedHypers dimension does not match design")
    if init is None:
        init = default_init(fixed, m)

    contam_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(0,)))
    )
    slopes = design.slopes.copy()
    ep = design.error_prone_column - 1
    slopes[:, ep] = contaminate(slopes[:, ep], lambda_t, sigma2_eps, rng=contam_rng)

    y_by, W_by = [], []
    for j in range(1, m + 1):
        rows = dataset.cohorts == j
        y_by.append(np.ascontiguousarray(dataset.y[rows], dtype=np.int64))
        W_by.append(np.ascontiguousarray(slopes[rows]))
    rngs = _cohort_rngs(seed, m, cohort_seed_keys)

    beta = init.beta.copy()
    C = init.C.copy()
    gamma = init.gamma.copy()
    mu = init.mu.copy()
    k = np.full(m, fixed.s * fixed.t)
    a = np.full(m, (fixed.s * fixed.t + fixed.u) * fixed.v)
    c_sum = C.copy()
    g_sum = gamma.copy()

    keep = H - burn_in
    beta_draws = np.empty((keep, m, P))
    C_draws = np.empty((keep, m))
    gamma_draws = np.empty((keep, m))
    mu_draws = np.empty((keep, m, P))
    k_draws = np.empty((keep, m))
    a_draws = np.empty((keep, m))
    Lambda_draws = np.empty((keep, m, P, P)) if store_hypers else None

    log_steps = np.log(np.full((m, 3), 0.5))
    accept_counts = np.zeros((m, 3), dtype=np.int64)
    reject_streaks = np.zeros((m, 3), dtype=np.int64)
    warned = np.zeros((m, 3), dtype=bool)
    warnings: list[str] = []

    for h in range(1, H + 1):
        adapting = h <= burn_in
        rate = h ** -0.6
        for j in range(m):
            rng = rngs[j]
            y_j, W_j = y_by[j], W_by[j]
            Lam = sample_Lambda(beta[j], mu[j], fixed, rng)
            Lchol = _chol_with_jitter(Lam)
            mu[j] = sample_mu(beta[j], Lchol, fixed, rng)

            C_j, gamma_j = C[j], gamma[j]

            def loglik_beta(b, _y=y_j, _W=W_j, _C=C_j, _g=gamma_j):
                return nb_loglik_sum(_C * np.exp(_W @ b), _g, _y)

            steps = np.exp(log_steps[j])
            beta[j], acc0 = sample_beta_mh(
                beta[j], loglik_beta, mu[j], Lchol, steps[0], rng, greedy_accept
            )
            E_j = np.exp(W_j @ beta[j])

            k[j] = sample_k(fixed, rng)
            a[j] = sample_a(k[j], gamma[j], fixed, rng)

            def loglik_C(c, _y=y_j, _E=E_j, _g=gamma_j):
                return nb_loglik_sum(c * _E, _g, _y)

            C[j], acc1 = sample_C_mh(
                C[j], loglik_C, k[j], c_sum[j], h, steps[1], rng, greedy_accept
            )

            eta_j = C[j] * E_j

            def loglik_gamma(g, _y=y_j, _eta=eta_j):
                return nb_loglik_sum(_eta, g, _y)

            anchor_sum = g_sum[j] if gamma_anchor == "gamma" else c_sum[j]
            gamma[j], acc2 = sample_gamma_mh(
                gamma[j], loglik_gamma, a[j], anchor_sum, h, steps[2], rng, greedy_accept
            )

            for b_idx, acc in enumerate((acc0, acc1, acc2)):
                accept_counts[j, b_idx] += acc
                reject_streaks[j, b_idx] = 0 if acc else reject_streaks[j, b_idx] + 1
                if reject_streaks[j, b_idx] >= _STUCK_LIMIT and not warned[j, b_idx]:
                    warned[j, b_idx] = True
                    warnings.append(
                        f"cohort {j + 1} block {_BLOCKS[b_idx]}: "
                        f"{_STUCK_LIMIT} consecutive rejections (stuck chain)"
                    )
                if adapting:
                    log_steps[j, b_idx] += rate * (float(acc) - target_accept)

            c_sum[j] += C[j]
            g_sum[j] += gamma[j]

            if h > burn_in:
                idx = h - burn_in - 1
                beta_draws[idx, j] = beta[j]
                C_draws[idx, j] = C[j]
                gamma_draws[idx, j] = gamma[j]
                mu_draws[idx, j] = mu[j]
                k_draws[idx, j] = k[j]
                a_draws[idx, j] = a[j]
                if Lambda_draws is not None:
                    Lambda_draws[idx, j] = Lam

    return Chain(
        beta_draws=beta_draws,
        C_draws=C_draws,
        gamma_draws=gamma_draws,
        mu_draws=mu_draws,
        k_draws=k_draws,
        a_draws=a_draws,
        Lambda_draws=Lambda_draws,
        accept_counts=accept_counts,
        attempts=H,
        H=keep,
        burn_in=burn_in,
        seed=seed,
        lambda_used=float(lambda_t),
        sigma2_eps=float(sigma2_eps),
        param_names=tuple(design.slope_names),
        cohort_labels=dataset.cohort_labels,
        warnings=tuple(warnings),
        final_steps=np.exp(log_steps),
    )


def draws_to_csv(chain: Chain, path) -> None:
    """Columnar draws: iteration, cohort, parameter, value."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "cohort", "parameter", "value"])
        for h in range(chain.H):
            for j in range(chain.m):
                label = chain.cohort_labels[j]
                for p, name in enumerate(chain.param_names):
                    writer.writerow([h + 1, label, name, repr(float(chain.beta_draws[h, j, p]))])
                writer.writerow([h + 1, label, "C", repr(float(chain.C_draws[h, j]))])
                writer.writerow([h + 1, label, "gamma", repr(float(chain.gamma_draws[h, j]))])
