"""Error-variance estimation, bootstrap replicates and contamination."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hbsimex.errors import (
    ReplicateSet,
    bootstrap_replicates,
    contaminate,
    error_model_from_replicates,
    estimate_error_variance,
    replicates_from_csv,
    replicates_to_csv,
)
from hbsimex.exceptions import DomainError, InsufficientReplicatesError, ParameterError


def make_reps(groups):
    return ReplicateSet(
        record_ids=np.arange(len(groups)),
        replicates=tuple(np.asarray(g, dtype=float) for g in groups),
    )


def test_hand_case_is_exactly_two():
    # within-sums (1-2)^2+(3-2)^2 = 2 and (2-3)^2+(4-3)^2 = 2, df = 2
    assert estimate_error_variance(make_reps([(1, 3), (2, 4)])) == 2.0


def test_identical_replicates_zero():
    assert estimate_error_variance(make_reps([(5, 5, 5), (2, 2)])) == 0.0


def test_all_singletons_error():
    with pytest.raises(InsufficientReplicatesError):
        estimate_error_variance(make_reps([(1,), (2,)]))


def test_constant_shift_invariance():
    base = make_reps([(1.0, 3.0, 2.0), (4.0, 6.0)])
    shifted = make_reps([(101.0, 103.0, 102.0), (4.0, 6.0)])
    assert estimate_error_variance(base) == pytest.approx(
        estimate_error_variance(shifted), rel=1e-12
    )


def two_pass_anova_oracle(groups):
    """Brute-force one-way ANOVA within-group mean square."""
    ss, dof = 0.0, 0
    for g in groups:
        mean = sum(g) / len(g)
        for v in g:
            ss += (v - mean) ** 2
        dof += len(g) - 1
    return ss / dof


@settings(max_examples=120, derandomize=True, deadline=None)
@given(
    st.lists(
        st.lists(st.floats(-50, 50), min_size=1, max_size=4),
        min_size=1,
        max_size=10,
    ).filter(lambda gs: sum(len(g) - 1 for g in gs) >= 1)
)
def test_matches_anova_oracle(groups):
    reps = make_reps(groups)
    assert estimate_error_variance(reps) == pytest.approx(
        two_pass_anova_oracle(groups), rel=1e-10, abs=1e-12
    )


def test_bootstrap_deterministic():
    x = np.random.default_rng(1).normal(10, 3, size=40)
    a = bootstrap_replicates(x, Q=5, seed=11)
    b = bootstrap_replicates(x, Q=5, seed=11)
    for ra, rb in zip(a.replicates, b.replicates):
        np.testing.assert_array_equal(ra, rb)


def test_bootstrap_constant_x_gives_zero_variance():
    x = np.full(20, 7.5)
    reps = bootstrap_replicates(x, Q=4, seed=3)
    for r in reps.replicates:
        np.testing.assert_array_equal(r, np.full(4, 7.5))
    assert estimate_error_variance(reps) == 0.0


def test_bootstrap_recovers_residual_variance():
    rng = np.random.default_rng(42)
    v = 2.5
    x = 5.0 + rng.normal(0, np.sqrt(v), size=10_000)
    reps = bootstrap_replicates(x, Q=10, seed=9)
    est = estimate_error_variance(reps)
    assert est == pytest.approx(v, rel=0.05)


def test_bootstrap_q_must_be_at_least_two():
    with pytest.raises(ParameterError):
        bootstrap_replicates(np.ones(5), Q=1, seed=0)


def test_bootstrap_cohort_pool_centers_within_cohort():
    # two cohorts with distinct means; residual pools must not mix them
    x = np.array([0.0, 0.0, 100.0, 100.0])
    reps = bootstrap_replicates(x, Q=6, seed=4, cohorts=np.array([1, 1, 2, 2]))
    assert estimate_error_variance(reps) == 0.0


def test_contaminate_lambda_zero_exact():
    x = np.random.default_rng(0).normal(size=100)
    w = contaminate(x, 0.0, 4.0, seed=5)
    np.testing.assert_array_equal(w, x)


def test_contaminate_added_variance():
    x = np.zeros(100_000)
    w = contaminate(x, 1.0, 4.0, seed=10)
    assert 3.9 <= float(np.var(w - x)) <= 4.1


def test_contamination_level_axis_doubles_added_variance():
    # total added error variance is (1 + lambda) * sigma2_eps
    sigma2 = 2.0
    rng = np.random.default_rng(77)
    u = rng.normal(0, 1.0, size=200_000)
    x = u + rng.normal(0, np.sqrt(sigma2), size=u.shape[0])  # lambda = 0 baseline
    w = contaminate(x, 1.0, sigma2, seed=8)  # lambda = 1
    added0 = float(np.var(x - u))
    added1 = float(np.var(w - u))
    assert added1 / added0 == pytest.approx(2.0, rel=0.05)


def test_contaminate_independent_seeds_uncorrelated():
    x = np.zeros(100_000)
    w1 = contaminate(x, 1.0, 1.0, seed=1)
    w2 = contaminate(x, 1.0, 1.0, seed=2)
    corr = np.corrcoef(w1, w2)[0, 1]
    assert abs(corr) < 0.05


def test_contaminate_domain_errors():
    with pytest.raises(DomainError):
        contaminate(np.ones(3), -0.5, 1.0, seed=0)
    with pytest.raises(DomainError):
        contaminate(np.ones(3), 1.0, -1.0, seed=0)


def test_replicates_csv_round_trip(tmp_path):
    reps = make_reps([(1.5, 3.25), (2.0, 4.0, 5.5)])
    path = tmp_path / "reps.csv"
    replicates_to_csv(reps, path)
    back = replicates_from_csv(path)
    assert back.record_ids.tolist() == [0, 1]
    for a, b in zip(reps.replicates, back.replicates):
        np.testing.assert_array_equal(a, b)


def test_error_model_diagnostics():
    rng = np.random.default_rng(6)
    u = rng.normal(3.0, 2.0, size=5000)
    x = u + rng.normal(0, 1.0, size=5000)
    reps = make_reps([(xi - 0.5, xi + 0.5) for xi in x[:200]])
    model = error_model_from_replicates(reps, x)
    assert model.mean_u == pytest.approx(3.0, abs=0.2)
    # observed variance ~ sigma2_u + sigma2_eps
    assert model.sigma2_u + model.sigma2_eps == pytest.approx(np.var(x, ddof=1), rel=1e-9)
