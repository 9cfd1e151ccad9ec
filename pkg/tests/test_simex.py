"""SIMEX engine: extrapolation, averaging, attenuation correction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hbsimex.data import CountDataset
from hbsimex.exceptions import ConfigError, SimexEstimatorError, SingularFitError
from hbsimex.simex import SimexConfig, extrapolate, run_simex

GRID = (0.0, 0.5, 1.0, 1.5, 2.0)


def dataset(x, y=None, cohorts=None):
    n = len(x)
    return CountDataset.from_arrays(
        y=np.zeros(n, dtype=int) if y is None else y,
        x=np.asarray(x, dtype=float)[:, None],
        cohorts=np.ones(n, dtype=int) if cohorts is None else cohorts,
    )


def test_extrapolate_linear_exact():
    pts = [(0.0, 5.0), (1.0, 4.0), (2.0, 3.0)]
    res = extrapolate(pts, degree=1)
    assert res.value == pytest.approx(6.0, abs=1e-12)
    assert res.residual == pytest.approx(0.0, abs=1e-18)


def test_extrapolate_quadratic_hand_case():
    pts = [(0.0, 1.0), (1.0, 6.0), (2.0, 17.0)]  # 1 + 2l + 3l^2
    res = extrapolate(pts, degree=2)
    assert res.value == pytest.approx(2.0, abs=1e-9)
    np.testing.assert_allclose(res.coeffs, [1.0, 2.0, 3.0], atol=1e-9)


def test_extrapolate_constant_points():
    pts = [(0.0, 4.25), (1.0, 4.25), (2.0, 4.25), (3.0, 4.25)]
    res = extrapolate(pts, degree=2)
    assert res.value == pytest.approx(4.25, abs=1e-12)
    assert res.residual == pytest.approx(0.0, abs=1e-20)


def test_extrapolate_duplicate_lambdas_error():
    with pytest.raises(SingularFitError):
        extrapolate([(0.0, 1.0), (0.0, 2.0), (1.0, 3.0)], degree=2)


@settings(max_examples=80, derandomize=True)
@given(
    scale=st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3),
    shift=st.floats(-10, 10),
)
def test_extrapolate_affine_equivariance(scale, shift):
    lam = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    vals = 1.0 + 0.7 * lam - 0.2 * lam**2 + np.sin(lam)
    base = extrapolate(np.column_stack([lam, vals]), degree=2).value
    trans = extrapolate(np.column_stack([lam, scale * vals + shift]), degree=2).value
    assert trans == pytest.approx(scale * base + shift, rel=1e-9, abs=1e-9)


def test_config_validation():
    with pytest.raises(ConfigError):
        SimexConfig(sigma2_eps=1.0, lambda_grid=(0.5, 1.0, 1.5))  # missing 0
    with pytest.raises(ConfigError):
        SimexConfig(sigma2_eps=1.0, lambda_grid=(0.0, 1.0, 1.0))  # not increasing
    with pytest.raises(ConfigError):
        SimexConfig(sigma2_eps=1.0, lambda_grid=(0.0, 1.0))  # too short for quadratic
    with pytest.raises(ConfigError):
        SimexConfig(sigma2_eps=-1.0)
    with pytest.raises(ConfigError):
        SimexConfig(sigma2_eps=1.0, n_sims=0)
    assert SimexConfig(sigma2_eps=1.0, lambda_grid=(0.0, 1.0), extrapolant="linear").degree == 1


def test_zero_error_variance_collapses_to_naive():
    ds = dataset(np.linspace(-2, 2, 30))
    naive = [None]

    def estimator(d):
        est = np.array([d.x[:, 0].sum(), d.x[:, 0] @ d.x[:, 0]])
        if naive[0] is None:
            naive[0] = est
        return est

    trace = run_simex(estimator, ds, SimexConfig(sigma2_eps=0.0, lambda_grid=GRID, n_sims=3))
    for t in range(len(GRID)):
        np.testing.assert_allclose(trace.means[t], naive[0], rtol=0, atol=0)
    np.testing.assert_allclose(trace.extrapolated, naive[0], rtol=0, atol=1e-9)
    np.testing.assert_allclose(trace.jackknife_se, 0.0, atol=1e-12)


def test_known_quadratic_stub_extrapolates_exactly():
    # serial cells run in (t, b) lexicographic order, so a call counter
    # recovers lambda exactly: theta(lambda) = 1 + 2l + 3l^2 -> theta(-1) = 2
    ds = dataset(np.zeros(4))
    B = 3
    calls = [0]

    def stub(_):
        t = calls[0] // B
        calls[0] += 1
        lam = GRID[t]
        return np.array([1.0 + 2.0 * lam + 3.0 * lam**2])

    trace = run_simex(stub, ds, SimexConfig(sigma2_eps=1.0, lambda_grid=GRID, n_sims=B))
    assert trace.extrapolated[0] == pytest.approx(2.0, abs=1e-9)


def test_baseline_level_equals_naive_estimate():
    ds = dataset(np.linspace(0, 1, 10))

    def estimator(d):
        return np.array([float(np.mean(d.x[:, 0]))])

    trace = run_simex(estimator, ds, SimexConfig(sigma2_eps=2.0, lambda_grid=GRID, n_sims=4, seed=3))
    assert trace.means[0, 0] == pytest.approx(float(np.mean(ds.x[:, 0])), abs=0)


def test_estimator_failure_carries_cell_context():
    ds = dataset(np.ones(5))

    def bad(_):
        raise ValueError("boom")

    with pytest.raises(SimexEstimatorError) as err:
        run_simex(bad, ds, SimexConfig(sigma2_eps=1.0, lambda_grid=GRID, n_sims=2))
    assert err.value.lam == 0.0 and err.value.sim_index == 0


def test_parallel_trace_identical_to_serial():
    rng = np.random.default_rng(0)
    ds = dataset(rng.normal(size=50))

    def estimator(d):
        return np.array([np.mean(d.x[:, 0]), np.var(d.x[:, 0])])

    serial = run_simex(estimator, ds, SimexConfig(sigma2_eps=1.5, lambda_grid=GRID, n_sims=6, seed=9, threads=1))
    parallel = run_simex(estimator, ds, SimexConfig(sigma2_eps=1.5, lambda_grid=GRID, n_sims=6, seed=9, threads=4))
    np.testing.assert_array_equal(serial.means, parallel.means)
    np.testing.assert_array_equal(serial.extrapolated, parallel.extrapolated)


def ols_slope(d):
    x = d.x[:, 0]
    y = d.y.astype(float)
    xc = x - x.mean()
    return np.array([float(xc @ (y - y.mean()) / (xc @ xc))])


def test_attenuation_correction_beats_naive():
    # classical attenuation: naive slope -> beta * s2u / (s2u + s2e)
    beta, s2u, s2e, n = 2.0, 1.0, 1.0, 2000
    wins = 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        u = rng.normal(0, np.sqrt(s2u), n)
        yv = beta * u + rng.normal(0, 0.5, n)
        x = u + rng.normal(0, np.sqrt(s2e), n)
        y_counts = np.zeros(n, dtype=int)
        ds = CountDataset.from_arrays(y=y_counts, x=x[:, None], cohorts=np.ones(n, int))

        def estimator(d, _y=yv):
            xx = d.x[:, 0]
            xc = xx - xx.mean()
            return np.array([float(xc @ (_y - _y.mean()) / (xc @ xc))])

        naive = estimator(ds)[0]
        trace = run_simex(
            estimator, ds, SimexConfig(sigma2_eps=s2e, lambda_grid=GRID, n_sims=8, seed=seed)
        )
        if abs(trace.extrapolated[0] - beta) < abs(naive - beta):
            wins += 1
    assert wins >= 45  # >= 90% of 50 runs


def test_monte_carlo_se_scales_as_inverse_sqrt_b():
    # spread of the lambda=2 average over outer seeds must shrink ~ 1/sqrt(B)
    ds = dataset(np.zeros(16))

    def estimator(d):
        return np.array([float(np.mean(d.x[:, 0]))])

    ses = []
    bs = (4, 16, 64)
    for B in bs:
        vals = []
        for seed in range(30):
            trace = run_simex(
                estimator, ds, SimexConfig(sigma2_eps=1.0, lambda_grid=GRID, n_sims=B, seed=seed)
            )
            vals.append(trace.means[-1, 0])
        ses.append(np.std(vals, ddof=1))
    slope = np.polyfit(np.log(bs), np.log(ses), 1)[0]
    assert slope == pytest.approx(-0.5, abs=0.1)  # within 20%
