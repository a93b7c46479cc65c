import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from causalve.bootstrap import (
    BootstrapMatrix,
    bootstrap_estimates,
    from_scale,
    mvn_sample,
    pointwise_ci,
    replicate_rng,
    simultaneous_ci,
    to_scale,
)
from causalve.estimator import StudyConfig
from causalve.exceptions import EstimationError
from causalve.simulation import SimConfig, generate_cohort

from conftest import make_cohort


def matrix_with_se(se, scale, t0=(1,)):
    """Two-row matrix whose column SDs (ddof=1) equal ``se``."""
    se = np.atleast_1d(np.asarray(se, dtype=float))
    a = se / np.sqrt(2.0)
    values = np.vstack([a, -a])
    return BootstrapMatrix(values, from_scale(values, scale), np.asarray(t0), scale)


def test_logit_interval_example():
    band = pointwise_ci([0.5], matrix_with_se(1.0, "logit-incidence"))
    z = stats.norm.ppf(0.975)
    np.testing.assert_allclose([band.lower[0], band.upper[0]], [1 / (1 + np.exp(z)), 1 / (1 + np.exp(-z))],
                               atol=1e-12)
    np.testing.assert_allclose([band.lower[0], band.upper[0]], [0.12347, 0.87653], atol=1e-5)


def test_ve_interval_example():
    band = pointwise_ci([0.38], matrix_with_se(0.2, "log1m-ve"))
    np.testing.assert_allclose([band.lower[0], band.upper[0]], [0.0824, 0.5811], atol=5e-5)
    assert band.lower[0] < 0.38 < band.upper[0]


def test_zero_se_gives_degenerate_interval():
    band = pointwise_ci([0.3], matrix_with_se(0.0, "logit-incidence"))
    assert band.lower[0] == band.upper[0] == 0.3


def test_nonfinite_transforms_are_missing():
    m = BootstrapMatrix.from_natural([[0.1, 0.0], [0.2, 0.0], [0.3, 0.5]], [20, 30], "logit-incidence")
    assert m.n_nonfinite == 2
    se = m.standard_errors()
    assert np.isfinite(se[0]) and np.isnan(se[1])
    band = pointwise_ci([0.2, 0.0], m)
    assert np.isnan(band.lower[1])


def test_matrix_needs_two_rows():
    with pytest.raises(ValueError):
        BootstrapMatrix(np.zeros((1, 3)), np.zeros((1, 3)), np.arange(3), "log1m-ve")


def test_single_column_critical_value():
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(400, 1))
    band = simultaneous_ci([0.3], BootstrapMatrix(vals, from_scale(vals, "log1m-ve"), np.array([30]), "log1m-ve"),
                           n_sim=10_000, sim_seed=1)
    assert band.mc_quantile == pytest.approx(1.96, abs=0.02)


def test_duplicate_columns_match_single_column():
    rng = np.random.default_rng(1)
    col = rng.normal(size=(400, 1))
    vals = np.hstack([col, col])
    m = BootstrapMatrix(vals, from_scale(vals, "log1m-ve"), np.array([30, 31]), "log1m-ve")
    band = simultaneous_ci([0.3, 0.3], m, n_sim=10_000, sim_seed=2)
    assert band.mc_quantile == pytest.approx(1.96, abs=0.02)


def test_independent_columns_critical_value():
    rng = np.random.default_rng(2)
    vals = rng.normal(size=(5000, 10))
    m = BootstrapMatrix(vals, from_scale(vals, "log1m-ve"), np.arange(20, 30), "log1m-ve")
    band = simultaneous_ci(np.full(10, 0.3), m, n_sim=10_000, sim_seed=3)
    exact = stats.norm.ppf((1 + 0.95 ** (1 / 10)) / 2)
    assert exact == pytest.approx(2.80, abs=0.01)
    assert band.mc_quantile == pytest.approx(exact, abs=0.05)


def test_simultaneous_is_floored_at_pointwise():
    rng = np.random.default_rng(4)
    vals = rng.normal(size=(50, 1))
    m = BootstrapMatrix(vals, from_scale(vals, "log1m-ve"), np.array([30]), "log1m-ve")
    for seed in range(20):
        band = simultaneous_ci([0.3], m, n_sim=200, sim_seed=seed)
        assert band.critical_value == max(band.mc_quantile, stats.norm.ppf(0.975))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 8), st.sampled_from(["logit-incidence", "log1m-ve"]))
def test_simultaneous_contains_pointwise(seed, m, scale):
    rng = np.random.default_rng(seed)
    cov = rng.normal(size=(m, m))
    vals = rng.normal(size=(100, m)) @ cov * 0.3
    est = rng.uniform(0.05, 0.6, m)
    mat = BootstrapMatrix(vals, from_scale(vals, scale), np.arange(m) + 20, scale)
    pw = pointwise_ci(est, mat)
    sim = simultaneous_ci(est, mat, n_sim=2000, sim_seed=seed)
    assert np.all(sim.lower <= pw.lower + 1e-15)
    assert np.all(sim.upper >= pw.upper - 1e-15)
    assert np.all(pw.covers(est))


def test_mvn_sample_examples():
    draws = mvn_sample(np.eye(3), 100_000, seed=5)
    np.testing.assert_allclose(np.cov(draws, rowvar=False), np.eye(3), atol=0.02)
    assert np.abs(mvn_sample(np.zeros((2, 2)), 10, seed=1)).max() < 1e-12
    np.testing.assert_array_equal(mvn_sample(np.eye(2), 5, seed=9), mvn_sample(np.eye(2), 5, seed=9))


def test_transform_round_trips():
    v = np.linspace(0.001, 0.999, 101)
    np.testing.assert_allclose(from_scale(to_scale(v, "logit-incidence"), "logit-incidence"), v, atol=1e-12)
    u = np.linspace(-3, 0.99, 101)
    np.testing.assert_allclose(from_scale(to_scale(u, "log1m-ve"), "log1m-ve"), u, atol=1e-12)
    with pytest.raises(ValueError):
        to_scale([0.5], "probit")


def test_replicate_streams_are_independent_of_order():
    a = replicate_rng(42, 7).random(3)
    replicate_rng(42, 6).random(3)
    np.testing.assert_array_equal(a, replicate_rng(42, 7).random(3))


@pytest.fixture(scope="module")
def cohort():
    return generate_cohort(SimConfig(n=1500), seed=21)


def test_bootstrap_determinism(cohort):
    cfg = StudyConfig(14, 210, (150, 180))
    a = bootstrap_estimates(cohort, "proposed", 8, 99, cfg)
    b = bootstrap_estimates(cohort, "proposed", 8, 99, cfg)
    np.testing.assert_array_equal(a["ve"].natural, b["ve"].natural)
    c = bootstrap_estimates(cohort, "matching-fixed", 8, 99, cfg, match_seed=4)
    d = bootstrap_estimates(cohort, "matching-fixed", 8, 99, cfg, match_seed=4)
    np.testing.assert_array_equal(c["ve"].natural, d["ve"].natural)
    e = bootstrap_estimates(cohort, "matching-rematch", 4, 99, cfg, match_seed=4)
    assert e["ve"].n_replicates == 4


def test_degenerate_estimator_gives_identical_rows():
    # one matched pair that is resampled onto itself every time
    c = make_cohort([("a", 1, 40, 1), ("a", None, 30, 1)], max_day=60)
    cfg = StudyConfig(14, 60, (35, 45))
    out = bootstrap_estimates(c, "matching-fixed", 2, 0, cfg)
    np.testing.assert_array_equal(out["psi0"].natural[0], out["psi0"].natural[1])


def test_unstable_bootstrap_is_reported():
    # a single vaccinee: about a third of resamples leave nobody for the vaccinated model
    rows = [("a", 3, 50, 1)] + [("a", None, 10 + i, 1) for i in range(20)]
    c = make_cohort(rows, max_day=60)
    cfg = StudyConfig(14, 60, (45,))
    with pytest.raises(EstimationError, match="unstable bootstrap"):
        bootstrap_estimates(c, "proposed", 60, 0, cfg)


def test_unknown_estimator(cohort):
    with pytest.raises(ValueError):
        bootstrap_estimates(cohort, "jackknife", 5, 0, StudyConfig(14, 210, (180,)))
