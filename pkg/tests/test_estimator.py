import numpy as np
import pandas as pd
import pytest
from sklearn.base import clone

from causalve.cox import CoxFit
from causalve.estimator import (
    CausalVE,
    MarginalWeights,
    StudyConfig,
    WeightTable,
    build_lambda0_dataset,
    build_lambda1_dataset,
    estimate_ve,
    plugin_psi0,
    plugin_psi1,
    positivity_diagnostic,
    psi0_hat,
    psi1_hat,
    spline_knots_for,
    ve_from_incidence,
    weighted_quantile,
)
from causalve.exceptions import EstimationError
from causalve.simulation import SimConfig, generate_cohort

from conftest import make_cohort


def const_fit(h, max_day=200):
    return CoxFit(beta=np.zeros(0), baseline=np.full(max_day, h), n_iter=0, grad_norm=0.0, converged=True,
                  loglik=0.0)


def one_row_weights(d=1):
    return WeightTable(np.array([d]), pd.DataFrame(index=[0]), np.array([1.0]))


CFG = StudyConfig(tau=14, max_day=200, t0_grid=(15, 16, 30))


# ---------------------------------------------------------------------------
# fitting data sets
# ---------------------------------------------------------------------------

def test_lambda0_dataset_rules():
    c = make_cohort([("a", None, 30, 1), ("a", 15, 100, 0), ("a", 15, 10, 1), ("a", 15, 15, 1)], max_day=200)
    ds = build_lambda0_dataset(c, CFG)
    assert ds[["time", "event"]].values.tolist() == [[30, True], [15, False], [10, True], [15, False]]
    counted = build_lambda0_dataset(c, CFG, vax_day_event="count")
    assert counted.event.tolist() == [True, False, True, True]


def test_lambda1_dataset_rules():
    c = make_cohort([("a", 20, 30, 1), ("a", 20, 40, 1), ("a", None, 50, 1), ("a", 20, 34, 0), ("a", 20, 35, 0)],
                    max_day=200)
    ds = build_lambda1_dataset(c, CFG)
    assert ds.row.tolist() == [1, 4]
    assert ds[["time", "event"]].values.tolist() == [[20, True], [15, False]]
    assert ds.d_star.tolist() == [20, 20]


def test_lambda1_dataset_needs_members():
    c = make_cohort([("a", 20, 30, 1), ("a", None, 50, 1)], max_day=200)
    with pytest.raises(EstimationError, match="no vaccinated subjects survive tau"):
        build_lambda1_dataset(c, CFG)


# ---------------------------------------------------------------------------
# plug-in incidences
# ---------------------------------------------------------------------------

def test_psi0_zero_hazard():
    assert psi0_hat(const_fit(0.0), one_row_weights(), CFG, 30) == 0.0


def test_psi0_single_increment():
    base = np.zeros(200)
    base[15] = 0.07  # calendar day 16 = d + tau + 1 for d = 1
    fit = CoxFit(np.zeros(0), base, 0, 0.0, True, 0.0)
    assert psi0_hat(fit, one_row_weights(1), CFG, 15) == pytest.approx(0.07, abs=1e-15)


def test_psi0_constant_hazard():
    assert psi0_hat(const_fit(0.01), one_row_weights(3), CFG, 16) == pytest.approx(1 - 0.99 ** 2, abs=1e-14)


def test_psi1_examples():
    assert psi1_hat(const_fit(0.0), one_row_weights(), CFG, 30) == 0.0
    assert psi1_hat(const_fit(0.02), one_row_weights(), CFG, 15) == pytest.approx(0.02, abs=1e-15)


def test_psi1_equals_psi0_for_day_aligned_hazards():
    rng = np.random.default_rng(1)
    d = np.array([3, 7, 11])
    w = np.array([0.2, 0.5, 0.3])
    h1 = rng.uniform(0, 0.05, (3, 60))
    h0 = np.zeros((3, 80))
    for j in range(3):
        h0[j, d[j]:d[j] + 60] = h1[j]
    grid = [15, 20, 40, 60]
    np.testing.assert_allclose(plugin_psi1(h1, w, 14, grid), plugin_psi0(h0, d, w, 14, grid), atol=1e-12)


def test_psi_rejects_t0_not_after_tau():
    with pytest.raises(ValueError, match="t0 must exceed tau"):
        psi0_hat(const_fit(0.01), one_row_weights(), CFG, 14)


def test_ve_missing_when_unvaccinated_incidence_is_zero():
    np.testing.assert_array_equal(ve_from_incidence([0.0, 0.1], [0.0, 0.05]), [np.nan, 0.5])


# ---------------------------------------------------------------------------
# knots
# ---------------------------------------------------------------------------

def test_weighted_quantile_matches_duplication():
    rng = np.random.default_rng(2)
    v = rng.integers(1, 100, 40).astype(float)
    w = rng.integers(0, 4, 40)
    w[0] = 1
    q = [0.1, 0.5, 0.9]
    np.testing.assert_allclose(weighted_quantile(v, w, q), np.quantile(np.repeat(v, w), q))


def test_knot_fallback_to_linear():
    assert spline_knots_for([5, 5, 5, 6]) == ()
    assert spline_knots_for(np.arange(1, 101)) == pytest.approx((10.9, 50.5, 90.1))


# ---------------------------------------------------------------------------
# full estimator
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sim_cohort():
    return generate_cohort(SimConfig(n=1500), seed=11)


def test_no_events_after_tau_gives_missing_ve(cohort_factory):
    c = cohort_factory([("a", None, 40, 0), ("a", 1, 40, 0), ("a", None, 3, 1), ("a", 2, 40, 1), ("a", None, 40, 1)],
                       max_day=40)
    cfg = StudyConfig(tau=14, max_day=40, t0_grid=(15,))
    res = estimate_ve(c, cfg)
    assert res.psi0.estimate[0] == 0.0
    assert res.psi1.estimate[0] == 0.0
    assert np.isnan(res.ve.estimate[0])


def test_estimate_is_deterministic_and_weight_consistent(sim_cohort):
    cfg = StudyConfig(14, 210, (150, 180))
    a = estimate_ve(sim_cohort, cfg)
    b = estimate_ve(sim_cohort, cfg)
    np.testing.assert_array_equal(a.ve.estimate, b.ve.estimate)
    rng = np.random.default_rng(3)
    w = rng.multinomial(len(sim_cohort), np.full(len(sim_cohort), 1 / len(sim_cohort)))
    weighted = estimate_ve(sim_cohort, cfg, sample_weight=w)
    dup = estimate_ve(sim_cohort.take(np.repeat(np.arange(len(sim_cohort)), w)), cfg)
    np.testing.assert_allclose(weighted.ve.estimate, dup.ve.estimate, atol=1e-6)


def test_explicit_observed_weights_match_default(sim_cohort):
    cfg = StudyConfig(14, 210, (180,))
    res = estimate_ve(sim_cohort, cfg)
    table = MarginalWeights().resolve(sim_cohort, cfg)
    np.testing.assert_allclose(psi0_hat(res.fit0, table, cfg, [180]), res.psi0.estimate, atol=1e-12)
    np.testing.assert_allclose(psi1_hat(res.fit1, table, cfg, [180]), res.psi1.estimate, atol=1e-12)


def test_custom_weights(sim_cohort):
    cfg = StudyConfig(14, 210, (180,))
    vacc = np.flatnonzero(np.isfinite(sim_cohort.d_star))[:2]
    rows = tuple((int(sim_cohort.d_star[i]), sim_cohort.covariates.iloc[i].to_dict(), 0.5) for i in vacc)
    res = estimate_ve(sim_cohort, cfg, MarginalWeights("custom", rows))
    assert 0 < res.psi1.estimate[0] < 1
    x = sim_cohort.covariates.iloc[vacc[0]].to_dict()
    same_x = (sim_cohort.covariates.astype(str) == pd.Series(x).astype(str)).all(axis=1).to_numpy()
    unseen = next(d for d in range(1, 211) if not np.any(same_x & (sim_cohort.d_star == d)))
    with pytest.raises(ValueError, match="unseen"):
        estimate_ve(sim_cohort, cfg, MarginalWeights("custom", ((unseen, x, 1.0),)))
    with pytest.raises(ValueError):
        MarginalWeights("custom", ())


def test_weight_table_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        WeightTable(np.array([1, 2]), pd.DataFrame(index=[0, 1]), np.array([0.5, 0.6]))


def test_study_config_validation():
    with pytest.raises(ValueError, match="t0 must exceed tau"):
        StudyConfig(14, 100, (10, 20))
    with pytest.raises(ValueError):
        StudyConfig(14, 100, (30, 20))


def test_sklearn_interface(sim_cohort):
    est = CausalVE(tau=14, t0_grid=(120, 180))
    assert clone(est).get_params() == est.get_params()
    est.fit(sim_cohort)
    ve = est.predict()
    assert ve.shape == (2,)
    assert est.predict(180)[0] == ve[1]
    assert est.predict_incidence(True, 180)[0] < est.predict_incidence(False, 180)[0]


def test_positivity_flags(cohort_factory):
    c = cohort_factory([("a", 3, 40, 0), ("a", None, 40, 0), ("b", None, 40, 0), ("b", None, 20, 1)],
                       levels=("a", "b", "c"), max_day=40)
    cfg = StudyConfig(2, 40, (10,))
    table = positivity_diagnostic(c, cfg, bucket_days=20)
    flags = table.groupby("stratum").flag.first().to_dict()
    assert flags == {"a": False, "b": True}
    assert "c" not in set(table.stratum)
    ok = cohort_factory([("a", 3, 40, 0), ("b", 5, 40, 0), ("b", None, 40, 0)], max_day=40)
    assert not positivity_diagnostic(ok, cfg).flag.any()
