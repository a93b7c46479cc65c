import numpy as np
import pytest

from causalve.simulation import (
    NEVER_DAY,
    SimConfig,
    ToyDGP,
    calibrate_beta0,
    generate_cohort,
    null_config,
    true_curves_oracle,
)


@pytest.fixture(scope="module")
def big():
    return generate_cohort(SimConfig(n=50_000), seed=3)


def test_cohort_shape_and_schema():
    c = generate_cohort(SimConfig(n=300), seed=1)
    assert len(c) == 300
    assert list(c.covariates.columns) == ["male", "age", "race", "cluster"]
    assert set(c.covariates.cluster) <= {f"c{k}" for k in range(1, 11)}
    assert c.ids.tolist() == list(range(1, 301))


def test_vaccination_recorded_before_outcome(big):
    vacc = np.isfinite(big.d_star)
    assert np.all(big.d_star[vacc] < big.y_tilde[vacc])
    assert np.all((big.y_tilde >= 1) & (big.y_tilde <= 210))


def test_ever_vaccinated_fraction():
    # the endpoint can hide a vaccination, so count on a cohort without endpoints
    cfg = SimConfig(n=50_000).replace(endpoint__beta0_onset=10_000)
    c = generate_cohort(cfg, seed=4)
    assert not c.delta.any()
    # a few ever-vaccinated subjects are censored before their first daily success
    frac = np.isfinite(c.d_star).mean()
    assert frac == pytest.approx(0.42, abs=0.01)


def test_censoring_point_mass():
    cfg = SimConfig(n=50_000).replace(endpoint__beta0_onset=10_000)
    c = generate_cohort(cfg, seed=5)
    assert np.mean(c.y_tilde == 210) == pytest.approx(0.80 + 0.1 / 210, abs=0.01)
    assert np.mean(c.y_tilde == 90) == pytest.approx(0.10 + 0.1 / 210, abs=0.01)


def test_no_events_before_onset(big):
    assert np.all(big.y_tilde[big.delta] >= 135)


def test_generator_is_deterministic():
    a = generate_cohort(SimConfig(n=500), seed=9)
    b = generate_cohort(SimConfig(n=500), seed=9)
    np.testing.assert_array_equal(a.y_tilde, b.y_tilde)
    np.testing.assert_array_equal(a.d_star, b.d_star)
    assert a.covariates.equals(b.covariates)
    assert not np.array_equal(a.y_tilde, generate_cohort(SimConfig(n=500), seed=10).y_tilde)


def test_vaccine_effect_curve():
    cfg = SimConfig()
    bv = cfg.beta_v_of_k(np.array([100, 200, 300]))
    np.testing.assert_allclose(bv, [np.log(0.25), 0.0, 0.0])
    assert np.all(cfg.replace(endpoint__vaccine_effect=0.0).beta_v_of_k([1, 100]) == 0.0)


def test_yaml_round_trip_and_hash():
    cfg = SimConfig(n=123, seed=4).replace(endpoint__beta0=-3.0, censoring__points=(80, 210))
    back = SimConfig.from_yaml(cfg.to_yaml())
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()
    assert cfg.replace(n=124).config_hash() != cfg.config_hash()
    assert SimConfig.from_yaml("") == SimConfig()


def test_config_errors():
    with pytest.raises(ValueError, match="unknown config keys"):
        SimConfig.from_dict({"sample_size": 10})
    with pytest.raises(ValueError, match="unknown keys in section"):
        SimConfig.from_dict({"endpoint": {"beta_zero": 1.0}})
    with pytest.raises(ValueError, match="invalid mixture weights"):
        SimConfig.from_dict({"censoring": {"weights": [0.5, 0.2, 0.2]}})
    with pytest.raises(ValueError, match="line 2"):
        SimConfig.from_yaml("n: 10\n- 3\n")
    with pytest.raises(ValueError, match="p_vax"):
        SimConfig().replace(vaccination__p_vax=1.5)


def test_calibration_rejects_impossible_target():
    with pytest.raises(ValueError):
        calibrate_beta0(0.0, SimConfig())
    with pytest.raises(ValueError):
        calibrate_beta0(1.0, SimConfig())


def test_oracle_monotone_in_intercept():
    base = SimConfig()
    lo = true_curves_oracle(base.replace(endpoint__beta0=-3.0), 4000, [180], seed=1)
    hi = true_curves_oracle(base.replace(endpoint__beta0=-2.0), 4000, [180], seed=1)
    assert lo.psi0_true[0] < hi.psi0_true[0]
    assert lo.psi1_true[0] < hi.psi1_true[0]


def test_oracle_is_deterministic_and_orders_arms():
    a = true_curves_oracle(SimConfig(), 5000, [150, 180], seed=7)
    b = true_curves_oracle(SimConfig(), 5000, [150, 180], seed=7)
    np.testing.assert_array_equal(a.psi0_true, b.psi0_true)
    assert np.all(a.psi1_true <= a.psi0_true)
    assert np.all(np.diff(a.psi0_true) >= 0)
    assert a.to_frame().shape == (2, 7)


def test_null_oracle_has_zero_effect():
    truth = true_curves_oracle(null_config(), 5000, [60, 180], seed=2)
    np.testing.assert_array_equal(truth.psi0_true, truth.psi1_true)
    np.testing.assert_array_equal(truth.ve_true, 0.0)


def test_null_config_removes_confounding():
    cfg = null_config()
    assert cfg.vaccination.covariate_scale == 0.0
    assert cfg.endpoint.vaccine_effect == 0.0
    assert cfg.endpoint.beta0_onset == 1


def test_never_day_marker_is_not_a_day():
    assert NEVER_DAY > 10_000


def test_toy_observed_weights_sum_to_one():
    lam0, lam1, weights = ToyDGP().observed_quantities()
    assert sum(weights.values()) == pytest.approx(1.0)
    assert lam0.shape == (2, 10)
    assert np.all((lam0 > 0) & (lam0 < 1))
    assert set(k[0] for k in weights) <= set(range(1, 5))


def test_toy_without_frailty_or_effect_has_equal_arms():
    toy = ToyDGP(u_mult=1.0, vaccine_mult=1.0)
    p0, p1 = toy.plugin_truth([3, 5, 6])
    np.testing.assert_allclose(p0, p1, atol=1e-14)
