"""Acceptance criteria 1-9.

Each test prints one ``CRITERION k: PASS|FAIL`` line (also collected into the
terminal summary).  Criteria 1-3 share one benchmark run (n in {1000, 2000},
200 replicates, B = 500), which takes tens of minutes on a single core.
"""

import itertools
import os
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from causalve.benchmark import run_benchmark, run_replicate
from causalve.bootstrap import BootstrapMatrix, from_scale, pointwise_ci, simultaneous_ci, to_scale
from causalve.cox import fit_cox, gradient_check
from causalve.estimator import StudyConfig
from causalve.matching import rolling_match
from causalve.simulation import SimConfig, ToyDGP, null_config
from causalve.survival import expit, inv_log1m, kaplan_meier, log1m, logit, nelson_aalen

from conftest import ACCEPTANCE_LINES, make_cohort

BENCH_SEED = 20240601
NULL_SEED = 777


def report(k, ok, detail):
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


@pytest.fixture(scope="module")
def benchmark():
    return run_benchmark(SimConfig(), [1000, 2000], sims=200, B=500, seed=BENCH_SEED, t0=180,
                         mc_reps=200_000, n_jobs=os.cpu_count() or 1)


@pytest.mark.slow
def test_criterion_1_benchmark_bias_coverage_efficiency(benchmark):
    m, p = benchmark.row(2000, "matching"), benchmark.row(2000, "proposed")
    ok = (abs(m.bias) <= 0.03 and abs(p.bias) <= 0.03 and 0.90 <= m.coverage <= 0.98
          and 0.90 <= p.coverage <= 0.98 and p.rel_eff < 0.85)
    report(1, ok, f"n=2000 bias matching={m.bias:+.4f} proposed={p.bias:+.4f}; coverage matching={m.coverage:.3f} "
                  f"proposed={p.coverage:.3f}; proposed rel_eff={p.rel_eff:.3f} "
                  f"(failed fits {m.n_failed}/{p.n_failed})")


@pytest.mark.slow
def test_criterion_2_width_ordering(benchmark):
    parts, ok = [], True
    for n in (1000, 2000):
        wp, wm = benchmark.row(n, "proposed").width, benchmark.row(n, "matching").width
        ok &= wp < wm
        parts.append(f"n={n} proposed={wp:.3f} matching={wm:.3f}")
    report(2, ok, "log(1-VE) widths " + "; ".join(parts))


@pytest.mark.slow
def test_criterion_3_incidence_targets(benchmark):
    truth = benchmark.truth
    psi0, psi1 = truth.at("psi0_true", 180), truth.at("psi1_true", 180)
    b0 = benchmark.row(2000, "proposed", "psi0").bias
    b1 = benchmark.row(2000, "proposed", "psi1").bias
    ok = abs(psi0 - 0.059) <= 0.002 and 0.02 <= psi1 <= 0.06 and abs(b0) <= 0.01 and abs(b1) <= 0.01
    report(3, ok, f"oracle psi0={psi0:.4f} psi1={psi1:.4f} VE={truth.at('ve_true', 180):.4f}; "
                  f"proposed bias psi0={b0:+.5f} psi1={b1:+.5f}")


def test_criterion_4_cox_oracles():
    beta = fit_cox([1, 2, 3], [1, 1, 1], [[1.0], [0.0], [1.0]]).beta[0]
    closed = abs(beta + 0.5 * np.log(2)) <= 1e-8
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        n, p = int(rng.integers(5, 60)), int(rng.integers(1, 5))
        t = rng.integers(1, 12, n)
        e = rng.random(n) < 0.6
        e[0] = True
        Z = rng.normal(size=(n, p))
        worst = max(worst, gradient_check(t, e, Z, rng.normal(scale=0.5, size=p)))
    na_exact = True
    for _ in range(20):
        n = int(rng.integers(1, 40))
        t = rng.integers(1, 10, n)
        e = rng.random(n) < 0.5
        e[0] = True
        fit = fit_cox(t, e, np.zeros((n, 0)))
        na = nelson_aalen(t, e)
        full = np.zeros(fit.baseline.size)
        full[na.times - 1] = na.increments
        na_exact &= bool(np.array_equal(fit.baseline, full))
    ok = closed and worst < 1e-6 and na_exact
    report(4, ok, f"beta-(-ln2/2)={beta + 0.5 * np.log(2):.1e}; max score FD gap={worst:.1e}; "
                  f"baseline==Nelson-Aalen: {na_exact}")


def redistribute_to_the_right(times, events, grid):
    """Exact survival by redistributing censored mass equally to later subjects."""
    n = len(times)
    mass = [Fraction(1, n)] * n
    order = sorted(range(n), key=lambda i: (times[i], not events[i]))
    for i in order:
        if not events[i]:
            later = [j for j in range(n) if times[j] > times[i]]
            if later:
                share = mass[i] / len(later)
                for j in later:
                    mass[j] += share
                mass[i] = Fraction(0)
    return [1 - sum((mass[i] for i in range(n) if events[i] and times[i] <= g), Fraction(0)) for g in grid]


def test_criterion_5_km_exhaustive():
    states = [(t, e) for t in range(1, 6) for e in (False, True)]
    grid = list(range(0, 7))
    worst, count = 0.0, 0
    for size in range(1, 7):
        for combo in itertools.combinations_with_replacement(states, size):
            t = [s[0] for s in combo]
            e = [s[1] for s in combo]
            got = kaplan_meier(t, e)(grid)
            want = np.array([float(v) for v in redistribute_to_the_right(t, e, grid)])
            worst = max(worst, float(np.max(np.abs(got - want))))
            count += 1
    report(5, worst <= 1e-12, f"{count} datasets, max |KM - exact| = {worst:.1e}")


def test_criterion_6_ci_machinery():
    rng = np.random.default_rng(6)
    vals = rng.normal(size=(2000, 1))
    single = simultaneous_ci([0.3], BootstrapMatrix(vals, from_scale(vals, "log1m-ve"), np.array([180]), "log1m-ve"),
                             n_sim=10_000, sim_seed=6).mc_quantile
    contained = 0
    for k in range(50):
        m = int(rng.integers(2, 12))
        scale = ("logit-incidence", "log1m-ve")[k % 2]
        vals = rng.normal(size=(int(rng.integers(20, 300)), m)) @ rng.normal(size=(m, m)) * 0.3
        est = rng.uniform(0.05, 0.6, m)
        mat = BootstrapMatrix(vals, from_scale(vals, scale), np.arange(m) + 15, scale)
        pw, sim = pointwise_ci(est, mat), simultaneous_ci(est, mat, n_sim=5000, sim_seed=k)
        contained += bool(np.all(sim.lower <= pw.lower) and np.all(sim.upper >= pw.upper))
    p = np.linspace(1e-6, 1 - 1e-6, 2001)
    v = np.linspace(-20, 0.999, 2001)
    trip = max(np.max(np.abs(expit(logit(p)) - p)), np.max(np.abs(inv_log1m(log1m(v)) - v)),
               np.max(np.abs(from_scale(to_scale(p, "logit-incidence"), "logit-incidence") - p)),
               np.max(np.abs(from_scale(to_scale(v, "log1m-ve"), "log1m-ve") - v)))
    ok = abs(single - 1.96) <= 0.02 and contained == 50 and trip <= 1e-12
    report(6, ok, f"single-column m={single:.4f} (z={stats.norm.ppf(0.975):.4f}); "
                  f"bands nested {contained}/50; round-trip error {trip:.1e}")


@pytest.mark.slow
def test_criterion_7_null_effect():
    rows = []
    for sim in range(100):
        rows += run_replicate(null_config(), 2000, sim, NULL_SEED, B=200, t0=180)
    ve = pd.DataFrame(rows).query("target == 've'")
    parts, ok = [], True
    for method, grp in ve.groupby("method"):
        est = grp.estimate.to_numpy()
        med = float(np.nanmedian(np.abs(est)))
        cover = float(((grp.lower <= 0) & (grp.upper >= 0)).mean())
        ok &= med <= 0.05 and 0.90 <= cover <= 0.98
        parts.append(f"{method} median|VE|={med:.4f} cover0={cover:.2f} failed={int(grp.failed.sum())}")
    report(7, ok, "; ".join(parts))


def test_criterion_8_identification():
    toy = ToyDGP()
    grid = [3, 4, 5, 6]
    p0, p1 = toy.plugin_truth(grid)
    oracle = toy.counterfactual_oracle(grid, mc_reps=1_000_000, seed=2024)
    z0 = np.abs(p0 - oracle.psi0_true) / oracle.mc_se["psi0"]
    z1 = np.abs(p1 - oracle.psi1_true) / oracle.mc_se["psi1"]
    ok = bool(np.all(z0 <= 3) and np.all(z1 <= 3))
    report(8, ok, f"max |plug-in - oracle| / mc_se: psi0={z0.max():.2f} psi1={z1.max():.2f}")


def test_criterion_9_matching_bookkeeping():
    rows = [
        ("a", 5, 100, 1), ("a", 40, 150, 0),   # control vaccinated on day 40 censors the pair
        ("b", 10, 20, 1), ("b", None, 200, 0),  # case endpoint 10 days after match: excluded
        ("c", 8, 200, 0), ("c", None, 15, 1),   # control endpoint 7 days after match: excluded
        ("d", 3, 60, 1), ("d", None, 80, 1),    # both endpoints after the window
        ("e", 4, 100, 0), ("e", 18, 100, 1),    # control vaccinated exactly tau days after match
        ("f", 6, 20, 1), ("f", None, 21, 1),    # case endpoint on day match + tau: excluded
        ("g", 7, 22, 1), ("g", None, 100, 0),   # case endpoint one day past the window
        ("h", 9, 50, 0), ("h", 9, 60, 0), ("h", None, 5, 1),  # no eligible control
    ]
    cohort = make_cohort(rows, max_day=210)
    cfg = StudyConfig(14, 210, (180,))
    expected_pairs = [(3, 6, 7, None), (4, 8, 9, 18), (5, 0, 1, 40), (6, 10, 11, None), (7, 12, 13, None),
                      (8, 4, 5, None), (10, 2, 3, None)]
    expected_excluded = [False, False, False, True, False, True, True]
    expected_followup = [(57, True, 77, True), (14, False, 14, False), (35, False, 35, False),
                         (14, True, 15, True), (15, True, 93, False), (192, False, 7, True),
                         (10, True, 190, False)]
    ok = True
    for seed in range(5):
        mc = rolling_match(cohort, None, cfg, seed)
        pairs = [(p.d, p.vaccinated, p.control, p.pair_censor_day) for p in mc.pairs]
        follow = list(zip(mc.time_v.tolist(), mc.event_v.tolist(), mc.time_c.tolist(), mc.event_c.tolist()))
        ok &= pairs == expected_pairs and mc.excluded.tolist() == expected_excluded and follow == expected_followup
        ok &= mc.n_cases == 11 and mc.excluded_pairs == 3
    strict = rolling_match(cohort, None, cfg, 0, control_can_become_case=False)
    ok &= strict.n_cases == 9 and len(strict) == 7
    report(9, ok, "hand-enumerated pairs, tau exclusions, censor days and follow-up checked over 5 seeds")
