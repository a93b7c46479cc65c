"""Simulation benchmark of the proposed and matching estimators.

For each cohort size and replicate a cohort is generated, both estimators
are run with bootstrap Wald intervals, and bias, MSE, coverage, interval
width and relative efficiency are summarized against oracle truth.
Incidences are assessed on the logit scale and VE on the ``log(1 - VE)``
scale.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .bootstrap import TARGET_SCALE, bootstrap_estimates, pointwise_ci, to_scale
from .estimator import StudyConfig, estimate_ve
from .exceptions import EstimationError
from .matching import matched_cox, matched_km, rolling_match
from .simulation import SimConfig, SimTruth, generate_cohort, true_curves_oracle

__all__ = ["MetricsRow", "BenchmarkResult", "derive_seed", "run_replicate", "run_benchmark", "summarize",
           "seed_sweep"]

METHODS = ("matching", "proposed")
TARGETS = ("ve", "psi0", "psi1")


@dataclass(frozen=True)
class MetricsRow:
    n: int
    method: str
    target: str
    bias: float
    mse: float
    coverage: float
    width: float
    rel_eff: float
    n_sims: int
    n_failed: int


@dataclass(eq=False)
class BenchmarkResult:
    metrics: pd.DataFrame
    raw: pd.DataFrame
    truth: SimTruth
    t0: int

    def row(self, n: int, method: str, target: str = "ve") -> MetricsRow:
        m = self.metrics
        hit = m[(m.n == n) & (m.method == method) & (m.target == target)]
        if hit.empty:
            raise KeyError((n, method, target))
        rec = hit.iloc[0].to_dict()
        return MetricsRow(**{k: rec[k] for k in MetricsRow.__dataclass_fields__})


def derive_seed(*parts) -> int:
    """Deterministic 63-bit seed from integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(2, np.uint64)[0] >> np.uint64(1))


def _rows_from(result, boot, n, sim, method, t0, alpha, error=None):
    rows = []
    for target in TARGETS:
        rec = {"n": n, "sim": sim, "method": method, "target": target, "t0": t0}
        if error is None:
            curve = getattr(result, target)
            est = float(curve.estimate[0])
            band = pointwise_ci(curve.estimate, boot[target], alpha)
            rec.update(estimate=est, lower=float(band.lower[0]), upper=float(band.upper[0]),
                       se=float(band.se[0]), width=float(band.width()[0]), failed=False, error="")
        else:
            rec.update(estimate=np.nan, lower=np.nan, upper=np.nan, se=np.nan, width=np.nan, failed=True,
                       error=str(error))
        rows.append(rec)
    return rows


def run_replicate(cfg: SimConfig, n: int, sim: int, seed: int, B: int, t0: int = 180, alpha: float = 0.05,
                  methods=METHODS, matching_analysis: str = "km") -> list[dict]:
    """Raw result rows (one per method and target) for one simulated cohort."""
    cohort = generate_cohort(cfg.replace(n=n), seed=derive_seed(seed, n, sim, 0))
    study = StudyConfig(cfg.tau, cfg.max_day, (t0,))
    boot_seed = derive_seed(seed, n, sim, 1)
    rows = []
    for method in methods:
        try:
            if method == "proposed":
                res = estimate_ve(cohort, study)
                boot = bootstrap_estimates(cohort, "proposed", B, boot_seed, study)
            elif method == "matching":
                mc = rolling_match(cohort, None, study, derive_seed(seed, n, sim, 2))
                res = (matched_km if matching_analysis == "km" else matched_cox)(mc, study)
                boot = bootstrap_estimates(cohort, "matching-fixed", B, boot_seed, study, matched=mc,
                                           analysis=matching_analysis)
            else:
                raise ValueError(f"unknown method {method!r}")
            rows.extend(_rows_from(res, boot, n, sim, method, t0, alpha))
        except EstimationError as exc:
            rows.extend(_rows_from(None, None, n, sim, method, t0, alpha, error=exc))
    return rows


def _task(args):
    return run_replicate(*args)


def summarize(raw: pd.DataFrame, truth: dict[str, float]) -> pd.DataFrame:
    """Metrics per ``(n, method, target)``; ``truth`` maps target to its true value.

    Relative efficiency is the transformed-scale MSE divided by that of
    matching for the same ``n`` and target.
    """
    out = []
    for (n, method, target), grp in raw.groupby(["n", "method", "target"], sort=True):
        ok = grp[~grp.failed]
        true = truth[target]
        err = ok.estimate.to_numpy() - true
        scale = TARGET_SCALE[target]
        terr = to_scale(ok.estimate.to_numpy(), scale) - to_scale(true, scale)
        banded = ok[np.isfinite(ok.lower) & np.isfinite(ok.upper)]
        cover = ((banded.lower <= true) & (true <= banded.upper)).mean() if len(banded) else np.nan
        out.append({
            "n": int(n), "method": method, "target": target,
            "bias": float(np.nanmean(err)) if err.size else np.nan,
            "mse": float(np.nanmean(err ** 2)) if err.size else np.nan,
            "mse_t": float(np.nanmean(terr ** 2)) if terr.size else np.nan,
            "coverage": float(cover),
            "width": float(np.nanmean(ok.width)) if len(ok) else np.nan,
            "n_sims": int(len(grp)),
            "n_failed": int(grp.failed.sum()),
        })
    table = pd.DataFrame(out)
    ref = table[table.method == "matching"].set_index(["n", "target"])["mse_t"]
    table["rel_eff"] = [
        row.mse_t / ref.get((row.n, row.target), np.nan) for row in table.itertuples()
    ]
    return table[["n", "method", "target", "bias", "mse", "coverage", "width", "rel_eff", "n_sims", "n_failed"]]


def run_benchmark(cfg: SimConfig, n_list, sims: int, B: int, seed: int = 0, *, t0: int = 180,
                  alpha: float = 0.05, truth: SimTruth | None = None, mc_reps: int = 200_000,
                  n_jobs: int = 1, methods=METHODS, matching_analysis: str = "km") -> BenchmarkResult:
    """Run ``sims`` replicates per cohort size and summarize against oracle truth.

    ``n_jobs > 1`` spreads replicates over processes; results do not depend
    on it because every replicate derives its seeds from ``(seed, n, sim)``.
    """
    if sims < 2:
        raise ValueError("sims must be at least 2")
    if truth is None:
        truth = true_curves_oracle(cfg, mc_reps, [t0], seed=derive_seed(seed, 99))
    tasks = [(cfg, int(n), s, seed, B, t0, alpha, tuple(methods), matching_analysis)
             for n in n_list for s in range(sims)]
    if n_jobs == -1:
        n_jobs = os.cpu_count() or 1
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            chunks = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * n_jobs))))
    else:
        chunks = [_task(t) for t in tasks]
    raw = pd.DataFrame([row for chunk in chunks for row in chunk])
    values = {"ve": truth.at("ve_true", t0), "psi0": truth.at("psi0_true", t0), "psi1": truth.at("psi1_true", t0)}
    return BenchmarkResult(summarize(raw, values), raw, truth, t0)


def seed_sweep(cohort, n_seeds: int, study: StudyConfig, matching_vars=None, base_seed: int = 0) -> pd.DataFrame:
    """Matching VE curves under ``n_seeds`` seeds, plus the cross-seed SD per t0.

    Returns a long frame with columns ``seed``, ``t0``, ``psi0``, ``psi1``,
    ``ve``; rows with ``seed == "sd"`` hold the cross-seed SD (only when
    ``n_seeds > 1``).
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")
    frames = []
    for k in range(n_seeds):
        s = base_seed + k
        res = matched_km(rolling_match(cohort, matching_vars, study, s), study)
        frames.append(pd.DataFrame({"seed": str(s), "t0": study.grid, "psi0": res.psi0.estimate,
                                    "psi1": res.psi1.estimate, "ve": res.ve.estimate}))
    table = pd.concat(frames, ignore_index=True)
    if n_seeds > 1:
        sd = table.groupby("t0", sort=True)[["psi0", "psi1", "ve"]].std(ddof=1).reset_index()
        sd.insert(0, "seed", "sd")
        table = pd.concat([table, sd], ignore_index=True)
    return table


def metrics_rows(table: pd.DataFrame) -> list[MetricsRow]:
    return [MetricsRow(**{k: rec[k] for k in MetricsRow.__dataclass_fields__}) for rec in table.to_dict("records")]
