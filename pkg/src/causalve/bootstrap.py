"""Nonparametric bootstrap and Wald-type pointwise and simultaneous bands.

Intervals are formed on the logit scale for cumulative incidences and on
the ``log(1 - VE)`` scale for VE, then mapped back.  The simultaneous
critical value is the ``1 - alpha`` quantile of ``max_t |W_t| / SE_t`` with
``W`` multivariate normal with the bootstrap covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .data import Cohort
from .estimator import DEFAULT_KNOT_QUANTILES, DEFAULT_RIDGE, StudyConfig, _Prepared
from .exceptions import EstimationError
from .matching import MatchedCohort, matched_cox, matched_km, rolling_match

__all__ = [
    "SCALES",
    "BootstrapMatrix",
    "ConfidenceBand",
    "to_scale",
    "from_scale",
    "replicate_rng",
    "bootstrap_estimates",
    "pointwise_ci",
    "simultaneous_ci",
    "mvn_sample",
]

SCALES = ("logit-incidence", "log1m-ve")
TARGET_SCALE = {"psi0": "logit-incidence", "psi1": "logit-incidence", "ve": "log1m-ve"}
MAX_FAIL_FRACTION = 0.2


def to_scale(values, scale: str) -> np.ndarray:
    """Transform to the analysis scale; out-of-domain values become NaN."""
    v = np.asarray(values, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if scale == "logit-incidence":
            out = np.log(v) - np.log1p(-v)
        elif scale == "log1m-ve":
            out = np.log1p(-v)
        else:
            raise ValueError(f"unknown scale {scale!r}")
    return np.where(np.isfinite(out), out, np.nan)


def from_scale(values, scale: str) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if scale == "logit-incidence":
        return 1.0 / (1.0 + np.exp(-v))
    if scale == "log1m-ve":
        return -np.expm1(v)
    raise ValueError(f"unknown scale {scale!r}")


@dataclass(eq=False)
class BootstrapMatrix:
    """Replicates (rows) by t0 (columns) on the analysis scale.

    ``natural`` keeps the untransformed replicate estimates; cells whose
    transform is non-finite are NaN in ``values`` and counted in
    ``n_nonfinite``.  ``n_failed`` counts replicates whose estimator raised.
    """

    values: np.ndarray
    natural: np.ndarray
    t0: np.ndarray
    scale: str
    master_seed: int | None = None
    n_failed: int = 0

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] < 2:
            raise ValueError("a bootstrap matrix needs at least 2 replicates")

    @classmethod
    def from_natural(cls, natural, t0, scale, master_seed=None, n_failed=0) -> "BootstrapMatrix":
        natural = np.atleast_2d(np.asarray(natural, dtype=float))
        return cls(to_scale(natural, scale), natural, np.asarray(t0), scale, master_seed, n_failed)

    @property
    def n_replicates(self) -> int:
        return self.values.shape[0]

    @property
    def n_nonfinite(self) -> int:
        return int(np.sum(~np.isfinite(self.values)))

    def standard_errors(self) -> np.ndarray:
        """Column SDs (denominator ``B - 1``) over finite cells; NaN with fewer than two."""
        finite = np.isfinite(self.values)
        count = finite.sum(axis=0)
        filled = np.where(finite, self.values, 0.0)
        mean = filled.sum(axis=0) / np.maximum(count, 1)
        ss = np.where(finite, (self.values - mean) ** 2, 0.0).sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            se = np.sqrt(ss / (count - 1))
        return np.where(count >= 2, se, np.nan)


@dataclass(eq=False)
class ConfidenceBand:
    """Band on the natural scale with its critical value.

    ``mc_quantile`` is the simulated max-statistic quantile before it is
    floored at the pointwise critical value (simultaneous bands only).
    """

    level: float
    kind: str
    lower: np.ndarray
    upper: np.ndarray
    critical_value: float
    se: np.ndarray
    scale: str
    mc_quantile: float | None = None

    def width(self) -> np.ndarray:
        """Width on the analysis scale."""
        lo, hi = to_scale(self.lower, self.scale), to_scale(self.upper, self.scale)
        return np.abs(hi - lo)

    def covers(self, truth) -> np.ndarray:
        return (self.lower <= truth) & (truth <= self.upper)


def _band(estimate, se, crit, scale, level, kind, mc_quantile=None) -> ConfidenceBand:
    estimate = np.atleast_1d(np.asarray(estimate, dtype=float))
    centre = to_scale(estimate, scale)
    lo_t, hi_t = centre - crit * se, centre + crit * se
    a, b = from_scale(lo_t, scale), from_scale(hi_t, scale)
    # log(1 - VE) is decreasing in VE
    lower, upper = (a, b) if scale == "logit-incidence" else (b, a)
    exact = se == 0
    lower = np.where(exact, estimate, lower)
    upper = np.where(exact, estimate, upper)
    return ConfidenceBand(level, kind, lower, upper, float(crit), se, scale, mc_quantile)


def pointwise_ci(estimate, matrix: BootstrapMatrix, alpha: float = 0.05) -> ConfidenceBand:
    """``g^{-1}(g(est) -/+ z_{1-alpha/2} SE_boot)`` at every t0.

    t0 values with fewer than two finite replicates, or whose estimate is
    outside the transform's domain, get a missing band.
    """
    z = stats.norm.ppf(1 - alpha / 2)
    return _band(estimate, matrix.standard_errors(), z, matrix.scale, 1 - alpha, "pointwise")


def mvn_sample(chol: np.ndarray, n: int, seed=None) -> np.ndarray:
    """``n`` draws of ``L @ e`` with ``e`` standard normal; rows are draws."""
    chol = np.atleast_2d(np.asarray(chol, dtype=float))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.standard_normal((n, chol.shape[1])) @ chol.T


def _cholesky(sigma: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError:
        ridge = 1e-10 * np.trace(sigma) / sigma.shape[0]
        sigma = sigma + ridge * np.eye(sigma.shape[0])
        try:
            return linalg.cholesky(sigma, lower=True)
        except linalg.LinAlgError:
            # rank-deficient beyond the ridge: factor through the eigendecomposition
            vals, vecs = linalg.eigh(sigma)
            return vecs * np.sqrt(np.clip(vals, 0, None))


def simultaneous_ci(estimate, matrix: BootstrapMatrix, alpha: float = 0.05, n_sim: int = 10_000,
                    sim_seed=0) -> ConfidenceBand:
    """Band with ``z`` replaced by the simulated ``m_{1-alpha}``.

    The covariance is estimated from replicates finite at every usable t0;
    t0 values with zero or missing SE are left out of the maximum.  The
    critical value is floored at ``z_{1-alpha/2}`` so the band always
    contains the pointwise one.
    """
    se = matrix.standard_errors()
    use = np.isfinite(se) & (se > 0)
    if not np.any(use):
        raise EstimationError("degenerate covariance")
    vals = matrix.values[:, use]
    rows = np.all(np.isfinite(vals), axis=1)
    if rows.sum() < 2:
        raise EstimationError("degenerate covariance")
    sigma = np.atleast_2d(np.cov(vals[rows], rowvar=False, ddof=1))
    if not np.any(sigma):
        raise EstimationError("degenerate covariance")
    scale = np.sqrt(np.diag(sigma))
    if not np.any(scale > 0):
        raise EstimationError("degenerate covariance")
    draws = mvn_sample(_cholesky(sigma), n_sim, sim_seed)
    live = scale > 0
    stat = np.max(np.abs(draws[:, live]) / scale[live], axis=1)
    m = float(np.quantile(stat, 1 - alpha))
    z = float(stats.norm.ppf(1 - alpha / 2))
    return _band(estimate, se, max(m, z), matrix.scale, 1 - alpha, "simultaneous", mc_quantile=m)


def replicate_rng(master_seed: int, r: int) -> np.random.Generator:
    """Generator for replicate ``r``; depends only on ``(master_seed, r)``."""
    return np.random.default_rng([int(master_seed), int(r)])


def _proposed_replicates(cohort, cfg, B, master_seed, knot_quantiles, vax_day_event, ridge, start=0):
    prep = _Prepared(cohort, cfg, knot_quantiles, vax_day_event, ridge)
    full = prep.estimate()
    ref = np.stack([full.psi0.estimate, full.psi1.estimate, full.ve.estimate])
    n = len(cohort)
    out = np.full((3, B, cfg.grid.size), np.nan)
    failed = 0
    probs = np.full(n, 1.0 / n)
    for r in range(B):
        counts = replicate_rng(master_seed, start + r).multinomial(n, probs)
        try:
            res = prep.estimate(counts, init0=full.fit0.beta, init1=full.fit1.beta)
        except EstimationError:
            failed += 1
            continue
        out[:, r] = res.psi0.estimate, res.psi1.estimate, res.ve.estimate
    return out, failed, ref


def _curves(res):
    return np.stack([res.psi0.estimate, res.psi1.estimate, res.ve.estimate])


def _matching_fixed_replicates(mc: MatchedCohort, cfg, B, master_seed, analysis, start=0):
    analyse = matched_km if analysis == "km" else matched_cox
    ref = _curves(analyse(mc, cfg))
    keep = mc.retained
    out = np.full((3, B, cfg.grid.size), np.nan)
    failed = 0
    probs = np.full(keep.size, 1.0 / keep.size)
    for r in range(B):
        counts = replicate_rng(master_seed, start + r).multinomial(keep.size, probs)
        w = np.zeros(len(mc))
        w[keep] = counts
        try:
            res = analyse(mc, cfg, pair_weight=w)
        except EstimationError:
            failed += 1
            continue
        out[:, r] = res.psi0.estimate, res.psi1.estimate, res.ve.estimate
    return out, failed, ref


def _matching_rematch_replicates(cohort, cfg, B, master_seed, analysis, matching_vars, match_seed, start=0):
    analyse = matched_km if analysis == "km" else matched_cox
    ref = _curves(analyse(rolling_match(cohort, matching_vars, cfg, match_seed), cfg))
    n = len(cohort)
    out = np.full((3, B, cfg.grid.size), np.nan)
    failed = 0
    for r in range(B):
        rng = replicate_rng(master_seed, start + r)
        idx = rng.integers(0, n, n)
        try:
            mc = rolling_match(cohort.take(idx), matching_vars, cfg, rng)
            res = analyse(mc, cfg)
        except EstimationError:
            failed += 1
            continue
        out[:, r] = res.psi0.estimate, res.psi1.estimate, res.ve.estimate
    return out, failed, ref


def bootstrap_estimates(cohort: Cohort, estimator: str, B: int, master_seed: int, cfg: StudyConfig, *,
                        matched: MatchedCohort | None = None, matching_vars=None, analysis: str = "km",
                        match_seed: int = 0, knot_quantiles=DEFAULT_KNOT_QUANTILES,
                        vax_day_event: str = "censor", ridge: float = DEFAULT_RIDGE) -> dict[str, BootstrapMatrix]:
    """Bootstrap matrices for ``psi0``, ``psi1`` and ``ve``.

    ``estimator`` is ``"proposed"`` (resample subjects and refit),
    ``"matching-fixed"`` (resample retained pairs of one matched cohort,
    ``matched`` or a fresh match with ``match_seed``) or
    ``"matching-rematch"`` (resample subjects and rematch).

    Raises
    ------
    EstimationError
        ``"unstable bootstrap"`` when, at some t0 where the full-sample
        estimate exists, more than 20% of replicates give none.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    if estimator == "proposed":
        out, failed, ref = _proposed_replicates(cohort, cfg, B, master_seed, knot_quantiles, vax_day_event,
                                                ridge)
    elif estimator == "matching-fixed":
        if matched is None:
            matched = rolling_match(cohort, matching_vars, cfg, match_seed)
        out, failed, ref = _matching_fixed_replicates(matched, cfg, B, master_seed, analysis)
    elif estimator == "matching-rematch":
        out, failed, ref = _matching_rematch_replicates(cohort, cfg, B, master_seed, analysis, matching_vars,
                                                        match_seed)
    else:
        raise ValueError(f"unknown bootstrap estimator {estimator!r}")
    # a cell fails when the replicate gives nothing where the full-sample estimate exists
    lost = np.isnan(out) & np.isfinite(ref)[:, None, :]
    if np.any(lost.mean(axis=1) > MAX_FAIL_FRACTION):
        raise EstimationError("unstable bootstrap")
    return {
        name: BootstrapMatrix.from_natural(out[i], cfg.grid, TARGET_SCALE[name], master_seed, failed)
        for i, name in enumerate(("psi0", "psi1", "ve"))
    }
