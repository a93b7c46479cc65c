"""Plug-in estimator of causal vaccine-effectiveness curves.

Two Cox models supply the daily hazards:

* ``lambda0(t; x)`` on the calendar-day scale, fitted to everyone with
  follow-up censored at vaccination;
* ``lambda1(s; d, x)`` on the days-since-vaccination scale, fitted to
  vaccinees still endpoint-free ``tau`` days after vaccination, adjusting
  for the vaccination day through a natural cubic spline.

Cumulative incidences for each (vaccination day, covariate) cell are
products of one minus those hazards over the post-ramp-up window and are
averaged over marginalizing weights; the default weights are the empirical
distribution of ``(D*, X)`` among the vaccinees at risk after ``tau`` days.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator

from ._validation import check_non_negative_int, check_sample_weight, check_t0_grid
from .cox import CoxFit, DesignSpec, _Breslow, _fit_problem, natural_spline_matrix, predict_hazard
from .data import Cohort
from .exceptions import EstimationError

__all__ = [
    "StudyConfig",
    "WeightTable",
    "MarginalWeights",
    "CurveEstimate",
    "VEResult",
    "build_lambda0_dataset",
    "build_lambda1_dataset",
    "spline_knots_for",
    "plugin_psi0",
    "plugin_psi1",
    "psi0_hat",
    "psi1_hat",
    "estimate_ve",
    "CausalVE",
    "positivity_diagnostic",
]

DEFAULT_KNOT_QUANTILES = (0.10, 0.50, 0.90)
# keeps coefficients of covariate levels without events finite (see fit_cox)
DEFAULT_RIDGE = 1e-6


@dataclass(frozen=True)
class StudyConfig:
    """Ramp-up window ``tau``, last follow-up day ``max_day`` and the t0 grid."""

    tau: int
    max_day: int
    t0_grid: tuple[int, ...]

    def __post_init__(self):
        check_non_negative_int(self.tau, "tau")
        check_non_negative_int(self.max_day, "max_day")
        if self.tau >= self.max_day:
            raise ValueError("tau must be smaller than the maximum follow-up day")
        grid = check_t0_grid(self.t0_grid, self.tau, self.max_day)
        object.__setattr__(self, "t0_grid", tuple(int(t) for t in grid))

    @property
    def grid(self) -> np.ndarray:
        return np.asarray(self.t0_grid, dtype=np.int64)

    @classmethod
    def for_cohort(cls, cohort: Cohort, tau: int, t0_grid=None) -> "StudyConfig":
        max_day = int(cohort.max_day)
        if t0_grid is None:
            t0_grid = range(tau + 1, max_day + 1)
        return cls(tau=tau, max_day=max_day, t0_grid=tuple(np.atleast_1d(t0_grid).tolist()))


@dataclass(eq=False)
class WeightTable:
    """Explicit marginalizing weights: one row per ``(d, x)`` with weight ``w``."""

    d: np.ndarray
    covariates: pd.DataFrame
    weight: np.ndarray

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float).reshape(-1)
        self.weight = np.asarray(self.weight, dtype=float).reshape(-1)
        self.covariates = self.covariates.reset_index(drop=True)
        if not (self.d.size == self.weight.size == len(self.covariates)):
            raise ValueError("weight table columns have different lengths")
        if self.d.size == 0:
            raise ValueError("weight table is empty")
        if np.any(self.weight < 0) or not np.all(np.isfinite(self.weight)):
            raise ValueError("marginalizing weights must be finite and non-negative")
        if abs(self.weight.sum() - 1.0) > 1e-9:
            raise ValueError("marginalizing weights must sum to 1")
        if np.any(~np.isfinite(self.d)) or np.any(self.d < 1) or np.any(self.d != np.round(self.d)):
            raise ValueError("weight-table days must be integers >= 1")

    def marginals(self):
        """``(p*(x), g*(d|x))`` implied by the table, keyed by covariate tuple."""
        keys = [tuple(r) for r in self.covariates.astype(str).itertuples(index=False)]
        p, g = {}, {}
        for key, d, w in zip(keys, self.d, self.weight):
            p[key] = p.get(key, 0.0) + w
            g.setdefault(key, {})
            g[key][int(d)] = g[key].get(int(d), 0.0) + w
        for key in g:
            g[key] = {d: w / p[key] for d, w in g[key].items()} if p[key] > 0 else {}
        return p, g


@dataclass(frozen=True)
class MarginalWeights:
    """``mode="observed"`` uses the vaccinees at risk after ``tau`` days;
    ``mode="custom"`` uses the given rows ``(d, {name: level}, weight)``."""

    mode: str = "observed"
    custom: tuple = ()

    def __post_init__(self):
        if self.mode not in ("observed", "custom"):
            raise ValueError(f"unknown weight mode {self.mode!r}")
        if self.mode == "custom" and not self.custom:
            raise ValueError("custom weights need at least one (d, x, weight) row")

    def resolve(self, cohort: Cohort, cfg: StudyConfig, sample_weight=None) -> WeightTable:
        if self.mode == "observed":
            w = check_sample_weight(sample_weight, len(cohort))
            members = np.flatnonzero(in_v_tau(cohort, cfg) & (w > 0))
            if members.size == 0:
                raise EstimationError("no vaccinated subjects survive tau")
            ww = w[members]
            return WeightTable(cohort.d_star[members], cohort.covariates.iloc[members], ww / ww.sum())
        rows = list(self.custom)
        d = np.array([r[0] for r in rows], dtype=float)
        frame = pd.DataFrame([dict(r[1]) for r in rows])
        frame = cohort.schema.conform(frame)
        weight = np.array([r[2] for r in rows], dtype=float)
        table = WeightTable(d, frame, weight)
        _check_weight_support(table, cohort)
        return table


def _check_weight_support(table: WeightTable, cohort: Cohort):
    vacc = cohort.vaccinated
    seen = set(
        zip(cohort.d_star[vacc].astype(int).tolist(),
            [tuple(r) for r in cohort.covariates[vacc].astype(str).itertuples(index=False)])
    )
    keys = [tuple(r) for r in table.covariates.astype(str).itertuples(index=False)]
    for d, key, w in zip(table.d.astype(int).tolist(), keys, table.weight):
        if w > 0 and (d, key) not in seen:
            raise ValueError(f"custom weight references unseen (d, x) = ({d}, {key})")


@dataclass(eq=False)
class CurveEstimate:
    """Values of a curve on the t0 grid; ``bands`` maps a name to a band."""

    t0: np.ndarray
    estimate: np.ndarray
    bands: dict = field(default_factory=dict)

    def at(self, t0) -> float:
        idx = np.flatnonzero(self.t0 == t0)
        if idx.size == 0:
            raise KeyError(t0)
        return float(self.estimate[idx[0]])


@dataclass(eq=False)
class VEResult:
    psi0: CurveEstimate
    psi1: CurveEstimate
    ve: CurveEstimate
    v_tau_size: float
    fit0: CoxFit | None = None
    fit1: CoxFit | None = None

    def to_frame(self) -> pd.DataFrame:
        out = pd.DataFrame({
            "t0": self.ve.t0,
            "psi0": self.psi0.estimate,
            "psi1": self.psi1.estimate,
            "ve": self.ve.estimate,
        })
        for label, curve in (("psi0", self.psi0), ("psi1", self.psi1), ("ve", self.ve)):
            for kind, band in curve.bands.items():
                out[f"{label}_{kind}_lo"] = band.lower
                out[f"{label}_{kind}_hi"] = band.upper
        return out


def ve_from_incidence(psi0, psi1) -> np.ndarray:
    """``1 - psi1/psi0``, missing (NaN) where ``psi0`` is zero."""
    psi0 = np.asarray(psi0, dtype=float)
    psi1 = np.asarray(psi1, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(psi0 > 0, 1.0 - psi1 / np.where(psi0 > 0, psi0, 1.0), np.nan)


# --------------------------------------------------------------------------
# Fitting data sets
# --------------------------------------------------------------------------

def _lambda0_arrays(cohort: Cohort, cfg: StudyConfig, vax_day_event="censor"):
    K = cfg.max_day
    y = cohort.y_tilde
    d = cohort.d_star
    time = np.minimum(np.minimum(d, y), K).astype(np.int64)
    if vax_day_event == "censor":
        before = y < d
    elif vax_day_event == "count":
        before = y <= d
    else:
        raise ValueError("vax_day_event must be 'censor' or 'count'")
    event = cohort.delta & (y <= K) & before
    return time, event


def in_v_tau(cohort: Cohort, cfg: StudyConfig) -> np.ndarray:
    """Vaccinees observed endpoint-free and uncensored for ``tau`` days after vaccination."""
    d = cohort.d_star
    return np.isfinite(d) & (d <= cfg.max_day) & (cohort.y_tilde - d > cfg.tau)


def _lambda1_arrays(cohort: Cohort, cfg: StudyConfig):
    members = np.flatnonzero(in_v_tau(cohort, cfg))
    K = cfg.max_day
    y = cohort.y_tilde[members]
    d = cohort.d_star[members]
    time = (np.minimum(y, K) - d).astype(np.int64)
    event = cohort.delta[members] & (y <= K)
    return members, time, event


def build_lambda0_dataset(cohort: Cohort, cfg: StudyConfig, vax_day_event="censor") -> pd.DataFrame:
    """Everyone, calendar-day time scale, censored at vaccination.

    An endpoint on the vaccination day itself is censored by default
    (``vax_day_event="censor"``); ``"count"`` keeps it as a pre-vaccination event.
    """
    time, event = _lambda0_arrays(cohort, cfg, vax_day_event)
    out = pd.DataFrame({"row": np.arange(len(cohort)), "time": time, "event": event})
    return pd.concat([out, cohort.covariates], axis=1)


def build_lambda1_dataset(cohort: Cohort, cfg: StudyConfig) -> pd.DataFrame:
    """Vaccinees at risk after ``tau``, days-since-vaccination time scale."""
    members, time, event = _lambda1_arrays(cohort, cfg)
    if members.size == 0:
        raise EstimationError("no vaccinated subjects survive tau")
    out = pd.DataFrame({"row": members, "time": time, "event": event, "d_star": cohort.d_star[members]})
    return pd.concat([out, cohort.covariates.iloc[members].reset_index(drop=True)], axis=1)


def weighted_quantile(values, weights, q) -> np.ndarray:
    """Type-7 quantiles of the sample in which ``values[i]`` appears ``weights[i]`` times."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    keep = weights > 0
    values, weights = values[keep], weights[keep]
    order = np.argsort(values, kind="stable")
    values, cum = values[order], np.cumsum(weights[order])
    total = cum[-1]
    h = (total - 1) * np.asarray(q, dtype=float)
    lo = np.floor(h)
    frac = h - lo

    def at(j):
        return values[np.minimum(np.searchsorted(cum, j, side="right"), values.size - 1)]

    return at(lo) + frac * (at(np.minimum(lo + 1, total - 1)) - at(lo))


def spline_knots_for(d_values, weights=None, quantiles=DEFAULT_KNOT_QUANTILES) -> tuple[float, ...]:
    """Knots at the given quantiles of the vaccination days.

    Returns ``()`` (vaccination day enters linearly) when fewer than three
    distinct knots result.
    """
    d_values = np.asarray(d_values, dtype=float)
    if weights is None:
        weights = np.ones(d_values.size)
    if quantiles is None or d_values.size == 0:
        return ()
    knots = np.unique(weighted_quantile(d_values, weights, quantiles))
    if knots.size < 3:
        return ()
    return tuple(float(k) for k in knots)


# --------------------------------------------------------------------------
# Plug-in incidences
# --------------------------------------------------------------------------

def _log_survival(hazard: np.ndarray) -> np.ndarray:
    """Prepend a zero column to the cumulative ``log(1 - hazard)``."""
    out = np.zeros((hazard.shape[0], hazard.shape[1] + 1))
    np.cumsum(np.log1p(-hazard), axis=1, out=out[:, 1:])
    return out


def plugin_psi0(hazard0, d, weight, tau, t0_grid) -> np.ndarray:
    """Weighted ``1 - prod_{t=d+tau+1}^{d+t0} (1 - hazard0[j, t-1])``.

    ``hazard0[j, t-1]`` is the unvaccinated daily hazard on calendar day
    ``t`` for weight row ``j``; days past the table end have hazard zero.
    """
    hazard0 = np.atleast_2d(np.asarray(hazard0, dtype=float))
    d = np.asarray(d, dtype=np.int64)
    weight = np.asarray(weight, dtype=float)
    grid = np.atleast_1d(np.asarray(t0_grid, dtype=np.int64))
    ls = _log_survival(hazard0)
    last = hazard0.shape[1]
    rows = np.arange(d.size)[:, None]
    end = np.minimum(d[:, None] + grid[None, :], last)
    start = np.minimum(d + tau, last)[:, None]
    psi = 1.0 - np.exp(ls[rows, end] - ls[rows, start])
    return weight @ psi


def plugin_psi1(hazard1, weight, tau, t0_grid) -> np.ndarray:
    """Weighted ``1 - prod_{s=tau+1}^{t0} (1 - hazard1[j, s-1])`` on days since vaccination."""
    hazard1 = np.atleast_2d(np.asarray(hazard1, dtype=float))
    weight = np.asarray(weight, dtype=float)
    grid = np.atleast_1d(np.asarray(t0_grid, dtype=np.int64))
    ls = _log_survival(hazard1)
    last = hazard1.shape[1]
    end = np.minimum(grid, last)
    start = min(tau, last)
    psi = 1.0 - np.exp(ls[:, end] - ls[:, [start]])
    return weight @ psi


def _grouped_psi(lp, baseline, offsets, tau, grid, weight):
    """Plug-in average computed once per distinct linear predictor.

    ``offsets`` is ``d`` for lambda0 (calendar scale) and zero for lambda1.
    Only days with a positive baseline increment enter the products.
    """
    days = np.flatnonzero(baseline > 0) + 1
    if days.size == 0:
        return np.zeros(grid.size)
    uniq, inv = np.unique(lp, return_inverse=True)
    haz = np.minimum(baseline[days - 1][None, :] * np.exp(uniq)[:, None], 1.0 - 1e-12)
    ls = _log_survival(haz)
    # position in ls = number of event days up to and including the bound
    end = np.searchsorted(days, offsets[:, None] + grid[None, :], side="right")
    start = np.searchsorted(days, offsets + tau, side="right")[:, None]
    psi = 1.0 - np.exp(ls[inv[:, None], end] - ls[inv[:, None], start])
    return weight @ psi


def psi0_hat(fit0: CoxFit, weights: WeightTable, cfg: StudyConfig, t0) -> np.ndarray | float:
    """Marginal unvaccinated incidence ``psibar0(t0)`` from a lambda0 fit."""
    grid = np.atleast_1d(np.asarray(t0, dtype=np.int64))
    if np.any(grid <= cfg.tau):
        raise ValueError("t0 must exceed tau")
    Z = fit0.design.encode(weights.covariates) if fit0.design is not None else np.zeros((weights.d.size, 0))
    lp = predict_hazard(fit0, Z).linear_predictor
    out = _grouped_psi(lp, fit0.baseline, weights.d.astype(np.int64), cfg.tau, grid, weights.weight)
    return out if np.ndim(t0) else float(out[0])


def psi1_hat(fit1: CoxFit, weights: WeightTable, cfg: StudyConfig, t0) -> np.ndarray | float:
    """Marginal vaccinated incidence ``psibar1(t0)`` from a lambda1 fit."""
    grid = np.atleast_1d(np.asarray(t0, dtype=np.int64))
    if np.any(grid <= cfg.tau):
        raise ValueError("t0 must exceed tau")
    if fit1.design is not None:
        Z = fit1.design.encode(weights.covariates, extra=weights.d)
    else:
        Z = np.zeros((weights.d.size, 0))
    lp = predict_hazard(fit1, Z).linear_predictor
    out = _grouped_psi(lp, fit1.baseline, np.zeros(weights.d.size, dtype=np.int64), cfg.tau, grid,
                       weights.weight)
    return out if np.ndim(t0) else float(out[0])


# --------------------------------------------------------------------------
# Full estimator
# --------------------------------------------------------------------------

class _Prepared:
    """Per-cohort arrays reused across bootstrap replicates."""

    def __init__(self, cohort: Cohort, cfg: StudyConfig, knot_quantiles, vax_day_event, ridge=DEFAULT_RIDGE):
        self.ridge = ridge
        self.cohort = cohort
        self.cfg = cfg
        self.knot_quantiles = knot_quantiles
        self.design0 = DesignSpec(cohort.schema, "days-since-study-start")
        self.Zx = self.design0.encode(cohort.covariates)
        self.time0, self.event0 = _lambda0_arrays(cohort, cfg, vax_day_event)
        self.members, self.time1, self.event1 = _lambda1_arrays(cohort, cfg)
        self.d_members = cohort.d_star[self.members]
        self.prob0 = _Breslow(self.time0, self.event0, self.Zx, np.ones(len(cohort)), keep_zero=True)
        self._prob1 = {}

    def design1(self, knots) -> DesignSpec:
        return DesignSpec(self.cohort.schema, "days-since-vaccination", spline_term="d_star",
                          spline_knots=tuple(knots))

    def _lambda1_problem(self, knots):
        if knots not in self._prob1:
            d = self.d_members
            extra = natural_spline_matrix(d, knots) if knots else d[:, None]
            Z1 = np.hstack([self.Zx[self.members], extra])
            self._prob1[knots] = (Z1, _Breslow(self.time1, self.event1, Z1, np.ones(d.size), keep_zero=True))
        return self._prob1[knots]

    def estimate(self, sample_weight=None, init0=None, init1=None, weights: WeightTable | None = None,
                 knots=None) -> VEResult:
        cfg = self.cfg
        w = check_sample_weight(sample_weight, len(self.cohort))
        w1 = w[self.members]
        if not np.any(w1 > 0):
            raise EstimationError("no vaccinated subjects survive tau")
        fit0 = _fit_problem(self.prob0.reweighted(w), self.design0, init=init0, drop_constant=True,
                            max_day=cfg.max_day, ridge=self.ridge)
        if knots is None:
            knots = spline_knots_for(self.d_members, w1, self.knot_quantiles)
        knots = tuple(knots)
        Z1, prob1 = self._lambda1_problem(knots)
        if init1 is not None and np.size(init1) != Z1.shape[1]:
            init1 = None
        fit1 = _fit_problem(prob1.reweighted(w1), self.design1(knots), init=init1, drop_constant=True,
                            max_day=cfg.max_day, ridge=self.ridge)
        grid = cfg.grid
        if weights is None:
            keep = w1 > 0
            ww = w1[keep] / w1[keep].sum()
            d = self.d_members[keep].astype(np.int64)
            lp0 = self.Zx[self.members[keep]] @ fit0.beta
            lp1 = Z1[keep] @ fit1.beta
            psi0 = _grouped_psi(lp0, fit0.baseline, d, cfg.tau, grid, ww)
            psi1 = _grouped_psi(lp1, fit1.baseline, np.zeros_like(d), cfg.tau, grid, ww)
        else:
            psi0 = np.atleast_1d(psi0_hat(fit0, weights, cfg, grid))
            psi1 = np.atleast_1d(psi1_hat(fit1, weights, cfg, grid))
        return VEResult(
            psi0=CurveEstimate(grid, psi0),
            psi1=CurveEstimate(grid, psi1),
            ve=CurveEstimate(grid, ve_from_incidence(psi0, psi1)),
            v_tau_size=float(w1.sum()),
            fit0=fit0,
            fit1=fit1,
        )


def estimate_ve(cohort: Cohort, cfg: StudyConfig, weights: MarginalWeights | None = None, *,
                sample_weight=None, knot_quantiles=DEFAULT_KNOT_QUANTILES, knots=None,
                vax_day_event="censor", ridge=DEFAULT_RIDGE) -> VEResult:
    """Fit both hazard models and evaluate ``psibar0``, ``psibar1`` and VE on ``cfg.t0_grid``.

    ``sample_weight`` holds frequency weights (a bootstrap resample is a
    vector of multinomial counts).  ``knots`` overrides the quantile rule.
    ``ridge`` is passed to both Cox fits; zero gives unpenalized fits that
    fail on covariate levels without events.
    """
    prep = _Prepared(cohort, cfg, knot_quantiles, vax_day_event, ridge)
    if prep.members.size == 0:
        raise EstimationError("no vaccinated subjects survive tau")
    table = None
    if weights is not None and weights.mode == "custom":
        table = weights.resolve(cohort, cfg, sample_weight)
    try:
        return prep.estimate(sample_weight, weights=table, knots=knots)
    except EstimationError as exc:
        raise type(exc)(f"proposed estimator failed: {exc}") from exc


class CausalVE(BaseEstimator):
    """Scikit-learn style front end for :func:`estimate_ve`.

    Parameters
    ----------
    tau : int
        Ramp-up days after vaccination during which endpoints disqualify.
    t0_grid : sequence of int, optional
        Days since vaccination at which to evaluate; defaults to
        ``tau+1 .. max_day``.
    max_day : int, optional
        Study end; defaults to the cohort's ``max_day``.
    knot_quantiles : tuple of float or None
        Quantiles of the vaccination day used as spline knots (``None`` for a
        linear term).
    vax_day_event : {"censor", "count"}
        Treatment of an endpoint on the vaccination day in the lambda0 model.
    weights : MarginalWeights, optional
        Marginalizing weights; observed-data weights by default.
    ridge : float
        Ridge penalty for the Cox fits (see :func:`fit_cox`).
    """

    def __init__(self, tau=14, t0_grid=None, max_day=None, knot_quantiles=DEFAULT_KNOT_QUANTILES,
                 vax_day_event="censor", weights=None, ridge=DEFAULT_RIDGE):
        self.tau = tau
        self.t0_grid = t0_grid
        self.max_day = max_day
        self.knot_quantiles = knot_quantiles
        self.vax_day_event = vax_day_event
        self.weights = weights
        self.ridge = ridge

    def _config(self, cohort: Cohort) -> StudyConfig:
        max_day = int(self.max_day if self.max_day is not None else cohort.max_day)
        grid = self.t0_grid if self.t0_grid is not None else range(self.tau + 1, max_day + 1)
        return StudyConfig(self.tau, max_day, tuple(np.atleast_1d(grid).tolist()))

    def fit(self, cohort: Cohort, y=None, sample_weight=None):
        self.config_ = self._config(cohort)
        self.result_ = estimate_ve(cohort, self.config_, self.weights, sample_weight=sample_weight,
                                   knot_quantiles=self.knot_quantiles, vax_day_event=self.vax_day_event,
                                   ridge=self.ridge)
        self.fit0_ = self.result_.fit0
        self.fit1_ = self.result_.fit1
        self.v_tau_size_ = self.result_.v_tau_size
        return self

    def predict(self, t0=None) -> np.ndarray:
        """VE at ``t0`` (grid points only); the whole grid by default."""
        if t0 is None:
            return self.result_.ve.estimate.copy()
        return np.array([self.result_.ve.at(t) for t in np.atleast_1d(t0)])

    def predict_incidence(self, vaccinated: bool, t0=None) -> np.ndarray:
        curve = self.result_.psi1 if vaccinated else self.result_.psi0
        if t0 is None:
            return curve.estimate.copy()
        return np.array([curve.at(t) for t in np.atleast_1d(t0)])


# --------------------------------------------------------------------------
# Diagnostics
# --------------------------------------------------------------------------

def positivity_diagnostic(cohort: Cohort, cfg: StudyConfig, bucket_days: int = 30,
                          strata: Sequence[str] | None = None) -> pd.DataFrame:
    """Counts of unvaccinated subjects at risk and new vaccinations per stratum and day bucket.

    A stratum is flagged when it has subjects at risk but no vaccinations in
    any bucket.  Strata without subjects do not appear.
    """
    names = list(cohort.schema.names if strata is None else strata)
    codes = cohort.cell_codes(names)
    labels = (cohort.covariates[names].astype(str).agg("|".join, axis=1) if names
              else pd.Series(["all"] * len(cohort)))
    K = cfg.max_day
    starts = np.arange(1, K + 1, bucket_days)
    rows = []
    y, d = cohort.y_tilde, cohort.d_star
    for code in np.unique(codes):
        idx = np.flatnonzero(codes == code)
        label = labels.iloc[idx[0]]
        for s in starts:
            e = min(s + bucket_days - 1, K)
            at_risk = int(np.sum((y[idx] >= s) & (d[idx] >= s)))
            vacc = int(np.sum((d[idx] >= s) & (d[idx] <= e) & (d[idx] <= y[idx])))
            rows.append((label, int(s), int(e), at_risk, vacc))
    table = pd.DataFrame(rows, columns=["stratum", "bucket_start", "bucket_end", "n_at_risk", "n_vaccinated"])
    totals = table.groupby("stratum", sort=False).agg(risk=("n_at_risk", "sum"), vacc=("n_vaccinated", "sum"))
    flagged = totals.index[(totals["risk"] > 0) & (totals["vacc"] == 0)]
    table["flag"] = table["stratum"].isin(flagged)
    table = table[(table["n_at_risk"] > 0) | (table["n_vaccinated"] > 0)]
    return table.reset_index(drop=True)
