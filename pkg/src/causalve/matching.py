"""Rolling-cohort 1:1 exact matching and the matched-cohort VE analysis.

On each day ``d`` every newly vaccinated subject (in random order) is paired
with a uniformly drawn unvaccinated subject sharing its exact covariate
pattern.  Both start follow-up on day ``d``.  A pair is right-censored for
both members when the control is later vaccinated, and it is excluded when
either member has the endpoint within ``tau`` days of ``d``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .cox import fit_cox, DesignSpec
from .data import Cohort
from .estimator import CurveEstimate, StudyConfig, VEResult, ve_from_incidence
from .exceptions import EstimationError
from .survival import kaplan_meier

__all__ = ["MatchedPair", "MatchedCohort", "rolling_match", "matched_km", "matched_cox", "MatchingVE"]


@dataclass(frozen=True)
class MatchedPair:
    """Row indices into the source cohort; ``pair_censor_day`` is ``None``
    when the control is never vaccinated."""

    d: int
    vaccinated: int
    control: int
    pair_censor_day: int | None


@dataclass(eq=False)
class MatchedCohort:
    """Pairs in match order with per-member follow-up since the match day.

    ``time_v``/``event_v`` and ``time_c``/``event_c`` are follow-up lengths
    ``T = end - d`` and endpoint indicators after pair censoring; ``excluded``
    marks pairs removed by the ``tau`` rule.
    """

    cohort: Cohort
    day: np.ndarray
    vaccinated: np.ndarray
    control: np.ndarray
    censor_day: np.ndarray
    time_v: np.ndarray
    event_v: np.ndarray
    time_c: np.ndarray
    event_c: np.ndarray
    excluded: np.ndarray
    n_cases: int
    seed: int | None
    matching_vars: tuple[str, ...]

    def __len__(self):
        return self.day.size

    @property
    def pairs(self) -> list[MatchedPair]:
        return [
            MatchedPair(int(d), int(v), int(c), None if not np.isfinite(cd) else int(cd))
            for d, v, c, cd in zip(self.day, self.vaccinated, self.control, self.censor_day)
        ]

    @property
    def excluded_pairs(self) -> int:
        return int(self.excluded.sum())

    @property
    def retained(self) -> np.ndarray:
        return np.flatnonzero(~self.excluded)

    @property
    def match_rate(self) -> float:
        return float(len(self) / self.n_cases) if self.n_cases else 0.0


def _pair_followup(cohort: Cohort, day, members, censor_day):
    y = cohort.y_tilde[members].astype(float)
    end = np.minimum(y, censor_day)
    event = cohort.delta[members] & (y <= censor_day)
    return (end - day).astype(np.int64), event


def rolling_match(cohort: Cohort, matching_vars: Sequence[str] | None, cfg: StudyConfig, seed=None, *,
                  control_can_become_case: bool = True) -> MatchedCohort:
    """Match newly vaccinated subjects to exact-covariate unvaccinated controls, day by day.

    Parameters
    ----------
    matching_vars : sequence of str, optional
        Covariates that must agree exactly; all covariates by default.
    seed : int or Generator
        Drives the within-day order of cases and the choice among eligible controls.
    control_can_become_case : bool
        Whether a subject that already served as a control may later be
        matched as a vaccinated case on its own vaccination day.
    """
    names = tuple(cohort.schema.names if matching_vars is None else matching_vars)
    cohort.schema.subset(names)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    codes = cohort.cell_codes(names)
    d_star, y = cohort.d_star, cohort.y_tilde
    K = cfg.max_day
    used = np.zeros(len(cohort), dtype=bool)
    cases_all = np.flatnonzero(np.isfinite(d_star) & (d_star <= K) & (y > d_star))
    by_day = {}
    for i in cases_all[np.argsort(d_star[cases_all], kind="stable")]:
        by_day.setdefault(int(d_star[i]), []).append(i)

    # subjects grouped by covariate cell
    order = np.lexsort((np.arange(len(cohort)), codes))
    cell_members = np.split(order, np.flatnonzero(np.diff(codes[order])) + 1)
    pool = {int(codes[m[0]]): m for m in cell_members if m.size}

    day_l, case_l, ctrl_l = [], [], []
    n_cases = 0
    for d in sorted(by_day):
        todays = np.array(by_day[d])
        if not control_can_become_case:
            todays = todays[~used[todays]]
        n_cases += todays.size
        todays = todays[rng.permutation(todays.size)]
        for i in todays:
            members = pool[int(codes[i])]
            eligible = members[(d_star[members] > d) & (y[members] > d) & ~used[members]]
            if eligible.size == 0:
                continue
            j = eligible[rng.integers(eligible.size)]
            used[j] = True
            day_l.append(d)
            case_l.append(i)
            ctrl_l.append(j)

    day = np.asarray(day_l, dtype=np.int64)
    case = np.asarray(case_l, dtype=np.int64)
    ctrl = np.asarray(ctrl_l, dtype=np.int64)
    censor_day = d_star[ctrl] if ctrl.size else np.zeros(0)
    tv, ev = _pair_followup(cohort, day, case, censor_day)
    tc, ec = _pair_followup(cohort, day, ctrl, censor_day)
    excluded = (ev & (tv <= cfg.tau)) | (ec & (tc <= cfg.tau))
    seed_val = seed if isinstance(seed, (int, np.integer)) else None
    return MatchedCohort(cohort, day, case, ctrl, censor_day, tv, ev, tc, ec, excluded, int(n_cases),
                         seed_val, names)


def _grid(cfg: StudyConfig, t0_grid):
    return cfg.grid if t0_grid is None else np.atleast_1d(np.asarray(t0_grid, dtype=np.int64))


def _arm_weights(mc: MatchedCohort, pair_weight):
    keep = ~mc.excluded
    w = np.ones(len(mc)) if pair_weight is None else np.asarray(pair_weight, dtype=float)
    if w.size != len(mc):
        raise ValueError("pair_weight must have one entry per pair")
    w = np.where(keep, w, 0.0)
    if not np.any(w > 0):
        raise EstimationError("no retained pairs")
    return w


def _km_incidence(time, event, weight, grid):
    keep = weight > 0
    if not np.any(event[keep]):
        return np.zeros(grid.size)
    curve = kaplan_meier(time[keep], event[keep], weight[keep])
    return 1.0 - np.atleast_1d(curve(grid))


def matched_km(mc: MatchedCohort, cfg: StudyConfig, t0_grid=None, pair_weight=None) -> VEResult:
    """Kaplan-Meier incidence in each arm of the retained pairs and ``VE_M = 1 - F1/F0``.

    ``pair_weight`` holds frequency weights per pair (bootstrap counts).
    """
    grid = _grid(cfg, t0_grid)
    w = _arm_weights(mc, pair_weight)
    psi1 = _km_incidence(mc.time_v, mc.event_v, w, grid)
    psi0 = _km_incidence(mc.time_c, mc.event_c, w, grid)
    return VEResult(CurveEstimate(grid, psi0), CurveEstimate(grid, psi1),
                    CurveEstimate(grid, ve_from_incidence(psi0, psi1)), float(w.sum()))


def _cox_incidence(mc, members, time, event, weight, grid, adjust, max_day):
    keep = weight > 0
    if not np.any(event[keep]):
        return np.zeros(grid.size)
    cohort = mc.cohort
    if adjust:
        design = DesignSpec(cohort.schema.subset(adjust))
        Z = design.encode(cohort.covariates.iloc[members][list(adjust)])
    else:
        design = None
        Z = np.zeros((members.size, 0))
    fit = fit_cox(time[keep], event[keep], Z[keep], design, sample_weight=weight[keep], drop_constant=True,
                  max_day=max_day)
    lp = Z[keep] @ fit.beta
    uniq, inv = np.unique(lp, return_inverse=True)
    haz = np.minimum(fit.baseline[None, :] * np.exp(uniq)[:, None], 1 - 1e-12)
    ls = np.zeros((uniq.size, haz.shape[1] + 1))
    np.cumsum(np.log1p(-haz), axis=1, out=ls[:, 1:])
    surv = np.exp(ls[:, np.minimum(grid, haz.shape[1])])
    ww = weight[keep]
    return ww @ (1.0 - surv[inv]) / ww.sum()


def matched_cox(mc: MatchedCohort, cfg: StudyConfig, t0_grid=None, pair_weight=None,
                adjust: Sequence[str] = ()) -> VEResult:
    """Arm-specific Cox fits on the matched data.

    Without ``adjust`` each arm's Breslow baseline is its Nelson-Aalen
    estimate and the incidence is one minus the product-limit of its
    increments.  Covariates in ``adjust`` enter both arm models and the
    predicted incidences are averaged over the arm's rows.
    """
    grid = _grid(cfg, t0_grid)
    w = _arm_weights(mc, pair_weight)
    adjust = tuple(adjust)
    horizon = int(max(grid.max(), 1))
    psi1 = _cox_incidence(mc, mc.vaccinated, mc.time_v, mc.event_v, w, grid, adjust, horizon)
    psi0 = _cox_incidence(mc, mc.control, mc.time_c, mc.event_c, w, grid, adjust, horizon)
    return VEResult(CurveEstimate(grid, psi0), CurveEstimate(grid, psi1),
                    CurveEstimate(grid, ve_from_incidence(psi0, psi1)), float(w.sum()))


class MatchingVE(BaseEstimator):
    """Matching comparator with the scikit-learn estimator interface.

    Parameters
    ----------
    tau : int
    t0_grid : sequence of int, optional
    matching_vars : sequence of str, optional
        Exact-match covariates; all by default.
    analysis : {"km", "cox"}
    seed : int
    control_can_become_case : bool
    """

    def __init__(self, tau=14, t0_grid=None, matching_vars=None, analysis="km", seed=0,
                 control_can_become_case=True):
        self.tau = tau
        self.t0_grid = t0_grid
        self.matching_vars = matching_vars
        self.analysis = analysis
        self.seed = seed
        self.control_can_become_case = control_can_become_case

    def fit(self, cohort: Cohort, y=None):
        if self.analysis not in ("km", "cox"):
            raise ValueError("analysis must be 'km' or 'cox'")
        self.config_ = StudyConfig.for_cohort(cohort, self.tau, self.t0_grid)
        self.matched_ = rolling_match(cohort, self.matching_vars, self.config_, self.seed,
                                      control_can_become_case=self.control_can_become_case)
        analyse = matched_km if self.analysis == "km" else matched_cox
        self.result_ = analyse(self.matched_, self.config_)
        return self

    def predict(self, t0=None) -> np.ndarray:
        if t0 is None:
            return self.result_.ve.estimate.copy()
        return np.array([self.result_.ve.at(t) for t in np.atleast_1d(t0)])
