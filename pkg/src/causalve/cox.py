"""Cox proportional-hazards regression for integer-day survival data.

The partial likelihood uses Breslow's handling of tied event days, the
baseline hazard is the Breslow estimator (Nelson-Aalen when there are no
covariates), and predicted daily hazards ``dL0(t) * exp(z'b)`` are read as
discrete-time hazards, capped just below one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg
from sklearn.base import BaseEstimator

from ._validation import check_day_array, check_event_array, check_sample_weight
from .data import CovariateSchema
from .exceptions import ConvergenceError, EstimationError

HAZARD_CAP = 1.0 - 1e-12
# standardized information per event below which a coefficient is taken as diverging
SEPARATION_INFO = 1e-6

__all__ = [
    "natural_cubic_spline_basis",
    "natural_spline_matrix",
    "DesignSpec",
    "CoxFit",
    "HazardFunction",
    "fit_cox",
    "predict_hazard",
    "log_partial_likelihood",
    "score_vector",
    "gradient_check",
    "CoxPH",
]


# --------------------------------------------------------------------------
# Natural cubic splines
# --------------------------------------------------------------------------

def _check_knots(knots):
    k = np.asarray(knots, dtype=float).reshape(-1)
    if np.unique(k).size < 3:
        raise ValueError("degenerate knots")
    if np.any(np.diff(k) <= 0):
        raise ValueError("knots must be strictly increasing")
    return k


def natural_spline_matrix(values, knots) -> np.ndarray:
    """Truncated-power natural cubic spline basis, one row per value.

    Columns are ``x`` followed by ``d_j(x) - d_{K-1}(x)`` for
    ``j = 1..K-2`` where
    ``d_j(x) = ((x - k_j)_+^3 - (x - k_K)_+^3) / (k_K - k_j)``.
    The intercept is left to the model, so there are ``K - 1`` columns and
    the fitted curve is linear beyond both boundary knots.
    """
    k = _check_knots(knots)
    x = np.asarray(values, dtype=float).reshape(-1)
    last = k[-1]

    def d(j):
        return (np.clip(x - k[j], 0, None) ** 3 - np.clip(x - last, 0, None) ** 3) / (last - k[j])

    d_penult = d(len(k) - 2)
    cols = [x] + [d(j) - d_penult for j in range(len(k) - 2)]
    return np.column_stack(cols)


def natural_cubic_spline_basis(value: float, knots) -> list[float]:
    """Basis vector for a single ``value``; length ``len(knots) - 1``."""
    return natural_spline_matrix([value], knots)[0].tolist()


# --------------------------------------------------------------------------
# Design
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DesignSpec:
    """How covariates become model columns.

    Categorical covariates are one-hot coded against their first level,
    numeric ones enter linearly.  ``spline_term`` names an extra numeric
    variable (the vaccination day) coded by a natural cubic spline on
    ``spline_knots``; an empty knot tuple codes it linearly instead.
    """

    schema: CovariateSchema
    time_scale: str = "days-since-study-start"
    spline_term: str | None = None
    spline_knots: tuple[float, ...] = ()

    def __post_init__(self):
        if self.time_scale not in ("days-since-study-start", "days-since-vaccination"):
            raise ValueError(f"unknown time scale {self.time_scale!r}")
        if self.spline_term is not None and self.spline_knots:
            _check_knots(self.spline_knots)

    @property
    def columns(self) -> tuple[str, ...]:
        cols = []
        for name, lev in zip(self.schema.names, self.schema.levels):
            if lev is None:
                cols.append(name)
            else:
                cols.extend(f"{name}[{level}]" for level in lev[1:])
        if self.spline_term is not None:
            if self.spline_knots:
                cols.append(self.spline_term)
                cols.extend(f"ns({self.spline_term})_{j}" for j in range(1, len(self.spline_knots) - 1))
            else:
                cols.append(self.spline_term)
        return tuple(cols)

    def encode(self, covariates: pd.DataFrame, extra=None) -> np.ndarray:
        """Design matrix for ``covariates`` (and the spline variable in ``extra``)."""
        frame = self.schema.conform(covariates)
        blocks = []
        for name, lev in zip(self.schema.names, self.schema.levels):
            col = frame[name]
            if lev is None:
                blocks.append(col.to_numpy(dtype=float)[:, None])
            elif len(lev) > 1:
                codes = col.cat.codes.to_numpy()
                blocks.append((codes[:, None] == np.arange(1, len(lev))[None, :]).astype(float))
        if self.spline_term is not None:
            if extra is None:
                raise ValueError(f"design needs values for {self.spline_term!r}")
            v = np.asarray(extra, dtype=float).reshape(-1)
            if v.size != len(frame):
                raise ValueError("spline variable length does not match covariate rows")
            if self.spline_knots:
                blocks.append(natural_spline_matrix(v, self.spline_knots))
            else:
                blocks.append(v[:, None])
        if not blocks:
            return np.zeros((len(frame), 0))
        return np.hstack(blocks)


# --------------------------------------------------------------------------
# Partial likelihood
# --------------------------------------------------------------------------

class _Breslow:
    """Sorted, weighted data with the risk-set sums needed by Newton steps.

    With ``keep_zero`` rows of weight zero stay in place so that the same
    sorted problem can be reweighted cheaply (bootstrap counts).
    """

    def __init__(self, time, event, Z, weight, keep_zero=False):
        keep = np.ones(time.size, dtype=bool) if keep_zero else weight > 0
        idx = np.flatnonzero(keep)
        self.order = idx[np.argsort(time[idx], kind="stable")]
        self.t = time[self.order]
        self.e = event[self.order]
        self.Z = Z[self.order]
        self.days, self.start, self.row_day = np.unique(self.t, return_index=True, return_inverse=True)
        self._set_weight(weight[self.order])

    def _set_weight(self, w):
        self.w = w
        we = w * self.e
        self.d = np.add.reduceat(we, self.start) if self.t.size else np.zeros(0)
        self.has_event = self.d > 0
        self.ev_start = self.start[self.has_event]
        self.ev_d = self.d[self.has_event]
        self.zsum_events = we @ self.Z
        self.n_events = float(we.sum())

    def reweighted(self, weight) -> "_Breslow":
        """Copy with new frequency weights given in the original row order.

        Rows whose new weight is zero are dropped; the sort order is kept.
        """
        w = np.asarray(weight, dtype=float)[self.order]
        pos = w > 0
        out = _Breslow.__new__(_Breslow)
        out.__dict__.update(self.__dict__)
        if not pos.all():
            out.order = self.order[pos]
            out.t = self.t[pos]
            out.e = self.e[pos]
            out.Z = self.Z[pos]
            out.days, out.start, out.row_day = np.unique(out.t, return_index=True, return_inverse=True)
            w = w[pos]
        out._set_weight(w)
        return out

    def _risk_sums(self, beta, order):
        """Risk-set sums at event days, accumulated over per-day totals."""
        eta = self.Z @ beta
        shift = eta.max() if eta.size else 0.0
        r = self.w * np.exp(eta - shift)
        s0 = np.cumsum(np.add.reduceat(r, self.start)[::-1])[::-1][self.has_event]
        s1 = None
        if order >= 1:
            rz = np.add.reduceat(r[:, None] * self.Z, self.start, axis=0)
            s1 = np.cumsum(rz[::-1], axis=0)[::-1][self.has_event]
        return eta, shift, r, s0, s1

    def loglik(self, beta) -> float:
        eta, shift, _, s0, _ = self._risk_sums(beta, 0)
        return float((self.w * self.e) @ eta - self.ev_d @ (np.log(s0) + shift))

    def derivatives(self, beta):
        eta, shift, r, s0, s1 = self._risk_sums(beta, 1)
        ll = float((self.w * self.e) @ eta - self.ev_d @ (np.log(s0) + shift))
        mean_z = s1 / s0[:, None]
        grad = self.zsum_events - self.ev_d @ mean_z
        # sum_t d_t S2(t)/S0(t) = Z' diag(r_i * sum_{event t <= t_i} d_t/S0(t)) Z
        a = np.zeros(self.days.size)
        a[self.has_event] = self.ev_d / s0
        cum_a = np.cumsum(a)[self.row_day]
        zr = self.Z * (r * cum_a)[:, None]
        info = zr.T @ self.Z - (mean_z * self.ev_d[:, None]).T @ mean_z
        return ll, grad, info

    def baseline(self, beta):
        """Breslow increments ``d_t / sum_{R(t)} w exp(z'b)`` on event days."""
        eta = self.Z @ beta
        shift = eta.max() if eta.size else 0.0
        r = self.w * np.exp(eta - shift)
        s0 = np.cumsum(np.add.reduceat(r, self.start)[::-1])[::-1][self.has_event]
        inc = self.ev_d / s0 * np.exp(-shift)
        return self.days[self.has_event], inc


def _prepare(time, event, Z, sample_weight):
    t = check_day_array(time, "time")
    e = check_event_array(event, t.size)
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != t.size:
        raise ValueError("design matrix rows do not match the number of subjects")
    w = check_sample_weight(sample_weight, t.size)
    return t, e, Z, w


def log_partial_likelihood(time, event, Z, beta, sample_weight=None) -> float:
    """Breslow log partial likelihood at ``beta``."""
    t, e, Z, w = _prepare(time, event, Z, sample_weight)
    return _Breslow(t, e, Z, w).loglik(np.asarray(beta, dtype=float))


def score_vector(time, event, Z, beta, sample_weight=None) -> np.ndarray:
    """Analytic gradient of :func:`log_partial_likelihood`."""
    t, e, Z, w = _prepare(time, event, Z, sample_weight)
    return _Breslow(t, e, Z, w).derivatives(np.asarray(beta, dtype=float))[1]


def gradient_check(time, event, Z, beta, h=1e-5, sample_weight=None) -> float:
    """Max abs difference between the analytic score and central differences."""
    t, e, Z, w = _prepare(time, event, Z, sample_weight)
    beta = np.asarray(beta, dtype=float)
    if beta.size == 0:
        return 0.0
    prob = _Breslow(t, e, Z, w)
    grad = prob.derivatives(beta)[1]
    fd = np.empty_like(grad)
    for k in range(beta.size):
        step = np.zeros_like(beta)
        step[k] = h
        fd[k] = (prob.loglik(beta + step) - prob.loglik(beta - step)) / (2 * h)
    return float(np.max(np.abs(grad - fd)))


# --------------------------------------------------------------------------
# Fitting
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CoxFit:
    """Fitted coefficients and Breslow baseline hazard.

    ``baseline`` is a dense array: ``baseline[t - 1]`` is the increment on
    day ``t`` (zero on days without events) for ``t = 1..max_day``.
    """

    beta: np.ndarray
    baseline: np.ndarray
    n_iter: int
    grad_norm: float
    converged: bool
    loglik: float
    design: DesignSpec | None = None
    columns: tuple[str, ...] = ()
    dropped: tuple[int, ...] = field(default=())

    @property
    def max_day(self) -> int:
        return self.baseline.size

    @property
    def baseline_increments(self) -> dict[int, float]:
        days = np.flatnonzero(self.baseline > 0) + 1
        return {int(t): float(self.baseline[t - 1]) for t in days}

    @property
    def convergence(self) -> tuple[int, float]:
        return self.n_iter, self.grad_norm


def _constant_columns(prob: _Breslow) -> np.ndarray:
    """Columns with no variation among rows in any event risk set."""
    if prob.Z.shape[1] == 0 or not prob.has_event.any():
        return np.zeros(prob.Z.shape[1], dtype=bool)
    first = prob.ev_start[0]
    sub = prob.Z[first:][prob.w[first:] > 0]
    return np.all(sub == sub[:1], axis=0)


def fit_cox(time, event, Z, design: DesignSpec | None = None, *, sample_weight=None,
            init=None, tol=1e-8, max_iter=100, max_halving=20, max_abs_beta=50.0,
            drop_constant=False, max_day=None, ridge=0.0) -> CoxFit:
    """Maximise the Breslow partial likelihood by damped Newton-Raphson.

    Iterations stop once ``max|score| <= tol`` or after ``max_iter`` steps;
    a step that lowers the likelihood is halved up to ``max_halving`` times.

    Parameters
    ----------
    time, event : array-like
        Integer follow-up days (>= 1) and event indicators.
    Z : array-like of shape (n, p)
        Design matrix; ``p`` may be zero.
    sample_weight : array-like, optional
        Frequency weights, equivalent to duplicating rows.
    drop_constant : bool
        Give columns that are constant over the event risk sets a zero
        coefficient instead of failing on the singular information matrix.
    ridge : float
        Penalty ``ridge/2 * |b_std|^2`` on the coefficients of the
        standardized columns.  A tiny value keeps coefficients finite when a
        covariate level has no events (monotone likelihood) with negligible
        effect elsewhere; zero gives the plain maximum partial likelihood.

    Raises
    ------
    ConvergenceError
        ``"singular information matrix"`` for rank-deficient designs,
        ``"separation detected"`` when a coefficient exceeds
        ``max_abs_beta`` in absolute value or (without ``ridge``) the
        information about a standardized coefficient has collapsed, the
        signature of a monotone likelihood.
    """
    t, e, Z, w = _prepare(time, event, Z, sample_weight)
    if max_day is None:
        max_day = int(t.max())
    return _fit_problem(_Breslow(t, e, Z, w), design, init=init, tol=tol, max_iter=max_iter,
                        max_halving=max_halving, max_abs_beta=max_abs_beta,
                        drop_constant=drop_constant, max_day=max_day, ridge=ridge)


def _fit_problem(prob: _Breslow, design, *, init=None, tol=1e-8, max_iter=100, max_halving=20,
                 max_abs_beta=50.0, drop_constant=False, max_day=1, ridge=0.0) -> CoxFit:
    if prob.n_events <= 0:
        raise EstimationError("no events to fit")
    p = prob.Z.shape[1]
    active = np.ones(p, dtype=bool)
    if drop_constant:
        active = ~_constant_columns(prob)
    sub = _Breslow.__new__(_Breslow)
    sub.__dict__.update(prob.__dict__)
    Za = prob.Z[:, active]
    wsum = prob.w.sum()
    center = (prob.w @ Za) / wsum
    scale = np.sqrt((prob.w @ (Za - center) ** 2) / wsum)
    scale[scale == 0] = 1.0
    sub.Z = (Za - center) / scale
    sub.zsum_events = (prob.w * prob.e) @ sub.Z

    beta = np.zeros(active.sum())
    if init is not None:
        init = np.asarray(init, dtype=float).reshape(-1)
        if init.size != p:
            raise ValueError("init has the wrong length")
        beta = init[active] * scale

    def objective(b):
        ll_, grad_, info_ = sub.derivatives(b)
        if ridge:
            ll_ -= 0.5 * ridge * b @ b
            grad_ = grad_ - ridge * b
            info_ = info_ + ridge * np.eye(b.size)
        return ll_, grad_, info_

    n_iter = 0
    converged = False
    if beta.size == 0:
        ll = sub.loglik(beta)
        converged, grad_norm = True, 0.0
    else:
        ll, grad, info = objective(beta)
        # the score on the original scale is the standardized score times the column scale
        grad_norm = float(np.max(np.abs(grad * scale)))
        while grad_norm > tol and n_iter < max_iter:
            n_iter += 1
            try:
                chol = linalg.cho_factor(info, lower=True, check_finite=True)
                step = linalg.cho_solve(chol, grad)
            except (linalg.LinAlgError, ValueError):
                raise ConvergenceError("singular information matrix") from None
            if not np.all(np.isfinite(step)):
                raise ConvergenceError("singular information matrix")
            # near the optimum likelihood changes drop below rounding error
            floor = ll - 1e-12 * max(1.0, abs(ll))
            cand = beta + step
            new = objective(cand)
            halvings = 0
            while not (np.isfinite(new[0]) and new[0] >= floor) and halvings < max_halving:
                step = step / 2
                cand = beta + step
                new = objective(cand)
                halvings += 1
            if not (np.isfinite(new[0]) and new[0] >= floor):
                break
            beta = cand
            if np.max(np.abs(beta / scale)) > max_abs_beta:
                raise ConvergenceError("separation detected")
            ll, grad, info = new
            grad_norm = float(np.max(np.abs(grad * scale)))
        converged = grad_norm <= tol
        if ridge:
            ll = sub.loglik(beta)
        elif np.any(np.diag(info) < SEPARATION_INFO * max(prob.n_events, 1.0)):
            # monotone likelihood: the score decays along a direction of unbounded ascent
            raise ConvergenceError("separation detected")

    full = np.zeros(p)
    full[active] = beta / scale
    days, inc = prob.baseline(full)
    base = np.zeros(max_day)
    inside = days <= max_day
    base[days[inside] - 1] = inc[inside]
    columns = design.columns if design is not None else tuple(f"z{j}" for j in range(p))
    return CoxFit(
        beta=full,
        baseline=base,
        n_iter=int(n_iter),
        grad_norm=float(grad_norm),
        converged=bool(converged),
        loglik=float(ll),
        design=design,
        columns=columns,
        dropped=tuple(np.flatnonzero(~active).tolist()),
    )


# --------------------------------------------------------------------------
# Prediction
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class HazardFunction:
    """Daily discrete hazards ``min(dL0(t) * exp(z'b), 1 - 1e-12)``.

    Calling with a day (or array of days) returns one value per covariate
    row; days outside the fitted range have hazard zero.
    """

    baseline: np.ndarray
    linear_predictor: np.ndarray

    def __call__(self, t):
        t = np.asarray(t)
        return self.matrix(np.atleast_1d(t))[:, 0] if t.ndim == 0 else self.matrix(t)

    def matrix(self, days) -> np.ndarray:
        days = np.asarray(days, dtype=np.int64)
        inside = (days >= 1) & (days <= self.baseline.size)
        base = np.where(inside, self.baseline[np.clip(days - 1, 0, self.baseline.size - 1)], 0.0)
        haz = base[None, :] * np.exp(self.linear_predictor)[:, None]
        return np.minimum(haz, HAZARD_CAP)

    def log_survival_table(self, max_day: int) -> np.ndarray:
        """Cumulative ``sum_{s<=t} log(1 - hazard(s))`` for ``t = 0..max_day``."""
        days = np.arange(1, max_day + 1)
        logs = np.log1p(-self.matrix(days))
        out = np.zeros((logs.shape[0], max_day + 1))
        np.cumsum(logs, axis=1, out=out[:, 1:])
        return out


def predict_hazard(fit: CoxFit, Z) -> HazardFunction:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.shape[1] != fit.beta.size:
        raise ValueError(f"covariate row has {Z.shape[1]} columns, fit expects {fit.beta.size}")
    return HazardFunction(fit.baseline, Z @ fit.beta)


class CoxPH(BaseEstimator):
    """Scikit-learn style wrapper around :func:`fit_cox`.

    ``y`` is a pair ``(time, event)`` or a two-column array.
    """

    def __init__(self, tol=1e-8, max_iter=100, drop_constant=False):
        self.tol = tol
        self.max_iter = max_iter
        self.drop_constant = drop_constant

    def fit(self, X, y, sample_weight=None):
        time, event = _split_y(y)
        self.fit_ = fit_cox(time, event, X, sample_weight=sample_weight, tol=self.tol,
                            max_iter=self.max_iter, drop_constant=self.drop_constant)
        self.coef_ = self.fit_.beta
        self.baseline_hazard_ = self.fit_.baseline
        self.n_iter_ = self.fit_.n_iter
        return self

    def predict_hazard(self, X, days) -> np.ndarray:
        return predict_hazard(self.fit_, X).matrix(days)

    def predict_survival(self, X, days) -> np.ndarray:
        """``prod_{s<=t} (1 - hazard(s))`` for each requested day."""
        days = np.asarray(days, dtype=np.int64)
        table = predict_hazard(self.fit_, X).log_survival_table(max(int(days.max()), 1))
        return np.exp(table[:, np.clip(days, 0, None)])

    def score(self, X, y, sample_weight=None) -> float:
        time, event = _split_y(y)
        return log_partial_likelihood(time, event, X, self.coef_, sample_weight)


def _split_y(y):
    if isinstance(y, tuple) and len(y) == 2:
        return np.asarray(y[0]), np.asarray(y[1])
    arr = np.asarray(y)
    if arr.ndim == 2 and arr.shape[1] == 2:
        return arr[:, 0], arr[:, 1]
    raise ValueError("y must be (time, event) or an (n, 2) array")
