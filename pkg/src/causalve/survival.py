"""Discrete-time survival primitives: risk tables, Kaplan-Meier, Nelson-Aalen
and the scale transforms used for confidence intervals.

Time is measured in whole days.  A subject whose observed time is ``t`` is
in the risk set of every day ``s <= t``; censored subjects therefore stay at
risk on their censoring day.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from ._validation import check_day_array, check_event_array, check_sample_weight

__all__ = [
    "StepCurve",
    "risk_table",
    "kaplan_meier",
    "nelson_aalen",
    "logit",
    "expit",
    "log1m",
    "inv_log1m",
]


@dataclass(frozen=True, eq=False)
class StepCurve:
    """Right-continuous step function over integer days.

    ``kind`` is ``"survival"`` (starts at 1, non-increasing) or
    ``"cumhaz"`` (starts at 0, non-decreasing).  ``increments`` holds the
    per-day jumps for cumulative hazards.
    """

    times: np.ndarray
    values: np.ndarray
    kind: str = "survival"
    increments: np.ndarray | None = None

    def __call__(self, t):
        t = np.asarray(t)
        pos = np.searchsorted(self.times, t, side="right") - 1
        start = 1.0 if self.kind == "survival" else 0.0
        vals = np.where(pos >= 0, self.values[np.clip(pos, 0, None)], start)
        return vals if vals.ndim else float(vals)


def risk_table(times, events, weights=None):
    """Per distinct observed day: events ``d_s`` and number at risk ``n_s``.

    Returns ``(days, d, n)`` with ``days`` strictly increasing.
    """
    t = check_day_array(times)
    e = check_event_array(events, t.size)
    w = check_sample_weight(weights, t.size)
    keep = w > 0
    t, e, w = t[keep], e[keep], w[keep]
    if t.size == 0:
        raise ValueError("empty sample")
    days, inv = np.unique(t, return_inverse=True)
    leaving = np.bincount(inv, weights=w, minlength=days.size)
    d = np.bincount(inv, weights=w * e, minlength=days.size)
    n = np.cumsum(leaving[::-1])[::-1]
    return days, d, n


def kaplan_meier(times, events, weights=None) -> StepCurve:
    """Product-limit survival estimate ``S(t) = prod_{s<=t} (1 - d_s/n_s)``."""
    days, d, n = risk_table(times, events, weights)
    surv = np.cumprod(1.0 - d / n)
    return StepCurve(days, surv, "survival")


def nelson_aalen(times, events, weights=None) -> StepCurve:
    """Cumulative hazard ``sum_{s<=t} d_s/n_s`` with per-day increments."""
    days, d, n = risk_table(times, events, weights)
    inc = d / n
    return StepCurve(days, np.cumsum(inc), "cumhaz", increments=inc)


def _domain_error():
    return ValueError("transform domain")


def logit(p):
    p_arr = np.asarray(p, dtype=float)
    if np.any(~(p_arr > 0) | ~(p_arr < 1)):
        raise _domain_error()
    out = special.logit(p_arr)
    return out if out.ndim else float(out)


def expit(x):
    out = special.expit(np.asarray(x, dtype=float))
    return out if out.ndim else float(out)


def log1m(v):
    """``log(1 - v)``, the log risk-ratio scale when ``v`` is a VE."""
    v_arr = np.asarray(v, dtype=float)
    if np.any(~(v_arr < 1)):
        raise _domain_error()
    out = np.log1p(-v_arr)
    return out if out.ndim else float(out)


def inv_log1m(x):
    out = -np.expm1(np.asarray(x, dtype=float))
    return out if out.ndim else float(out)
