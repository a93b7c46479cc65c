"""Synthetic school-cohort generator, counterfactual oracle and calibration.

The generator draws four covariates, an ever-vaccinated indicator and a
daily logistic vaccination clock, exposure days with Poisson gaps, and a
logistic endpoint draw at each exposure.  The vaccine acts on exposures more
than ``tau`` days after vaccination, so endpoints within the ramp-up window
are unaffected by vaccination.

:func:`true_curves_oracle` computes the estimands by simulating paired
potential outcomes under shared randomness.  :class:`ToyDGP` is a tiny
process whose observed-data hazards are available in closed form.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import yaml
from scipy.special import expit

from .data import Cohort, CovariateSchema

__all__ = [
    "CovariateParams",
    "VaccinationParams",
    "CensoringParams",
    "ExposureParams",
    "EndpointParams",
    "SimConfig",
    "SimTruth",
    "generate_cohort",
    "true_curves_oracle",
    "calibrate_beta0",
    "calibrate_onset",
    "null_config",
    "ToyDGP",
]

RACE_LEVELS = ("white", "black", "other")
NEVER_DAY = np.iinfo(np.int32).max


@dataclass(frozen=True)
class CovariateParams:
    p_male: float = 0.5
    age_min: int = 5
    age_max: int = 11
    race_probs: tuple[float, float, float] = (0.27, 0.58, 0.15)
    n_clusters: int = 10


@dataclass(frozen=True)
class VaccinationParams:
    """Ever-vaccinated probability and odds ratios of the daily vaccination model.

    ``covariate_scale`` multiplies every log odds ratio (0 makes timing
    independent of the covariates).
    """

    p_vax: float = 0.42
    or_male: float = 1.02
    or_age: float = 0.99
    or_race: tuple[float, float] = (0.30, 0.75)
    or_cluster: tuple[float, ...] = (2.0, 0.8, 1.65, 1.15, 2.45, 2.4, 1.1, 1.1, 0.95)
    covariate_scale: float = 1.0


@dataclass(frozen=True)
class CensoringParams:
    """Mixture of a discrete uniform on ``1..uniform_max`` and point masses."""

    weights: tuple[float, ...] = (0.1, 0.1, 0.8)
    uniform_max: int = 210
    points: tuple[int, ...] = (90, 210)


@dataclass(frozen=True)
class ExposureParams:
    """Gap to the next exposure after day ``k`` is Poisson with mean
    ``max(intercept - slope * k, minimum)``; a zero gap counts as one day."""

    intercept: float = 50.0
    slope: float = 0.01
    minimum: float = 1.0


@dataclass(frozen=True)
class EndpointParams:
    """Logistic endpoint model applied at each exposure day.

    The intercept is ``-inf`` before ``beta0_onset`` and ``beta0`` from then
    on, unless ``beta0_table`` (one value per day ``1..len``) is given.  The
    calibrated defaults give an unvaccinated incidence of about 0.059 and a
    vaccinated incidence of about 0.037 by 180 days after vaccination.
    ``vaccine_effect`` scales the log odds ratio of vaccination.
    """

    beta0: float = -2.5444
    beta0_onset: int = 135
    beta0_table: tuple[float, ...] | None = None
    or_male: float = 1.1
    or_age: float = 0.95
    or_race: tuple[float, float] = (1.15, 0.8)
    or_cluster: tuple[float, ...] = (1.1, 0.7, 1.3, 0.97, 1.2, 1.8, 0.8, 0.8, 0.85)
    beta_v_coef: float = 2.5e-5
    vaccine_effect: float = 1.0


_SECTIONS = {
    "covariates": CovariateParams,
    "vaccination": VaccinationParams,
    "censoring": CensoringParams,
    "exposure": ExposureParams,
    "endpoint": EndpointParams,
}


@dataclass(frozen=True)
class SimConfig:
    """All generator settings; the defaults describe the reference scenario."""

    n: int = 2000
    max_day: int = 210
    tau: int = 14
    seed: int = 0
    covariates: CovariateParams = field(default_factory=CovariateParams)
    vaccination: VaccinationParams = field(default_factory=VaccinationParams)
    censoring: CensoringParams = field(default_factory=CensoringParams)
    exposure: ExposureParams = field(default_factory=ExposureParams)
    endpoint: EndpointParams = field(default_factory=EndpointParams)

    def __post_init__(self):
        self.validate()

    def validate(self):
        def prob(v, name):
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be a probability, got {v}")

        if self.n < 1:
            raise ValueError("n must be positive")
        if not (0 <= self.tau < self.max_day):
            raise ValueError("tau must satisfy 0 <= tau < max_day")
        cv, vx, cs, ep = self.covariates, self.vaccination, self.censoring, self.endpoint
        prob(cv.p_male, "p_male")
        prob(vx.p_vax, "p_vax")
        if len(cv.race_probs) != 3 or any(p < 0 for p in cv.race_probs) or abs(sum(cv.race_probs) - 1) > 1e-9:
            raise ValueError("race_probs must be three probabilities summing to 1")
        if cv.age_min > cv.age_max:
            raise ValueError("age_min exceeds age_max")
        if len(vx.or_cluster) != cv.n_clusters - 1 or len(ep.or_cluster) != cv.n_clusters - 1:
            raise ValueError("cluster odds ratios need n_clusters - 1 entries")
        ors = [vx.or_male, vx.or_age, *vx.or_race, *vx.or_cluster,
               ep.or_male, ep.or_age, *ep.or_race, *ep.or_cluster]
        if any(o <= 0 for o in ors):
            raise ValueError("odds ratios must be positive")
        if len(cs.weights) != len(cs.points) + 1:
            raise ValueError("censoring needs one weight for the uniform part plus one per point")
        if any(w < 0 for w in cs.weights) or abs(sum(cs.weights) - 1) > 1e-9:
            raise ValueError("invalid mixture weights: censoring weights must be non-negative and sum to 1")
        if cs.uniform_max < 1 or any(p < 1 for p in cs.points):
            raise ValueError("censoring days must be >= 1")
        if ep.beta0_onset < 1:
            raise ValueError("beta0_onset must be >= 1")

    # ---- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        def clean(v):
            if isinstance(v, tuple):
                return [clean(x) for x in v]
            if isinstance(v, float) and v == int(v) and abs(v) < 1e15:
                return float(v)
            return v

        out = {"n": self.n, "max_day": self.max_day, "tau": self.tau, "seed": self.seed}
        for name in _SECTIONS:
            sec = getattr(self, name)
            out[name] = {f.name: clean(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
        return out

    @classmethod
    def from_dict(cls, data: dict | None) -> "SimConfig":
        data = dict(data or {})
        top = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - top
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for key, value in data.items():
            if key in _SECTIONS:
                sec_cls = _SECTIONS[key]
                value = dict(value or {})
                names = {f.name for f in dataclasses.fields(sec_cls)}
                bad = set(value) - names
                if bad:
                    raise ValueError(f"unknown keys in section {key!r}: {sorted(bad)}")
                value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
                kwargs[key] = sec_cls(**value)
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_yaml(cls, text: str) -> "SimConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
            raise ValueError(f"config parse error{where}: {getattr(exc, 'problem', exc)}") from None
        if data is not None and not isinstance(data, dict):
            raise ValueError("config must be a mapping of sections")
        return cls.from_dict(data)

    def config_hash(self) -> str:
        """SHA-256 of the canonical resolved configuration."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def replace(self, **changes) -> "SimConfig":
        """Copy with top-level fields or ``section__field`` entries changed."""
        top, nested = {}, {}
        for key, value in changes.items():
            if "__" in key:
                sec, name = key.split("__", 1)
                nested.setdefault(sec, {})[name] = value
            else:
                top[key] = value
        for sec, vals in nested.items():
            top[sec] = dataclasses.replace(getattr(self, sec), **vals)
        return dataclasses.replace(self, **top)

    # ---- model pieces --------------------------------------------------
    def beta0_of_k(self, k) -> np.ndarray:
        k = np.asarray(k)
        ep = self.endpoint
        if ep.beta0_table is not None:
            table = np.asarray(ep.beta0_table, dtype=float)
            return table[np.clip(k - 1, 0, table.size - 1)]
        return np.where(k >= ep.beta0_onset, ep.beta0, -np.inf)

    def beta_v_of_k(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        with np.errstate(divide="ignore"):
            bv = np.log(np.minimum(self.endpoint.beta_v_coef * k ** 2, 1.0))
        return self.endpoint.vaccine_effect * bv if self.endpoint.vaccine_effect != 0 else np.zeros_like(k)

    def gamma0_of_k(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        return np.where(k <= 15, 0.067 * k, np.minimum(0.1 + 1e-6 * (k - 15) ** 2, 1.0))

    def eta_of_k(self, k) -> np.ndarray:
        ex = self.exposure
        return np.maximum(ex.intercept - ex.slope * np.asarray(k, dtype=float), ex.minimum)


def null_config(n=2000, seed=0, beta0=0.0) -> SimConfig:
    """No vaccine effect and vaccination timing unrelated to the covariates.

    The intercept applies from day one; the default (endpoint probability
    0.5 per exposure) gives an unvaccinated incidence near 0.8 by day 180,
    so VE is estimated precisely enough for null-effect checks.
    """
    base = SimConfig(n=n, seed=seed)
    return base.replace(vaccination__covariate_scale=0.0, endpoint__vaccine_effect=0.0,
                        endpoint__beta0=beta0, endpoint__beta0_onset=1)


@dataclass(eq=False)
class SimTruth:
    """Oracle incidences and VE on ``t0`` with Monte-Carlo standard errors."""

    t0: np.ndarray
    psi0_true: np.ndarray
    psi1_true: np.ndarray
    ve_true: np.ndarray
    mc_reps: int
    mc_se: dict

    def at(self, name: str, t0: int) -> float:
        idx = np.flatnonzero(self.t0 == t0)[0]
        return float(getattr(self, name)[idx])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t0": self.t0, "psi0": self.psi0_true, "psi1": self.psi1_true, "ve": self.ve_true,
            "psi0_se": self.mc_se["psi0"], "psi1_se": self.mc_se["psi1"], "ve_se": self.mc_se["ve"],
        })


# --------------------------------------------------------------------------
# Generator
# --------------------------------------------------------------------------

def _schema(cfg: SimConfig) -> CovariateSchema:
    clusters = tuple(f"c{c}" for c in range(1, cfg.covariates.n_clusters + 1))
    return CovariateSchema(("male", "age", "race", "cluster"), (None, None, RACE_LEVELS, clusters))


def _draw_covariates(cfg: SimConfig, rng, n):
    cv = cfg.covariates
    male = (rng.random(n) < cv.p_male).astype(float)
    age = rng.integers(cv.age_min, cv.age_max + 1, n).astype(float)
    race = rng.choice(3, size=n, p=np.asarray(cv.race_probs))
    cluster = rng.integers(1, cv.n_clusters + 1, n)
    return male, age, race, cluster


def _linear(male, age, race, cluster, or_male, or_age, or_race, or_cluster, scale=1.0):
    race_lp = np.concatenate([[0.0], np.log(or_race)])
    clus_lp = np.concatenate([[0.0], np.log(or_cluster)])
    lp = np.log(or_male) * male + np.log(or_age) * age + race_lp[race] + clus_lp[cluster - 1]
    return scale * lp


def _draw_vaccination_day(cfg: SimConfig, rng, gx, n):
    K = cfg.max_day
    ever = rng.random(n) < cfg.vaccination.p_vax
    k = np.arange(1, K + 1)
    p = expit(cfg.gamma0_of_k(k)[None, :] + gx[:, None])
    hit = rng.random((n, K)) < p
    first = np.where(hit.any(axis=1), hit.argmax(axis=1) + 1, NEVER_DAY)
    return np.where(ever, first, NEVER_DAY)


def _endpoint_paths(cfg: SimConfig, rng, bx, vax_days: list, horizon: int, start=None):
    """Simulate exposures to ``horizon`` and return the first endpoint day per
    vaccination schedule in ``vax_days`` (shared exposures and uniforms).

    ``NEVER_DAY`` marks no endpoint by ``horizon``.
    """
    n = bx.size
    t = np.zeros(n, dtype=np.int64)
    out = [np.full(n, NEVER_DAY, dtype=np.int64) for _ in vax_days]
    live = np.ones(n, dtype=bool)
    tau = cfg.tau
    while live.any():
        idx = np.flatnonzero(live)
        gap = np.maximum(rng.poisson(cfg.eta_of_k(t[idx])), 1)
        t[idx] += gap
        u = rng.random(idx.size)
        tk = t[idx]
        inside = tk <= horizon
        base = cfg.beta0_of_k(tk) + bx[idx]
        bv = cfg.beta_v_of_k(tk)
        pending = np.zeros(idx.size, dtype=bool)
        for y, d in zip(out, vax_days):
            active = (tk - d[idx]) > tau
            with np.errstate(invalid="ignore"):
                lp = base + np.where(active, bv, 0.0)
            p = np.where(np.isfinite(lp), expit(lp), np.where(lp > 0, 1.0, 0.0))
            free = y[idx] == NEVER_DAY
            hit = free & inside & (u < p)
            y[idx[hit]] = tk[hit]
            pending |= free & ~hit
        live[idx] = inside & pending
    return out


def _draw_censoring(cfg: SimConfig, rng, n):
    cs = cfg.censoring
    comp = rng.choice(len(cs.weights), size=n, p=np.asarray(cs.weights) / sum(cs.weights))
    unif = rng.integers(1, cs.uniform_max + 1, n)
    points = np.asarray((0,) + tuple(cs.points))
    return np.where(comp == 0, unif, points[comp])


def _simulate(cfg: SimConfig, rng, n):
    male, age, race, cluster = _draw_covariates(cfg, rng, n)
    vx, ep = cfg.vaccination, cfg.endpoint
    gx = _linear(male, age, race, cluster, vx.or_male, vx.or_age, vx.or_race, vx.or_cluster, vx.covariate_scale)
    bx = _linear(male, age, race, cluster, ep.or_male, ep.or_age, ep.or_race, ep.or_cluster)
    d = _draw_vaccination_day(cfg, rng, gx, n)
    (y,) = _endpoint_paths(cfg, rng, bx, [d], cfg.max_day)
    c = _draw_censoring(cfg, rng, n)
    end = np.minimum(c, cfg.max_day)
    y_tilde = np.minimum(y, end)
    delta = y <= end
    observed_d = np.where(d < y_tilde, d, NEVER_DAY)
    cov = pd.DataFrame({
        "male": male,
        "age": age,
        "race": np.asarray(RACE_LEVELS)[race],
        "cluster": np.char.add("c", cluster.astype(str)),
    })
    return cov, observed_d, y_tilde, delta, bx


def generate_cohort(cfg: SimConfig, seed: int | None = None) -> Cohort:
    """Draw ``cfg.n`` subjects; ``seed`` overrides ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    cov, d, y, delta, _ = _simulate(cfg, rng, cfg.n)
    d_star = np.where(d == NEVER_DAY, np.inf, d).astype(float)
    return Cohort(cov, d_star, y, delta, _schema(cfg), ids=np.arange(1, cfg.n + 1), max_day=cfg.max_day)


# --------------------------------------------------------------------------
# Oracle
# --------------------------------------------------------------------------

def _binomial_truth(a: np.ndarray, b: np.ndarray):
    """Means, binomial SEs and delta-method VE SE from paired indicators."""
    m = a.shape[0]
    p0, p1 = a.mean(axis=0), b.mean(axis=0)
    se0 = np.sqrt(p0 * (1 - p0) / m)
    se1 = np.sqrt(p1 * (1 - p1) / m)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = p1 / p0
        infl = (b - ratio * a) / p0
        se_ve = infl.std(axis=0, ddof=1) / np.sqrt(m)
        ve = np.where(p0 > 0, 1 - ratio, np.nan)
    return p0, p1, ve, se0, se1, se_ve


def true_curves_oracle(cfg: SimConfig, mc_reps: int = 100_000, t0_grid=None, seed: int = 12345) -> SimTruth:
    """Counterfactual truth for the observed-data marginalizing weights.

    A large cohort is generated with the configured censoring; its members
    still endpoint-free ``tau`` days after vaccination supply ``(D*, X)``.
    For each, a fresh exposure history is drawn and the endpoint days under
    active and placebo vaccination on ``D*`` are recorded with shared
    uniforms; histories with an endpoint within ``tau`` days are redrawn, which
    conditions on the principal stratum.
    """
    tau = cfg.tau
    grid = np.arange(tau + 1, cfg.max_day + 1) if t0_grid is None else np.atleast_1d(t0_grid).astype(int)
    rng = np.random.default_rng(seed)
    d_parts, bx_parts, total = [], [], 0
    while total < mc_reps:
        chunk = max(4 * (mc_reps - total), 10_000)
        _, d, y, _, bx = _simulate(cfg, rng, chunk)
        keep = (d <= cfg.max_day) & (y - d > tau)
        d_parts.append(d[keep])
        bx_parts.append(bx[keep])
        total += int(keep.sum())
    d = np.concatenate(d_parts)[:mc_reps]
    bx = np.concatenate(bx_parts)[:mc_reps]
    horizon = int(d.max() + grid.max())
    y0 = np.full(d.size, NEVER_DAY, dtype=np.int64)
    y1 = y0.copy()
    todo = np.arange(d.size)
    for _ in range(1000):
        placebo = np.full(todo.size, NEVER_DAY, dtype=np.int64)
        a, b = _endpoint_paths(cfg, rng, bx[todo], [placebo, d[todo]], horizon)
        ok = a > d[todo] + tau
        y0[todo[ok]], y1[todo[ok]] = a[ok], b[ok]
        todo = todo[~ok]
        if todo.size == 0:
            break
    else:
        raise RuntimeError("oracle rejection sampling did not terminate")
    ends = d[:, None] + grid[None, :]
    ind0 = y0[:, None] <= ends
    ind1 = y1[:, None] <= ends
    p0, p1, ve, se0, se1, se_ve = _binomial_truth(ind0, ind1)
    return SimTruth(grid, p0, p1, ve, int(d.size), {"psi0": se0, "psi1": se1, "ve": se_ve})


# --------------------------------------------------------------------------
# Calibration
# --------------------------------------------------------------------------

def _psi_at(cfg, t0, mc_reps, seed):
    truth = true_curves_oracle(cfg, mc_reps, [t0], seed)
    return truth.psi0_true[0], truth.psi1_true[0]


def calibrate_beta0(target: float, cfg: SimConfig, *, t0: int = 180, onset: int | None = None,
                    lower: float = -20.0, upper: float = -1.62, tol: float = 0.002,
                    mc_reps: int = 40_000, seed: int = 2024, max_iter: int = 40) -> float:
    """Constant intercept ``c`` (from ``onset`` on) giving oracle ``psibar0(t0) = target``.

    Bisection over ``[lower, upper]`` with common random numbers, so the
    oracle incidence is monotone in ``c``.

    Raises
    ------
    ValueError
        If ``target`` lies outside the incidence range reachable in the bracket.
    """
    if not (0.0 < target < 1.0):
        raise ValueError("target must lie strictly between 0 and 1")
    onset = cfg.endpoint.beta0_onset if onset is None else onset

    def f(c):
        trial = cfg.replace(endpoint__beta0=c, endpoint__beta0_onset=onset, endpoint__beta0_table=None)
        return _psi_at(trial, t0, mc_reps, seed)[0]

    lo_val, hi_val = f(lower), f(upper)
    if not (lo_val - tol <= target <= hi_val + tol):
        raise ValueError(f"target {target} unreachable: incidence spans [{lo_val:.4f}, {hi_val:.4f}] on the bracket")
    lo, hi = lower, upper
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        val = f(mid)
        if abs(val - target) <= tol / 4 or hi - lo < 1e-4:
            break
        if val < target:
            lo = mid
        else:
            hi = mid
    return float(mid)


def calibrate_onset(target0: float, target1: float, cfg: SimConfig, onsets=range(1, 181, 10), *,
                    t0: int = 180, mc_reps: int = 40_000, seed: int = 2024):
    """Pick the intercept onset day whose calibrated intercept brings the
    vaccinated incidence closest to ``target1``.

    Returns ``(onset, beta0, psi0, psi1)``; onsets whose intercept would
    exceed the bracket are skipped.
    """
    best = None
    for onset in onsets:
        try:
            c = calibrate_beta0(target0, cfg, t0=t0, onset=onset, mc_reps=mc_reps, seed=seed)
        except ValueError:
            continue
        trial = cfg.replace(endpoint__beta0=c, endpoint__beta0_onset=onset)
        p0, p1 = _psi_at(trial, t0, mc_reps, seed)
        if best is None or abs(p1 - target1) < abs(best[3] - target1):
            best = (int(onset), c, float(p0), float(p1))
    if best is None:
        raise ValueError("no onset day reaches the target incidence")
    return best


# --------------------------------------------------------------------------
# Toy process with closed-form observed hazards
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ToyDGP:
    """Ten-day process with a binary covariate and a latent binary frailty.

    Each day an unvaccinated subject first risks the endpoint, then (if still
    endpoint-free and the day is in ``vax_days``) is vaccinated with
    probability ``vax_prob[x]``.  The endpoint hazard on day ``k`` is
    ``base[k-1] * x_mult**x * u_mult**u``, multiplied by ``vaccine_mult`` once
    ``k - D* > tau``.  The frailty ``u`` is never observed and does not affect
    vaccination.
    """

    max_day: int = 10
    tau: int = 2
    p_x: float = 0.5
    p_u: float = 0.4
    vax_prob: tuple[float, float] = (0.3, 0.5)
    vax_days: int = 4
    base: tuple[float, ...] = (0.04, 0.05, 0.06, 0.05, 0.07, 0.08, 0.06, 0.09, 0.1, 0.08)
    x_mult: float = 1.5
    u_mult: float = 3.0
    vaccine_mult: float = 0.4

    def hazard(self, k, x, u, active):
        h = np.asarray(self.base)[np.asarray(k) - 1] * self.x_mult ** x * self.u_mult ** u
        return np.minimum(h * np.where(active, self.vaccine_mult, 1.0), 1.0)

    def _vax(self, k, x):
        return self.vax_prob[x] if k <= self.vax_days else 0.0

    def observed_quantities(self):
        """Exact ``lambda0[x, t-1]``, ``lambda1[(d, x)][s-1]`` and the
        observed-data weights of ``(d, x)`` among vaccinees endpoint-free
        ``tau`` days after vaccination."""
        K, tau = self.max_day, self.tau
        pu = np.array([1 - self.p_u, self.p_u])
        px = np.array([1 - self.p_x, self.p_x])
        lam0 = np.zeros((2, K))
        lam1, mass = {}, {}
        for x in (0, 1):
            m = pu.copy()
            for t in range(1, K + 1):
                h = self.hazard(t, x, np.array([0, 1]), False)
                lam0[x, t - 1] = m @ h / m.sum()
                survive = m * (1 - h)
                a = self._vax(t, x)
                if a > 0:
                    v = survive * a
                    haz = np.zeros(K - t)
                    for s in range(1, K - t + 1):
                        hs = self.hazard(t + s, x, np.array([0, 1]), s > tau)
                        haz[s - 1] = v @ hs / v.sum()
                        if s == tau:
                            mass[(t, x)] = px[x] * v.sum()
                        v = v * (1 - hs)
                    if tau == 0:
                        mass[(t, x)] = px[x] * (survive * a).sum()
                    lam1[(t, x)] = haz
                m = survive * (1 - a)
        total = sum(mass.values())
        weights = {key: val / total for key, val in mass.items()}
        return lam0, lam1, weights

    def plugin_truth(self, t0_grid):
        """``psibar0`` and ``psibar1`` from the exact observed hazards."""
        from .estimator import plugin_psi0, plugin_psi1

        lam0, lam1, weights = self.observed_quantities()
        keys = sorted(weights)
        w = np.array([weights[k] for k in keys])
        d = np.array([k[0] for k in keys])
        h0 = np.vstack([lam0[k[1]] for k in keys])
        width = self.max_day
        h1 = np.vstack([np.pad(lam1[k], (0, width - lam1[k].size)) for k in keys])
        return plugin_psi0(h0, d, w, self.tau, t0_grid), plugin_psi1(h1, w, self.tau, t0_grid)

    def counterfactual_oracle(self, t0_grid, mc_reps=200_000, seed=0):
        """Monte-Carlo ``psibar_v`` from paired potential outcomes.

        ``(d, x)`` is drawn from the same weights; the frailty comes from its
        population distribution and pairs that fail the principal-stratum
        condition are redrawn.
        """
        _, _, weights = self.observed_quantities()
        rng = np.random.default_rng(seed)
        keys = sorted(weights)
        pick = rng.choice(len(keys), size=mc_reps, p=np.array([weights[k] for k in keys]))
        d = np.array([keys[i][0] for i in pick])
        x = np.array([keys[i][1] for i in pick])
        K, tau = self.max_day, self.tau
        y0 = np.zeros(mc_reps, dtype=int)
        y1 = np.zeros(mc_reps, dtype=int)
        todo = np.arange(mc_reps)
        while todo.size:
            u = (rng.random(todo.size) < self.p_u).astype(int)
            unif = rng.random((todo.size, K))
            days = np.arange(1, K + 1)
            h0 = self.hazard(days[None, :], x[todo, None], u[:, None], False)
            act = (days[None, :] - d[todo, None]) > tau
            h1 = self.hazard(days[None, :], x[todo, None], u[:, None], act)
            e0, e1 = unif < h0, unif < h1
            first0 = np.where(e0.any(1), e0.argmax(1) + 1, K + 1)
            first1 = np.where(e1.any(1), e1.argmax(1) + 1, K + 1)
            ok = first0 > d[todo] + tau
            y0[todo[ok]], y1[todo[ok]] = first0[ok], first1[ok]
            todo = todo[~ok]
        grid = np.atleast_1d(t0_grid)
        ends = d[:, None] + grid[None, :]
        p0, p1, ve, se0, se1, se_ve = _binomial_truth(y0[:, None] <= ends, y1[:, None] <= ends)
        return SimTruth(grid, p0, p1, ve, mc_reps, {"psi0": se0, "psi1": se1, "ve": se_ve})
