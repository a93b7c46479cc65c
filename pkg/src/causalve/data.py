"""Subject records, covariate schemas and the columnar ``Cohort`` container.

A cohort stores one row per subject: covariates ``X``, the day of first
vaccination ``d_star`` (``inf`` when never vaccinated), the observed day
``y_tilde = min(Y, C)`` and the event indicator ``delta``.  Days are
integers counted from the study start.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from ._validation import check_day_array, check_event_array
from .exceptions import CohortError

NEVER = None
X_PREFIX = "x_"


@dataclass(frozen=True)
class CovariateSchema:
    """Names, types and category levels of the covariate vector.

    ``levels[i]`` is a tuple of category labels for a categorical covariate
    and ``None`` for a numeric one.  The first level of a categorical
    covariate is its reference level.
    """

    names: tuple[str, ...]
    levels: tuple[tuple | None, ...]

    def __post_init__(self):
        if len(self.names) != len(self.levels):
            raise ValueError("names and levels must have equal length")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate covariate names")
        for name, lev in zip(self.names, self.levels):
            if lev is not None and len(lev) < 1:
                raise ValueError(f"categorical covariate {name!r} has no levels")

    def is_categorical(self, name: str) -> bool:
        return self.levels[self.names.index(name)] is not None

    def levels_of(self, name: str):
        return self.levels[self.names.index(name)]

    def subset(self, names: Sequence[str]) -> "CovariateSchema":
        missing = [n for n in names if n not in self.names]
        if missing:
            raise ValueError(f"unknown covariates: {missing}")
        return CovariateSchema(tuple(names), tuple(self.levels_of(n) for n in names))

    @classmethod
    def infer(cls, frame: pd.DataFrame, categorical: Iterable[str] = ()) -> "CovariateSchema":
        """Numeric columns stay numeric unless listed in ``categorical``."""
        categorical = set(categorical)
        levels = []
        for name in frame.columns:
            col = frame[name]
            numeric = pd.to_numeric(col, errors="coerce")
            if name in categorical or numeric.isna().any():
                labels = col.astype(str).unique().tolist()
                levels.append(tuple(sorted(labels, key=_natural_key)))
            else:
                levels.append(None)
        return cls(tuple(str(c) for c in frame.columns), tuple(levels))

    def conform(self, frame: pd.DataFrame) -> pd.DataFrame:
        """Validate ``frame`` against the schema and coerce column dtypes."""
        missing = [n for n in self.names if n not in frame.columns]
        if missing:
            raise CohortError(f"covariates missing from data: {missing}")
        out = {}
        for name, lev in zip(self.names, self.levels):
            col = frame[name]
            if lev is None:
                vals = pd.to_numeric(col, errors="coerce")
                bad = np.flatnonzero(vals.isna().to_numpy())
                if bad.size:
                    raise CohortError(f"covariate {name!r} is not numeric at rows {(bad + 1).tolist()[:10]}")
                out[name] = vals.astype(float).to_numpy()
            else:
                vals = col.astype(str)
                bad = np.flatnonzero(~vals.isin(lev).to_numpy())
                if bad.size:
                    raise CohortError(f"covariate {name!r} has unknown levels at rows {(bad + 1).tolist()[:10]}")
                out[name] = pd.Categorical(vals, categories=list(lev))
        return pd.DataFrame(out, index=pd.RangeIndex(len(frame)))


def _natural_key(label: str):
    return [int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", str(label))]


@dataclass(frozen=True)
class SubjectRecord:
    """One individual.  ``d_star`` is ``None`` for a never-vaccinated subject."""

    id: object
    x: tuple[tuple[str, object], ...]
    d_star: int | None
    y_tilde: int
    delta: bool


@dataclass
class Cohort:
    """Columnar cohort; ``d_star`` holds ``np.inf`` for never vaccinated."""

    covariates: pd.DataFrame
    d_star: np.ndarray
    y_tilde: np.ndarray
    delta: np.ndarray
    schema: CovariateSchema
    ids: np.ndarray | None = None
    max_day: int | None = None
    _cell_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.y_tilde)
        self.y_tilde = check_day_array(self.y_tilde, "y_tilde")
        self.delta = check_event_array(self.delta, n, "delta")
        d = np.asarray(self.d_star, dtype=float).reshape(-1)
        if d.size != n:
            raise CohortError("d_star length does not match y_tilde")
        finite = np.isfinite(d)
        if np.any(np.isnan(d)) or np.any(d[~finite] < 0):
            raise CohortError("d_star must be a day index or +inf (never vaccinated)")
        if np.any(d[finite] != np.round(d[finite])) or np.any(d[finite] < 1):
            raise CohortError("d_star must be an integer day >= 1")
        self.d_star = d
        if len(self.covariates) != n:
            raise CohortError("covariate rows do not match record count")
        self.covariates = self.schema.conform(self.covariates.reset_index(drop=True))
        if self.max_day is None:
            self.max_day = int(self.y_tilde.max())
        if np.any(self.y_tilde > self.max_day):
            raise CohortError(f"y_tilde exceeds the maximum follow-up day {self.max_day}")
        if np.any(d[finite] > self.max_day):
            raise CohortError(f"d_star exceeds the maximum follow-up day {self.max_day}")
        if self.ids is None:
            self.ids = np.arange(n)
        else:
            self.ids = np.asarray(self.ids)

    def __len__(self):
        return len(self.y_tilde)

    @property
    def vaccinated(self) -> np.ndarray:
        return np.isfinite(self.d_star)

    def take(self, index) -> "Cohort":
        """Row subset or resample (duplicated rows become distinct subjects)."""
        index = np.asarray(index)
        return Cohort(
            covariates=self.covariates.iloc[index].reset_index(drop=True),
            d_star=self.d_star[index],
            y_tilde=self.y_tilde[index],
            delta=self.delta[index],
            schema=self.schema,
            ids=self.ids[index],
            max_day=self.max_day,
        )

    def cell_codes(self, names: Sequence[str] | None = None) -> np.ndarray:
        """Integer code per row identifying its exact covariate pattern."""
        names = tuple(self.schema.names if names is None else names)
        if names not in self._cell_cache:
            if not names:
                codes = np.zeros(len(self), dtype=np.int64)
            else:
                frame = self.covariates[list(names)].astype(str)
                codes = frame.groupby(list(names), sort=True, observed=True).ngroup().to_numpy()
            self._cell_cache[names] = codes.astype(np.int64)
        return self._cell_cache[names]

    def records(self) -> list[SubjectRecord]:
        rows = self.covariates.to_dict("records")
        out = []
        for i, row in enumerate(rows):
            d = self.d_star[i]
            out.append(
                SubjectRecord(
                    id=self.ids[i].item() if hasattr(self.ids[i], "item") else self.ids[i],
                    x=tuple((k, row[k]) for k in self.schema.names),
                    d_star=None if not np.isfinite(d) else int(d),
                    y_tilde=int(self.y_tilde[i]),
                    delta=bool(self.delta[i]),
                )
            )
        return out

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord], schema: CovariateSchema | None = None,
                     max_day: int | None = None) -> "Cohort":
        if not records:
            raise CohortError("empty sample")
        frame = pd.DataFrame([dict(r.x) for r in records])
        if schema is None:
            schema = CovariateSchema.infer(frame)
        return cls(
            covariates=frame,
            d_star=np.array([np.inf if r.d_star is None else r.d_star for r in records], dtype=float),
            y_tilde=np.array([r.y_tilde for r in records]),
            delta=np.array([bool(r.delta) for r in records]),
            schema=schema,
            ids=np.array([r.id for r in records], dtype=object),
            max_day=max_day,
        )

    def to_frame(self) -> pd.DataFrame:
        """Wide frame with the CSV column layout (``x_`` prefixed covariates)."""
        out = pd.DataFrame({"id": self.ids})
        for name in self.schema.names:
            out[X_PREFIX + name] = self.covariates[name].to_numpy()
        out["d_star"] = pd.array(
            [pd.NA if not np.isfinite(v) else int(v) for v in self.d_star], dtype="Int64"
        )
        out["y_tilde"] = self.y_tilde
        out["delta"] = self.delta.astype(int)
        return out

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, schema: CovariateSchema | None = None,
                   max_day: int | None = None, categorical: Iterable[str] = ()) -> "Cohort":
        """Build from a frame with columns ``id``, ``x_*``, ``d_star``, ``y_tilde``, ``delta``."""
        xcols = [c for c in frame.columns if str(c).startswith(X_PREFIX)]
        for col in ("y_tilde", "delta", "d_star"):
            if col not in frame.columns:
                raise CohortError(f"missing required column {col!r}")
        cov = frame[xcols].copy()
        cov.columns = [c[len(X_PREFIX):] for c in xcols]
        if schema is None:
            schema = CovariateSchema.infer(cov, categorical=[c[len(X_PREFIX):] if c.startswith(X_PREFIX) else c
                                                            for c in categorical])
        d = pd.to_numeric(frame["d_star"], errors="coerce").astype(float).fillna(np.inf).to_numpy()
        ids = frame["id"].to_numpy() if "id" in frame.columns else None
        return cls(cov, d, frame["y_tilde"].to_numpy(), frame["delta"].to_numpy(), schema, ids, max_day)


def read_cohort_csv(path, *, max_day: int | None = None, categorical: Iterable[str] = (),
                    schema: CovariateSchema | None = None) -> Cohort:
    """Parse a cohort CSV; malformed rows raise :class:`CohortError` naming file lines."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CohortError(f"{path}: empty file (header row required)") from None
        rows = list(reader)
    header = [h.strip() for h in header]
    required = {"id", "d_star", "y_tilde", "delta"}
    missing = required - set(header)
    if missing:
        raise CohortError(f"{path}: header lacks columns {sorted(missing)}")
    if not rows:
        raise CohortError(f"{path}: empty sample")
    errors = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            errors.append(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            continue
        rec = dict(zip(header, row))
        if rec["d_star"].strip() and not _is_int(rec["d_star"]):
            errors.append(f"line {lineno}: d_star {rec['d_star']!r} is not an integer day")
        if not _is_int(rec["y_tilde"]) or _int(rec["y_tilde"]) < 1:
            errors.append(f"line {lineno}: y_tilde {rec['y_tilde']!r} is not a day >= 1")
        if rec["delta"].strip() not in ("0", "1"):
            errors.append(f"line {lineno}: delta {rec['delta']!r} must be 0 or 1")
        if rec["d_star"].strip() and _is_int(rec["d_star"]) and _int(rec["d_star"]) < 1:
            errors.append(f"line {lineno}: d_star must be >= 1")
        if max_day is not None and _is_int(rec["y_tilde"]) and _int(rec["y_tilde"]) > max_day:
            errors.append(f"line {lineno}: y_tilde exceeds maximum follow-up {max_day}")
    if errors:
        raise CohortError(f"{path}: malformed rows\n" + "\n".join(errors[:20]))
    frame = pd.DataFrame(rows, columns=header)
    frame["y_tilde"] = frame["y_tilde"].map(_int)
    frame["delta"] = frame["delta"].astype(int)
    frame["d_star"] = frame["d_star"].map(lambda s: float(s) if s.strip() else np.inf)
    return Cohort.from_frame(frame, schema=schema, max_day=max_day, categorical=categorical)


def _is_int(text: str) -> bool:
    # integral decimals such as "3.0" (pandas writes these when a column has gaps) count as days
    return re.fullmatch(r"\s*[+-]?\d+(\.0*)?\s*", text) is not None


def _int(text: str) -> int:
    return int(float(text))


def write_cohort_csv(cohort: Cohort, path) -> None:
    """Write ``cohort`` in the cohort CSV layout (empty ``d_star`` = never)."""
    frame = cohort.to_frame()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(frame.columns.tolist())
        for row in frame.itertuples(index=False):
            writer.writerow([_fmt(v) for v in row])


def _fmt(value) -> str:
    if value is pd.NA or value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        if float(value).is_integer():
            return str(int(value))
        return repr(float(value))
    return str(value)
