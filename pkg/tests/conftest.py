import numpy as np
import pandas as pd
import pytest

from causalve.data import Cohort, CovariateSchema


def make_cohort(rows, max_day=None, levels=None):
    """Cohort from ``(x, d_star, y_tilde, delta)`` tuples; ``d_star=None`` means never vaccinated.

    ``x`` is a category label for the single covariate ``g``.
    """
    xs = [str(r[0]) for r in rows]
    levels = tuple(sorted(set(xs))) if levels is None else tuple(levels)
    schema = CovariateSchema(("g",), (levels,))
    return Cohort(
        covariates=pd.DataFrame({"g": xs}),
        d_star=np.array([np.inf if r[1] is None else r[1] for r in rows], dtype=float),
        y_tilde=np.array([r[2] for r in rows]),
        delta=np.array([bool(r[3]) for r in rows]),
        schema=schema,
        max_day=max_day,
    )


@pytest.fixture
def cohort_factory():
    return make_cohort


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
