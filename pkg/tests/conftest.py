import numpy as np
import pytest

from haptest.estimation import CovarianceMonitor
from haptest.exploration import ActionSpec, default_catalog, run_trials

# Lines reported by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def catalog():
    return default_catalog()


@pytest.fixture(scope="session")
def validation_run(catalog):
    """Both reference surfaces under the 20 s sinusoidal validation press."""
    mon = CovarianceMonitor()
    recs = run_trials([catalog[0], catalog[10]], ActionSpec.validation(), seeds=[11, 12], monitor=mon)
    return {"stiff": recs[0], "soft": recs[1], "monitor": mon}


def window_mean(rec, series, t0=10.0, t1=20.0):
    sel = (rec.t >= t0) & (rec.t <= t1 + 1e-9)
    return np.mean(series[sel], axis=0)
