import numpy as np
import pytest

from handedness.evaluation import bundled_table2
from handedness.ingest import Hand, TrialKey
from handedness.kinematics import Signal, Stroke, differentiate

FS = 134.0


def make_stroke(x, y, t=None, pressure=None, fs=FS, key=None):
    """Stroke from raw coordinates with derivatives by central differences."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    t = np.arange(len(x)) / fs if t is None else np.asarray(t, float)
    p = np.ones(len(x)) if pressure is None else np.asarray(pressure, float)

    def d(v):
        return differentiate(Signal(v, fs)).values

    vx, vy = d(x), d(y)
    ax, ay = d(vx), d(vy)
    return Stroke(key or TrialKey("S", 1, Hand.DOMINANT, 1), 0, 0, len(x), t, x, y, p,
                  vx, vy, ax, ay, d(ax), d(ay))


@pytest.fixture(scope="session")
def table2():
    return bundled_table2()


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
