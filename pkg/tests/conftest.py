import numpy as np
import pytest
from hypothesis import settings

from fedcgd.objective import ObjectiveParams
from fedcgd.schedulers import ProblemInstance

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# Four-device, two-class example: devices 2 and 3 (0-based) are complementary.
TOY_DISTS = np.array([[0.51, 0.49], [0.51, 0.49], [0.8, 0.2], [0.2, 0.8]])
TOY_GLOBAL = np.array([0.5, 0.5])


def toy_instance(sigma=0.0, batch=1, bws=(1.0, 1.0, 1.0, 1.0), budget=10.0):
    params = ObjectiveParams(sigma, batch, np.ones(2))
    return ProblemInstance(TOY_DISTS, np.asarray(bws, dtype=float), TOY_GLOBAL, params, budget)


@pytest.fixture
def toy():
    return toy_instance


# one verdict line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion(capsys):
    def report(number, ok, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
