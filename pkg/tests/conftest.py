import numpy as np
import pytest

from invfracture import ConstitutiveModel, ContinuationPlan, continue_branch, detect_bifurcations


@pytest.fixture(scope="session")
def paper():
    return ConstitutiveModel.paper_example()


@pytest.fixture(scope="session")
def coarse_plan():
    # 120 elements on [0, 1] keeps a two-branch trace to a few seconds
    return ContinuationPlan(elements_total=120, n_max=2)


@pytest.fixture(scope="session")
def coarse_bifurcations(coarse_plan):
    return detect_bifurcations(coarse_plan.epsilon, coarse_plan.model, 2, n_elems=120)


@pytest.fixture(scope="session")
def coarse_branches(coarse_plan, coarse_bifurcations):
    out = {}
    for n in (1, 2):
        for side in "AB":
            out[f"{n}{side}"] = continue_branch(coarse_plan, n, side, coarse_bifurcations[n - 1].lam)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for no in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[no])
