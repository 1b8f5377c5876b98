import numpy as np
import pytest

from fluxmortar.geometry import DecompositionConfig, build_decomposition, reference_config
from fluxmortar.verification import StudyConfig, run_study

# 3x3 split of [0,3]^2 with pairwise different grids; only the center is interior
GRID3_CONFIG = DecompositionConfig(
    domain=(0.0, 0.0, 3.0, 3.0),
    x_splits=(1.0, 2.0),
    y_splits=(1.0, 2.0),
    resolutions=((3, 3), (4, 4), (3, 5), (5, 4), (4, 5), (3, 4), (4, 3), (5, 5), (3, 3)),
    mortar_elements=2,
)


@pytest.fixture(scope="session")
def ref_dd():
    return build_decomposition(reference_config(0.25))


@pytest.fixture(scope="session")
def grid3_dd():
    return build_decomposition(GRID3_CONFIG)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


class StudyCache:
    """Convergence studies shared by the verification and acceptance tests."""

    def __init__(self):
        self._runs = {}

    def get(self, h_gamma0: float, order: int, levels: int = 6):
        key = (round(h_gamma0, 12), order, levels)
        if key not in self._runs:
            cfg = StudyConfig(reference_config(h_gamma0), orders=(order,), levels=levels)
            self._runs[key] = {r.variant: r for r in run_study(cfg)}
        return self._runs[key]


@pytest.fixture(scope="session")
def studies():
    return StudyCache()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
