import numpy as np
import pytest

from langevin_spectral.model import ModelParams


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def default_params():
    return ModelParams(K=6, L=8)


@pytest.fixture(scope="session")
def ref_cache(tmp_path_factory):
    """Reference solutions are written here once and reused across test files."""
    return tmp_path_factory.mktemp("reference-cache")


_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Criterion id -> one-line verdict, printed in the terminal summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k.split()[0])):
        terminalreporter.write_line(_ACCEPTANCE[key])
