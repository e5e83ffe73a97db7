import pytest

from caraccess.ibs import GQ, SHAMIR, IbsParams, ibs_setup
from caraccess.rng import Rng


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: one of the numbered acceptance criteria")


@pytest.fixture(scope="session")
def ibs512():
    """Shamir and GQ authorities at the 512-bit test size."""
    rng = Rng(512)
    return {scheme: ibs_setup(IbsParams(scheme, 512), rng) for scheme in (SHAMIR, GQ)}


@pytest.fixture(scope="session")
def ibs2048():
    rng = Rng(2048)
    return {scheme: ibs_setup(IbsParams(scheme, 2048), rng) for scheme in (SHAMIR, GQ)}


_RESULTS = pytest.StashKey[list]()


class Criterion:
    """Records one acceptance criterion as PASS or FAIL, printed at the end of the run."""

    def __init__(self, config, number: int, title: str):
        self.config, self.number, self.title = config, number, title

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        line = f"{status}  criterion {self.number:2d}: {self.title}"
        if exc is not None:
            line += f" ({type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''})"
        print(line)
        self.config.stash.setdefault(_RESULTS, []).append((self.number, line))
        return False


@pytest.fixture
def criterion(request):
    return lambda number, title: Criterion(request.config, number, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, [])
    if results:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(results):
            terminalreporter.write_line(line)
