import pytest
from hypothesis import HealthCheck, settings

from otdrmtl.dataset import CorpusSpec, build_corpus

settings.register_profile(
    "otdrmtl", deadline=None, max_examples=40, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("otdrmtl")

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_corpus():
    """700 windows, 100 per cause class, seed 0."""
    return build_corpus(CorpusSpec(count=700), seed=0)


@pytest.fixture(scope="session")
def tiny_corpus():
    return build_corpus(CorpusSpec(count=140), seed=3)
