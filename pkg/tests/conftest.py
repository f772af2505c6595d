import pytest

from flowseq.pipeline import build_sequences, labeled_flows
from flowseq.synth import generate, preset


@pytest.fixture(scope="session")
def small_corpus():
    return generate(preset("small"))


@pytest.fixture(scope="session")
def small_flows(small_corpus):
    return labeled_flows(small_corpus.packets, small_corpus.rules)


@pytest.fixture(scope="session")
def small_sequences(small_flows):
    return build_sequences(small_flows)


CRITERIA = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def criteria(pytestconfig):
    """Collects one (number, passed, detail) line per acceptance criterion."""
    return pytestconfig.stash.setdefault(CRITERIA, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(CRITERIA, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
