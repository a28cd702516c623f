import numpy as np
import pytest

from robustemb.corpus import GeneratorSpec
from robustemb.experiments import synthetic_workspace

SMALL_SPEC = GeneratorSpec(vocab_size=300, n_train=240, n_test=120, emb_dim=8, cf_dim=8)


@pytest.fixture(scope="session")
def small_ws(tmp_path_factory):
    """A small synthetic benchmark loaded from disk, shared read-only."""
    return synthetic_workspace(tmp_path_factory.mktemp("small"), SMALL_SPEC, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# filled by tests/test_acceptance.py, one line per criterion
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
