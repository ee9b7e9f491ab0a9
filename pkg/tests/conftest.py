import numpy as np
import pytest

from facetmatch.synthio import generate_catalog, make_triplets, split_triplets
from facetmatch.trainer import TrainConfig


@pytest.fixture(scope="session")
def small_world():
    """80-item default-slot catalog with 300 triplets, split 70/10/20."""
    catalog = generate_catalog(80, seed=3)
    triplets = make_triplets(catalog, 300, seed=3)
    return catalog, split_triplets(triplets, seed=3)


@pytest.fixture
def tiny_config():
    return TrainConfig(epochs=2, batch_size=16, dim=16, n_tokens=4, layers=1, heads=2, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion, when the acceptance module ran."""
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
