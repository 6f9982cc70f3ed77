import numpy as np
import pytest

from trajattr.config import RunConfig
from trajattr.data import generate_offline_dataset
from trajattr.gridworld import default_layout
from trajattr.pipeline import run_pipeline


@pytest.fixture(scope="session")
def layout():
    return default_layout()


@pytest.fixture(scope="session")
def dataset(layout):
    return generate_offline_dataset(layout, n_traj=60, seed=7)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """One full pipeline run with the default config, shared across test modules."""
    cfg = RunConfig()
    out = tmp_path_factory.mktemp("default_run")
    run, _ = run_pipeline(cfg, out)
    return run


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; all lines are repeated in the terminal summary."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
        _CRITERIA[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
