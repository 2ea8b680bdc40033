import numpy as np
import pytest

from cfsd.harness.config import RunConfig

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg(tmp_path):
    """A protocol small enough to run in a couple of seconds."""
    return RunConfig(
        adaptation_order=("S1", "S2"),
        raw_size=20,
        patch=16,
        hidden=(32,),
        feature_dim=16,
        real_train=60,
        real_test=20,
        base_train=120,
        base_test=40,
        shots=20,
        shot_pool=20,
        adapt_test=40,
        base_epochs=2,
        base_batch=64,
        adapt_epochs=2,
        adapt_batch=32,
        n0=10,
        out_dir=str(tmp_path),
    )
