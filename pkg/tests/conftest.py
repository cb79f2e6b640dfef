import numpy as np
import pytest

from pertprune.model import ModelConfig, init_model

CALIB = [
    "The meeting will start later today.",
    "The child looks happy in the garden.",
    "The host carried the lamp by the river.",
]


@pytest.fixture
def tiny_config():
    return ModelConfig(n_layers=3, d_model=16, n_heads=2, d_ff=32, max_seq_len=48, seed=11)


@pytest.fixture
def tiny_model(tiny_config):
    model = init_model(tiny_config)
    # spread the weights so gradients are not dominated by init symmetry
    rng = np.random.default_rng(5)
    for p in model.parameters():
        p.data += rng.normal(0.0, 0.05, size=p.shape)
    return model


@pytest.fixture
def calib():
    return list(CALIB)


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
