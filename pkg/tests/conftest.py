import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def smooth_image(size=256, seed=0):
    """Deterministic smooth color image in [0, 1] (sums of low-frequency waves)."""
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    chans = []
    for _ in range(3):
        acc = np.full((size, size), 0.5)
        for _ in range(4):
            fx, fy = r.uniform(0.5, 4, size=2)
            phase = r.uniform(0, 2 * np.pi)
            acc += r.uniform(0.05, 0.12) * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
        chans.append(acc)
    return np.clip(np.stack(chans, -1), 0, 1)


@pytest.fixture
def smooth():
    return smooth_image


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end exit criteria (slow)")


# one line per acceptance criterion, filled in by tests/test_acceptance.py
CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])
