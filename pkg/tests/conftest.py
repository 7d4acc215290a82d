from __future__ import annotations

import numpy as np
import pytest

from avgcorr.envs import discrete_reacher_env, two_state_env
from avgcorr.rollout import Buffer, collect

# Lines recorded by the acceptance suite, echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def fixture_buffers() -> list[Buffer]:
    """Small hand-written buffers plus simulated ones, each made of whole trajectories."""
    out = [
        Buffer.from_states([[0, 1, 0]]),
        Buffer.from_states([[0, 1, 0, 1], [1, 0, 1, 0]]),
        Buffer.from_states([[2, 2, 2], [0, 1, 2], [1, 1, 0]]),
        Buffer.from_states([[0] * 7]),
    ]
    two = two_state_env(0.9, horizon=6, seed=1)
    out.append(collect(two, np.full((2, 2), 0.5), 60, reset=True))
    reacher = discrete_reacher_env(0.99, horizon=50, seed=2)
    out.append(collect(reacher, np.full((81, 8), 1 / 8), 500, reset=True))
    return out


@pytest.fixture
def buffers():
    return fixture_buffers()
