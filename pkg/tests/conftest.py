import numpy as np
import pytest

from drcrl.instances import random_fail_state_cmdp, with_feasible_thresholds
from drcrl.mdp import ContaminationSet

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_family(seed: int, n: int, max_states: int = 4, max_actions: int = 3, max_constraints: int = 2, beta_max: float = 0.3):
    """Feasible-by-construction fail-state CMDPs with ``S <= max_states`` (fail state included)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        S = int(rng.integers(2, max_states + 1))
        A = int(rng.integers(2, max_actions + 1))
        m = int(rng.integers(1, max_constraints + 1))
        cset = ContaminationSet(float(rng.uniform(0.0, beta_max)))
        mdp = with_feasible_thresholds(rng, random_fail_state_cmdp(rng, S, A, m), cset)
        out.append((mdp, cset))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
