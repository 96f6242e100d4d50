import sys

import numpy as np
import pytest

from nuemt import NoiseTable, PolicySpec, SyntheticEvaluator, synthetic_fitness


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance verdict lines, one per executed criterion.

    The acceptance tests print their own PASS/FAIL lines, but stdout of
    passing tests is captured; this summary section is written by the
    terminal reporter and always reaches the run output.
    """
    mod = sys.modules.get("test_acceptance")
    verdicts = getattr(mod, "VERDICTS", None)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, text in sorted(verdicts):
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{verdict} criterion {num}: {text}")


@pytest.fixture(scope="session")
def table():
    """Small shared noise table; big enough for every test policy."""
    return NoiseTable(seed=2025, length=2 ** 18)


@pytest.fixture(scope="session")
def tiny_policy():
    """1-obs 1-action net used with linear_actuator in fast tests."""
    return PolicySpec(obs_dim=1, action_dim=1, hidden_sizes=(4, 4))


def sphere_evaluator(table, dim, target=None):
    """Synthetic evaluator for F(theta) = -||theta - target||^2."""
    target = np.zeros(dim) if target is None else np.asarray(target, float)

    def fitness(task_index, theta):
        return -float(np.sum((theta - target) ** 2))

    return SyntheticEvaluator(dim, fitness, table)


def staged_sphere_evaluator(table, dim):
    """Per-task sphere fitness with distinct optima (task i centered at (i-1)e1)."""

    def fitness(task_index, theta):
        return synthetic_fitness(f"staged_sphere_{task_index}", theta)

    return SyntheticEvaluator(dim, fitness, table)
