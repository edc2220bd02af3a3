import numpy as np
import pytest

from stackbelief.lin_dyn import LtiGameDynamics
from stackbelief.lq_game import QuadCostModel, StackelbergGame


def random_scalar_game(rng: np.random.Generator, T: int | None = None) -> StackelbergGame:
    """Scalar game with |a| <= 1.5, nonzero input gains and positive weights."""
    a = rng.uniform(-1.5, 1.5)
    b_L = rng.choice([-1, 1]) * rng.uniform(0.3, 2.0)
    b_F = rng.choice([-1, 1]) * rng.uniform(0.3, 2.0)
    T = int(rng.integers(2, 7)) if T is None else T
    leader = QuadCostModel(rng.uniform(0.1, 20), rng.uniform(0.1, 20), "leader")
    follower = QuadCostModel(rng.uniform(0.1, 20), rng.uniform(0.1, 20), "b*")
    return StackelbergGame(LtiGameDynamics(a, b_L, b_F), leader, follower, T)


def random_cost(rng: np.random.Generator, n: int, m: int, label: str, psd_only: bool = False) -> QuadCostModel:
    F = rng.standard_normal((n, n))
    P = F if not psd_only else F[:, : max(1, n // 2)]
    Q = P @ P.T
    Q = 0.5 * (Q + Q.T)
    G = rng.standard_normal((m, m))
    R = G @ G.T + 0.5 * np.eye(m)
    R = 0.5 * (R + R.T)
    return QuadCostModel(Q, R, label)


def random_game(rng: np.random.Generator, n: int = 3, m_L: int = 2, m_F: int = 1, T: int = 5) -> StackelbergGame:
    A = rng.standard_normal((n, n)) / np.sqrt(n)
    dyn = LtiGameDynamics(A, rng.standard_normal((n, m_L)), rng.standard_normal((n, m_F)))
    return StackelbergGame(
        dyn, random_cost(rng, n, m_L, "leader"), random_cost(rng, n, m_F, "b*"), T
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def record_criterion(key: str, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {key:<4} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
