"""The two scalar worked examples and their published reference values."""

from __future__ import annotations

from dataclasses import dataclass

from stackbelief.lin_dyn import LtiGameDynamics
from stackbelief.lq_game import QuadCostModel, StackelbergGame

# Comparison tolerances for published values (reported to 1-2 decimals).
TOL_CONTROL = 0.01
TOL_SEGMENT_COST = 0.1
TOL_TOTAL = 0.5


@dataclass(frozen=True)
class WorkedExample:
    game: StackelbergGame
    true_belief: QuadCostModel
    alt_belief: QuadCostModel
    x0: float
    tau: int


def example1(
    leader_Q: float = 16.0, leader_R: float = 17.0, tau: int = 3
) -> WorkedExample:
    """Open-loop example: x+ = 1.7x + 1.4u^L + 0.5u^F, T=5, x0=7.6."""
    dyn = LtiGameDynamics(1.7, 1.4, 0.5)
    true = QuadCostModel(7.0, 19.0, "b*")
    game = StackelbergGame(dyn, QuadCostModel(leader_Q, leader_R, "leader"), true, T=5)
    return WorkedExample(game, true, QuadCostModel(8.0, 9.0, "b'"), 7.6, tau)


def example2(
    leader_Q: float = 7.0, leader_R: float = 16.0, tau: int = 3
) -> WorkedExample:
    """Feedback example: x+ = 1.4x + 1.7u^L + 1.7u^F, T=8, x0=-5.6."""
    dyn = LtiGameDynamics(1.4, 1.7, 1.7)
    true = QuadCostModel(4.0, 24.0, "b*")
    game = StackelbergGame(dyn, QuadCostModel(leader_Q, leader_R, "leader"), true, T=8)
    return WorkedExample(game, true, QuadCostModel(29.0, 12.0, "b'"), -5.6, tau)


# Published values, keyed by belief label.
EXAMPLE1_GOLDEN = {
    "b*": {
        "u_L": [-4.6, -0.86, 0.06, 0.19, 0.12],
        "u_F": [-7.53, -4.14, -2.29, -1.21, -0.53],
        "x_tau": 1.22,
        "pre": 1443.18,
        "u_L_resolved": [-1.06, -0.3],
        "u_F_resolved": [-0.21, -0.07],
        "post": 50.72,
        "total": 1493.9,
    },
    "b'": {
        "u_L": [-2.28, 0.4, 0.73, 0.52, 0.25],
        "u_F": [-13.43, -7.57, -4.25, -2.27, -0.98],
        "x_tau": 2.13,
        "pre": 1227.72,
        "u_L_resolved": [-1.56, -0.41],
        "u_F_resolved": [-0.6, -0.23],
        "post": 162.88,
        "total": 1390.6,
    },
}

EXAMPLE2_GOLDEN = {
    "b*": {
        "K_L": [0.31, 0.31, 0.31, 0.31, 0.32, 0.32, 0.33, 0.3],
        "K_F": [0.27, 0.27, 0.27, 0.26, 0.26, 0.26, 0.25, 0.19],
        "total": 347.2,
    },
    "b'": {
        "K_L": [0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.02],
        "K_F": [0.37, 0.37, 0.37, 0.37, 0.36, 0.35, 0.31, 0.19],
        "total": 299.4,
    },
}
