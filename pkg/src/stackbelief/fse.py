"""Feedback Stackelberg equilibrium by backward value recursion.

Within a stage the leader moves first: u^L_t = -K^L_t x_t. The follower then
reacts to the post-leader state z_t = A x_t + B_L u^L_t with
u^F_t = -K^F_t z_t, so its stage response to any leader gain is fixed by its
own next-step value matrix. ``K_F`` stores that post-leader gain (the form
printed in the worked example); ``K_F_state`` = K^F_t (A - B_L K^L_t) is the
equivalent gain on x_t, which is what rollouts use.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from stackbelief._kernels import kernels
from stackbelief.lin_dyn import FloatArray, LtiGameDynamics, Trajectory, rollout_feedback
from stackbelief.lq_game import QuadCostModel, StackelbergGame, check_cost_dims, eval_cost


def _frozen(arr: FloatArray) -> FloatArray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeedbackSolution:
    """Gains for stages t = 0..L-1 and value matrices for t = 0..L of one window.

    Index 0 is the window's first stage, whatever its absolute game time.
    """

    K_L: FloatArray
    K_F: FloatArray
    K_F_state: FloatArray
    V_L: FloatArray
    V_F: FloatArray
    belief_label: str

    @property
    def n_stages(self) -> int:
        return self.K_L.shape[0]

    def tail(self, k: int) -> "FeedbackSolution":
        """The same solution restricted to stages k..L-1."""
        return FeedbackSolution(
            self.K_L[k:], self.K_F[k:], self.K_F_state[k:], self.V_L[k:], self.V_F[k:],
            self.belief_label,
        )


@dataclass(frozen=True, eq=False)
class FollowerResponse:
    """Stage-wise BR of one follower model to announced leader gains."""

    K_F: FloatArray
    K_F_state: FloatArray
    V_F: FloatArray
    label: str


@lru_cache(maxsize=2048)
def _solve_fse_cached(
    dyn: LtiGameDynamics, leader: QuadCostModel, follower: QuadCostModel, n_stages: int
) -> FeedbackSolution:
    K_L, K_F, K_F_state, V_L, V_F = kernels.fse_backward(
        dyn.A, dyn.B_L, dyn.B_F, leader.Q, leader.R, follower.Q, follower.R, n_stages
    )
    return FeedbackSolution(
        _frozen(K_L), _frozen(K_F), _frozen(K_F_state), _frozen(V_L), _frozen(V_F), follower.label
    )


def solve_fse(
    dyn: LtiGameDynamics,
    leader_cost: QuadCostModel,
    follower_cost: QuadCostModel,
    horizon_len: int,
) -> FeedbackSolution:
    """FSE gains for a window of ``horizon_len`` states, the follower modelled by ``follower_cost``."""
    if horizon_len < 1:
        raise ValueError("horizon_len must be >= 1")
    check_cost_dims(dyn, leader_cost, "L")
    check_cost_dims(dyn, follower_cost, "F")
    return _solve_fse_cached(dyn, leader_cost, follower_cost, int(horizon_len) - 1)


def follower_feedback_br(
    dyn: LtiGameDynamics, K_L: FloatArray, follower_cost: QuadCostModel
) -> FollowerResponse:
    """Best response of a follower with ``follower_cost`` to announced leader gains ``K_L``."""
    check_cost_dims(dyn, follower_cost, "F")
    K_L = np.ascontiguousarray(K_L, dtype=np.float64)
    K_F, K_F_state, V_F = kernels.follower_feedback_response(
        dyn.A, dyn.B_L, dyn.B_F, K_L, follower_cost.Q, follower_cost.R
    )
    return FollowerResponse(_frozen(K_F), _frozen(K_F_state), _frozen(V_F), follower_cost.label)


@lru_cache(maxsize=2048)
def _true_response_cached(
    dyn: LtiGameDynamics, solution: FeedbackSolution, follower_cost: QuadCostModel
) -> FollowerResponse:
    return follower_feedback_br(dyn, solution.K_L, follower_cost)


def respond_to_solution(
    dyn: LtiGameDynamics, solution: FeedbackSolution, follower_cost: QuadCostModel
) -> FollowerResponse:
    """Cached ``follower_feedback_br`` against the leader gains of ``solution``."""
    return _true_response_cached(dyn, solution, follower_cost)


def fse_rollout(
    game: StackelbergGame,
    solution: FeedbackSolution,
    x0,
    true_follower: QuadCostModel | None = None,
    start_time: int = 0,
) -> Trajectory:
    """Leader plays the solution's gains; the true follower best-responds to them."""
    follower = game.follower_true_cost if true_follower is None else true_follower
    response = respond_to_solution(game.dyn, solution, follower)
    return rollout_feedback(game.dyn, x0, solution.K_L, response.K_F_state, start_time)


def fse_cost(
    game: StackelbergGame,
    solution: FeedbackSolution,
    x0,
    true_follower: QuadCostModel | None = None,
) -> float:
    """Leader cost when it plays ``solution`` against the true follower's BR."""
    traj = fse_rollout(game, solution, x0, true_follower)
    return eval_cost(traj, "L", game.leader_cost, include_terminal=True)


@dataclass(frozen=True)
class StageReport:
    t: int
    passed: bool
    worst_improvement: float  # largest decrease of the leader cost-to-go found


def follower_stage_gain(dyn: LtiGameDynamics, follower_cost: QuadCostModel, V_F_next) -> FloatArray:
    """Follower's post-leader stage gain given its next-step value matrix."""
    BtV = dyn.B_F.T @ V_F_next
    return np.linalg.solve(follower_cost.R + BtV @ dyn.B_F, BtV)


def leader_stage_cost_to_go(
    game: StackelbergGame,
    solution: FeedbackSolution,
    follower_model: QuadCostModel,
    t: int,
    K_L_t: FloatArray,
    x: FloatArray,
) -> float:
    """Leader cost-to-go from x at stage t when only the stage-t gain is replaced.

    The follower re-best-responds at stage t; stages after t keep the
    solution's gains, summarised by V_L[t+1].
    """
    dyn = game.dyn
    u_L = -(K_L_t @ x)
    z = dyn.A @ x + dyn.B_L @ u_L
    K_F_t = follower_stage_gain(dyn, follower_model, solution.V_F[t + 1])
    x_next = z - dyn.B_F @ (K_F_t @ z)
    Q, R = game.leader_cost.Q, game.leader_cost.R
    return float(x @ Q @ x + u_L @ R @ u_L + x_next @ solution.V_L[t + 1] @ x_next)


def check_stage_optimality(
    solution: FeedbackSolution,
    game: StackelbergGame,
    t: int,
    n_perturb: int = 100,
    follower_model: QuadCostModel | None = None,
    rng: np.random.Generator | None = None,
    scale: float = 1e-2,
    tol: float = 1e-7,
) -> StageReport:
    """Perturb K^L_t alone and confirm the leader's cost-to-go never drops by more than ``tol``.

    ``follower_model`` is the model the solution was computed under (default:
    the game's true follower).
    """
    if not 0 <= t < solution.n_stages:
        raise ValueError(f"stage {t} outside [0, {solution.n_stages - 1}]")
    rng = np.random.default_rng(0) if rng is None else rng
    follower = game.follower_true_cost if follower_model is None else follower_model
    worst = 0.0
    K = solution.K_L[t]
    for _ in range(n_perturb):
        x = rng.standard_normal(game.dyn.n)
        base = leader_stage_cost_to_go(game, solution, follower, t, K, x)
        dK = rng.standard_normal(K.shape) * scale
        trial = leader_stage_cost_to_go(game, solution, follower, t, K + dK, x)
        worst = max(worst, base - trial)
    return StageReport(t, worst <= tol, worst)
