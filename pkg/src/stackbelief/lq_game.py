"""Quadratic cost models, game containers and cost evaluation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from stackbelief._kernels import kernels
from stackbelief.lin_dyn import FloatArray, LtiGameDynamics, Trajectory, as_matrix

PSD_TOL = 1e-9
SYM_TOL = 1e-12

Player = Literal["L", "F"]


class CostModelError(ValueError):
    """A cost matrix violates symmetry or definiteness requirements."""


@dataclass(frozen=True, eq=False)
class QuadCostModel:
    """Stage cost x'Qx + u'Ru, with terminal cost x_T'Q x_T.

    A follower-side model doubles as a best-response hypothesis.
    """

    Q: FloatArray
    R: FloatArray
    label: str = ""

    def __post_init__(self) -> None:
        Q = as_matrix(self.Q, "Q")
        R = as_matrix(self.R, "R")
        for name, M in (("Q", Q), ("R", R)):
            if M.shape[0] != M.shape[1]:
                raise CostModelError(f"{name} must be square, got {M.shape}")
            if np.max(np.abs(M - M.T), initial=0.0) > SYM_TOL:
                raise CostModelError(f"{name} is not symmetric")
        q_min = float(np.linalg.eigvalsh(Q)[0])
        if q_min < -PSD_TOL:
            raise CostModelError(f"Q is not PSD (min eigenvalue {q_min:.3e})")
        r_min = float(np.linalg.eigvalsh(R)[0])
        if r_min <= 0.0:
            raise CostModelError(f"R is not positive definite (min eigenvalue {r_min:.3e})")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def m(self) -> int:
        return self.R.shape[0]

    def to_record(self) -> dict:
        return {"label": self.label, "Q": self.Q.tolist(), "R": self.R.tolist()}

    @classmethod
    def from_record(cls, record: dict) -> "QuadCostModel":
        return cls(Q=record["Q"], R=record["R"], label=str(record.get("label", "")))

    def __repr__(self) -> str:
        return f"QuadCostModel(label={self.label!r}, n={self.n}, m={self.m})"


@dataclass(frozen=True, eq=False)
class StackelbergGame:
    dyn: LtiGameDynamics
    leader_cost: QuadCostModel
    follower_true_cost: QuadCostModel
    T: int

    def __post_init__(self) -> None:
        if self.T < 1:
            raise ValueError("horizon T must be >= 1")
        check_cost_dims(self.dyn, self.leader_cost, "L")
        check_cost_dims(self.dyn, self.follower_true_cost, "F")


def check_cost_dims(dyn: LtiGameDynamics, cost: QuadCostModel, player: Player) -> None:
    m = dyn.m_L if player == "L" else dyn.m_F
    if cost.n != dyn.n or cost.m != m:
        raise ValueError(
            f"{player} cost {cost.label!r} has (n, m) = ({cost.n}, {cost.m}); "
            f"dynamics need ({dyn.n}, {m})"
        )


@dataclass(frozen=True)
class CostBreakdown:
    """Leader cost split at the update time: stages [0, tau-1] vs stages [tau, T-1] plus terminal."""

    pre_update: float
    post_update: float
    tau: int

    @property
    def total(self) -> float:
        return self.pre_update + self.post_update


def eval_cost(
    traj: Trajectory, controls_of: Player, cost: QuadCostModel, include_terminal: bool = True
) -> float:
    """Sum of x'Qx + u'Ru over the trajectory's stages, plus x_end'Q x_end if requested."""
    controls = traj.u_L if controls_of == "L" else traj.u_F
    if cost.n != traj.states.shape[1] or (controls.shape[0] and cost.m != controls.shape[1]):
        raise ValueError(f"cost {cost.label!r} does not match trajectory dimensions")
    return float(
        kernels.quadratic_cost(traj.states, controls, cost.Q, cost.R, bool(include_terminal))
    )


def decompose_cost(traj: Trajectory, leader_cost: QuadCostModel, tau: int) -> CostBreakdown:
    """Split the leader cost of a full-horizon trajectory at absolute time ``tau``.

    The terminal cost is attributed to the post-update part, so tau = T leaves
    only x_T'Q x_T there.
    """
    T = traj.end_time
    if not traj.start_time < tau <= T:
        raise ValueError(f"tau={tau} outside ({traj.start_time}, {T}]")
    pre = eval_cost(traj.window(traj.start_time, tau), "L", leader_cost, include_terminal=False)
    post = eval_cost(traj.window(tau, T), "L", leader_cost, include_terminal=True)
    return CostBreakdown(pre, post, int(tau))


def lift_block_costs(cost: QuadCostModel, T: int) -> tuple[FloatArray, FloatArray]:
    """Block-diagonal trajectory-level weights: Q-bar with T+1 blocks, R-bar with T."""
    if T < 0:
        raise ValueError("T must be >= 0")
    return np.kron(np.eye(T + 1), cost.Q), np.kron(np.eye(T), cost.R)
