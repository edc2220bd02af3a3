"""Announced leader strategies and the follower responses they induce."""

from __future__ import annotations

from enum import Enum

import numpy as np

from stackbelief.fse import FeedbackSolution, respond_to_solution
from stackbelief.lin_dyn import FloatArray, LtiGameDynamics
from stackbelief.lq_game import QuadCostModel
from stackbelief.olse import build_ol_br


class InfoStructure(str, Enum):
    OPEN_LOOP = "open-loop"
    FEEDBACK = "feedback"

    @classmethod
    def parse(cls, value: "str | InfoStructure") -> "InfoStructure":
        if isinstance(value, cls):
            return value
        aliases = {"ol": cls.OPEN_LOOP, "fb": cls.FEEDBACK}
        key = str(value).strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


class OpenLoopStrategy:
    """Leader control sequence announced at ``start_time`` from state ``x_start``."""

    info_structure = InfoStructure.OPEN_LOOP

    def __init__(self, dyn: LtiGameDynamics, start_time: int, x_start, u_L: FloatArray):
        self.dyn = dyn
        self.start_time = int(start_time)
        self.x_start = np.array(x_start, dtype=np.float64)
        self.u_L = np.asarray(u_L, dtype=np.float64)
        self._responses: dict[int, FloatArray] = {}

    @property
    def n_stages(self) -> int:
        return self.u_L.shape[0]

    def leader_control(self, t: int, x: FloatArray) -> FloatArray:
        return self.u_L[t - self.start_time]

    def follower_plan(self, follower: QuadCostModel) -> FloatArray:
        """Full-window BR of ``follower`` to this announcement, (n_stages, m_F)."""
        key = id(follower)
        plan = self._responses.get(key)
        if plan is None:
            br = build_ol_br(self.dyn, follower, self.n_stages + 1)
            plan = br.respond(self.u_L, self.x_start)
            self._responses[key] = plan
        return plan

    def follower_control(self, follower: QuadCostModel, t: int, x: FloatArray) -> FloatArray:
        return self.follower_plan(follower)[t - self.start_time]


class FeedbackStrategy:
    """Leader gain sequence announced at ``start_time``."""

    info_structure = InfoStructure.FEEDBACK

    def __init__(self, dyn: LtiGameDynamics, start_time: int, solution: FeedbackSolution):
        self.dyn = dyn
        self.start_time = int(start_time)
        self.solution = solution

    @property
    def n_stages(self) -> int:
        return self.solution.n_stages

    @property
    def K_L(self) -> FloatArray:
        return self.solution.K_L

    def leader_control(self, t: int, x: FloatArray) -> FloatArray:
        return -(self.solution.K_L[t - self.start_time] @ x)

    def follower_gains(self, follower: QuadCostModel) -> FloatArray:
        """State-feedback gains of ``follower``'s BR to the announced leader gains."""
        return respond_to_solution(self.dyn, self.solution, follower).K_F_state

    def follower_control(self, follower: QuadCostModel, t: int, x: FloatArray) -> FloatArray:
        return -(self.follower_gains(follower)[t - self.start_time] @ x)


Strategy = OpenLoopStrategy | FeedbackStrategy
