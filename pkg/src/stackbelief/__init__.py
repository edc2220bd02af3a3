"""Finite-horizon LQ Stackelberg games in which the leader revises its model of the follower mid-game."""

from stackbelief.fse import FeedbackSolution, check_stage_optimality, solve_fse
from stackbelief.lin_dyn import LtiGameDynamics, Trajectory, build_stacked
from stackbelief.lq_game import CostBreakdown, QuadCostModel, StackelbergGame, decompose_cost, eval_cost
from stackbelief.mmae import EstimatorState, bayes_update, initial_state, likelihoods, map_belief
from stackbelief.olse import build_ol_br, resolve_truncated_ol, solve_olse
from stackbelief.protocol import (
    BeliefSchedule,
    RunRecord,
    compare_beliefs,
    run_adaptive,
    run_fixed,
    run_with_update,
)
from stackbelief.strategy import InfoStructure

__all__ = [
    "BeliefSchedule",
    "CostBreakdown",
    "EstimatorState",
    "FeedbackSolution",
    "InfoStructure",
    "LtiGameDynamics",
    "QuadCostModel",
    "RunRecord",
    "StackelbergGame",
    "Trajectory",
    "bayes_update",
    "build_ol_br",
    "build_stacked",
    "check_stage_optimality",
    "compare_beliefs",
    "decompose_cost",
    "eval_cost",
    "initial_state",
    "likelihoods",
    "map_belief",
    "resolve_truncated_ol",
    "run_adaptive",
    "run_fixed",
    "run_with_update",
    "solve_fse",
    "solve_olse",
]
