"""Multiple-model adaptive estimation over follower BR hypotheses.

Each hypothesis predicts the next state by assuming the follower best-responds
to the leader's currently announced strategy with that hypothesis' cost. The
softmin of the residual norms is used as the measurement likelihood and the
posterior is updated recursively.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from stackbelief.lin_dyn import FloatArray, LtiGameDynamics
from stackbelief.lq_game import QuadCostModel
from stackbelief.strategy import Strategy

PROB_FLOOR = 1e-12


class EstimationUnderflowError(FloatingPointError):
    """Every hypothesis received zero posterior mass."""


@dataclass(frozen=True)
class EstimatorState:
    hypotheses: tuple[QuadCostModel, ...]
    probs: FloatArray
    step: int = 0

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=np.float64)
        if probs.shape != (len(self.hypotheses),):
            raise ValueError("one probability per hypothesis required")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities must be a distribution, got {probs}")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "hypotheses", tuple(self.hypotheses))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(h.label for h in self.hypotheses)


@dataclass(frozen=True)
class ResidualReport:
    residuals: FloatArray  # (k, n)
    likelihoods: FloatArray  # (k,)


def initial_state(hypotheses) -> EstimatorState:
    """Uniform prior over a nonempty hypothesis list."""
    hypotheses = tuple(hypotheses)
    if not hypotheses:
        raise ValueError("hypothesis set is empty")
    k = len(hypotheses)
    return EstimatorState(hypotheses, np.full(k, 1.0 / k))


def predict_state(
    dyn: LtiGameDynamics,
    hypothesis: QuadCostModel,
    x_prev: FloatArray,
    u_L_executed: FloatArray,
    strategy: Strategy,
    t_prev: int,
) -> FloatArray:
    """x_hat_t if the follower had played ``hypothesis``' BR to ``strategy`` at t_prev."""
    u_F = strategy.follower_control(hypothesis, t_prev, x_prev)
    return dyn.step(x_prev, u_L_executed, u_F)


def likelihoods(residuals) -> FloatArray:
    """Softmin of residual 2-norms: exp(-|e_b|) / sum_beta exp(-|e_beta|)."""
    res = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    if res.shape[0] == 0:
        raise ValueError("at least one hypothesis required")
    if np.any(np.isnan(res)):
        raise ValueError("NaN residual")
    return softmax(-np.linalg.norm(res, axis=1))


def bayes_update(state: EstimatorState, lik) -> EstimatorState:
    """Posterior proportional to likelihood times prior, floored at ``PROB_FLOOR``."""
    lik = np.asarray(lik, dtype=np.float64)
    post = lik * state.probs
    total = post.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise EstimationUnderflowError(f"posterior normaliser is {total!r} at step {state.step}")
    post = np.maximum(post / total, PROB_FLOOR)
    post /= post.sum()
    return EstimatorState(state.hypotheses, post, state.step + 1)


def map_belief(state: EstimatorState) -> QuadCostModel:
    """Most probable hypothesis; ties go to the earliest in the list."""
    return state.hypotheses[int(np.argmax(state.probs))]


def observe(
    state: EstimatorState,
    dyn: LtiGameDynamics,
    x_prev: FloatArray,
    x_obs: FloatArray,
    u_L_executed: FloatArray,
    strategy: Strategy,
    t_prev: int,
) -> tuple[EstimatorState, ResidualReport]:
    """One estimator step for the transition x_prev -> x_obs."""
    res = np.array(
        [x_obs - predict_state(dyn, h, x_prev, u_L_executed, strategy, t_prev) for h in state.hypotheses]
    )
    lik = likelihoods(res)
    return bayes_update(state, lik), ResidualReport(res, lik)
