"""Stackelberg play with mid-game updates of the leader's BR belief.

At every update time the leader re-solves the remaining game [t, T] from the
realised state under its current belief and announces the new strategy; the
true follower best-responds to each announcement over its whole window. The
two-belief protocol is the special case of updates at {0, tau}.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from stackbelief.fse import solve_fse
from stackbelief.lin_dyn import FloatArray, Trajectory
from stackbelief.lq_game import CostBreakdown, QuadCostModel, StackelbergGame, decompose_cost
from stackbelief.mmae import EstimatorState, initial_state, map_belief, observe
from stackbelief.olse import solve_olse
from stackbelief.strategy import FeedbackStrategy, InfoStructure, OpenLoopStrategy, Strategy

log = logging.getLogger(__name__)

FIXED = "fixed-belief"
ADAPTIVE = "adaptive"

# relative gap under which two total costs count as a tie
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class BeliefSchedule:
    """Update times with the belief used from each of them on."""

    segments: tuple[tuple[int, QuadCostModel], ...]
    scheme_label: str = FIXED

    def __post_init__(self) -> None:
        segments = tuple((int(s), b) for s, b in self.segments)
        if not segments:
            raise ValueError("schedule needs at least one segment")
        starts = [s for s, _ in segments]
        if starts[0] != 0:
            raise ValueError("first segment must start at t=0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError(f"segment starts must increase strictly: {starts}")
        if self.scheme_label not in (FIXED, ADAPTIVE):
            raise ValueError(f"unknown scheme label {self.scheme_label!r}")
        object.__setattr__(self, "segments", segments)

    @property
    def starts(self) -> tuple[int, ...]:
        return tuple(s for s, _ in self.segments)

    def check_horizon(self, T: int) -> None:
        if self.segments[-1][0] >= T:
            raise ValueError(f"segment start {self.segments[-1][0]} not below T={T}")

    @classmethod
    def two_belief(cls, b1: QuadCostModel, b2: QuadCostModel, tau: int, T: int) -> "BeliefSchedule":
        if not 0 < tau <= T:
            raise ValueError(f"tau={tau} outside (0, {T}]")
        segments = [(0, b1)] if tau == T else [(0, b1), (tau, b2)]
        return cls(tuple(segments), FIXED)

    @classmethod
    def periodic(cls, belief: QuadCostModel, tau: int, T: int) -> "BeliefSchedule":
        """Re-solve under the same belief every ``tau`` steps."""
        if tau < 1:
            raise ValueError("update period must be >= 1")
        return cls(tuple((t, belief) for t in range(0, T, tau)), FIXED)

    def labels(self) -> list[tuple[int, str]]:
        return [(s, b.label) for s, b in self.segments]


@dataclass(frozen=True, eq=False)
class RunRecord:
    """One playthrough over [0, T] with everything needed to audit it."""

    game: StackelbergGame
    trajectory: Trajectory
    breakdown: CostBreakdown
    schedule: BeliefSchedule
    info_structure: InfoStructure
    seed: int = 0
    # feedback runs only: executed state-feedback gains, (T, m, n)
    leader_gains: FloatArray | None = None
    follower_gains: FloatArray | None = None
    # adaptive runs only: posterior after observing x_t, row t = 0..T
    posterior: FloatArray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def leader_controls(self) -> FloatArray:
        return self.trajectory.u_L

    @property
    def follower_controls(self) -> FloatArray:
        return self.trajectory.u_F

    @property
    def total(self) -> float:
        return self.breakdown.total

    def breakdown_at(self, tau: int) -> CostBreakdown:
        return decompose_cost(self.trajectory, self.game.leader_cost, tau)

    def summary(self, include_arrays: bool = True) -> dict:
        """Flat JSON-ready record."""
        out = dict(self.meta)
        out.update(
            info_structure=self.info_structure.value,
            scheme_label=self.schedule.scheme_label,
            seed=int(self.seed),
            tau=self.breakdown.tau,
            total=self.total,
            pre_update=self.breakdown.pre_update,
            post_update=self.breakdown.post_update,
            schedule=[[s, lbl] for s, lbl in self.schedule.labels()],
        )
        if include_arrays:
            out.update(
                states=self.trajectory.states.tolist(),
                u_L=self.trajectory.u_L.tolist(),
                u_F=self.trajectory.u_F.tolist(),
            )
            if self.posterior is not None:
                out["posterior"] = self.posterior.tolist()
        return out


def announce(game: StackelbergGame, belief: QuadCostModel, info: InfoStructure, t: int, x_t) -> Strategy:
    """Leader's equilibrium strategy for the remaining game [t, T] under ``belief``."""
    if info is InfoStructure.OPEN_LOOP:
        u_L = solve_olse(game, belief, x_t, (t, game.T))
        return OpenLoopStrategy(game.dyn, t, x_t, u_L)
    solution = solve_fse(game.dyn, game.leader_cost, belief, game.T - t + 1)
    return FeedbackStrategy(game.dyn, t, solution)


def _play(
    game: StackelbergGame,
    x0,
    info: InfoStructure,
    update_times: Sequence[int],
    pick_belief: Callable[[int, EstimatorState | None], QuadCostModel],
    estimator: EstimatorState | None,
):
    dyn, T = game.dyn, game.T
    true_follower = game.follower_true_cost
    updates = set(update_times)
    x = np.array(x0, dtype=np.float64).reshape(dyn.n)
    states = np.zeros((T + 1, dyn.n))
    u_L = np.zeros((T, dyn.m_L))
    u_F = np.zeros((T, dyn.m_F))
    states[0] = x
    K_L = np.zeros((T, dyn.m_L, dyn.n)) if info is InfoStructure.FEEDBACK else None
    K_F = np.zeros((T, dyn.m_F, dyn.n)) if info is InfoStructure.FEEDBACK else None
    posterior = None
    if estimator is not None:
        posterior = np.zeros((T + 1, len(estimator.hypotheses)))
        posterior[0] = estimator.probs
    segments = []
    strategy: Strategy | None = None
    for t in range(T):
        if t in updates:
            belief = pick_belief(t, estimator)
            strategy = announce(game, belief, info, t, x)
            segments.append((t, belief))
        uL = strategy.leader_control(t, x)
        uF = strategy.follower_control(true_follower, t, x)
        x_next = dyn.step(x, uL, uF)
        if K_L is not None:
            k = t - strategy.start_time
            K_L[t] = strategy.K_L[k]
            K_F[t] = strategy.follower_gains(true_follower)[k]
        if estimator is not None:
            estimator, _ = observe(estimator, dyn, x, x_next, uL, strategy, t)
            posterior[t + 1] = estimator.probs
        u_L[t] = uL
        u_F[t] = uF
        states[t + 1] = x_next
        x = x_next
    return Trajectory(states, u_L, u_F, 0), segments, K_L, K_F, posterior


def run_schedule(
    game: StackelbergGame,
    schedule: BeliefSchedule,
    info_structure: InfoStructure | str,
    x0,
    breakdown_tau: int | None = None,
    seed: int = 0,
    meta: Mapping | None = None,
) -> RunRecord:
    """Play a fixed belief schedule against the true follower."""
    info = InfoStructure.parse(info_structure)
    schedule.check_horizon(game.T)
    beliefs = dict(schedule.segments)
    traj, _, K_L, K_F, _ = _play(
        game, x0, info, schedule.starts, lambda t, _est: beliefs[t], None
    )
    if breakdown_tau is None:
        breakdown_tau = schedule.starts[1] if len(schedule.starts) > 1 else game.T
    return RunRecord(
        game, traj, decompose_cost(traj, game.leader_cost, breakdown_tau), schedule, info,
        seed, K_L, K_F, None, dict(meta or {}),
    )


def run_with_update(
    game: StackelbergGame,
    b1: QuadCostModel,
    b2: QuadCostModel,
    tau: int,
    info_structure: InfoStructure | str,
    x0,
    seed: int = 0,
) -> RunRecord:
    """Play under ``b1`` on [0, tau), re-solve under ``b2`` at tau (no re-solve if tau = T)."""
    schedule = BeliefSchedule.two_belief(b1, b2, tau, game.T)
    return run_schedule(game, schedule, info_structure, x0, breakdown_tau=tau, seed=seed)


def run_fixed(
    game: StackelbergGame,
    belief: QuadCostModel,
    tau: int,
    info_structure: InfoStructure | str,
    x0,
    seed: int = 0,
    meta: Mapping | None = None,
) -> RunRecord:
    """Re-solve under one constant belief every ``tau`` steps."""
    schedule = BeliefSchedule.periodic(belief, tau, game.T)
    return run_schedule(
        game, schedule, info_structure, x0, breakdown_tau=min(tau, game.T), seed=seed, meta=meta
    )


def run_adaptive(
    game: StackelbergGame,
    hypotheses: Iterable[QuadCostModel] | EstimatorState,
    tau: int,
    info_structure: InfoStructure | str,
    x0,
    seed: int = 0,
    meta: Mapping | None = None,
) -> RunRecord:
    """Re-solve every ``tau`` steps under the estimator's current MAP belief.

    The estimator is updated after every step; its MAP is only consumed at
    update times. Passing an ``EstimatorState`` sets a non-uniform prior.
    """
    if tau < 1:
        raise ValueError("update period must be >= 1")
    info = InfoStructure.parse(info_structure)
    est = hypotheses if isinstance(hypotheses, EstimatorState) else initial_state(hypotheses)
    traj, segments, K_L, K_F, posterior = _play(
        game, x0, info, range(0, game.T, tau), lambda t, e: map_belief(e), est
    )
    schedule = BeliefSchedule(tuple(segments), ADAPTIVE)
    breakdown = decompose_cost(traj, game.leader_cost, min(tau, game.T))
    return RunRecord(game, traj, breakdown, schedule, info, seed, K_L, K_F, posterior, dict(meta or {}))


def pick_winner(costs: Mapping[str, float], preferred: str | None = None) -> str:
    """Label with the lowest cost; ties go to ``preferred``, then lexicographic order."""
    if not costs:
        raise ValueError("no costs to compare")
    best = min(costs.values())
    tol = TIE_RTOL * abs(best)
    tied = sorted(k for k, v in costs.items() if v - best <= tol)
    if preferred is not None and preferred in tied:
        return preferred
    return tied[0]


@dataclass(frozen=True)
class BeliefComparison:
    totals: dict[str, float]
    winner: str
    records: dict[str, RunRecord]


def compare_beliefs(
    game: StackelbergGame,
    belief_set: Sequence[QuadCostModel],
    tau: int,
    info_structure: InfoStructure | str,
    x0,
) -> BeliefComparison:
    """Play b1 = b2 = b for each candidate belief and report the cheapest."""
    if not belief_set:
        raise ValueError("belief set is empty")
    records = {b.label: run_with_update(game, b, b, tau, info_structure, x0) for b in belief_set}
    if len(records) != len(belief_set):
        raise ValueError("belief labels must be unique")
    totals = {k: r.total for k, r in records.items()}
    winner = pick_winner(totals, game.follower_true_cost.label)
    log.debug("compare_beliefs totals=%s winner=%s", totals, winner)
    return BeliefComparison(totals, winner, records)
