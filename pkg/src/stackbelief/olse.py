"""Open-loop Stackelberg equilibrium in closed form.

Everything here works on the lifted (stacked) problem. Both the follower BR
and the leader's OLSE control are linear in the window's initial state, so the
maps are cached per (dynamics, cost model(s), window length) and re-used by
every re-solve of the same shape.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from stackbelief.lin_dyn import FloatArray, LtiGameDynamics, build_stacked
from stackbelief.lq_game import QuadCostModel, StackelbergGame, check_cost_dims, lift_block_costs


class SingularBRError(LinAlgError):
    """The follower's lifted normal matrix is not positive definite."""


def _spd_solve(M: FloatArray, rhs: FloatArray, what: str) -> FloatArray:
    if M.shape[0] == 0:
        return np.zeros((0, rhs.shape[1]))
    try:
        factor = cho_factor(M, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise SingularBRError(f"{what} normal matrix is not positive definite") from exc
    return cho_solve(factor, rhs, check_finite=False)


def _frozen(arr: FloatArray) -> FloatArray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class OlBrMap:
    """u^F = G_hat u^L + H_hat x0 over one window (controls flattened time-major)."""

    G_hat: FloatArray
    H_hat: FloatArray
    belief_label: str
    m_F: int

    def respond(self, u_L, x0) -> FloatArray:
        """Follower BR as an (n_ctrl, m_F) array."""
        u_L = np.ravel(np.asarray(u_L, dtype=np.float64))
        x0 = np.ravel(np.asarray(x0, dtype=np.float64))
        u_F = self.G_hat @ u_L + self.H_hat @ x0
        return u_F.reshape(-1, self.m_F)


@lru_cache(maxsize=2048)
def _ol_br_cached(dyn: LtiGameDynamics, cost: QuadCostModel, horizon_len: int) -> OlBrMap:
    S = build_stacked(dyn, horizon_len)
    Q_bar, R_bar = lift_block_costs(cost, horizon_len - 1)
    GtQ = S.G_F.T @ Q_bar
    M = GtQ @ S.G_F + R_bar
    rhs = np.hstack([GtQ @ S.G_L, GtQ @ S.H])
    sol = -_spd_solve(M, rhs, f"follower ({cost.label})")
    k = S.G_L.shape[1]
    return OlBrMap(_frozen(sol[:, :k]), _frozen(sol[:, k:]), cost.label, dyn.m_F)


def build_ol_br(dyn: LtiGameDynamics, follower_cost: QuadCostModel, horizon_len: int) -> OlBrMap:
    """Open-loop BR map of a follower with ``follower_cost`` over ``horizon_len`` states."""
    check_cost_dims(dyn, follower_cost, "F")
    return _ol_br_cached(dyn, follower_cost, int(horizon_len))


@lru_cache(maxsize=2048)
def _olse_gain(
    dyn: LtiGameDynamics, leader: QuadCostModel, belief: QuadCostModel, horizon_len: int
) -> FloatArray:
    # u^L = gain @ x_c for the window starting at x_c
    S = build_stacked(dyn, horizon_len)
    br = _ol_br_cached(dyn, belief, horizon_len)
    Q_bar, R_bar = lift_block_costs(leader, horizon_len - 1)
    W = S.G_F @ br.G_hat + S.G_L
    WtQ = W.T @ Q_bar
    N = WtQ @ W + R_bar
    gain = -_spd_solve(N, WtQ @ (S.H + S.G_F @ br.H_hat), "leader")
    return _frozen(gain)


def solve_olse(
    game: StackelbergGame,
    belief: QuadCostModel,
    x0,
    horizon: tuple[int, int] | None = None,
) -> FloatArray:
    """Leader OLSE controls over the window [c, d] from x_c under ``belief``.

    Returns an array of shape (d - c, m_L).
    """
    c, d = (0, game.T) if horizon is None else horizon
    if not 0 <= c <= d <= game.T:
        raise ValueError(f"window [{c}, {d}] outside [0, {game.T}]")
    check_cost_dims(game.dyn, belief, "F")
    gain = _olse_gain(game.dyn, game.leader_cost, belief, d - c + 1)
    x0 = np.ravel(np.asarray(x0, dtype=np.float64))
    return (gain @ x0).reshape(-1, game.dyn.m_L)


def resolve_truncated_ol(
    game: StackelbergGame, belief: QuadCostModel, x_tau, tau: int, T: int | None = None
) -> FloatArray:
    """Re-solve the remaining game [tau, T] from the realised state under ``belief``."""
    T = game.T if T is None else T
    if not 0 < tau <= T:
        raise ValueError(f"tau={tau} outside (0, {T}]")
    return solve_olse(game, belief, x_tau, (tau, T))


def follower_gradient(
    dyn: LtiGameDynamics, follower_cost: QuadCostModel, x0, u_L, u_F
) -> FloatArray:
    """Gradient of the follower's lifted cost with respect to the flattened u^F."""
    u_L = np.ravel(np.asarray(u_L, dtype=np.float64))
    u_F = np.ravel(np.asarray(u_F, dtype=np.float64))
    horizon_len = u_F.size // dyn.m_F + 1
    S = build_stacked(dyn, horizon_len)
    Q_bar, R_bar = lift_block_costs(follower_cost, horizon_len - 1)
    x = S.trajectory(x0, u_L, u_F)
    return 2.0 * (S.G_F.T @ (Q_bar @ x) + R_bar @ u_F)


def leader_reduced_cost(
    dyn: LtiGameDynamics, leader_cost: QuadCostModel, br: OlBrMap, x0, u_L
) -> float:
    """Leader's lifted cost with the follower replaced by the BR map ``br``."""
    u_L = np.ravel(np.asarray(u_L, dtype=np.float64))
    horizon_len = u_L.size // dyn.m_L + 1
    S = build_stacked(dyn, horizon_len)
    Q_bar, R_bar = lift_block_costs(leader_cost, horizon_len - 1)
    u_F = br.respond(u_L, x0)
    x = S.trajectory(x0, u_L, u_F)
    return float(x @ Q_bar @ x + u_L @ R_bar @ u_L)


def leader_reduced_gradient(
    dyn: LtiGameDynamics, leader_cost: QuadCostModel, br: OlBrMap, x0, u_L
) -> FloatArray:
    """Gradient of ``leader_reduced_cost`` in u^L (zero at the OLSE)."""
    u_L = np.ravel(np.asarray(u_L, dtype=np.float64))
    horizon_len = u_L.size // dyn.m_L + 1
    S = build_stacked(dyn, horizon_len)
    Q_bar, R_bar = lift_block_costs(leader_cost, horizon_len - 1)
    x = S.trajectory(x0, u_L, br.respond(u_L, x0))
    W = S.G_F @ br.G_hat + S.G_L
    return 2.0 * (W.T @ (Q_bar @ x) + R_bar @ u_L)
