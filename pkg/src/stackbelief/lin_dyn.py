"""Joint LTI dynamics, stacked trajectory matrices and rollouts."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import numpy.typing as npt

from stackbelief._kernels import kernels

FloatArray = npt.NDArray[np.float64]

# Upper bound on n * horizon_len for stacked matrices.
MAX_STACKED_ROWS = 20_000


class InfeasibleSizeError(ValueError):
    """Raised when a stacked matrix would exceed ``MAX_STACKED_ROWS`` rows."""


def as_matrix(value, name: str) -> FloatArray:
    """Coerce scalars, vectors or nested lists into a frozen 2-D float64 array."""
    arr = np.array(value, dtype=np.float64, copy=True)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


def _frozen(arr) -> FloatArray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LtiGameDynamics:
    """x_{t+1} = A x_t + B_L u^L_t + B_F u^F_t.

    Instances hash by identity so they can key solver caches.
    """

    A: FloatArray
    B_L: FloatArray
    B_F: FloatArray

    def __post_init__(self) -> None:
        A = as_matrix(self.A, "A")
        B_L = as_matrix(self.B_L, "B_L")
        B_F = as_matrix(self.B_F, "B_F")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        for name, B in (("B_L", B_L), ("B_F", B_F)):
            if B.shape[0] != A.shape[0]:
                raise ValueError(f"{name} has {B.shape[0]} rows, A has {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B_L", B_L)
        object.__setattr__(self, "B_F", B_F)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m_L(self) -> int:
        return self.B_L.shape[1]

    @property
    def m_F(self) -> int:
        return self.B_F.shape[1]

    def step(self, x: FloatArray, u_L: FloatArray, u_F: FloatArray) -> FloatArray:
        return self.A @ x + self.B_L @ u_L + self.B_F @ u_F


@dataclass(frozen=True, eq=False)
class StackedMatrices:
    """x_{c:d} = H x_c + G_L u^L_{c:d-1} + G_F u^F_{c:d-1} for ``horizon_len`` = d-c+1 states."""

    H: FloatArray
    G_L: FloatArray
    G_F: FloatArray
    horizon_len: int

    def trajectory(self, x0, u_L, u_F) -> FloatArray:
        """Stacked state vector (length n * horizon_len) for flattened controls."""
        x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
        return self.H @ x0 + self.G_L @ np.ravel(u_L) + self.G_F @ np.ravel(u_F)


def _as_rows(u, n_rows: int) -> FloatArray:
    arr = np.asarray(u, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[0] == n_rows:
        return arr
    if n_rows == 0:
        return arr.reshape(0, arr.shape[-1] if arr.ndim == 2 else 0)
    return arr.reshape(n_rows, -1)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States x_{c..d} with the controls u_{c..d-1} that produced them.

    ``start_time`` is the absolute game time of ``states[0]``.
    """

    states: FloatArray
    u_L: FloatArray
    u_F: FloatArray
    start_time: int = 0

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=np.float64)
        if states.ndim != 2:
            raise ValueError("states must be (horizon_len, n)")
        n_ctrl = states.shape[0] - 1
        u_L = _as_rows(self.u_L, n_ctrl)
        u_F = _as_rows(self.u_F, n_ctrl)
        object.__setattr__(self, "states", _frozen(states))
        object.__setattr__(self, "u_L", _frozen(u_L))
        object.__setattr__(self, "u_F", _frozen(u_F))

    @property
    def horizon_len(self) -> int:
        return self.states.shape[0]

    @property
    def end_time(self) -> int:
        return self.start_time + self.states.shape[0] - 1

    def state_at(self, t: int) -> FloatArray:
        """State at absolute game time ``t``."""
        return self.states[t - self.start_time]

    def window(self, c: int, d: int) -> "Trajectory":
        """Sub-trajectory over absolute times [c, d]."""
        if not self.start_time <= c <= d <= self.end_time:
            raise ValueError(f"window [{c}, {d}] outside [{self.start_time}, {self.end_time}]")
        i, j = c - self.start_time, d - self.start_time
        return Trajectory(self.states[i:j + 1], self.u_L[i:j], self.u_F[i:j], start_time=c)

    def max_residual(self, dyn: LtiGameDynamics) -> float:
        """Largest absolute violation of the dynamics over the stored steps."""
        if self.horizon_len == 1:
            return 0.0
        pred = self.states[:-1] @ dyn.A.T + self.u_L @ dyn.B_L.T + self.u_F @ dyn.B_F.T
        return float(np.max(np.abs(pred - self.states[1:])))

    @staticmethod
    def concatenate(first: "Trajectory", second: "Trajectory") -> "Trajectory":
        """Join two segments that share the boundary state ``first.states[-1]``."""
        if second.start_time != first.end_time:
            raise ValueError("segments are not contiguous in time")
        if not np.array_equal(first.states[-1], second.states[0]):
            raise ValueError("segments disagree on the boundary state")
        return Trajectory(
            np.vstack([first.states, second.states[1:]]),
            np.vstack([first.u_L, second.u_L]),
            np.vstack([first.u_F, second.u_F]),
            start_time=first.start_time,
        )


@lru_cache(maxsize=512)
def _stacked_cached(dyn: LtiGameDynamics, horizon_len: int) -> StackedMatrices:
    H, G_L = kernels.stack_blocks(dyn.A, dyn.B_L, horizon_len)
    _, G_F = kernels.stack_blocks(dyn.A, dyn.B_F, horizon_len)
    return StackedMatrices(_frozen(H), _frozen(G_L), _frozen(G_F), horizon_len)


def build_stacked(dyn: LtiGameDynamics, horizon_len: int) -> StackedMatrices:
    """Stacked matrices for a window of ``horizon_len`` states (cached per dyn)."""
    if horizon_len < 1:
        raise ValueError("horizon_len must be >= 1")
    if dyn.n * horizon_len > MAX_STACKED_ROWS:
        raise InfeasibleSizeError(
            f"n*horizon_len = {dyn.n * horizon_len} exceeds cap {MAX_STACKED_ROWS}"
        )
    return _stacked_cached(dyn, int(horizon_len))


def _control_array(u, m: int, name: str) -> FloatArray:
    arr = np.asarray(u, dtype=np.float64)
    if arr.ndim <= 1:
        arr = arr.reshape(-1, m) if arr.size else np.zeros((0, m))
    if arr.ndim != 2 or arr.shape[1] != m:
        raise ValueError(f"{name} must have {m} columns, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def rollout_open_loop(dyn: LtiGameDynamics, x0, u_L, u_F, start_time: int = 0) -> Trajectory:
    u_L = _control_array(u_L, dyn.m_L, "u_L")
    u_F = _control_array(u_F, dyn.m_F, "u_F")
    if u_L.shape[0] != u_F.shape[0]:
        raise ValueError(f"control lengths differ: {u_L.shape[0]} vs {u_F.shape[0]}")
    x0 = np.ascontiguousarray(x0, dtype=np.float64).reshape(dyn.n)
    states = kernels.rollout_open_loop(dyn.A, dyn.B_L, dyn.B_F, x0, u_L, u_F)
    return Trajectory(states, u_L, u_F, start_time)


def rollout_feedback(dyn: LtiGameDynamics, x0, K_L, K_F, start_time: int = 0) -> Trajectory:
    """Roll out u^i_t = -K^i_t x_t for both players simultaneously."""
    K_L = np.ascontiguousarray(K_L, dtype=np.float64)
    K_F = np.ascontiguousarray(K_F, dtype=np.float64)
    if K_L.shape[0] != K_F.shape[0]:
        raise ValueError(f"gain sequences differ in length: {K_L.shape[0]} vs {K_F.shape[0]}")
    if K_L.shape[1:] != (dyn.m_L, dyn.n) or K_F.shape[1:] != (dyn.m_F, dyn.n):
        raise ValueError(
            f"gain shapes {K_L.shape[1:]}, {K_F.shape[1:]} do not match "
            f"({dyn.m_L}, {dyn.n}), ({dyn.m_F}, {dyn.n})"
        )
    x0 = np.ascontiguousarray(x0, dtype=np.float64).reshape(dyn.n)
    states, u_L, u_F = kernels.rollout_feedback(dyn.A, dyn.B_L, dyn.B_F, x0, K_L, K_F)
    return Trajectory(states, u_L, u_F, start_time)
