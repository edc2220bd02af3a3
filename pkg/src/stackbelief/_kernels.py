"""Hot numeric loops, compiled with numba when available.

Every kernel is written once in the numba-compatible subset of numpy. The
plain functions form the numpy backend; ``njit`` wrappers of the same source
form the numba backend. ``STACKBELIEF_NUMBA=0`` in the environment forces the
numpy backend (useful for debugging and for the benchmark comparison).

Arrays passed in must be C-contiguous float64.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np


def stack_blocks(A, B, n_states):
    """Return (H, G) for ``n_states`` stacked states driven by control matrix B.

    Row-block r of H is A^r; block (r, c) of G is A^(r-c-1) B for r > c.
    """
    n = A.shape[0]
    m = B.shape[1]
    n_ctrl = n_states - 1
    H = np.zeros((n * n_states, n))
    G = np.zeros((n * n_states, m * n_ctrl))
    power = np.eye(n)
    # AB[k] = A^k B
    AB = np.zeros((max(n_ctrl, 1), n, m))
    for r in range(n_states):
        H[r * n:(r + 1) * n, :] = power
        if r < n_ctrl:
            AB[r] = power @ B
        power = power @ A
    for r in range(1, n_states):
        for c in range(r):
            G[r * n:(r + 1) * n, c * m:(c + 1) * m] = AB[r - c - 1]
    return H, G


def rollout_open_loop(A, B_L, B_F, x0, u_L, u_F):
    n_ctrl = u_L.shape[0]
    states = np.zeros((n_ctrl + 1, A.shape[0]))
    states[0] = x0
    for t in range(n_ctrl):
        states[t + 1] = A @ states[t] + B_L @ u_L[t] + B_F @ u_F[t]
    return states


def rollout_feedback(A, B_L, B_F, x0, K_L, K_F):
    n_ctrl = K_L.shape[0]
    n = A.shape[0]
    states = np.zeros((n_ctrl + 1, n))
    u_L = np.zeros((n_ctrl, B_L.shape[1]))
    u_F = np.zeros((n_ctrl, B_F.shape[1]))
    states[0] = x0
    for t in range(n_ctrl):
        x = states[t]
        u_L[t] = -(K_L[t] @ x)
        u_F[t] = -(K_F[t] @ x)
        states[t + 1] = A @ x + B_L @ u_L[t] + B_F @ u_F[t]
    return states, u_L, u_F


def fse_backward(A, B_L, B_F, Q_L, R_L, Q_F, R_F, n_ctrl):
    """Backward value recursion for the feedback Stackelberg equilibrium.

    Returns (K_L, K_F, K_F_state, V_L, V_F). ``K_F`` acts on the post-leader
    state A x + B_L u_L; ``K_F_state`` is the equivalent gain on x.
    """
    n = A.shape[0]
    m_L = B_L.shape[1]
    m_F = B_F.shape[1]
    eye = np.eye(n)
    B_Lt = np.ascontiguousarray(B_L.T)
    B_Ft = np.ascontiguousarray(B_F.T)
    K_L = np.zeros((n_ctrl, m_L, n))
    K_F = np.zeros((n_ctrl, m_F, n))
    K_F_state = np.zeros((n_ctrl, m_F, n))
    V_L = np.zeros((n_ctrl + 1, n, n))
    V_F = np.zeros((n_ctrl + 1, n, n))
    V_L[n_ctrl] = Q_L
    V_F[n_ctrl] = Q_F
    for t in range(n_ctrl - 1, -1, -1):
        vl = V_L[t + 1]
        vf = V_F[t + 1]
        # follower minimises u'R u + (z + B u)'V(z + B u) for post-leader state z
        kf = np.linalg.solve(R_F + B_Ft @ vf @ B_F, B_Ft @ vf)
        M = eye - B_F @ kf
        Mt = np.ascontiguousarray(M.T)
        W = Mt @ vl @ M
        kl = np.linalg.solve(B_Lt @ W @ B_L + R_L, B_Lt @ W @ A)
        closed = A - B_L @ kl
        P = M @ closed
        U = kf @ closed
        Pt = np.ascontiguousarray(P.T)
        vl_new = Q_L + Pt @ vl @ P + np.ascontiguousarray(kl.T) @ R_L @ kl
        vf_new = Q_F + Pt @ vf @ P + np.ascontiguousarray(U.T) @ R_F @ U
        V_L[t] = 0.5 * (vl_new + vl_new.T)
        V_F[t] = 0.5 * (vf_new + vf_new.T)
        K_L[t] = kl
        K_F[t] = kf
        K_F_state[t] = U
    return K_L, K_F, K_F_state, V_L, V_F


def follower_feedback_response(A, B_L, B_F, K_L, Q_F, R_F):
    """Stage-wise follower BR to announced leader gains ``K_L``.

    Returns (K_F, K_F_state, V_F) with the same conventions as ``fse_backward``.
    """
    n_ctrl = K_L.shape[0]
    n = A.shape[0]
    m_F = B_F.shape[1]
    eye = np.eye(n)
    B_Ft = np.ascontiguousarray(B_F.T)
    K_F = np.zeros((n_ctrl, m_F, n))
    K_F_state = np.zeros((n_ctrl, m_F, n))
    V_F = np.zeros((n_ctrl + 1, n, n))
    V_F[n_ctrl] = Q_F
    for t in range(n_ctrl - 1, -1, -1):
        vf = V_F[t + 1]
        kf = np.linalg.solve(R_F + B_Ft @ vf @ B_F, B_Ft @ vf)
        closed = A - B_L @ K_L[t]
        P = (eye - B_F @ kf) @ closed
        U = kf @ closed
        vf_new = Q_F + np.ascontiguousarray(P.T) @ vf @ P + np.ascontiguousarray(U.T) @ R_F @ U
        V_F[t] = 0.5 * (vf_new + vf_new.T)
        K_F[t] = kf
        K_F_state[t] = U
    return K_F, K_F_state, V_F


def quadratic_cost(states, controls, Q, R, include_terminal):
    total = 0.0
    n_ctrl = controls.shape[0]
    for t in range(n_ctrl):
        x = states[t]
        u = controls[t]
        total += x @ (Q @ x) + u @ (R @ u)
    if include_terminal:
        x = states[states.shape[0] - 1]
        total += x @ (Q @ x)
    return total


_NAMES = (
    "stack_blocks",
    "rollout_open_loop",
    "rollout_feedback",
    "fse_backward",
    "follower_feedback_response",
    "quadratic_cost",
)

numpy_backend = SimpleNamespace(name="numpy", **{k: globals()[k] for k in _NAMES})


def _build_numba_backend():
    try:
        import numba
    except ImportError:  # pragma: no cover - numba is a hard dependency in practice
        return None
    jit = numba.njit(cache=True)
    kernels = {k: jit(globals()[k]) for k in _NAMES}
    return SimpleNamespace(name="numba", **kernels)


def _numba_requested() -> bool:
    return os.environ.get("STACKBELIEF_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


numba_backend = _build_numba_backend()
kernels = numba_backend if (numba_backend is not None and _numba_requested()) else numpy_backend
