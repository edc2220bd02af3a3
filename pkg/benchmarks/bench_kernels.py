"""Compare the numba and pure-numpy kernel backends on scenario-sized inputs.

Run with ``python3 benchmarks/bench_kernels.py``. Both backends are imported
directly, so the ``STACKBELIEF_NUMBA`` flag does not matter here.
"""

import argparse
import timeit

import numpy as np

from stackbelief._kernels import numba_backend, numpy_backend
from stackbelief.scenario import ScenarioParams, build_intentions, build_joint_dynamics, build_leader_cost


def scenario_inputs(T: int):
    params = ScenarioParams()
    dyn = build_joint_dynamics(1.0, 1.0)
    leader = build_leader_cost(params)
    follower = build_intentions(params).models[0]
    rng = np.random.default_rng(0)
    x0 = rng.uniform(-20, 20, dyn.n)
    u_L = rng.standard_normal((T, dyn.m_L))
    u_F = rng.standard_normal((T, dyn.m_F))
    return dyn, leader, follower, x0, u_L, u_F


def cases(backend, T: int):
    dyn, leader, follower, x0, u_L, u_F = scenario_inputs(T)
    A, B_L, B_F = dyn.A, dyn.B_L, dyn.B_F
    K_L, _, K_F_state = backend.fse_backward(A, B_L, B_F, leader.Q, leader.R, follower.Q, follower.R, T)[:3]
    return {
        "stack_blocks": lambda: backend.stack_blocks(A, B_L, T + 1),
        "rollout_open_loop": lambda: backend.rollout_open_loop(A, B_L, B_F, x0, u_L, u_F),
        "rollout_feedback": lambda: backend.rollout_feedback(A, B_L, B_F, x0, K_L, K_F_state),
        "fse_backward": lambda: backend.fse_backward(A, B_L, B_F, leader.Q, leader.R, follower.Q, follower.R, T),
    }


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--horizon", type=int, default=20)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=200)
    args = parser.parse_args(argv)

    backends = [numpy_backend] + ([numba_backend] if numba_backend is not None else [])
    timings = {}
    for backend in backends:
        for name, fn in cases(backend, args.horizon).items():
            fn()  # JIT warm-up for numba
            best = min(timeit.repeat(fn, repeat=args.repeat, number=args.number)) / args.number
            timings[(backend.name, name)] = best

    names = list(cases(numpy_backend, args.horizon))
    print(f"{'kernel':<20} {'numpy [us]':>12} {'numba [us]':>12} {'speedup':>8}")
    for name in names:
        a = timings[("numpy", name)] * 1e6
        b = timings.get(("numba", name))
        if b is None:
            print(f"{name:<20} {a:12.1f} {'n/a':>12} {'':>8}")
        else:
            print(f"{name:<20} {a:12.1f} {b * 1e6:12.1f} {a / (b * 1e6):7.1f}x")


if __name__ == "__main__":
    main()
