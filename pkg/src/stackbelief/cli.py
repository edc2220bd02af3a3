"""Command-line front end: worked examples, single games and Monte Carlo runs."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml

from stackbelief import harness, worked
from stackbelief.fse import respond_to_solution, solve_fse
from stackbelief.lq_game import CostModelError
from stackbelief.protocol import announce, pick_winner, run_adaptive, run_fixed, run_with_update
from stackbelief.scenario import (
    INTENTION_LABELS,
    ScenarioConfigError,
    ScenarioParams,
    build_intentions,
    build_joint_dynamics,
    build_leader_cost,
    load_params,
    make_game,
    params_from_mapping,
    sample_initial,
)
from stackbelief.strategy import InfoStructure

log = logging.getLogger("stackbelief")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2
EXCLUDED_LIMIT = 0.01


class CliError(Exception):
    """Bad input detected after argument parsing."""


# ----------------------------------------------------------------------------- config


def _read_yaml(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise CliError(f"{path}: invalid YAML{where}") from exc
    if not isinstance(data, dict):
        raise CliError(f"{path}: top level must be a mapping")
    return data


def load_scenario(path: str | None) -> ScenarioParams:
    return ScenarioParams() if path is None else load_params(path)


def example_overrides(path: str | None, section: str) -> dict:
    """Leader weights for a worked example from the config's ``section`` block."""
    if path is None:
        return {}
    block = _read_yaml(path).get(section) or {}
    leader = block.get("leader") or {}
    unknown = set(block) - {"leader"} | set(leader) - {"Q", "R"}
    if unknown:
        raise CliError(f"{path}: unknown field(s) under {section}: {sorted(unknown)}")
    out = {}
    if "Q" in leader:
        out["leader_Q"] = float(leader["Q"])
    if "R" in leader:
        out["leader_R"] = float(leader["R"])
    return out


def out_dir(args) -> Path | None:
    value = args.out or os.environ.get("STACKBELIEF_OUT")
    return Path(value) if value else None


def parse_int_list(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def parse_schemes(text: str) -> tuple[str, ...]:
    try:
        return tuple(harness.parse_scheme(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def experiment_config(args) -> harness.ExperimentConfig:
    params = load_scenario(args.config)
    changes = {}
    if args.horizon is not None:
        changes["T"] = args.horizon
        if args.tau_sweep is None:
            changes["tau_values"] = tuple(t for t in params.tau_values if t <= args.horizon) or (args.horizon,)
    if args.tau_sweep is not None:
        changes["tau_values"] = args.tau_sweep
    if args.runs is not None:
        changes["n_runs"] = args.runs
    try:
        if changes:
            params = params_from_mapping({**_params_mapping(params), **changes})
        return harness.ExperimentConfig(
            scenario=params,
            info_structure=args.info_structure,
            schemes=args.schemes,
            true_intention=args.true_intention,
            tau=args.tau if args.tau is not None else 1,
            master_seed=args.seed if args.seed is not None else 0,
            jobs=args.jobs or os.cpu_count() or 1,
        )
    except (ScenarioConfigError, ValueError) as exc:
        raise CliError(str(exc)) from exc


def _params_mapping(params: ScenarioParams) -> dict:
    return {f.name: getattr(params, f.name) for f in fields(params)}


# ----------------------------------------------------------------------------- golden reports


@dataclass(frozen=True)
class Check:
    name: str
    got: float
    want: float
    tol: float

    @property
    def ok(self) -> bool:
        return bool(np.isfinite(self.got)) and abs(self.got - self.want) <= self.tol


def _vector_checks(name: str, got, want, tol: float) -> list[Check]:
    got = np.ravel(np.asarray(got, dtype=np.float64))
    if got.shape[0] != len(want):
        return [Check(f"{name} (length)", float(got.shape[0]), float(len(want)), 0.0)]
    return [Check(f"{name}[{i}]", float(g), float(w), tol) for i, (g, w) in enumerate(zip(got, want))]


def _fmt(values) -> str:
    return "[" + ", ".join(f"{v:.4g}" for v in np.ravel(values)) + "]"


def _print_checks(checks: list[Check], extra_ok: list[tuple[str, bool]]) -> bool:
    failed = [c for c in checks if not c.ok]
    failed_extra = [name for name, ok in extra_ok if not ok]
    if failed or failed_extra:
        print("\nGOLDEN CHECK FAILED")
        print(f"  {'value':<24}{'computed':>14}{'expected':>14}{'diff':>12}{'tol':>8}")
        for c in failed:
            print(f"  {c.name:<24}{c.got:>14.4f}{c.want:>14.4f}{c.got - c.want:>12.4f}{c.tol:>8g}")
        for name in failed_extra:
            print(f"  {name}: violated")
        return False
    print(f"\nPASS ({len(checks) + len(extra_ok)} golden checks)")
    return True


def _write_report(args, name: str, payload: dict) -> None:
    target = out_dir(args)
    if target is None:
        return
    target.mkdir(parents=True, exist_ok=True)
    (target / f"{name}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_example1(args) -> int:
    if args.seed is not None:
        log.warning("--seed is ignored: the worked example is deterministic")
    ex = worked.example1(tau=args.tau if args.tau is not None else 3, **example_overrides(args.config, "example1"))
    info = InfoStructure.parse(args.info_structure or InfoStructure.OPEN_LOOP)
    game, T, tau = ex.game, ex.game.T, ex.tau
    if not 0 < tau <= T:
        raise CliError(f"--tau must lie in (0, {T}]")
    non_golden = []
    if tau == T:
        non_golden.append(f"tau = T = {T}: no update happens, the composite degenerates to one solve")
    elif tau != 3:
        non_golden.append(f"tau = {tau} differs from the published update time 3")
    if info is not InfoStructure.OPEN_LOOP:
        non_golden.append("feedback information structure; published values are open-loop")

    print(f"Example 1: x+ = 1.7x + 1.4uL + 0.5uF, T={T}, x0={ex.x0}, tau={tau}, {info.value}")
    checks: list[Check] = []
    report = {"tau": tau, "info_structure": info.value, "beliefs": {}}
    records = {}
    for belief in (ex.true_belief, ex.alt_belief):
        rec = run_with_update(game, belief, belief, tau, info, [ex.x0])
        records[belief.label] = rec
        lbl = belief.label
        traj = rec.trajectory
        print(f"\nbelief {lbl}  (Q^F={belief.Q[0, 0]:g}, R^F={belief.R[0, 0]:g})")
        entry = {"total": rec.total, "pre": rec.breakdown.pre_update, "post": rec.breakdown.post_update}
        if info is InfoStructure.OPEN_LOOP:
            first = announce(game, belief, info, 0, np.array([ex.x0]))
            u_L, u_F = first.u_L, first.follower_plan(game.follower_true_cost)
            print(f"  u_L planned     {_fmt(u_L)}")
            print(f"  u_F response    {_fmt(u_F)}")
            entry.update(u_L=u_L.ravel().tolist(), u_F=u_F.ravel().tolist())
            if tau < T:
                print(f"  x_tau           {traj.states[tau, 0]:.4f}")
                print(f"  u_L re-solved   {_fmt(traj.u_L[tau:])}")
                print(f"  u_F re-solved   {_fmt(traj.u_F[tau:])}")
                entry.update(x_tau=float(traj.states[tau, 0]), u_L_resolved=traj.u_L[tau:].ravel().tolist(),
                             u_F_resolved=traj.u_F[tau:].ravel().tolist())
            if not non_golden:
                gold = worked.EXAMPLE1_GOLDEN[lbl]
                checks += _vector_checks(f"u_L {lbl}", u_L, gold["u_L"], worked.TOL_CONTROL)
                checks += _vector_checks(f"u_F {lbl}", u_F, gold["u_F"], worked.TOL_CONTROL)
                checks.append(Check(f"x_tau {lbl}", float(traj.states[tau, 0]), gold["x_tau"], worked.TOL_CONTROL))
                checks += _vector_checks(f"u_L re-solved {lbl}", traj.u_L[tau:], gold["u_L_resolved"], worked.TOL_CONTROL)
                checks += _vector_checks(f"u_F re-solved {lbl}", traj.u_F[tau:], gold["u_F_resolved"], worked.TOL_CONTROL)
                checks.append(Check(f"J pre {lbl}", rec.breakdown.pre_update, gold["pre"], worked.TOL_SEGMENT_COST))
                checks.append(Check(f"J post {lbl}", rec.breakdown.post_update, gold["post"], worked.TOL_SEGMENT_COST))
                checks.append(Check(f"J total {lbl}", rec.total, gold["total"], worked.TOL_TOTAL))
        else:
            print(f"  u_L executed    {_fmt(traj.u_L)}")
            print(f"  u_F executed    {_fmt(traj.u_F)}")
        print(f"  J^L pre  [0,{tau})  {rec.breakdown.pre_update:.3f}")
        print(f"  J^L post [{tau},{T}]  {rec.breakdown.post_update:.3f}")
        print(f"  J^L total        {rec.total:.3f}")
        report["beliefs"][lbl] = entry
    totals = {k: r.total for k, r in records.items()}
    winner = pick_winner(totals, ex.true_belief.label)
    print(f"\nlower total: {winner}")
    report["winner"] = winner
    _write_report(args, "example1", report)
    if non_golden:
        for reason in non_golden:
            print(f"NON-GOLDEN: {reason}")
        return EXIT_OK
    strict = totals[ex.alt_belief.label] < totals[ex.true_belief.label]
    return EXIT_OK if _print_checks(checks, [("b' strictly lower total", strict)]) else EXIT_FAIL


def cmd_example2(args) -> int:
    if args.seed is not None:
        log.warning("--seed is ignored: the worked example is deterministic")
    ex = worked.example2(tau=args.tau if args.tau is not None else 3, **example_overrides(args.config, "example2"))
    info = InfoStructure.parse(args.info_structure or InfoStructure.FEEDBACK)
    game, T, tau = ex.game, ex.game.T, ex.tau
    if not 0 < tau <= T:
        raise CliError(f"--tau must lie in (0, {T}]")
    non_golden = []
    if info is not InfoStructure.FEEDBACK:
        non_golden.append("open-loop information structure; published values are feedback")

    print(f"Example 2: x+ = 1.4x + 1.7uL + 1.7uF, T={T}, x0={ex.x0}, tau={tau}, {info.value}")
    checks: list[Check] = []
    report = {"tau": tau, "info_structure": info.value, "beliefs": {}}
    totals = {}
    for belief in (ex.true_belief, ex.alt_belief):
        lbl = belief.label
        rec = run_with_update(game, belief, belief, tau, info, [ex.x0])
        totals[lbl] = rec.total
        entry = {"total": rec.total}
        print(f"\nbelief {lbl}  (Q^F={belief.Q[0, 0]:g}, R^F={belief.R[0, 0]:g})")
        if info is InfoStructure.FEEDBACK:
            sol = solve_fse(game.dyn, game.leader_cost, belief, T + 1)
            K_F = respond_to_solution(game.dyn, sol, game.follower_true_cost).K_F
            print(f"  K_L             {_fmt(sol.K_L)}")
            print(f"  K_F (true BR)   {_fmt(K_F)}")
            entry.update(K_L=sol.K_L.ravel().tolist(), K_F=K_F.ravel().tolist())
            if not non_golden:
                gold = worked.EXAMPLE2_GOLDEN[lbl]
                checks += _vector_checks(f"K_L {lbl}", sol.K_L, gold["K_L"], worked.TOL_CONTROL)
                checks += _vector_checks(f"K_F {lbl}", K_F, gold["K_F"], worked.TOL_CONTROL)
                checks.append(Check(f"J total {lbl}", rec.total, gold["total"], worked.TOL_TOTAL))
        else:
            print(f"  u_L executed    {_fmt(rec.trajectory.u_L)}")
        print(f"  J^L total        {rec.total:.3f}")
        report["beliefs"][lbl] = entry
    winner = pick_winner(totals, ex.true_belief.label)
    print(f"\nlower total: {winner}")
    report["winner"] = winner
    _write_report(args, "example2", report)
    if non_golden:
        for reason in non_golden:
            print(f"NON-GOLDEN: {reason}")
        return EXIT_OK
    strict = totals[ex.alt_belief.label] < totals[ex.true_belief.label]
    return EXIT_OK if _print_checks(checks, [("b' strictly lower total", strict)]) else EXIT_FAIL


# ----------------------------------------------------------------------------- scenario commands


def cmd_solve(args) -> int:
    """One sampled scenario game, every scheme, printed side by side."""
    cfg = experiment_config(args)
    params = cfg.scenario
    rng = np.random.default_rng([cfg.master_seed, 0])
    x0, sigma_L, sigma_F = sample_initial(rng, params.x0_bound)
    dyn = build_joint_dynamics(sigma_L, sigma_F)
    leader, intentions = build_leader_cost(params), build_intentions(params)
    truth = "T" if cfg.true_intention == "sweep" else cfg.true_intention
    game = make_game(dyn, leader, intentions, truth, params.T)
    print(f"seed={cfg.master_seed} sigma_L={sigma_L:.4f} sigma_F={sigma_F:.4f} true={truth} "
          f"T={params.T} tau={cfg.tau} {cfg.info_structure.value}")
    print(f"x0 = {_fmt(x0)}")
    records = []
    for scheme in cfg.schemes:
        meta = {"run_id": 0, "true_intention": truth, "scheme": scheme, "tau": cfg.tau}
        if scheme == harness.ADAPTIVE_SCHEME:
            rec = run_adaptive(game, intentions.models, cfg.tau, cfg.info_structure, x0, cfg.master_seed, meta)
        else:
            rec = run_fixed(game, intentions.get(scheme.split("-", 1)[1]), cfg.tau, cfg.info_structure, x0,
                            cfg.master_seed, meta)
        records.append(rec)
        beliefs = "".join(lbl for _, lbl in rec.schedule.labels())
        print(f"  {scheme:<10} J^L = {rec.total:14.4f}   beliefs by update: {beliefs}")
    winner = pick_winner({r.meta["scheme"]: r.total for r in records}, harness.true_scheme(truth))
    print(f"winner: {winner}")
    target = out_dir(args)
    if target is not None:
        target.mkdir(parents=True, exist_ok=True)
        (target / "solve.jsonl").write_text(harness.runs_jsonl(records))
    return EXIT_OK


def _summary_table(table: harness.StatsTable, unit: str) -> str:
    lines = [f"{'true':<6}" + "".join(f"{c:>12}" for c in table.cols) + f"{'n':>8}"]
    for i, r in enumerate(table.rows):
        cells = "".join(f"{harness._fmt_pct(v) + unit:>12}" for v in table.values[i])
        lines.append(f"{r:<6}{cells}{int(table.counts[i, 0]):>8}")
    return "\n".join(lines)


def _excluded_ok(result: harness.ExperimentResult, n_groups_expected: int) -> bool:
    frac = len(result.excluded) / max(n_groups_expected, 1)
    print(f"excluded runs: {len(result.excluded)} of {n_groups_expected} ({100 * frac:.2f}%)")
    if frac > EXCLUDED_LIMIT:
        print(f"FAIL: more than {100 * EXCLUDED_LIMIT:g}% of runs excluded")
        return False
    return True


def _default_out(args) -> Path:
    return out_dir(args) or Path("stackbelief_out")


def cmd_simulate(args) -> int:
    if args.tau_sweep is not None:
        return cmd_sweep(args)
    cfg = experiment_config(args)
    target = _default_out(args)
    started = time.perf_counter()
    result = harness.run_experiment(cfg)
    elapsed = time.perf_counter() - started
    groups = cfg.n_runs * len(cfg.intentions)
    print(f"{cfg.n_runs} runs x {len(cfg.intentions)} intentions x {len(cfg.schemes)} schemes, "
          f"{cfg.info_structure.value}, tau={cfg.tau}, seed={cfg.master_seed}, {elapsed:.1f} s")
    if not result.records:
        print("no runs completed")
        return EXIT_FAIL
    wins = harness.win_matrix(result.records)
    higher = harness.pct_higher_cost(result.records)
    harness.write_experiment_outputs(target, result, wins, higher, posterior=args.posterior)
    if args.emit_svg:
        harness.write_svg(target / "win_matrix.svg", wins, f"wins, {cfg.info_structure.value}, tau={cfg.tau}")
        harness.write_svg(target / "pct_higher.svg", higher, "percent above per-run minimum")
    print("\nwin matrix (% of runs)")
    print(_summary_table(wins, "%"))
    print("\nmean percent above per-run minimum")
    print(_summary_table(higher, "%"))
    print(f"\noutputs in {target}")
    return EXIT_OK if _excluded_ok(result, groups) else EXIT_FAIL


def cmd_sweep(args) -> int:
    cfg = experiment_config(args)
    target = _default_out(args)
    started = time.perf_counter()
    sweep = harness.tau_sweep(cfg)
    elapsed = time.perf_counter() - started
    print(f"tau sweep {list(cfg.tau_values)}: {cfg.n_runs} runs, {cfg.info_structure.value}, "
          f"seed={cfg.master_seed}, {elapsed:.1f} s")
    harness.write_sweep_outputs(target, sweep)
    if args.emit_svg:
        harness.write_sweep_svg(target / "tau_sweep.svg", sweep.tables)
    for tau, table in sweep.tables.items():
        print(f"\ntau = {tau}")
        print(_summary_table(table, "%"))
    print(f"\noutputs in {target}")
    groups = cfg.n_runs * len(cfg.intentions) * len(cfg.tau_values)
    return EXIT_OK if _excluded_ok(sweep.result, groups) else EXIT_FAIL


# ----------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--out", help="output directory (default: $STACKBELIEF_OUT)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--tau", type=int, help="update time / re-solve period")
    common.add_argument("--info-structure", choices=[i.value for i in InfoStructure])
    common.add_argument("-v", "--verbose", action="store_true")

    mc = argparse.ArgumentParser(add_help=False)
    mc.add_argument("--runs", type=int, help="Monte Carlo runs")
    mc.add_argument("--horizon", type=int, help="horizon T")
    mc.add_argument("--tau-sweep", type=parse_int_list, metavar="T1,T2,...")
    mc.add_argument("--schemes", type=parse_schemes, default=harness.DEFAULT_SCHEMES,
                    metavar="S1,S2,...", help="fixed-T, fixed-I, fixed-A, adaptive")
    mc.add_argument("--true-intention", choices=[*INTENTION_LABELS, "sweep"], default="sweep")
    mc.add_argument("--jobs", type=int, help="worker processes (default: all cores)")
    mc.add_argument("--emit-svg", action="store_true")
    mc.add_argument("--posterior", action="store_true", help="also write posterior_trace.csv")

    parser = argparse.ArgumentParser(
        prog="stackbelief",
        description="LQ Stackelberg games with a mid-game update of the leader's belief about the follower.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("example1", parents=[common], help="open-loop worked example with golden check")
    sub.add_parser("example2", parents=[common], help="feedback worked example with golden check")
    sub.add_parser("solve", parents=[common, mc], help="one sampled collision-avoidance game")
    sub.add_parser("simulate", parents=[common, mc], help="Monte Carlo win matrix and cost table")
    sub.add_parser("sweep", parents=[common, mc], help="Monte Carlo over update periods")
    return parser


COMMANDS = {
    "example1": cmd_example1,
    "example2": cmd_example2,
    "solve": cmd_solve,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command in ("simulate", "sweep", "solve"):
        if args.info_structure is None:
            args.info_structure = InfoStructure.OPEN_LOOP.value
        if args.jobs is not None and args.jobs < 1:
            parser.error("--jobs must be >= 1")
        if args.runs is not None and args.runs < 1:
            parser.error("--runs must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CostModelError, ScenarioConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
