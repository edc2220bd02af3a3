"""Monte Carlo experiments over the collision-avoidance scenario.

Every run id draws one (x0, sigma_L, sigma_F) from its own generator seeded
by (master_seed, run_id). All true intentions, schemes and update periods
replay that same draw, so per-run comparisons are paired.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from collections import defaultdict
from collections.abc import Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from stackbelief.protocol import RunRecord, pick_winner, run_adaptive, run_fixed
from stackbelief.scenario import (
    INTENTION_LABELS,
    ScenarioParams,
    build_intentions,
    build_joint_dynamics,
    build_leader_cost,
    make_game,
    sample_initial,
)
from stackbelief.strategy import InfoStructure

log = logging.getLogger(__name__)

ADAPTIVE_SCHEME = "adaptive"
DEFAULT_SCHEMES = ("fixed-T", "fixed-I", "fixed-A", ADAPTIVE_SCHEME)


def parse_scheme(name: str) -> str:
    """Accept 'fixed-T', 'T', 'Ad', 'adaptive' (case-insensitive for the short forms)."""
    key = name.strip()
    if key.lower() in ("ad", "adaptive"):
        return ADAPTIVE_SCHEME
    if key.upper() in INTENTION_LABELS:
        return f"fixed-{key.upper()}"
    if key.startswith("fixed-") and key[6:].upper() in INTENTION_LABELS:
        return f"fixed-{key[6:].upper()}"
    raise ValueError(f"unknown scheme {name!r}; expected one of {DEFAULT_SCHEMES}")


def true_scheme(intention: str) -> str:
    return f"fixed-{intention}"


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    info_structure: InfoStructure = InfoStructure.OPEN_LOOP
    schemes: tuple[str, ...] = DEFAULT_SCHEMES
    true_intention: str = "sweep"
    tau: int = 1
    tau_values: tuple[int, ...] | None = None
    n_runs: int | None = None
    master_seed: int = 0
    jobs: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "info_structure", InfoStructure.parse(self.info_structure))
        schemes = tuple(parse_scheme(s) for s in self.schemes)
        if not schemes:
            raise ValueError("schemes must be nonempty")
        if len(set(schemes)) != len(schemes):
            raise ValueError(f"duplicate schemes in {schemes}")
        object.__setattr__(self, "schemes", schemes)
        if self.true_intention != "sweep" and self.true_intention not in INTENTION_LABELS:
            raise ValueError(f"true_intention must be one of {INTENTION_LABELS} or 'sweep'")
        if self.tau_values is None:
            object.__setattr__(self, "tau_values", self.scenario.tau_values)
        object.__setattr__(self, "tau_values", tuple(int(t) for t in self.tau_values))
        if self.n_runs is None:
            object.__setattr__(self, "n_runs", self.scenario.n_runs)
        T = self.scenario.T
        for t in (self.tau, *self.tau_values):
            if not 0 < t <= T:
                raise ValueError(f"tau={t} outside (0, T={T}]")
        if self.n_runs < 1 or self.jobs < 1:
            raise ValueError("n_runs and jobs must be >= 1")

    @property
    def intentions(self) -> tuple[str, ...]:
        return INTENTION_LABELS if self.true_intention == "sweep" else (self.true_intention,)


@dataclass(frozen=True)
class Exclusion:
    run_id: int
    true_intention: str
    tau: int
    reason: str


@dataclass
class ExperimentResult:
    records: list[RunRecord]
    excluded: list[Exclusion]

    def __iter__(self):
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_groups(self) -> int:
        return len({_group_key(r) for r in self.records})


def _sample_rng(master_seed: int, run_id: int) -> np.random.Generator:
    return np.random.default_rng([int(master_seed), int(run_id)])


def _simulate_sample(config: ExperimentConfig, run_id: int, taus: Sequence[int]):
    params = config.scenario
    rng = _sample_rng(config.master_seed, run_id)
    x0, sigma_L, sigma_F = sample_initial(rng, params.x0_bound)
    dyn = build_joint_dynamics(sigma_L, sigma_F)
    leader = build_leader_cost(params)
    intentions = build_intentions(params)
    records: list[RunRecord] = []
    excluded: list[Exclusion] = []
    for tau in taus:
        for label in config.intentions:
            game = make_game(dyn, leader, intentions, label, params.T)
            group = []
            try:
                for scheme in config.schemes:
                    meta = {
                        "run_id": run_id,
                        "true_intention": label,
                        "scheme": scheme,
                        "tau": tau,
                        "sigma_L": sigma_L,
                        "sigma_F": sigma_F,
                    }
                    if scheme == ADAPTIVE_SCHEME:
                        rec = run_adaptive(
                            game, intentions.models, tau, config.info_structure, x0,
                            seed=config.master_seed, meta=meta,
                        )
                    else:
                        belief = intentions.get(scheme.split("-", 1)[1])
                        rec = run_fixed(
                            game, belief, tau, config.info_structure, x0,
                            seed=config.master_seed, meta=meta,
                        )
                    if not np.isfinite(rec.total):
                        raise FloatingPointError(f"non-finite cost for {scheme}")
                    group.append(rec)
            except Exception as exc:  # a failed scheme invalidates the whole paired group
                log.warning("run %d (%s, tau=%d) excluded: %r", run_id, label, tau, exc)
                excluded.append(Exclusion(run_id, label, tau, repr(exc)))
                continue
            records.extend(group)
    return records, excluded


def _worker(args):
    config, run_ids, taus = args
    out_records, out_excluded = [], []
    for run_id in run_ids:
        recs, exc = _simulate_sample(config, run_id, taus)
        out_records.extend(recs)
        out_excluded.extend(exc)
    return out_records, out_excluded


def simulate(config: ExperimentConfig, taus: Sequence[int]) -> ExperimentResult:
    """All runs for each update period in ``taus``, in deterministic order."""
    run_ids = list(range(config.n_runs))
    jobs = min(config.jobs, len(run_ids))
    if jobs == 1:
        records, excluded = _worker((config, run_ids, taus))
        return ExperimentResult(records, excluded)
    chunk = max(1, len(run_ids) // (jobs * 4))
    batches = [(config, run_ids[i:i + chunk], taus) for i in range(0, len(run_ids), chunk)]
    records, excluded = [], []
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        for recs, exc in pool.map(_worker, batches):
            records.extend(recs)
            excluded.extend(exc)
    return ExperimentResult(records, excluded)


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """``n_runs`` paired samples at update period ``config.tau``."""
    return simulate(config, [config.tau])


@dataclass(frozen=True)
class StatsTable:
    """Rows are true intentions, columns are schemes."""

    metric: str
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    values: np.ndarray
    counts: np.ndarray
    excluded: int = 0

    def cell(self, row: str, col: str) -> float:
        return float(self.values[self.rows.index(row), self.cols.index(col)])

    def row(self, row: str) -> dict[str, float]:
        i = self.rows.index(row)
        return {c: float(self.values[i, j]) for j, c in enumerate(self.cols)}

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "rows": list(self.rows),
            "cols": list(self.cols),
            "values": self.values.tolist(),
            "counts": self.counts.tolist(),
            "excluded": self.excluded,
        }


def _group_key(rec: RunRecord) -> tuple:
    m = rec.meta
    return (m["tau"], m["true_intention"], m["run_id"])


def _grouped(records: Iterable[RunRecord]):
    groups: dict[tuple, dict[str, float]] = defaultdict(dict)
    rows: list[str] = []
    cols: list[str] = []
    taus = set()
    for rec in records:
        m = rec.meta
        groups[_group_key(rec)][m["scheme"]] = rec.total
        taus.add(m["tau"])
        if m["true_intention"] not in rows:
            rows.append(m["true_intention"])
        if m["scheme"] not in cols:
            cols.append(m["scheme"])
    if len(taus) > 1:
        raise ValueError(f"records mix update periods {sorted(taus)}; tabulate one tau at a time")
    order = {lbl: i for i, lbl in enumerate(INTENTION_LABELS)}
    rows.sort(key=lambda r: order.get(r, len(order)))
    return groups, tuple(rows), tuple(cols)


def win_matrix(records: Iterable[RunRecord]) -> StatsTable:
    """Percent of runs in which each scheme has the strictly lowest total leader cost."""
    groups, rows, cols = _grouped(records)
    if not groups:
        raise ValueError("no records to tabulate")
    wins = np.zeros((len(rows), len(cols)))
    n = np.zeros(len(rows), dtype=int)
    for (_, label, _), costs in groups.items():
        if len(costs) != len(cols):
            raise ValueError(f"incomplete group for intention {label}: {sorted(costs)}")
        i = rows.index(label)
        winner = pick_winner(costs, true_scheme(label))
        wins[i, cols.index(winner)] += 1
        n[i] += 1
    pct = 100.0 * wins / n[:, None]
    counts = np.repeat(n[:, None], len(cols), axis=1)
    return StatsTable("win_pct", rows, cols, pct, counts)


def pct_higher_cost(records: Iterable[RunRecord]) -> StatsTable:
    """Mean of (J(scheme) - min J) / min J * 100 over runs; zero-minimum runs are excluded."""
    groups, rows, cols = _grouped(records)
    if not groups:
        raise ValueError("no records to tabulate")
    sums = np.zeros((len(rows), len(cols)))
    n = np.zeros(len(rows), dtype=int)
    excluded = 0
    for (_, label, _), costs in groups.items():
        best = min(costs.values())
        if not best > 0.0:
            excluded += 1
            continue
        i = rows.index(label)
        for j, c in enumerate(cols):
            sums[i, j] += (costs[c] - best) / best * 100.0
        n[i] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(n[:, None] > 0, sums / np.maximum(n, 1)[:, None], np.nan)
    counts = np.repeat(n[:, None], len(cols), axis=1)
    return StatsTable("pct_higher", rows, cols, mean, counts, excluded)


def split_by_tau(records: Iterable[RunRecord]) -> dict[int, list[RunRecord]]:
    out: dict[int, list[RunRecord]] = defaultdict(list)
    for rec in records:
        out[rec.meta["tau"]].append(rec)
    return dict(sorted(out.items()))


@dataclass
class SweepResult:
    tables: dict[int, StatsTable]
    result: ExperimentResult


def tau_sweep(config: ExperimentConfig) -> SweepResult:
    """Win matrices for every tau in ``config.tau_values`` on one shared sample set."""
    result = simulate(config, config.tau_values)
    tables = {tau: win_matrix(recs) for tau, recs in split_by_tau(result.records).items()}
    return SweepResult(tables, result)


def non_true_wins(table: StatsTable, intention: str) -> float:
    """Number of runs in the row where a scheme other than the true fixed belief won."""
    i = table.rows.index(intention)
    j = table.cols.index(true_scheme(intention)) if true_scheme(intention) in table.cols else None
    n = table.counts[i, 0]
    true_pct = table.values[i, j] if j is not None else 0.0
    return float(round((100.0 - true_pct) * n / 100.0))


# ----------------------------------------------------------------------------- output


def _fmt_pct(v: float) -> str:
    return "nan" if not np.isfinite(v) else f"{v:.1f}"


def table_csv(table: StatsTable, value_header: str, tau: int | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["true_intention", "scheme", value_header, "n"]
    w.writerow((["tau"] if tau is not None else []) + head)
    for i, r in enumerate(table.rows):
        for j, c in enumerate(table.cols):
            row = [r, c, _fmt_pct(table.values[i, j]), int(table.counts[i, j])]
            w.writerow(([tau] if tau is not None else []) + row)
    return buf.getvalue()


def sweep_csv(tables: dict[int, StatsTable]) -> str:
    parts = []
    for k, (tau, table) in enumerate(sorted(tables.items())):
        text = table_csv(table, "percent", tau)
        parts.append(text if k == 0 else text.split("\n", 1)[1])
    return "".join(parts)


def posterior_csv(records: Iterable[RunRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header_done = False
    for rec in records:
        if rec.posterior is None:
            continue
        labels = [h for h in INTENTION_LABELS][: rec.posterior.shape[1]]
        if not header_done:
            w.writerow(["run_id", "true_intention", "tau", "t"] + [f"P({h})" for h in labels])
            header_done = True
        m = rec.meta
        for t, p in enumerate(rec.posterior):
            w.writerow([m["run_id"], m["true_intention"], m["tau"], t] + [repr(float(v)) for v in p])
    return buf.getvalue()


def runs_jsonl(records: Iterable[RunRecord], include_arrays: bool = True) -> str:
    return "".join(
        json.dumps(rec.summary(include_arrays), sort_keys=True) + "\n" for rec in records
    )


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def write_experiment_outputs(
    out_dir: str | os.PathLike,
    result: ExperimentResult,
    wins: StatsTable,
    higher: StatsTable,
    posterior: bool = False,
    run_log: bool = True,
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        _write(out / "win_matrix.csv", table_csv(wins, "percent")),
        _write(out / "pct_higher.csv", table_csv(higher, "pct_higher")),
        _write(
            out / "stats.json",
            json.dumps(
                {
                    "win_matrix": wins.to_dict(),
                    "pct_higher": higher.to_dict(),
                    "excluded": [e.__dict__ for e in result.excluded],
                },
                indent=2,
                sort_keys=True,
                allow_nan=True,
            ) + "\n",
        ),
    ]
    if run_log:
        written.append(_write(out / "runs.jsonl", runs_jsonl(result.records)))
    if posterior:
        written.append(_write(out / "posterior_trace.csv", posterior_csv(result.records)))
    return written


def write_sweep_outputs(out_dir: str | os.PathLike, sweep: SweepResult) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {str(tau): t.to_dict() for tau, t in sweep.tables.items()}
    payload["excluded"] = [e.__dict__ for e in sweep.result.excluded]
    return [
        _write(out / "tau_sweep.csv", sweep_csv(sweep.tables)),
        _write(out / "tau_sweep.json", json.dumps(payload, indent=2, sort_keys=True) + "\n"),
    ]


def write_svg(path: str | os.PathLike, table: StatsTable, title: str) -> Path:
    """Grouped bar chart of one table; byte-stable for identical input."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "stackbelief", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        width = 0.8 / len(table.cols)
        x = np.arange(len(table.rows))
        for j, col in enumerate(table.cols):
            ax.bar(x + j * width, np.nan_to_num(table.values[:, j]), width, label=col)
        ax.set_xticks(x + 0.4 - width / 2, [f"true {r}" for r in table.rows])
        ax.set_ylabel(table.metric)
        ax.set_title(title)
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return Path(path)


def write_sweep_svg(path: str | os.PathLike, tables: dict[int, StatsTable]) -> Path:
    """Win percentage against tau, one line per (true intention, scheme)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    taus = sorted(tables)
    first = tables[taus[0]]
    with matplotlib.rc_context({"svg.hashsalt": "stackbelief", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, len(first.rows), figsize=(4 * len(first.rows), 3.2), squeeze=False)
        for ax, row in zip(axes[0], first.rows):
            for col in first.cols:
                ax.plot(taus, [tables[t].cell(row, col) for t in taus], marker="o", label=col)
            ax.set_xscale("log")
            ax.set_xticks(taus, [str(t) for t in taus])
            ax.set_title(f"true {row}")
            ax.set_xlabel("tau")
            ax.set_ylabel("win %")
        axes[0][0].legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return Path(path)
