"""Two-agent collision-avoidance LQ game with three follower intentions.

State layout (8): [leader pos, leader vel, follower pos, follower vel,
leader ref (2), follower ref (2)]. Each agent is a position/velocity double
integrator with a scalar control; references decay as r+ = sigma * r.

Only the signs of the cost sub-blocks are fixed by the model; the numbers in
``ScenarioParams`` are defaults that satisfy them. Free diagonal blocks are
padded if an assembled matrix comes out indefinite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from stackbelief.lin_dyn import FloatArray, LtiGameDynamics
from stackbelief.lq_game import PSD_TOL, QuadCostModel, StackelbergGame

log = logging.getLogger(__name__)

A_AGENT = np.array([[1.0, 1.0], [0.0, 1.0]])
B_AGENT = np.array([[0.5], [1.0]])
INTENTION_LABELS = ("T", "I", "A")
N_STATE = 8

I2 = np.eye(2)
Z2 = np.zeros((2, 2))


class ScenarioConfigError(ValueError):
    """Invalid scenario parameters or config file."""


def _block(value, name: str) -> FloatArray:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        return float(arr) * I2
    if arr.shape != (2, 2):
        raise ScenarioConfigError(f"{name}: expected a scalar or 2x2 matrix, got shape {arr.shape}")
    return arr.copy()


def _sym_eigs(M: FloatArray) -> FloatArray:
    return np.linalg.eigvalsh(0.5 * (M + M.T))


@dataclass(frozen=True)
class ScenarioParams:
    """Weights of the collision-avoidance game. Scalars mean multiples of I2."""

    # leader
    QL1: FloatArray = field(default_factory=lambda: 1.2 * I2)
    QL2: FloatArray = field(default_factory=lambda: 0.1 * I2)
    QL3: FloatArray = field(default_factory=lambda: -1.0 * I2)
    QL4: FloatArray = field(default_factory=lambda: 1.0 * I2)
    epsilon: float = 0.1
    R_L: float = 1.0
    # follower, tracking
    QF1_T: FloatArray = field(default_factory=lambda: 1.0 * I2)
    QF2_T: FloatArray = field(default_factory=lambda: 1.1 * I2)
    QF3_T: FloatArray = field(default_factory=lambda: -1.0 * I2)
    # follower, indifferent
    QF2_I: FloatArray = field(default_factory=lambda: 1.1 * I2)
    QF4_I: FloatArray = field(default_factory=lambda: -1.0 * I2)
    QF5_I: FloatArray = field(default_factory=lambda: 1.0 * I2)
    # follower, avoiding
    alpha: float = 0.1
    QF2_A: FloatArray = field(default_factory=lambda: 1.2 * I2)
    QF3_A: FloatArray = field(default_factory=lambda: 0.1 * I2)
    QF4_A: FloatArray = field(default_factory=lambda: -1.0 * I2)
    QF5_A: FloatArray = field(default_factory=lambda: 1.0 * I2)
    R_F: float = 1.0
    # Monte Carlo
    T: int = 20
    n_runs: int = 1000
    x0_bound: float = 20.0
    tau_values: tuple[int, ...] = (1, 2, 5, 10, 20)
    pad_to_psd: bool = True

    def __post_init__(self) -> None:
        for f in fields(self):
            if f.name.startswith("Q"):
                object.__setattr__(self, f.name, _block(getattr(self, f.name), f.name))
        object.__setattr__(self, "tau_values", tuple(int(t) for t in self.tau_values))
        self.validate()

    def validate(self) -> None:
        def definite(name: str, sign: int) -> None:
            eigs = _sym_eigs(getattr(self, name))
            ok = np.all(eigs > 0) if sign > 0 else np.all(eigs < 0)
            if not ok:
                kind = "positive" if sign > 0 else "negative"
                raise ScenarioConfigError(f"{name} must be {kind} definite (eigenvalues {eigs})")

        definite("QL2", +1)
        definite("QL3", -1)
        definite("QF3_T", -1)
        definite("QF4_I", -1)
        definite("QF4_A", -1)
        for name in ("epsilon", "alpha", "R_L", "R_F", "x0_bound"):
            if not getattr(self, name) > 0:
                raise ScenarioConfigError(f"{name} must be > 0")
        for name in ("QL1", "QL4", "QF1_T", "QF2_T", "QF2_I", "QF5_I", "QF2_A", "QF5_A"):
            M = getattr(self, name)
            if not np.allclose(M, M.T, atol=1e-12):
                raise ScenarioConfigError(f"{name} is a diagonal block and must be symmetric")
        if self.T < 1:
            raise ScenarioConfigError("T must be >= 1")
        if self.n_runs < 1:
            raise ScenarioConfigError("n_runs must be >= 1")
        bad = [t for t in self.tau_values if not 0 < t <= self.T]
        if bad:
            raise ScenarioConfigError(f"tau_values {bad} outside (0, T={self.T}]")


def _assemble(blocks: list[list[FloatArray]]) -> FloatArray:
    return np.block(blocks)


def _psd_or_pad(label: str, Q: FloatArray, free: list[int], pad: bool) -> FloatArray:
    """Raise the free diagonal blocks (block indices) until Q is PSD."""
    Q = 0.5 * (Q + Q.T)
    for _ in range(100):
        lam = float(np.linalg.eigvalsh(Q)[0])
        if lam >= -PSD_TOL:
            return Q
        if not pad:
            raise ScenarioConfigError(f"Q for {label} is not PSD (min eigenvalue {lam:.6g})")
        shift = abs(lam) + 1e-6
        log.warning("padding free blocks of %s by %.3g to reach PSD", label, shift)
        for b in free:
            Q[2 * b:2 * b + 2, 2 * b:2 * b + 2] += shift * I2
    raise ScenarioConfigError(f"Q for {label} could not be padded to PSD (min eigenvalue {lam:.6g})")


def build_leader_cost(params: ScenarioParams) -> QuadCostModel:
    p = params
    Q = _assemble([
        [p.QL1, p.QL2, p.QL3, Z2],
        [p.QL2.T, p.epsilon * I2, Z2, Z2],
        [p.QL3.T, Z2, p.QL4, Z2],
        [Z2, Z2, Z2, Z2],
    ])
    Q = _psd_or_pad("leader", Q, [0, 2], p.pad_to_psd)
    return QuadCostModel(Q, [[p.R_L]], "leader")


@dataclass(frozen=True)
class IntentionSet:
    models: tuple[QuadCostModel, QuadCostModel, QuadCostModel]

    def __post_init__(self) -> None:
        labels = [m.label for m in self.models]
        if sorted(labels) != sorted(INTENTION_LABELS):
            raise ScenarioConfigError(f"intention labels must be {INTENTION_LABELS}, got {labels}")

    def get(self, label: str) -> QuadCostModel:
        for m in self.models:
            if m.label == label:
                return m
        raise KeyError(label)


def build_intentions(params: ScenarioParams) -> IntentionSet:
    """Follower cost models for tracking (T), indifferent (I) and avoiding (A)."""
    p = params
    Q_T = _assemble([
        [p.QF1_T, p.QF3_T, Z2, Z2],
        [p.QF3_T.T, p.QF2_T, Z2, Z2],
        [Z2, Z2, Z2, Z2],
        [Z2, Z2, Z2, Z2],
    ])
    Q_I = _assemble([
        [Z2, Z2, Z2, Z2],
        [Z2, p.QF2_I, Z2, p.QF4_I],
        [Z2, Z2, Z2, Z2],
        [Z2, p.QF4_I.T, Z2, p.QF5_I],
    ])
    Q_A = _assemble([
        [p.alpha * I2, p.QF3_A, Z2, Z2],
        [p.QF3_A.T, p.QF2_A, Z2, p.QF4_A],
        [Z2, Z2, Z2, Z2],
        [Z2, p.QF4_A.T, Z2, p.QF5_A],
    ])
    R = [[p.R_F]]
    return IntentionSet((
        QuadCostModel(_psd_or_pad("T", Q_T, [0, 1], p.pad_to_psd), R, "T"),
        QuadCostModel(_psd_or_pad("I", Q_I, [1, 3], p.pad_to_psd), R, "I"),
        QuadCostModel(_psd_or_pad("A", Q_A, [1, 3], p.pad_to_psd), R, "A"),
    ))


def build_joint_dynamics(sigma_L: float, sigma_F: float) -> LtiGameDynamics:
    for name, s in (("sigma_L", sigma_L), ("sigma_F", sigma_F)):
        if not 0.0 < s <= 1.0:
            raise ScenarioConfigError(f"{name}={s} outside (0, 1]")
    A = np.zeros((N_STATE, N_STATE))
    A[0:2, 0:2] = A_AGENT
    A[2:4, 2:4] = A_AGENT
    A[4:6, 4:6] = sigma_L * I2
    A[6:8, 6:8] = sigma_F * I2
    B_L = np.zeros((N_STATE, 1))
    B_F = np.zeros((N_STATE, 1))
    B_L[0:2] = B_AGENT
    B_F[2:4] = B_AGENT
    return LtiGameDynamics(A, B_L, B_F)


def sample_initial(rng: np.random.Generator, x0_bound: float = 20.0) -> tuple[FloatArray, float, float]:
    """x0 uniform on [-bound, bound]^8, then sigma_L, sigma_F uniform on (0, 1]."""
    x0 = rng.uniform(-x0_bound, x0_bound, size=N_STATE)
    sigma_L = 1.0 - rng.random()
    sigma_F = 1.0 - rng.random()
    return x0, float(sigma_L), float(sigma_F)


def make_game(
    dyn: LtiGameDynamics, leader: QuadCostModel, intentions: IntentionSet, true_label: str, T: int
) -> StackelbergGame:
    return StackelbergGame(dyn, leader, intentions.get(true_label), T)


_ALIASES = {
    ("leader", "R"): "R_L",
    ("follower", "R"): "R_F",
}
# worked-example leader weights may share the file; they are not scenario fields
EXAMPLE_SECTIONS = ("example1", "example2")
_SECTION_SUFFIX = {"tracking": "_T", "indifferent": "_I", "avoiding": "_A"}


def params_from_mapping(data: dict) -> ScenarioParams:
    """Build params from a nested config mapping, naming the offending field on error."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioConfigError("scenario config must be a mapping")
    known = {f.name for f in fields(ScenarioParams)}
    flat: dict = {}

    def put(key: str, value, where: str) -> None:
        if key not in known:
            raise ScenarioConfigError(f"unknown field {where!r}")
        flat[key] = value

    for key, value in data.items():
        if key in EXAMPLE_SECTIONS:
            continue
        if key == "leader":
            for k, v in (value or {}).items():
                put(_ALIASES.get(("leader", k), k), v, f"leader.{k}")
        elif key == "follower":
            for k, v in (value or {}).items():
                if k in _SECTION_SUFFIX:
                    for kk, vv in (v or {}).items():
                        name = kk if kk == "alpha" else kk + _SECTION_SUFFIX[k]
                        put(name, vv, f"follower.{k}.{kk}")
                else:
                    put(_ALIASES.get(("follower", k), k), v, f"follower.{k}")
        elif key == "horizon":
            put("T", value, key)
        else:
            put(key, value, key)
    try:
        return ScenarioParams(**flat)
    except ScenarioConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ScenarioConfigError(str(exc)) from exc


def load_params(path: str | Path) -> ScenarioParams:
    """Read a YAML scenario config; syntax errors report the line."""
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1}, column {mark.column + 1})" if mark else ""
        raise ScenarioConfigError(f"{path}: invalid YAML{where}: {exc}") from exc
    try:
        return params_from_mapping(data)
    except ScenarioConfigError as exc:
        raise ScenarioConfigError(f"{path}: {exc}") from exc


def with_overrides(params: ScenarioParams, **changes) -> ScenarioParams:
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(params, **changes) if changes else params
