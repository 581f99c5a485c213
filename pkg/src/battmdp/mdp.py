"""Battery-reconfiguration MDP: state encoding, rewards, value iteration and
the per-condition policy store.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import IntEnum
from itertools import product
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .battery import Grade, Temperature

I_MAX = 105.0
HIGH_CURRENT_FRACTION = 0.2
CRITICAL_VOLTAGE = 3.4
CUTOFF_VOLTAGE = 3.3

# feature radices, most significant first: I, B1Sw, B1S, B1C, B2Sw, B2S, B2C
RADICES = (2, 2, 3, 2, 2, 3, 2)
N_COMPOSITE = int(np.prod(RADICES))
FAILURE = N_COMPOSITE
N_STATES = N_COMPOSITE + 1
N_ACTIONS = 3


class Action(IntEnum):
    UseBatt1 = 0
    UseBatt2 = 1
    UseBoth = 2

    @property
    def switches(self) -> tuple[bool, bool]:
        return {0: (True, False), 1: (False, True), 2: (True, True)}[int(self)]

    @classmethod
    def from_switches(cls, sw: Sequence[bool]) -> "Action":
        sw = tuple(bool(v) for v in sw)
        for a in cls:
            if a.switches == sw:
                return a
        raise ValueError(f"no action leaves switches at {sw}")


@dataclass(frozen=True)
class MDPState:
    """Composite battery state; ``energy`` entries are 1..3 (S1..S3), ``cell`` 0..1 (C0, C1)."""

    high_current: bool
    sw: tuple[bool, bool]
    energy: tuple[int, int]
    cell: tuple[int, int]

    def __post_init__(self):
        object.__setattr__(self, "high_current", bool(self.high_current))
        object.__setattr__(self, "sw", tuple(bool(v) for v in self.sw))
        object.__setattr__(self, "energy", tuple(int(v) for v in self.energy))
        object.__setattr__(self, "cell", tuple(int(v) for v in self.cell))
        if any(e not in (1, 2, 3) for e in self.energy) or any(c not in (0, 1) for c in self.cell):
            raise ValueError("energy status must be 1..3 and cell status 0..1")

    def digits(self) -> tuple[int, ...]:
        return (int(self.high_current), int(self.sw[0]), self.energy[0] - 1, self.cell[0],
                int(self.sw[1]), self.energy[1] - 1, self.cell[1])

    @property
    def index(self) -> int:
        idx = 0
        for d, r in zip(self.digits(), RADICES):
            idx = idx * r + d
        return idx

    def swapped(self) -> "MDPState":
        return MDPState(self.high_current, self.sw[::-1], self.energy[::-1], self.cell[::-1])

    @property
    def label(self) -> str:
        parts = ["IH" if self.high_current else "IL"]
        for k in range(2):
            parts.append(f"{'ON' if self.sw[k] else 'OFF'}S{self.energy[k]}C{self.cell[k]}")
        return "".join(parts)


def decode_state(index: int) -> MDPState | None:
    """Inverse of ``MDPState.index``; ``None`` for FAILURE."""
    if not 0 <= index < N_STATES:
        raise ValueError(f"state index {index} out of range")
    if index == FAILURE:
        return None
    digits = []
    for r in reversed(RADICES):
        digits.append(index % r)
        index //= r
    i, sw1, s1, c1, sw2, s2, c2 = reversed(digits)
    return MDPState(bool(i), (bool(sw1), bool(sw2)), (s1 + 1, s2 + 1), (c1, c2))


def state_label(index: int) -> str:
    s = decode_state(index)
    return "FAILURE" if s is None else s.label


def swap_index(index: int) -> int:
    s = decode_state(index)
    return FAILURE if s is None else s.swapped().index


@dataclass(frozen=True)
class ConditionKey:
    health1: Grade
    health2: Grade
    temperature: Temperature = Temperature.TH

    def __post_init__(self):
        object.__setattr__(self, "health1", Grade(self.health1))
        object.__setattr__(self, "health2", Grade(self.health2))
        object.__setattr__(self, "temperature", Temperature(self.temperature))

    @property
    def key(self) -> str:
        return f"{self.health1.value}_{self.health2.value}_{self.temperature.value}"

    def __str__(self) -> str:
        return self.key

    @classmethod
    def parse(cls, text: str) -> "ConditionKey":
        try:
            h1, h2, temp = text.strip().split("_")
            return cls(h1, h2, temp)
        except ValueError as exc:
            raise ValueError(f"bad condition key {text!r} (expected e.g. 'F1_F3_TH')") from exc

    def swapped(self) -> "ConditionKey":
        return ConditionKey(self.health2, self.health1, self.temperature)


def all_conditions() -> list[ConditionKey]:
    return [ConditionKey(h1, h2, t) for t, h1, h2 in product(Temperature, Grade, Grade)]


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 0.4
    w2: float = 0.3
    w3: float = 0.3

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("reward weights must be non-negative")
        if abs(self.w1 + self.w2 + self.w3 - 1.0) > 1e-9:
            raise ValueError("reward weights must sum to 1")


@dataclass(frozen=True)
class RewardTable:
    """Component values; ``s2``/``s3`` are (own grade no worse, own grade worse)."""

    s2: tuple[float, float] = (-5.0, -10.0)
    s3: tuple[float, float] = (-20.0, -25.0)
    c1: float = -10.0
    failure: float = -30.0


DEFAULT_REWARDS = RewardTable()


def _energy_reward(status: int, own: Grade, other: Grade, table: RewardTable) -> float:
    if status == 1:
        return 0.0
    pair = table.s2 if status == 2 else table.s3
    return pair[0] if own.rank <= other.rank else pair[1]


def reward(s: MDPState | int | None, a: Action | int, w: RewardWeights, cond: ConditionKey,
           table: RewardTable = DEFAULT_REWARDS) -> float:
    """Immediate reward of taking ``a`` in ``s``; switch terms use the state's switch positions."""
    if isinstance(s, (int, np.integer)):
        s = decode_state(int(s))
    if s is None:
        return table.failure
    a = Action(a)
    grades = (cond.health1, cond.health2)
    rs = [_energy_reward(s.energy[k], grades[k], grades[1 - k], table) for k in range(2)]
    rc = [table.c1 if s.cell[k] else 0.0 for k in range(2)]
    rsw = [1.0 if s.sw[k] else 0.0 for k in range(2)]
    if a is Action.UseBoth:
        return w.w1 * (rs[0] + rs[1]) / 2 + w.w2 * (rc[0] + rc[1]) / 2 - w.w3 * ((rsw[0] + rsw[1]) / 2 - 1.0)
    k = 0 if a is Action.UseBatt1 else 1
    return w.w1 * rs[k] + w.w2 * rc[k] - w.w3 * rsw[1 - k]


def reward_matrix(w: RewardWeights, cond: ConditionKey, table: RewardTable = DEFAULT_REWARDS) -> np.ndarray:
    R = np.empty((N_STATES, N_ACTIONS))
    for s in range(N_STATES):
        st = decode_state(s)
        for a in Action:
            R[s, a] = reward(st, a, w, cond, table)
    return R


@dataclass(frozen=True)
class Telemetry:
    i_total: float
    eod: tuple[float, float]
    rfd: float
    t_sf: float
    min_cell_v: tuple[float, float]
    sw: tuple[bool, bool]


def energy_status(eod: float, rfd: float, t_sf: float) -> int:
    """S1/S2/S3 as 1/2/3; equality falls to the worse status."""
    if eod > rfd + t_sf:
        return 1
    if eod > rfd:
        return 2
    return 3


def encode_state(tm: Telemetry, i_max: float = I_MAX, critical_v: float = CRITICAL_VOLTAGE,
                 cutoff_v: float = CUTOFF_VOLTAGE) -> int:
    """State index for the given telemetry (FAILURE if an in-use cell is at cutoff)."""
    vals = (tm.i_total, *tm.eod, tm.rfd, tm.t_sf, *tm.min_cell_v)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("telemetry must be finite")
    if tm.t_sf < 0:
        raise ValueError("safety margin must be non-negative")
    sw = tuple(bool(v) for v in tm.sw)
    if any(on and v <= cutoff_v for on, v in zip(sw, tm.min_cell_v)):
        return FAILURE
    high = tm.i_total > HIGH_CURRENT_FRACTION * i_max
    energy = tuple(energy_status(e, tm.rfd, tm.t_sf) for e in tm.eod)
    cell = tuple(0 if v >= critical_v else 1 for v in tm.min_cell_v)
    return MDPState(high, sw, energy, cell).index


@dataclass
class TransitionTensor:
    """Empirical p(s'|s,a); rows never visited are self-loops listed in ``unvisited``."""

    p: np.ndarray  # (S, A, S)
    counts: np.ndarray  # (S, A) visit counts
    unvisited: np.ndarray  # (S, A) bool

    @classmethod
    def from_counts(cls, counts3: np.ndarray) -> "TransitionTensor":
        counts3 = np.asarray(counts3, dtype=np.int64)
        n_s, n_a, _ = counts3.shape
        visits = counts3.sum(axis=2)
        p = np.zeros(counts3.shape)
        visited = visits > 0
        p[visited] = counts3[visited] / visits[visited][:, None]
        unvisited = ~visited
        for s, a in zip(*np.nonzero(unvisited)):
            p[s, a, s] = 1.0
        if n_s == N_STATES:
            p[FAILURE] = 0.0
            p[FAILURE, :, FAILURE] = 1.0
        return cls(p, visits, unvisited)

    def validate(self, atol: float = 1e-9) -> None:
        if np.any(self.p < 0):
            raise ValueError("transition probabilities must be non-negative")
        dev = np.abs(self.p.sum(axis=2) - 1.0).max()
        if dev > atol:
            raise ValueError(f"transition rows must sum to 1 (max deviation {dev:.3g})")

    def triplets(self) -> Iterable[tuple[int, int, int, float, int]]:
        """Non-zero entries as (s, a, s', p, visits(s, a))."""
        for s, a, s2 in zip(*np.nonzero(self.p)):
            yield int(s), int(a), int(s2), float(self.p[s, a, s2]), int(self.counts[s, a])


def _as_tensor(P) -> np.ndarray:
    return P.p if isinstance(P, TransitionTensor) else np.asarray(P, dtype=float)


def check_stochastic(P: np.ndarray, atol: float = 1e-9) -> None:
    if P.ndim != 3 or P.shape[0] != P.shape[2]:
        raise ValueError("transition tensor must have shape (S, A, S)")
    if np.any(P < -atol) or np.abs(P.sum(axis=2) - 1.0).max() > atol:
        raise ValueError("transition tensor is not stochastic")


@dataclass
class Policy:
    actions: np.ndarray
    values: np.ndarray
    condition: ConditionKey | None = None
    gamma: float = 0.95
    tol: float = 1e-6
    iterations: int = 0
    residual: float = 0.0
    diffs: list[float] = field(default_factory=list)

    def act(self, state: int) -> Action:
        return Action(int(self.actions[state]))

    def to_dict(self) -> dict:
        return {
            "actions": [int(a) for a in self.actions],
            "values": [float(v) for v in self.values],
            "gamma": self.gamma,
            "tol": self.tol,
            "iterations": self.iterations,
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, d: dict, condition: ConditionKey | None = None) -> "Policy":
        return cls(np.array(d["actions"], dtype=int), np.array(d["values"], dtype=float), condition,
                   d.get("gamma", 0.95), d.get("tol", 1e-6), d.get("iterations", 0), d.get("residual", 0.0))


def q_values(P, R: np.ndarray, V: np.ndarray, gamma: float) -> np.ndarray:
    return R + gamma * np.einsum("ijk,k->ij", _as_tensor(P), V)


def greedy(Q: np.ndarray, tie_tol: float = 1e-9) -> np.ndarray:
    """Argmax per row; near-ties go to the lowest action index."""
    best = Q.max(axis=1, keepdims=True)
    return np.argmax(Q >= best - tie_tol, axis=1)


def evaluate_policy(P, R: np.ndarray, actions: np.ndarray, gamma: float) -> np.ndarray:
    """Exact values of a stationary deterministic policy."""
    P = _as_tensor(P)
    idx = np.arange(P.shape[0])
    P_pi = P[idx, actions]
    R_pi = R[idx, actions]
    return np.linalg.solve(np.eye(P.shape[0]) - gamma * P_pi, R_pi)


def value_iteration(P, R: np.ndarray, gamma: float = 0.95, tol: float = 1e-6,
                    max_iter: int = 100_000, condition: ConditionKey | None = None) -> Policy:
    """Value iteration to a max-norm change below ``tol``.

    The greedy policy is then evaluated exactly and improved until stable, so
    the returned values are the exact values of the returned policy and the
    policy is greedy with respect to them.
    """
    P = _as_tensor(P)
    check_stochastic(P)
    R = np.asarray(R, dtype=float)
    if R.shape != P.shape[:2]:
        raise ValueError("reward table must have shape (S, A)")
    if not 0 <= gamma < 1:
        raise ValueError("discount factor must lie in [0, 1)")
    V = np.zeros(P.shape[0])
    diffs = []
    it = 0
    while True:
        V_new = q_values(P, R, V, gamma).max(axis=1)
        diff = float(np.abs(V_new - V).max())
        diffs.append(diff)
        V = V_new
        it += 1
        if diff < tol:
            break
        if it >= max_iter:
            raise RuntimeError(f"value iteration did not converge in {max_iter} iterations")
    actions = greedy(q_values(P, R, V, gamma))
    for _ in range(100):
        V = evaluate_policy(P, R, actions, gamma)
        Q = q_values(P, R, V, gamma)
        improved = Q[np.arange(len(V)), actions] < Q.max(axis=1) - 1e-12
        if not improved.any():
            break
        actions = np.where(improved, greedy(Q), actions)
    residual = float(np.abs(q_values(P, R, V, gamma).max(axis=1) - V).max())
    return Policy(actions, V, condition, gamma, tol, it, residual, diffs)


def is_greedy(policy: Policy, P, R: np.ndarray, tie_tol: float = 1e-9) -> bool:
    Q = q_values(P, R, policy.values, policy.gamma)
    chosen = Q[np.arange(len(policy.values)), policy.actions]
    return bool(np.all(chosen >= Q.max(axis=1) - tie_tol))


class PolicyStoreError(KeyError):
    pass


class PolicyStore:
    """Immutable lookup from condition key to solved policy."""

    def __init__(self, policies: dict[str, Policy], metadata: dict | None = None):
        self._policies = dict(policies)
        self.metadata = dict(metadata or {})

    def __len__(self) -> int:
        return len(self._policies)

    def __contains__(self, key) -> bool:
        return str(key) in self._policies

    def keys(self) -> list[str]:
        return sorted(self._policies)

    def missing(self) -> list[str]:
        return [c.key for c in all_conditions() if c.key not in self._policies]

    def select(self, cond: ConditionKey) -> Policy:
        try:
            return self._policies[cond.key]
        except KeyError:
            raise PolicyStoreError(f"policy store has no entry for {cond.key}") from None

    def to_dict(self) -> dict:
        out = {"_metadata": self.metadata}
        for k in self.keys():
            out[k] = self._policies[k].to_dict()
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PolicyStore":
        doc = json.loads(Path(path).read_text())
        meta = doc.pop("_metadata", {})
        return cls({k: Policy.from_dict(v, ConditionKey.parse(k)) for k, v in doc.items()}, meta)


def select_policy(cond: ConditionKey, store: PolicyStore, require_complete: bool = False) -> Policy:
    """Decision-tree lookup by (health1, health2, temperature); fails closed."""
    if require_complete and store.missing():
        raise PolicyStoreError(f"policy store incomplete, missing {', '.join(store.missing())}")
    return store.select(cond)


def policy_step(policy: Policy, tm: Telemetry) -> tuple[Action, tuple[bool, bool], int]:
    """Action, switch command and encoded state for the given telemetry."""
    s = encode_state(tm)
    a = policy.act(s)
    return a, a.switches, s
