"""Enhanced self-correcting (ESC) LiPo cell model and series-parallel pack.

Sign convention: current is positive on discharge.  All state containers are
frozen dataclasses; stepping functions return new objects.

The functions here are the readable reference implementation.  Long
simulations (flights, end-of-discharge prediction) run through
:mod:`battmdp.kernels`, which implements the same update on flat arrays and
is tested against these functions.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

AH_TO_AS = 3600.0
DEFAULT_CUTOFF_VOLTAGE = 3.3
CAPACITY_FADE_FACTOR = 0.8
POWER_FADE_FACTOR = 2.0
COLD_RESISTANCE_FACTOR = 1.5


@dataclass(frozen=True)
class OcvCurve:
    """Piecewise-linear open-circuit voltage as a function of SOC."""

    soc: tuple[float, ...]
    voltage: tuple[float, ...]

    def __post_init__(self):
        soc = tuple(float(v) for v in self.soc)
        volt = tuple(float(v) for v in self.voltage)
        object.__setattr__(self, "soc", soc)
        object.__setattr__(self, "voltage", volt)
        if len(soc) < 2 or len(soc) != len(volt):
            raise ValueError("OCV curve needs at least two (soc, voltage) knots")
        if any(b <= a for a, b in zip(soc, soc[1:])):
            raise ValueError("OCV knot SOC values must be strictly increasing")
        if any(b < a for a, b in zip(volt, volt[1:])):
            raise ValueError("OCV voltages must be non-decreasing in SOC")

    @classmethod
    def from_knots(cls, knots: Sequence[tuple[float, float]]) -> "OcvCurve":
        soc, volt = zip(*knots)
        return cls(soc, volt)

    @property
    def knots(self) -> list[tuple[float, float]]:
        return list(zip(self.soc, self.voltage))

    def __call__(self, z: float) -> float:
        return ocv(self, z)

    def soc_at(self, voltage: float) -> float:
        """Inverse lookup; on a flat segment the lowest matching SOC is returned."""
        volt = np.asarray(self.voltage)
        soc = np.asarray(self.soc)
        if voltage <= volt[0]:
            return float(soc[0])
        if voltage >= volt[-1]:
            return float(soc[-1])
        j = int(np.searchsorted(volt, voltage, side="left"))
        v0, v1 = volt[j - 1], volt[j]
        return float(soc[j - 1] + (soc[j] - soc[j - 1]) * (voltage - v0) / (v1 - v0))


def ocv(curve: OcvCurve, z: float) -> float:
    """Open-circuit voltage at SOC ``z``; clamps to the end knots."""
    return float(np.interp(z, curve.soc, curve.voltage))


def ocv_from_cycles(charge: OcvCurve, discharge: OcvCurve) -> OcvCurve:
    """Average a charge and a discharge voltage/SOC curve into an OCV curve.

    The result is sampled on the union of both knot sets, restricted to the
    SOC interval the two curves share.
    """
    lo = max(charge.soc[0], discharge.soc[0])
    hi = min(charge.soc[-1], discharge.soc[-1])
    if hi <= lo:
        raise ValueError("charge and discharge curves do not overlap in SOC")
    grid = sorted({s for s in charge.soc + discharge.soc if lo <= s <= hi})
    if len(grid) < 2:
        grid = [lo, hi]
    volt = [0.5 * (ocv(charge, s) + ocv(discharge, s)) for s in grid]
    # float rounding in the mean must not break monotonicity
    volt = list(np.maximum.accumulate(volt))
    return OcvCurve(tuple(grid), tuple(volt))


@dataclass(frozen=True)
class CellParams:
    R0: float
    rc_pairs: tuple[tuple[float, float], ...]
    Q: float  # ampere-seconds
    gamma: float
    M: float
    M0: float
    eta_charge: float
    eta_discharge: float
    ocv: OcvCurve

    def __post_init__(self):
        pairs = tuple((float(r), float(c)) for r, c in self.rc_pairs)
        object.__setattr__(self, "rc_pairs", pairs)
        if not (self.R0 > 0 and self.Q > 0 and self.gamma > 0):
            raise ValueError("R0, Q and gamma must be positive")
        if any(r <= 0 or c <= 0 for r, c in pairs):
            raise ValueError("RC pair resistances and capacitances must be positive")
        if not 0 < self.eta_charge <= 1 or not 0 < self.eta_discharge <= 1:
            raise ValueError("coulombic efficiencies must lie in (0, 1]")

    @classmethod
    def from_dict(cls, d: dict, ocv_curve: OcvCurve | None = None) -> "CellParams":
        if "Q" in d:
            q = float(d["Q"])
        elif "Q_Ah" in d:
            q = float(d["Q_Ah"]) * AH_TO_AS
        else:
            raise ValueError("cell parameters need 'Q' (A·s) or 'Q_Ah'")
        curve = ocv_curve
        if "ocv" in d:
            curve = OcvCurve(d["ocv"]["soc"], d["ocv"]["voltage"])
        if curve is None:
            raise ValueError("cell parameters need an OCV curve")
        return cls(
            R0=float(d["R0"]),
            rc_pairs=tuple(tuple(p) for p in d["rc_pairs"]),
            Q=q,
            gamma=float(d["gamma"]),
            M=float(d["M"]),
            M0=float(d["M0"]),
            eta_charge=float(d.get("eta_charge", 1.0)),
            eta_discharge=float(d.get("eta_discharge", 1.0)),
            ocv=curve,
        )

    def to_dict(self) -> dict:
        return {
            "R0": self.R0,
            "rc_pairs": [list(p) for p in self.rc_pairs],
            "Q": self.Q,
            "gamma": self.gamma,
            "M": self.M,
            "M0": self.M0,
            "eta_charge": self.eta_charge,
            "eta_discharge": self.eta_discharge,
            "ocv": {"soc": list(self.ocv.soc), "voltage": list(self.ocv.voltage)},
        }


@dataclass(frozen=True)
class CellState:
    z: float
    i_r: tuple[float, ...] = (0.0,)
    h: float = 0.0
    s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "i_r", tuple(float(v) for v in self.i_r))
        if not 0.0 <= self.z <= 1.0:
            raise ValueError(f"SOC must lie in [0, 1], got {self.z}")
        if abs(self.h) > 1.0 + 1e-12:
            raise ValueError("dynamic hysteresis must satisfy |h| <= 1")

    @classmethod
    def at_rest(cls, z: float, n_rc: int = 1) -> "CellState":
        return cls(z=z, i_r=(0.0,) * n_rc, h=0.0, s=0.0)


def _sgn(x: float) -> float:
    return float((x > 0) - (x < 0))


def cell_step(state: CellState, params: CellParams, i: float, dt: float) -> CellState:
    """Advance one cell by ``dt`` seconds at constant current ``i``."""
    i = float(i)
    if not math.isfinite(i):
        raise ValueError(f"non-finite cell current: {i}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    eta = params.eta_discharge if i >= 0 else params.eta_charge
    i_r = []
    for (r, c), ir in zip(params.rc_pairs, state.i_r):
        f = math.exp(-dt / (r * c))
        i_r.append(f * ir + (1.0 - f) * i)
    z = state.z - eta * dt * i / params.Q
    if z < 0.0 or z > 1.0:
        logger.debug("SOC clamped from %.6g", z)
        z = min(max(z, 0.0), 1.0)
    a_h = math.exp(-abs(eta * i * params.gamma * dt / params.Q))
    sgn = _sgn(i)
    h = a_h * state.h + (a_h - 1.0) * sgn
    s = sgn if i != 0 else state.s
    return CellState(z=z, i_r=tuple(i_r), h=h, s=s)


def effective_voltage(state: CellState, params: CellParams, literal_rc_sign: bool = False) -> float:
    """Cell voltage with the ohmic ``R0*i`` drop left out."""
    pol = sum(r * ir for (r, _), ir in zip(params.rc_pairs, state.i_r))
    rc_sign = 1.0 if literal_rc_sign else -1.0
    return ocv(params.ocv, state.z) + params.M0 * state.s + params.M * state.h + rc_sign * pol


def cell_voltage(state: CellState, params: CellParams, i: float, literal_rc_sign: bool = False) -> float:
    """Terminal voltage.  Polarization subtracts on discharge unless ``literal_rc_sign``."""
    return effective_voltage(state, params, literal_rc_sign) - params.R0 * i


class Grade(str, Enum):
    F1 = "F1"
    F2 = "F2"
    F3 = "F3"

    @property
    def rank(self) -> int:
        return int(self.value[1])


class Temperature(str, Enum):
    TH = "TH"  # ambient above 50 F
    TL = "TL"  # ambient below 50 F


@dataclass(frozen=True)
class HealthCondition:
    """Health grade of one series battery plus the ambient temperature.

    ``capacity_fade`` and ``power_fade`` list the indices of the cells that
    carry each fade.  Use :meth:`canonical` for the default realization of a
    grade.
    """

    grade: Grade
    ambient_temp: Temperature = Temperature.TH
    capacity_fade: frozenset[int] = frozenset()
    power_fade: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "grade", Grade(self.grade))
        object.__setattr__(self, "ambient_temp", Temperature(self.ambient_temp))
        object.__setattr__(self, "capacity_fade", frozenset(self.capacity_fade))
        object.__setattr__(self, "power_fade", frozenset(self.power_fade))
        cap, pwr = bool(self.capacity_fade), bool(self.power_fade)
        if self.grade is Grade.F1 and (cap or pwr):
            raise ValueError("a healthy (F1) battery carries no fade")
        if self.grade is Grade.F2 and cap == pwr:
            raise ValueError("F2 needs exactly one of capacity fade or power fade")
        if self.grade is Grade.F3 and not (cap and pwr):
            raise ValueError("F3 needs both capacity fade and power fade")

    @classmethod
    def canonical(cls, grade: Grade | str, temp: Temperature | str = Temperature.TH,
                  n_cells: int = 3, f2_mode: str = "capacity") -> "HealthCondition":
        """F2: one fade on the first cell; F3: both fades on every cell."""
        grade = Grade(grade)
        if grade is Grade.F1:
            return cls(grade, temp)
        if grade is Grade.F2:
            if f2_mode == "capacity":
                return cls(grade, temp, capacity_fade=frozenset({0}))
            if f2_mode == "power":
                return cls(grade, temp, power_fade=frozenset({0}))
            raise ValueError(f"unknown F2 mode {f2_mode!r}")
        cells = frozenset(range(n_cells))
        return cls(grade, temp, capacity_fade=cells, power_fade=cells)


def apply_degradation(params: CellParams, health: HealthCondition, cell: int = 0) -> CellParams:
    """Degraded parameters for cell index ``cell`` of a battery in ``health``."""
    q = params.Q
    r0 = params.R0
    if cell in health.capacity_fade:
        q *= CAPACITY_FADE_FACTOR
    if cell in health.power_fade:
        r0 *= POWER_FADE_FACTOR
    if health.ambient_temp is Temperature.TL:
        r0 *= COLD_RESISTANCE_FACTOR
    if q == params.Q and r0 == params.R0:
        return params
    return replace(params, Q=q, R0=r0)


def degrade_battery(cells: Sequence[CellParams], health: HealthCondition) -> list[CellParams]:
    return [apply_degradation(p, health, k) for k, p in enumerate(cells)]


@dataclass(frozen=True)
class Cell:
    params: CellParams
    state: CellState


@dataclass(frozen=True)
class PackOptions:
    """Modelling switches for the parallel-branch current split.

    split_voltage: ``"effective"`` feeds OCV, hysteresis and RC polarization of
        every cell into the branch voltage; ``"ocv"`` uses bare OCV.
    literal_rc_sign: add (rather than subtract) RC polarization in the cell
        output equation.
    """

    split_voltage: str = "effective"
    literal_rc_sign: bool = False
    max_branch_current: float | None = None

    def __post_init__(self):
        if self.split_voltage not in ("effective", "ocv"):
            raise ValueError("split_voltage must be 'effective' or 'ocv'")


DEFAULT_OPTIONS = PackOptions()


@dataclass(frozen=True)
class PackState:
    branches: tuple[tuple[Cell, ...], ...]
    switches: tuple[bool, ...]
    bus_voltage: float = 0.0
    branch_currents: tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(tuple(b) for b in self.branches))
        object.__setattr__(self, "switches", tuple(bool(s) for s in self.switches))
        if len(self.switches) != len(self.branches):
            raise ValueError("one switch per branch required")
        if not self.branch_currents:
            object.__setattr__(self, "branch_currents", (0.0,) * len(self.branches))

    @property
    def n_branches(self) -> int:
        return len(self.branches)

    def with_switches(self, switches: Sequence[bool]) -> "PackState":
        return replace(self, switches=tuple(bool(s) for s in switches))

    def cell_voltages(self, i_branch: Sequence[float] | None = None, options: PackOptions = DEFAULT_OPTIONS):
        """Terminal voltage of every cell, branch by branch."""
        if i_branch is None:
            i_branch = self.branch_currents
        return [
            [cell_voltage(c.state, c.params, i, options.literal_rc_sign) for c in branch]
            for branch, i in zip(self.branches, i_branch)
        ]

    def min_soc(self) -> list[float]:
        return [min(c.state.z for c in b) for b in self.branches]


def build_pack(batteries: Sequence[Sequence[CellParams]], z0: Sequence[float] | float,
               switches: Sequence[bool] | None = None, options: PackOptions = DEFAULT_OPTIONS) -> PackState:
    """Pack at rest.  ``z0`` is one SOC per battery (or a single value)."""
    n = len(batteries)
    if np.isscalar(z0):
        z0 = [float(z0)] * n
    branches = []
    for cells, z in zip(batteries, z0):
        branches.append(tuple(Cell(p, CellState.at_rest(z, len(p.rc_pairs))) for p in cells))
    pack = PackState(tuple(branches), tuple(switches) if switches is not None else (True,) * n)
    return replace(pack, bus_voltage=_split(pack, 0.0, options)[0] if any(pack.switches) else 0.0)


def _branch_sums(pack: PackState, options: PackOptions):
    v_br, r_br = [], []
    for branch in pack.branches:
        if options.split_voltage == "effective":
            v = sum(effective_voltage(c.state, c.params, options.literal_rc_sign) for c in branch)
        else:
            v = sum(ocv(c.params.ocv, c.state.z) for c in branch)
        v_br.append(v)
        r_br.append(sum(c.params.R0 for c in branch))
    return v_br, r_br


def _split(pack: PackState, i_total: float, options: PackOptions):
    """Bus voltage and branch currents for a total demand ``i_total``."""
    v_br, r_br = _branch_sums(pack, options)
    on = [j for j, sw in enumerate(pack.switches) if sw]
    if not on:
        if i_total != 0:
            raise ValueError("all branch switches are OFF but current is demanded")
        return 0.0, [0.0] * pack.n_branches
    g = sum(1.0 / r_br[j] for j in on)
    vg = sum(v_br[j] / r_br[j] for j in on)
    bus = (vg - i_total) / g
    currents = [(v_br[j] - bus) / r_br[j] if pack.switches[j] else 0.0 for j in range(pack.n_branches)]
    return bus, currents


def pack_step(pack: PackState, i_total: float, dt: float, options: PackOptions = DEFAULT_OPTIONS) -> PackState:
    """Split ``i_total`` over the ON branches and advance every cell.

    The returned pack carries the bus voltage and branch currents that were
    applied during the step (computed from the state at the start of it).
    """
    bus, currents = _split(pack, i_total, options)
    if options.max_branch_current is not None:
        for j, i in enumerate(currents):
            if abs(i) > options.max_branch_current:
                logger.warning("branch %d current %.2f A exceeds limit %.2f A", j, i, options.max_branch_current)
    branches = tuple(
        tuple(Cell(c.params, cell_step(c.state, c.params, i, dt)) for c in branch)
        for branch, i in zip(pack.branches, currents)
    )
    return replace(pack, branches=branches, bus_voltage=bus, branch_currents=tuple(currents))


def estimate_eod(pack: PackState, predicted_current: float, dt_pred: float = 1.0,
                 cutoff_voltage: float = DEFAULT_CUTOFF_VOLTAGE, horizon: float = 3600.0,
                 options: PackOptions = DEFAULT_OPTIONS) -> float:
    """Predicted time until any in-use cell reaches ``cutoff_voltage``.

    Forward-simulates a copy of the pack at a constant demand.  Returns
    ``horizon`` if the cutoff is never reached.
    """
    return branch_eods(pack, predicted_current, dt_pred, cutoff_voltage, horizon, options)[1]


def branch_eods(pack: PackState, predicted_current: float, dt_pred: float = 1.0,
                cutoff_voltage: float = DEFAULT_CUTOFF_VOLTAGE, horizon: float = 3600.0,
                options: PackOptions = DEFAULT_OPTIONS) -> tuple[list[float], float]:
    """Per-branch and pack end-of-discharge times (OFF branches report ``horizon``)."""
    from . import kernels

    if predicted_current < 0:
        raise ValueError("predicted current must be non-negative")
    arrays = kernels.PackArrays.from_pack(pack, options)
    return kernels.forward_eod(arrays, predicted_current, dt_pred, cutoff_voltage, horizon)


def load_cells(path: str | Path | None = None) -> list[CellParams]:
    """Cell parameter list from a JSON document (defaults to the shipped 3s pack)."""
    if path is None:
        text = resources.files("battmdp").joinpath("data/params/3s_lipo.json").read_text()
    else:
        text = Path(path).read_text()
    return cells_from_dict(json.loads(text))


def cells_from_dict(doc: dict) -> list[CellParams]:
    curve = OcvCurve(doc["ocv"]["soc"], doc["ocv"]["voltage"]) if "ocv" in doc else None
    return [CellParams.from_dict(c, curve) for c in doc["cells"]]
