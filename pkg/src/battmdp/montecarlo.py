"""Monte Carlo flight simulation: scenario sampling, the closed-loop flight
(200 Hz control, 1 Hz battery decisions), transition-tensor estimation and
the battery case studies.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import kernels
from .battery import (
    Grade,
    HealthCondition,
    PackOptions,
    Temperature,
    build_pack,
    degrade_battery,
    load_cells,
)
from .config import load_run_config
from .mdp import (
    FAILURE,
    N_ACTIONS,
    N_STATES,
    Action,
    ConditionKey,
    Policy,
    PolicyStore,
    RewardTable,
    RewardWeights,
    Telemetry,
    TransitionTensor,
    all_conditions,
    decode_state,
    encode_state,
)
from .vehicle import Hexacopter, MissionPlan, WindModel, dryden_gust, generate_mission, mission_for_duration

logger = logging.getLogger(__name__)

MISSION_SUCCESS = "MissionSuccess"
ENERGY_SHORTFALL = "EnergyShortfall"
FAILURE_OUTCOME = "Failure"
OUTCOMES = (MISSION_SUCCESS, ENERGY_SHORTFALL, FAILURE_OUTCOME)
ACTION_SOURCES = ("fixed", "policy", "explore")


class FlightDiverged(RuntimeError):
    """The vehicle state became non-finite; the flight is discarded."""


@dataclass(frozen=True)
class ScenarioRanges:
    t_sf: tuple[float, float] = (5.0, 10.0)
    initial_voltage: tuple[float, float] = (4.05, 4.12)
    cruise_speed: tuple[float, float] = (1.0, 9.0)
    wind_speed: tuple[float, float] = (1.0, 3.0)
    wind_direction: tuple[float, float] = (0.0, math.pi)
    gust_categories: tuple[str, ...] = ("LowLight", "LowModerate", "MediumLight", "MediumModerate")
    mission_fraction: tuple[float, float] = (0.5, 1.2)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioRanges":
        return cls(**{k: tuple(v) for k, v in d.items()})


@dataclass(frozen=True)
class FlightScenario:
    health: tuple[Grade, Grade]
    temperature: Temperature = Temperature.TH
    action_source: str = "fixed"
    action: Action = Action.UseBoth
    t_sf: float = 10.0
    initial_voltage: tuple[float, float] = (4.10, 4.10)
    cruise_speed: float = 5.0
    wind_speed: float = 2.0
    wind_direction: float = math.pi / 2
    gust_category: str = "LowLight"
    mission_duration: float = 300.0
    hover_time: float | None = None
    destination: tuple[float, float] | None = None
    altitude: float | None = None
    seed: int = 0
    spawn_key: tuple[int, ...] = ()
    r0_override: tuple[tuple[float, ...] | None, tuple[float, ...] | None] = (None, None)
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "health", tuple(Grade(g) for g in self.health))
        object.__setattr__(self, "temperature", Temperature(self.temperature))
        object.__setattr__(self, "action", Action(self.action))
        iv = self.initial_voltage
        iv = (float(iv), float(iv)) if np.isscalar(iv) else tuple(float(v) for v in iv)
        object.__setattr__(self, "initial_voltage", iv)
        object.__setattr__(self, "spawn_key", tuple(int(k) for k in self.spawn_key))
        object.__setattr__(self, "r0_override",
                           tuple(None if r is None else tuple(float(v) for v in r) for r in self.r0_override))
        if self.action_source not in ACTION_SOURCES:
            raise ValueError(f"action source must be one of {ACTION_SOURCES}")
        if len(self.health) != 2:
            raise ValueError("two battery health grades required")

    @property
    def condition(self) -> ConditionKey:
        return ConditionKey(self.health[0], self.health[1], self.temperature)

    def out_of_range(self, ranges: ScenarioRanges) -> tuple[str, ...]:
        """Names of fields outside the sampling ranges (explicit stress scenarios)."""
        bad = []
        for name in ("t_sf", "cruise_speed", "wind_speed", "wind_direction"):
            lo, hi = getattr(ranges, name)
            if not lo <= getattr(self, name) <= hi:
                bad.append(name)
        lo, hi = ranges.initial_voltage
        if any(not lo <= v <= hi for v in self.initial_voltage):
            bad.append("initial_voltage")
        if self.gust_category not in ranges.gust_categories:
            bad.append("gust_category")
        return tuple(bad)

    @classmethod
    def from_dict(cls, d: dict) -> "FlightScenario":
        d = dict(d)
        if "action" in d:
            d["action"] = Action[d["action"]]
        if "r0_override" in d:
            d["r0_override"] = tuple(d["r0_override"])
        if "destination" in d:
            d["destination"] = tuple(d["destination"])
        return cls(**d)


def sample_scenario(ranges: ScenarioRanges, rng: np.random.Generator, health: Sequence[Grade | str],
                    temperature: Temperature | str = Temperature.TH, reference_endurance: float = 600.0,
                    action_source: str = "explore", action: Action = Action.UseBoth,
                    seed: int = 0, spawn_key: tuple[int, ...] = ()) -> FlightScenario:
    """Independent uniform draws from each range; mission length is a fraction of ``reference_endurance``."""
    def u(bounds):
        lo, hi = bounds
        return float(rng.uniform(lo, hi)) if hi > lo else float(lo)

    t_sf = u(ranges.t_sf)
    v0 = u(ranges.initial_voltage)
    cruise = u(ranges.cruise_speed)
    wind = u(ranges.wind_speed)
    direction = u(ranges.wind_direction)
    gust = ranges.gust_categories[int(rng.integers(len(ranges.gust_categories)))]
    frac = u(ranges.mission_fraction)
    return FlightScenario(
        health=tuple(health), temperature=temperature, action_source=action_source, action=action,
        t_sf=t_sf, initial_voltage=(v0, v0), cruise_speed=cruise, wind_speed=wind,
        wind_direction=direction, gust_category=gust,
        mission_duration=float(round(frac * reference_endurance)), seed=seed, spawn_key=spawn_key,
    )


@dataclass
class EpochRecord:
    t: float
    state: int
    action: int  # -1 when no action was taken
    eod: tuple[float, float]
    pack_eod: float
    rfd: float
    i_pred: float
    i_level: float
    min_cell_v: tuple[float, float]
    sw: tuple[bool, bool]


TICK_COLUMNS = ("t", "bus_voltage", "i_total", "i_branch1", "i_branch2", "z_min_b1", "z_min_b2",
                "v_min_cell_b1", "v_min_cell_b2", "pos_x", "pos_y", "pos_z", "ref_x", "ref_y", "ref_z",
                "T", "tau_x", "tau_y", "tau_z", "omega1", "omega2", "omega3", "omega4", "omega5", "omega6",
                "i_motor_total", "saturated")


@dataclass
class FlightTrace:
    scenario: FlightScenario
    mission_duration: float = 0.0
    epochs: list[EpochRecord] = field(default_factory=list)
    transitions: list[tuple[int, int, int]] = field(default_factory=list)
    outcome: str | None = None
    end_time: float = 0.0
    ticks: np.ndarray | None = None
    n_saturated: int = 0
    n_soc_clamps: int = 0

    def tick(self, name: str) -> np.ndarray:
        return self.ticks[:, TICK_COLUMNS.index(name)]

    def actions(self) -> list[tuple[float, Action]]:
        return [(e.t, Action(e.action)) for e in self.epochs if e.action >= 0]

    def battery_rows(self) -> tuple[list[str], np.ndarray]:
        """Per-tick battery trace with the latest epoch EOD estimates."""
        cols = ["t", "bus_voltage", "i_total", "i_branch1", "i_branch2", "z_min_b1", "z_min_b2",
                "v_min_cell_b1", "v_min_cell_b2", "eod_b1", "eod_b2"]
        if self.ticks is None or len(self.ticks) == 0:
            return cols, np.zeros((0, len(cols)))
        t = self.ticks[:, 0]
        et = np.array([e.t for e in self.epochs])
        eods = np.array([e.eod for e in self.epochs])
        idx = np.clip(np.searchsorted(et, t + 1e-9, side="right") - 1, 0, len(et) - 1)
        return cols, np.column_stack([self.ticks[:, :9], eods[idx]])

    def vehicle_rows(self) -> tuple[list[str], np.ndarray]:
        cols = ["t", "pos_x", "pos_y", "pos_z", "ref_x", "ref_y", "ref_z", "T", "tau_x", "tau_y",
                "tau_z", "omega1", "omega2", "omega3", "omega4", "omega5", "omega6", "i_motor_total"]
        if self.ticks is None or len(self.ticks) == 0:
            return cols, np.zeros((0, len(cols)))
        return cols, self.ticks[:, [0] + list(range(9, 26))]

    def epoch_rows(self) -> tuple[list[str], list[list]]:
        from .mdp import state_label

        cols = ["t", "state", "label", "action", "sw1", "sw2", "eod_b1", "eod_b2", "pack_eod", "rfd",
                "i_pred", "i_level", "v_min_cell_b1", "v_min_cell_b2"]
        rows = []
        for e in self.epochs:
            rows.append([e.t, e.state, state_label(e.state), Action(e.action).name if e.action >= 0 else "",
                         int(e.sw[0]), int(e.sw[1]), *e.eod, e.pack_eod, e.rfd, e.i_pred, e.i_level, *e.min_cell_v])
        return cols, rows


class Simulator:
    """Resolved models and settings for running flights."""

    def __init__(self, config: dict | None = None):
        config = config if config is not None else load_run_config()
        self.config = config
        bat = config["battery"]
        self.cells = load_cells(bat.get("params_file"))
        self.options = PackOptions(bat["split_voltage"], bat["literal_rc_sign"], bat.get("max_branch_current"))
        self.f2_mode = bat["f2_mode"]
        self.vehicle = Hexacopter.from_config(config["vehicle"])
        self.ctrl = self.vehicle.kernel_matrices()
        self.mission = config["mission"]
        self.ranges = ScenarioRanges.from_dict(config["ranges"])
        sim = config["simulation"]
        self.eod_mode = sim["eod_mode"]
        self.dt_pred = sim["dt_pred"]
        self.horizon = sim["horizon"]
        self.window = max(int(round(sim["current_window"])), 1)
        self.cutoff = sim["cutoff_voltage"]
        self.p_switch = sim["explore_switch_prob"]
        self.reference_voltage = sim["reference_voltage"]
        mdp_cfg = config["mdp"]
        self.weights = RewardWeights(*mdp_cfg["weights"])
        rw = mdp_cfg["rewards"]
        self.rewards = RewardTable(tuple(rw["s2"]), tuple(rw["s3"]), rw["c1"], rw["failure"])
        self.dt = self.vehicle.dt
        self.ticks_per_epoch = int(round(1.0 / self.dt))
        if abs(self.ticks_per_epoch * self.dt - 1.0) > 1e-12:
            raise ValueError("control dt must divide one second")

    # -- pack construction ------------------------------------------------

    def batteries(self, health: Sequence[Grade], temperature: Temperature,
                  r0_override=(None, None)) -> list[list]:
        out = []
        for grade, r0 in zip(health, r0_override):
            cells = self.cells
            if r0 is not None:
                if len(r0) != len(cells):
                    r0 = [r0[0]] * len(cells)
                cells = [replace(c, R0=float(r)) for c, r in zip(cells, r0)]
            cond = HealthCondition.canonical(grade, temperature, len(cells), self.f2_mode)
            out.append(degrade_battery(cells, cond))
        return out

    def build(self, scenario: FlightScenario):
        bats = self.batteries(scenario.health, scenario.temperature, scenario.r0_override)
        z0 = [b[0].ocv.soc_at(v) for b, v in zip(bats, scenario.initial_voltage)]
        return build_pack(bats, z0, (True, True), self.options)

    def reference_eod(self, voltage: float | None = None, switches=(True, True),
                      health=(Grade.F1, Grade.F1), temperature=Temperature.TH) -> float:
        """Pack EOD at hover demand from rest; the healthy default sizes the missions."""
        v = self.reference_voltage if voltage is None else voltage
        scen = FlightScenario(health=health, temperature=temperature, initial_voltage=(v, v))
        pack = self.build(scen)
        arrays = kernels.PackArrays.from_pack(pack, self.options)
        arrays.set_switches(switches)
        i = self.vehicle.hover_current(pack.bus_voltage)
        return kernels.forward_eod(arrays, i, self.dt_pred, self.cutoff, self.horizon)[1]

    def reference_endurance(self, voltage: float | None = None, switches=(True, True),
                            health=(Grade.F1, Grade.F1), temperature=Temperature.TH) -> float:
        """Closed-loop hover time from rest until an in-use cell reaches cutoff.

        Unlike :meth:`reference_eod` this includes the rise in current as the
        bus voltage sags, so it is the endurance missions are sized against.
        """
        v = self.reference_voltage if voltage is None else voltage
        key = (v, tuple(bool(s) for s in switches), tuple(Grade(h) for h in health), Temperature(temperature))
        cache = self.__dict__.setdefault("_endurance", {})
        if key in cache:
            return cache[key]
        pack = self.build(FlightScenario(health=health, temperature=temperature, initial_voltage=(v, v)))
        arrays = kernels.PackArrays.from_pack(pack, self.options)
        arrays.set_switches(switches)
        n = 100 * self.ticks_per_epoch
        zeros12, zeros3 = np.zeros((n, 12)), np.zeros((n, 3))
        x = np.zeros(12)
        bus = np.array([pack.bus_voltage])
        t = 0.0
        while t < self.horizon:
            log, status, _, _ = kernels.run_ticks(self.ctrl, x, zeros12, zeros12, zeros3, arrays, bus,
                                                  self.cutoff, t, self.dt)
            if status == kernels.STATUS_CUTOFF:
                t = float(log[-1, 0])
                break
            if status != kernels.STATUS_OK:
                raise RuntimeError("reference hover did not complete")
            t += n * self.dt
        cache[key] = min(t, self.horizon)
        return cache[key]

    def eods(self, arrays: kernels.PackArrays, i_pred: float) -> tuple[tuple[float, float], float]:
        """Per-battery EOD under the configured mode and the all-ON pack EOD."""
        work = arrays.copy()
        work.set_switches((True,) * arrays.nb)
        shared, pack = kernels.forward_eod(work, i_pred, self.dt_pred, self.cutoff, self.horizon)
        if self.eod_mode == "shared":
            return tuple(shared), pack
        if self.eod_mode == "config":
            per, _ = kernels.forward_eod(arrays, i_pred, self.dt_pred, self.cutoff, self.horizon)
            return tuple(per), pack
        per = []
        for j in range(arrays.nb):
            work.set_switches([k == j for k in range(arrays.nb)])
            per.append(kernels.forward_eod(work, i_pred, self.dt_pred, self.cutoff, self.horizon)[0][j])
        return tuple(per), pack

    # -- flight -------------------------------------------------------------

    def plan(self, scenario: FlightScenario) -> MissionPlan | None:
        """Mission for the scenario, or None for a zero-length mission."""
        m = self.mission
        hover = m["hover_time"] if scenario.hover_time is None else scenario.hover_time
        alt = m["altitude"] if scenario.altitude is None else scenario.altitude
        if scenario.destination is not None:
            if math.hypot(*scenario.destination) == 0 and alt == 0 and hover == 0:
                return None
            return generate_mission(scenario.destination, alt, scenario.cruise_speed, hover, m["climb_rate"])
        if scenario.mission_duration <= 0:
            return None
        return mission_for_duration(scenario.mission_duration, scenario.cruise_speed, alt, hover,
                                    m["heading"], m["climb_rate"])

    def simulate(self, scenario: FlightScenario, policy: Policy | None = None,
                 keep_ticks: bool = True) -> FlightTrace:
        """Fly one mission; raises FlightDiverged if the vehicle state blows up."""
        if scenario.action_source == "policy" and policy is None:
            raise ValueError("policy-driven scenario needs a policy")
        plan = self.plan(scenario)
        duration = 0.0 if plan is None else plan.total_duration
        trace = FlightTrace(scenario, mission_duration=duration)
        if plan is None:
            trace.outcome = MISSION_SUCCESS
            return trace
        pack = self.build(scenario)
        arrays = kernels.PackArrays.from_pack(pack, self.options)
        ss = np.random.SeedSequence(scenario.seed, spawn_key=scenario.spawn_key)
        env_rng, act_rng = (np.random.default_rng(s) for s in ss.spawn(2))
        wind = WindModel(scenario.wind_speed, scenario.wind_direction, scenario.gust_category,
                         airspeed=scenario.cruise_speed)
        wind.reset(env_rng)
        steady = wind.steady()
        noise_std = self.vehicle.noise_std
        x = np.zeros(12)
        bus = np.array([pack.bus_voltage])
        n_tick = self.ticks_per_epoch
        offsets = np.arange(n_tick) * self.dt
        ib_last = np.zeros(arrays.nb)
        epoch_currents: list[float] = []
        logs = []
        failed = False
        prev = None
        action = scenario.action
        if scenario.action_source == "explore":
            action = Action(int(act_rng.integers(N_ACTIONS)))
        sw = (True, True)
        n_epochs = int(math.ceil(duration - 1e-9))
        for e in range(n_epochs + 1):
            t = float(e)
            rfd = plan.rfd(t)
            if epoch_currents:
                i_pred = float(np.mean(epoch_currents[-self.window:]))
                i_level = epoch_currents[-1]
            else:
                i_pred = i_level = self.vehicle.hover_current(bus[0])
            if failed:
                s, eod, pack_eod, vmin = FAILURE, (math.nan, math.nan), math.nan, (math.nan, math.nan)
            else:
                vmin = tuple(float(v) for v in arrays.cell_voltages(ib_last * arrays.sw).min(axis=1))
                eod, pack_eod = self.eods(arrays, i_pred)
                s = encode_state(Telemetry(i_level, eod, rfd, scenario.t_sf, vmin, sw),
                                 cutoff_v=self.cutoff)
            if prev is not None:
                trace.transitions.append((prev[0], prev[1], s))
            rec = EpochRecord(t, s, -1, eod, pack_eod, rfd, i_pred, i_level, vmin, sw)
            trace.epochs.append(rec)
            trace.end_time = t
            if s == FAILURE:
                trace.outcome = FAILURE_OUTCOME
                break
            if t >= duration - 1e-9:
                trace.outcome = MISSION_SUCCESS
                break
            st = decode_state(s)
            if any(on and c == 1 for on, c in zip(sw, st.cell)) and pack_eod < rfd:
                trace.outcome = ENERGY_SHORTFALL
                break
            if scenario.action_source == "policy":
                action = policy.act(s)
            elif scenario.action_source == "explore" and e > 0 and act_rng.random() < self.p_switch:
                action = Action(int(act_rng.integers(N_ACTIONS)))
            rec.action = int(action)
            sw = action.switches
            arrays.set_switches(sw)
            ref = plan.reference_states(t + offsets)
            noise = env_rng.standard_normal((n_tick, 12)) * noise_std
            gust = steady + dryden_gust(wind, self.dt, env_rng, n_tick)
            log, status, n_sat, n_clamp = kernels.run_ticks(self.ctrl, x, ref, noise, gust, arrays, bus,
                                                            self.cutoff, t, self.dt)
            trace.n_saturated += n_sat
            trace.n_soc_clamps += n_clamp
            if status == kernels.STATUS_NONFINITE:
                raise FlightDiverged(f"vehicle state diverged at t={t + len(log) * self.dt:.3f} s")
            if status == kernels.STATUS_NO_BRANCH:
                raise RuntimeError("current demanded with every battery switched off")
            if keep_ticks:
                logs.append(log)
            epoch_currents.append(float(log[:, 2].mean()))
            ib_last = log[-1, 3:3 + arrays.nb].copy()
            if status == kernels.STATUS_CUTOFF:
                failed = True
            prev = (s, int(action))
        if keep_ticks:
            trace.ticks = np.concatenate(logs) if logs else np.zeros((0, len(TICK_COLUMNS)))
        return trace


# -- transition estimation ---------------------------------------------------

def count_transitions(traces: Sequence[FlightTrace], action: Action | None = None) -> np.ndarray:
    counts = np.zeros((N_STATES, N_ACTIONS, N_STATES), dtype=np.int64)
    for tr in traces:
        for s, a, s2 in tr.transitions:
            if action is None or a == int(action):
                counts[s, a, s2] += 1
    return counts


def estimate_transitions(traces: Sequence[FlightTrace], action: Action | None = None) -> TransitionTensor:
    """Empirical transition tensor from flight traces (FAILURE forced absorbing)."""
    if not traces:
        raise ValueError("no traces to estimate from")
    return TransitionTensor.from_counts(count_transitions(traces, action))


@dataclass
class EstimationRun:
    condition: ConditionKey
    traces: list[FlightTrace]
    diverged: list[int]

    @property
    def tensor(self) -> TransitionTensor:
        return estimate_transitions(self.traces) if self.traces else TransitionTensor.from_counts(
            np.zeros((N_STATES, N_ACTIONS, N_STATES), dtype=np.int64))

    def outcome_counts(self) -> dict[str, int]:
        out = {k: 0 for k in OUTCOMES}
        for tr in self.traces:
            out[tr.outcome] += 1
        return out


_WORKER: Simulator | None = None


def _worker_init(config: dict) -> None:
    global _WORKER
    _WORKER = Simulator(config)


def _worker_run(scenario: FlightScenario):
    try:
        return _WORKER.simulate(scenario, keep_ticks=False)
    except FlightDiverged as exc:
        return str(exc)


def condition_scenarios(sim: Simulator, cond: ConditionKey, n_flights: int, seed: int,
                        action_source: str = "explore") -> list[FlightScenario]:
    """Sampled scenarios; flight k of condition c always uses spawn key (c, k)."""
    c_idx = [c.key for c in all_conditions()].index(cond.key)
    ref = sim.reference_endurance()
    out = []
    for k in range(n_flights):
        key = (c_idx, k)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key + (0,)))
        out.append(sample_scenario(sim.ranges, rng, (cond.health1, cond.health2), cond.temperature, ref,
                                   action_source, seed=seed, spawn_key=key + (1,)))
    return out


def run_condition(sim: Simulator, cond: ConditionKey, n_flights: int, seed: int,
                  action_source: str = "explore", workers: int = 1) -> EstimationRun:
    scenarios = condition_scenarios(sim, cond, n_flights, seed, action_source)
    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(sim.config,)) as ex:
            results = list(ex.map(_worker_run, scenarios, chunksize=max(1, n_flights // (4 * workers))))
    else:
        results = []
        for sc in scenarios:
            try:
                results.append(sim.simulate(sc, keep_ticks=False))
            except FlightDiverged as exc:
                results.append(str(exc))
    traces, diverged = [], []
    for k, r in enumerate(results):
        if isinstance(r, str):
            logger.warning("flight %d of %s diverged: %s", k, cond.key, r)
            diverged.append(k)
        else:
            traces.append(r)
    return EstimationRun(cond, traces, diverged)


# -- case studies -------------------------------------------------------------

CASE_SCENARIOS = {
    1: [(a, b) for a in Grade for b in Grade],
    2: [(a, b) for a in Grade for b in Grade],
    3: [(Grade.F1, Grade.F1), (Grade.F1, Grade.F3), (Grade.F3, Grade.F3)],
    4: [(Grade.F2, Grade.F1)],
}


@dataclass
class CaseStudyResult:
    case_id: int
    mission_duration: float
    rows: list[dict]
    traces: dict[str, FlightTrace]


def case_scenarios(case_id: int, sim: Simulator, overrides: dict | None = None) -> tuple[float, list[FlightScenario]]:
    if case_id not in CASE_SCENARIOS:
        raise ValueError(f"unknown case study {case_id} (expected 1-4)")
    cs = dict(sim.config["case_studies"])
    cs.update(overrides or {})
    v0 = cs["initial_voltage"]
    if case_id in (1, 2):
        if cs["short_mission"] == "table":
            duration = sim.reference_endurance(v0, switches=(True, False))
        else:
            duration = cs["short_fraction"] * sim.reference_endurance(v0)
    else:
        frac = cs["long_fraction"] if case_id == 3 else cs["policy_fraction"]
        duration = frac * sim.reference_endurance(v0)
    duration = float(round(duration))
    source = "fixed" if case_id in (1, 3) else "policy"
    out = []
    for k, (h1, h2) in enumerate(cs.get("scenarios") or CASE_SCENARIOS[case_id]):
        r0 = (None, None)
        if case_id == 3 and (Grade(h1), Grade(h2)) == (Grade.F1, Grade.F1) and cs.get("matched_r0"):
            r0 = (None, (cs["matched_r0"],) * len(sim.cells))
        out.append(FlightScenario(
            health=(h1, h2), temperature=cs["temperature"], action_source=source, action=Action.UseBoth,
            t_sf=cs["t_sf"], initial_voltage=(v0, v0), cruise_speed=cs["cruise_speed"],
            wind_speed=cs["wind_speed"], wind_direction=cs["wind_direction"],
            gust_category=cs["gust_category"], mission_duration=duration, seed=cs["seed"],
            spawn_key=(case_id, k), r0_override=r0,
        ))
    return duration, out


def summarize(trace: FlightTrace) -> dict:
    sc = trace.scenario
    acts = trace.actions()
    switches = [(t, a.name) for (t, a), (_, b) in zip(acts[1:], acts[:-1]) if a != b]
    margins = [min(e.eod) - e.rfd for e in trace.epochs if not math.isnan(e.eod[0])]
    row = {
        "scenario": f"{sc.health[0].value}{sc.health[1].value}",
        "health1": sc.health[0].value,
        "health2": sc.health[1].value,
        "temperature": sc.temperature.value,
        "action_source": sc.action_source,
        "mission_duration": trace.mission_duration,
        "outcome": trace.outcome,
        "end_time": trace.end_time,
        "epochs": len(trace.epochs),
        "min_eod_margin": min(margins) if margins else math.nan,
        "first_action": acts[0][1].name if acts else "",
        "n_switches": len(switches),
        "first_switch_time": switches[0][0] if switches else math.nan,
        "saturated_ticks": trace.n_saturated,
    }
    if trace.ticks is not None and len(trace.ticks):
        row["mean_i_branch1"] = float(trace.tick("i_branch1").mean())
        row["mean_i_branch2"] = float(trace.tick("i_branch2").mean())
    return row


def run_case_study(case_id: int, sim: Simulator | None = None, store: PolicyStore | None = None,
                   overrides: dict | None = None) -> CaseStudyResult:
    sim = sim or Simulator()
    duration, scenarios = case_scenarios(case_id, sim, overrides)
    if case_id in (2, 4) and store is None:
        raise ValueError(f"case study {case_id} needs a policy store")
    rows, traces = [], {}
    for sc in scenarios:
        policy = store.select(sc.condition) if sc.action_source == "policy" else None
        tr = sim.simulate(sc, policy)
        row = summarize(tr)
        rows.append(row)
        traces[row["scenario"]] = tr
    return CaseStudyResult(case_id, duration, rows, traces)
