"""Hexacopter hover-linearized dynamics, DLQR tracking, motor allocation,
motor current model, Dryden gusts and package-delivery missions.

World frame is ENU (z up).  The 12-element state vector is
[x, y, z, vx, vy, vz, roll, pitch, yaw, p, q, r].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.signal

G = 9.81
CLIMB_RATE = 2.0
CRUISE_SPEED_RANGE = (1.0, 9.0)
MIN_TILT_COS = 0.5


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 2.5
    inertia_diag: tuple[float, float, float] = (0.06, 0.06, 0.10)
    arm_length: float = 0.3
    C_T: float = 1.49e-5
    C_Q: float = 2.4e-7
    motor_count: int = 6
    omega_max: float = 1100.0
    drag_coeff: float = 0.25  # linear translational drag, 1/s
    g: float = G

    def __post_init__(self):
        object.__setattr__(self, "inertia_diag", tuple(float(v) for v in self.inertia_diag))
        if self.motor_count != 6:
            raise ValueError("only hexacopters (motor_count = 6) are modelled")
        vals = (self.mass, self.arm_length, self.C_T, self.C_Q, self.omega_max, *self.inertia_diag)
        if any(not v > 0 for v in vals):
            raise ValueError("vehicle parameters must be positive")
        if self.drag_coeff < 0:
            raise ValueError("drag coefficient must be non-negative")

    @property
    def hover_omega_sq(self) -> float:
        return self.mass * self.g / (self.motor_count * self.C_T)


@dataclass(frozen=True)
class VehicleState:
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    attitude: tuple[float, float, float] = (0.0, 0.0, 0.0)
    angular_rate: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("position", "velocity", "attitude", "angular_rate"):
            v = tuple(float(a) for a in getattr(self, name))
            if len(v) != 3 or not all(math.isfinite(a) for a in v):
                raise ValueError(f"{name} must be three finite numbers")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "attitude", tuple(wrap_angle(a) for a in self.attitude))

    def to_vector(self) -> np.ndarray:
        return np.array(self.position + self.velocity + self.attitude + self.angular_rate)

    @classmethod
    def from_vector(cls, x) -> "VehicleState":
        x = np.asarray(x, dtype=float)
        return cls(tuple(x[0:3]), tuple(x[3:6]), tuple(x[6:9]), tuple(x[9:12]))


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = a - 2.0 * math.pi * math.floor((a + math.pi) / (2.0 * math.pi))
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class MotorCurrentFit:
    """Quadratic motor current map, amps as a function of rad/s."""

    a2: float = 2.0e-7
    a1: float = 0.0
    a0: float = 0.2

    def check(self, omega_max: float) -> None:
        """Raise unless the fit is non-negative and non-decreasing on [0, omega_max]."""
        if self.a0 < 0 or self.a1 < 0 or 2 * self.a2 * omega_max + self.a1 < 0:
            raise ValueError("motor current fit must be non-negative and non-decreasing")

    @classmethod
    def from_rpm(cls, b2: float, b1: float, b0: float) -> "MotorCurrentFit":
        """Convert a fit in RPM (I = b2*rpm^2 + b1*rpm + b0) to rad/s."""
        k = 60.0 / (2.0 * math.pi)
        return cls(b2 * k * k, b1 * k, b0)


def motor_current(omega, fit: MotorCurrentFit):
    """Current drawn by one motor at angular speed ``omega`` (floored at zero)."""
    omega = np.asarray(omega, dtype=float)
    i = fit.a2 * omega**2 + fit.a1 * omega + fit.a0
    out = np.maximum(i, 0.0)
    return float(out) if out.ndim == 0 else out


def total_battery_current(omegas, fit: MotorCurrentFit, bus_voltage: float, nominal_voltage: float) -> float:
    """Pack current for the given motor speeds under a constant-power motor assumption."""
    if bus_voltage <= 0:
        raise ValueError("bus voltage must be positive")
    return float(np.sum(motor_current(omegas, fit))) * nominal_voltage / bus_voltage


def mixing_matrix(params: VehicleParams) -> np.ndarray:
    """4x6 map from squared motor speeds to [T, tau_x, tau_y, tau_z]."""
    ct, cq, L = params.C_T, params.C_Q, params.arm_length
    h = math.sqrt(3.0) / 2.0
    return np.array([
        [ct] * 6,
        [L * ct * v for v in (0.5, -0.5, -1.0, -0.5, 0.5, 1.0)],
        [h * L * ct * v for v in (-1.0, -1.0, 0.0, 1.0, 1.0, 0.0)],
        [cq * v for v in (1.0, -1.0, 1.0, -1.0, 1.0, -1.0)],
    ])


def allocate_motors(T: float, tau: Sequence[float], params: VehicleParams,
                    pinv: np.ndarray | None = None) -> tuple[np.ndarray, bool]:
    """Squared motor speeds for thrust ``T`` and body torques ``tau``.

    Returns (omega_sq, saturated).  Entries below zero or above omega_max^2
    are clamped and reported through ``saturated``.
    """
    if T < 0:
        raise ValueError("thrust must be non-negative")
    if pinv is None:
        pinv = np.linalg.pinv(mixing_matrix(params))
    w2 = pinv @ np.array([T, *tau], dtype=float)
    w2max = params.omega_max**2
    saturated = bool(np.any(w2 < 0.0) or np.any(w2 > w2max))
    return np.clip(w2, 0.0, w2max), saturated


def linear_hover_model(params: VehicleParams):
    """Continuous-time (A, B, E) about hover.

    Inputs are [thrust deviation, tau_x, tau_y, tau_z]; E maps wind velocity
    into the translational drag term.
    """
    A = np.zeros((12, 12))
    B = np.zeros((12, 4))
    E = np.zeros((12, 3))
    kd, g = params.drag_coeff, params.g
    A[0:3, 3:6] = np.eye(3)
    A[3, 3] = A[4, 4] = -kd
    A[3, 7] = g  # pitch tilts thrust toward +x
    A[4, 6] = -g  # roll tilts thrust toward -y
    A[6:9, 9:12] = np.eye(3)
    B[5, 0] = 1.0 / params.mass
    B[9:12, 1:4] = np.diag([1.0 / j for j in params.inertia_diag])
    E[3, 0] = E[4, 1] = kd
    return A, B, E


def discretize(A, B, E, dt: float):
    """Zero-order-hold discretization of x' = A x + B u + E w."""
    n, m, k = A.shape[0], B.shape[1], E.shape[1]
    M = np.zeros((n + m + k, n + m + k))
    M[:n, :n] = A
    M[:n, n:n + m] = B
    M[:n, n + m:] = E
    Md = scipy.linalg.expm(M * dt)
    return Md[:n, :n], Md[:n, n:n + m], Md[:n, n + m:]


def dlqr_gains(A, B, Q, R, residual_tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray]:
    """Discrete LQR gain K (u = -K x) and Riccati solution P."""
    A, B = np.atleast_2d(A).astype(float), np.atleast_2d(B).astype(float)
    Q, R = np.atleast_2d(Q).astype(float), np.atleast_2d(R).astype(float)
    try:
        P = scipy.linalg.solve_discrete_are(A, B, Q, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise RuntimeError(f"discrete Riccati equation did not converge: {exc}") from exc
    S = R + B.T @ P @ B
    K = np.linalg.solve(S, B.T @ P @ A)
    if riccati_residual(A, B, Q, R, P) > residual_tol * max(1.0, np.abs(P).max()):
        raise RuntimeError("discrete Riccati solution failed the residual check")
    return K, P


def riccati_residual(A, B, Q, R, P) -> float:
    S = R + B.T @ P @ B
    res = A.T @ P @ A - P - A.T @ P @ B @ np.linalg.solve(S, B.T @ P @ A) + Q
    return float(np.abs(res).max())


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


class Hexacopter:
    """Discretized vehicle model with its DLQR controller and allocation matrices."""

    def __init__(self, params: VehicleParams | None = None, fit: MotorCurrentFit | None = None,
                 dt: float = 0.005, state_weights=None, input_weights=None,
                 nominal_voltage: float = 11.1, hotel_current: float = 0.0, noise_std=None):
        self.params = params or VehicleParams()
        self.fit = fit or MotorCurrentFit()
        self.fit.check(self.params.omega_max)
        self.dt = dt
        self.nominal_voltage = nominal_voltage
        self.hotel_current = hotel_current
        self.noise_std = np.zeros(12) if noise_std is None else np.asarray(noise_std, dtype=float)
        if state_weights is None:
            state_weights = [4.0, 4.0, 8.0, 1.0, 1.0, 2.0, 2.0, 2.0, 1.0, 0.1, 0.1, 0.1]
        if input_weights is None:
            input_weights = [0.01, 1.0, 1.0, 2.0]
        A, B, E = linear_hover_model(self.params)
        self.Ad, self.Bd, self.Ed = discretize(A, B, E, dt)
        self.K, self.P = dlqr_gains(self.Ad, self.Bd, np.diag(state_weights), np.diag(input_weights))
        self.mix = mixing_matrix(self.params)
        self.pinv = np.linalg.pinv(self.mix)

    @classmethod
    def from_config(cls, doc: dict | None = None) -> "Hexacopter":
        if doc is None:
            doc = json.loads(resources.files("battmdp").joinpath("data/hexacopter.json").read_text())
        ctrl = doc.get("control", {})
        return cls(
            params=VehicleParams(**doc.get("vehicle", {})),
            fit=MotorCurrentFit(**doc.get("motor_current", {})),
            dt=ctrl.get("dt", 0.005),
            state_weights=ctrl.get("state_weights"),
            input_weights=ctrl.get("input_weights"),
            nominal_voltage=ctrl.get("nominal_voltage", 11.1),
            hotel_current=ctrl.get("hotel_current", 0.0),
            noise_std=ctrl.get("measurement_noise_std"),
        )

    def closed_loop_radius(self) -> float:
        return spectral_radius(self.Ad - self.Bd @ self.K)

    def hover_current(self, bus_voltage: float | None = None) -> float:
        omega = math.sqrt(self.params.hover_omega_sq)
        bus = bus_voltage or self.nominal_voltage
        return total_battery_current([omega] * 6, self.fit, bus, self.nominal_voltage) + self.hotel_current

    def kernel_vector(self) -> np.ndarray:
        p, f = self.params, self.fit
        return np.array([p.mass, p.g, p.omega_max, f.a2, f.a1, f.a0, self.nominal_voltage,
                         self.hotel_current, MIN_TILT_COS])

    def kernel_matrices(self):
        mats = (self.Ad, self.Bd, self.Ed, self.K, self.mix, self.pinv, self.kernel_vector())
        return tuple(np.ascontiguousarray(m, dtype=float) for m in mats)


def step_dynamics(state: VehicleState, omegas, wind, model: Hexacopter) -> VehicleState:
    """One discrete step of the hover-linearized model driven by motor speeds.

    Thrust acts along body z; its vertical component minus weight drives
    vz, attitude couples horizontally through the linearization.
    """
    x = state.to_vector()
    w2 = np.asarray(omegas, dtype=float) ** 2
    T, tx, ty, tz = model.mix @ w2
    p = model.params
    u = np.array([T * math.cos(x[6]) * math.cos(x[7]) - p.mass * p.g, tx, ty, tz])
    xn = model.Ad @ x + model.Bd @ u + model.Ed @ np.asarray(wind, dtype=float)
    if not np.all(np.isfinite(xn)):
        raise FloatingPointError("vehicle state became non-finite")
    return VehicleState.from_vector(xn)


# -- wind -------------------------------------------------------------------

def load_dryden_table(path: str | Path | None = None) -> dict:
    if path is None:
        text = resources.files("battmdp").joinpath("data/dryden.json").read_text()
    else:
        text = Path(path).read_text()
    return json.loads(text)["categories"]


DRYDEN_CATEGORIES = load_dryden_table()


@dataclass
class WindModel:
    """Steady wind plus Dryden gusts; ``direction`` is the heading the wind blows toward."""

    steady_speed: float = 0.0
    direction: float = 0.0
    gust_category: str = "LowLight"
    airspeed: float = 5.0
    sigma: tuple[float, float, float] | None = None
    length: tuple[float, float, float] | None = None
    state: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.steady_speed < 0:
            raise ValueError("steady wind speed must be non-negative")
        if not 0.0 <= self.direction <= math.pi:
            raise ValueError("wind direction must lie in [0, pi]")
        if self.sigma is None or self.length is None:
            if self.gust_category not in DRYDEN_CATEGORIES:
                raise ValueError(f"unknown gust category {self.gust_category!r}")
            entry = DRYDEN_CATEGORIES[self.gust_category]
            self.sigma = tuple(entry["sigma"]) if self.sigma is None else self.sigma
            self.length = tuple(entry["length"]) if self.length is None else self.length
        self.state = np.asarray(self.state, dtype=float)

    def steady(self) -> np.ndarray:
        return self.steady_speed * np.array([math.cos(self.direction), math.sin(self.direction), 0.0])

    def coefficients(self, dt: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-axis pole ``a`` and input gain of the first-order shaping filter."""
        V = max(self.airspeed, 1.0)
        a = np.exp(-V * dt / np.asarray(self.length, dtype=float))
        b = np.asarray(self.sigma, dtype=float) * np.sqrt(1.0 - a * a)
        return a, b

    def reset(self, rng: np.random.Generator) -> None:
        """Draw the filter state from its stationary distribution."""
        self.state = np.asarray(self.sigma, dtype=float) * rng.standard_normal(3)


def dryden_gust(model: WindModel, dt: float, rng: np.random.Generator, n: int = 1) -> np.ndarray:
    """Next ``n`` gust samples (n x 3, m/s); advances ``model.state``.

    Each axis is w[k+1] = a w[k] + sigma sqrt(1 - a^2) n[k], which has
    stationary standard deviation sigma.
    """
    a, b = model.coefficients(dt)
    noise = rng.standard_normal((n, 3))
    out = np.empty((n, 3))
    for ax in range(3):
        if b[ax] == 0.0:
            out[:, ax] = model.state[ax] * a[ax] ** np.arange(1, n + 1)
            continue
        y, _ = scipy.signal.lfilter([b[ax]], [1.0, -a[ax]], noise[:, ax], zi=[a[ax] * model.state[ax]])
        out[:, ax] = y
    model.state = out[-1].copy()
    return out


# -- missions ---------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    """Straight leg flown with a symmetric accelerate-cruise-decelerate profile.

    The leg takes exactly ``t1 - t0``; the peak speed is chosen so that with
    acceleration ``accel`` the distance is covered in that time.
    """

    name: str
    t0: float
    t1: float
    p0: tuple[float, float, float]
    p1: tuple[float, float, float]
    accel: float = 1.5

    @property
    def duration(self) -> float:
        return self.t1 - self.t0

    def profile(self, tau: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Distance along the leg and speed at times ``tau`` since the leg start."""
        d = math.dist(self.p0, self.p1)
        T = self.duration
        if d == 0.0 or T <= 0.0:
            return np.zeros_like(tau), np.zeros_like(tau)
        a = max(self.accel, 4.0 * d / T**2)
        v = 0.5 * a * (T - math.sqrt(max(T * T - 4.0 * d / a, 0.0)))
        ta = v / a
        tau = np.clip(tau, 0.0, T)
        up, down = tau < ta, tau > T - ta
        s = v * (tau - 0.5 * ta)
        s = np.where(up, 0.5 * a * tau**2, s)
        s = np.where(down, d - 0.5 * a * (T - tau) ** 2, s)
        speed = np.where(up, a * tau, np.where(down, a * (T - tau), v))
        return s, speed


@dataclass(frozen=True)
class MissionPlan:
    """Climb, transit, hover (package drop), return and descent."""

    waypoints: tuple[tuple[tuple[float, float, float], float], ...]
    cruise_speed: float
    total_duration: float
    segments: tuple[Segment, ...]

    def rfd(self, t: float) -> float:
        """Remaining flight duration at time ``t``."""
        return max(self.total_duration - t, 0.0)

    def reference(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Position and velocity references at times ``t`` (array, n x 3 each)."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        pos = np.zeros((t.size, 3))
        vel = np.zeros((t.size, 3))
        last = self.segments[-1]
        pos[:] = last.p1
        for seg in self.segments:
            m = (t >= seg.t0) & (t < seg.t1)
            if not m.any():
                continue
            p0, p1 = np.array(seg.p0), np.array(seg.p1)
            d = np.linalg.norm(p1 - p0)
            u = (p1 - p0) / d if d > 0 else np.zeros(3)
            dist, speed = seg.profile(t[m] - seg.t0)
            pos[m] = p0 + np.outer(dist, u)
            vel[m] = np.outer(speed, u)
        return pos, vel

    def reference_states(self, t) -> np.ndarray:
        """12-state references (attitude and rate references are zero)."""
        pos, vel = self.reference(t)
        ref = np.zeros((pos.shape[0], 12))
        ref[:, 0:3] = pos
        ref[:, 3:6] = vel
        return ref


def generate_mission(destination: Sequence[float] = (0.0, 0.0), altitude: float = 20.0,
                     cruise_speed: float = 5.0, hover_time: float = 30.0,
                     climb_rate: float = CLIMB_RATE, max_duration: float | None = None) -> MissionPlan:
    """Package-delivery mission from the origin to ``destination`` (x, y) and back."""
    lo, hi = CRUISE_SPEED_RANGE
    if not lo <= cruise_speed <= hi:
        raise ValueError(f"cruise speed must lie in [{lo}, {hi}] m/s")
    if altitude < 0 or hover_time < 0 or climb_rate <= 0:
        raise ValueError("altitude and hover time must be non-negative, climb rate positive")
    home = (0.0, 0.0, 0.0)
    top = (0.0, 0.0, float(altitude))
    dest = (float(destination[0]), float(destination[1]), float(altitude))
    dist = math.hypot(dest[0], dest[1])
    legs = [
        ("climb", home, top, altitude / climb_rate),
        ("transit", top, dest, dist / cruise_speed),
        ("hover", dest, dest, hover_time),
        ("return", dest, top, dist / cruise_speed),
        ("descend", top, home, altitude / climb_rate),
    ]
    segments = []
    t = 0.0
    for name, p0, p1, dur in legs:
        if dur > 0:
            segments.append(Segment(name, t, t + dur, p0, p1))
            t += dur
    if not segments:
        raise ValueError("mission has zero duration")
    if max_duration is not None and t > max_duration + 1e-9:
        raise ValueError(f"waypoint unreachable: mission needs {t:.1f} s > {max_duration:.1f} s")
    waypoints = ((home, 0.0), (dest, float(hover_time)), (home, 0.0))
    return MissionPlan(waypoints, float(cruise_speed), t, tuple(segments))


def mission_for_duration(duration: float, cruise_speed: float = 5.0, altitude: float = 20.0,
                         hover_time: float = 30.0, heading: float = 0.0,
                         climb_rate: float = CLIMB_RATE) -> MissionPlan:
    """Mission whose transit distance is chosen so the total time equals ``duration``."""
    fixed = 2.0 * altitude / climb_rate
    if duration < fixed:
        raise ValueError(f"duration {duration:.1f} s is shorter than climb plus descent")
    hover = min(hover_time, duration - fixed)
    dist = 0.5 * (duration - fixed - hover) * cruise_speed
    dest = (dist * math.cos(heading), dist * math.sin(heading))
    plan = generate_mission(dest, altitude, cruise_speed, hover, climb_rate)
    # rounding in d/v must not move the end time
    return MissionPlan(plan.waypoints, plan.cruise_speed, float(duration), plan.segments)
