import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from battmdp.vehicle import (
    Hexacopter, MotorCurrentFit, VehicleParams, VehicleState, WindModel, allocate_motors, dlqr_gains,
    dryden_gust, generate_mission, mission_for_duration, mixing_matrix, motor_current, riccati_residual,
    spectral_radius, step_dynamics, total_battery_current, wrap_angle,
)

PARAMS = VehicleParams()


@pytest.fixture(scope="module")
def hexa():
    return Hexacopter.from_config()


# -- DLQR ---------------------------------------------------------------------

def test_scalar_dare_closed_form():
    K, P = dlqr_gains(1.0, 1.0, 1.0, 1.0)
    golden = (1 + math.sqrt(5)) / 2
    assert P[0, 0] == pytest.approx(golden, abs=1e-10)
    assert K[0, 0] == pytest.approx(golden - 1, abs=1e-10)


def test_zero_state_penalty_on_stable_plant_gives_zero_gain():
    K, _ = dlqr_gains(0.5, 1.0, 1e-12, 1.0)
    assert abs(K[0, 0]) < 1e-9


def test_vehicle_gain_residual_and_stability(hexa):
    assert riccati_residual(hexa.Ad, hexa.Bd, np.diag([4.0, 4, 8, 1, 1, 2, 2, 2, 1, .1, .1, .1]),
                            np.diag([0.01, 1, 1, 2]), hexa.P) < 1e-6
    assert hexa.closed_loop_radius() < 1.0


@given(st.floats(-2, 2), st.floats(0.1, 3), st.floats(0.01, 10), st.floats(0.01, 10))
def test_random_scalar_dare_residual(a, b, q, r):
    K, P = dlqr_gains(a, b, q, r)
    assert riccati_residual(np.atleast_2d(a), np.atleast_2d(b), np.atleast_2d(q), np.atleast_2d(r), P) < 1e-8 * max(
        1.0, P[0, 0])
    assert spectral_radius(np.atleast_2d(a - b * K[0, 0])) < 1.0


# -- allocation ---------------------------------------------------------------

def test_hover_allocation_equal_speeds():
    T = PARAMS.mass * PARAMS.g
    w2, sat = allocate_motors(T, (0, 0, 0), PARAMS)
    assert not sat
    np.testing.assert_allclose(w2, PARAMS.hover_omega_sq, rtol=1e-12)


def test_zero_command_zero_speeds():
    w2, sat = allocate_motors(0.0, (0, 0, 0), PARAMS)
    np.testing.assert_allclose(w2, 0.0, atol=1e-9)


def test_negative_thrust_rejected():
    with pytest.raises(ValueError):
        allocate_motors(-1.0, (0, 0, 0), PARAMS)


def test_saturation_is_reported():
    _, sat = allocate_motors(0.0, (5.0, 0, 0), PARAMS)
    assert sat


@given(st.floats(10, 60), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.05, 0.05))
def test_allocation_round_trip(T, tx, ty, tz):
    A = mixing_matrix(PARAMS)
    w2, sat = allocate_motors(T, (tx, ty, tz), PARAMS)
    if not sat:
        cmd = np.array([T, tx, ty, tz])
        assert np.linalg.norm(A @ w2 - cmd) <= 1e-9 * np.linalg.norm(cmd)


# -- motor current ------------------------------------------------------------

def test_motor_current_values():
    assert motor_current(0.0, MotorCurrentFit(a0=0.0)) == 0.0
    assert motor_current(1000.0, MotorCurrentFit()) == pytest.approx(0.4)


@given(st.floats(0, 1100), st.floats(0, 1100))
def test_motor_current_monotone(w1, w2):
    fit = MotorCurrentFit(1.53e-5, 0.0, 0.3)
    lo, hi = sorted((w1, w2))
    assert motor_current(lo, fit) <= motor_current(hi, fit)


def test_motor_fit_check_and_rpm_conversion():
    with pytest.raises(ValueError):
        MotorCurrentFit(-1e-6, 0, 0).check(1000.0)
    fit = MotorCurrentFit.from_rpm(1e-6, 0.0, 0.1)
    rpm = 3000.0
    assert motor_current(rpm * 2 * math.pi / 60, fit) == pytest.approx(1e-6 * rpm**2 + 0.1)


def test_total_current_scaling():
    fit = MotorCurrentFit(0.0, 0.0, 5.0)
    assert total_battery_current([0.0] * 6, fit, 11.1, 11.1) == pytest.approx(30.0)
    assert total_battery_current([0.0] * 6, fit, 5.55, 11.1) == pytest.approx(60.0)
    with pytest.raises(ValueError):
        total_battery_current([0.0] * 6, fit, 0.0, 11.1)


@given(st.lists(st.floats(0, 1100), min_size=6, max_size=6), st.floats(8, 13))
def test_battery_current_nonnegative(omegas, bus):
    assert total_battery_current(omegas, MotorCurrentFit(1.53e-5, 0, 0.3), bus, 11.1) >= 0


# -- dynamics -----------------------------------------------------------------

def test_hover_is_fixed_point(hexa):
    s = VehicleState(position=(1.0, 2.0, 10.0))
    w = [math.sqrt(PARAMS.hover_omega_sq)] * 6
    s1 = step_dynamics(s, w, np.zeros(3), hexa)
    np.testing.assert_allclose(s1.to_vector(), s.to_vector(), atol=1e-12)


def test_zero_thrust_freefall(hexa):
    s1 = step_dynamics(VehicleState(), [0.0] * 6, np.zeros(3), hexa)
    assert s1.velocity[2] / hexa.dt == pytest.approx(-PARAMS.g, rel=1e-9)


def test_steady_wind_drifts_downwind(hexa):
    w = [math.sqrt(PARAMS.hover_omega_sq)] * 6
    s = VehicleState()
    xs = []
    for _ in range(400):
        s = step_dynamics(s, w, np.array([2.0, 0.0, 0.0]), hexa)
        xs.append(s.position[0])
    assert np.all(np.diff(xs) > 0)
    # first-order drag: v(t) = 2 (1 - exp(-kd t))
    t = 400 * hexa.dt
    kd = PARAMS.drag_coeff
    assert s.velocity[0] == pytest.approx(2.0 * (1 - math.exp(-kd * t)), rel=1e-9)


def test_wrap_angle_and_state_validation():
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        VehicleState(position=(0.0, float("nan"), 0.0))
    assert VehicleState.from_vector(np.arange(12.0) * 0.1).to_vector()[5] == pytest.approx(0.5)


# -- wind ---------------------------------------------------------------------

def test_zero_sigma_gives_zero_gust():
    m = WindModel(sigma=(0.0, 0.0, 0.0), length=(200.0, 200.0, 50.0))
    out = dryden_gust(m, 0.005, np.random.default_rng(0), 1000)
    assert not out.any()


def test_gust_stationary_variance():
    m = WindModel(sigma=(1.5, 1.5, 1.0), length=(200.0, 200.0, 50.0), airspeed=5.0)
    rng = np.random.default_rng(7)
    m.reset(rng)
    out = dryden_gust(m, 0.1, rng, 100_000)
    np.testing.assert_allclose(out.std(axis=0), m.sigma, rtol=0.1)


def test_gust_determinism_and_continuation():
    a = WindModel(gust_category="MediumModerate")
    b = WindModel(gust_category="MediumModerate")
    ra, rb = np.random.default_rng(3), np.random.default_rng(3)
    one = dryden_gust(a, 0.005, ra, 200)
    two = np.vstack([dryden_gust(b, 0.005, rb, 120), dryden_gust(b, 0.005, rb, 80)])
    np.testing.assert_allclose(one, two, rtol=0, atol=1e-13)
    c = WindModel(gust_category="MediumModerate")
    np.testing.assert_array_equal(one, dryden_gust(c, 0.005, np.random.default_rng(3), 200))


def test_wind_model_validation():
    with pytest.raises(ValueError):
        WindModel(direction=4.0)
    with pytest.raises(ValueError):
        WindModel(gust_category="Hurricane")
    np.testing.assert_allclose(WindModel(2.0, math.pi / 2).steady(), [0.0, 2.0, 0.0], atol=1e-15)


# -- missions -----------------------------------------------------------------

def test_hover_only_mission():
    plan = generate_mission((0.0, 0.0), altitude=0.0, hover_time=10.0)
    assert plan.rfd(0.0) == 10.0
    pos, vel = plan.reference(np.linspace(0, 10, 50))
    assert not pos.any() and not vel.any()


def test_transit_leg_duration():
    plan = generate_mission((100.0, 0.0), altitude=20.0, cruise_speed=5.0, hover_time=0.0)
    transit = [s for s in plan.segments if s.name == "transit"][0]
    assert transit.duration == pytest.approx(20.0)


def test_package_drop_plateau():
    plan = generate_mission((60.0, 80.0), altitude=20.0, cruise_speed=5.0, hover_time=15.0)
    hover = [s for s in plan.segments if s.name == "hover"][0]
    t = np.linspace(hover.t0, hover.t1 - 1e-6, 30)
    pos, vel = plan.reference(t)
    np.testing.assert_allclose(pos, [[60.0, 80.0, 20.0]] * 30)
    assert not vel.any()


def test_mission_limits():
    with pytest.raises(ValueError):
        generate_mission((10.0, 0.0), cruise_speed=12.0)
    with pytest.raises(ValueError):
        generate_mission((1000.0, 0.0), max_duration=100.0)
    with pytest.raises(ValueError):
        mission_for_duration(10.0, altitude=20.0)


@given(st.floats(60, 900), st.floats(1, 9))
def test_mission_for_duration_ends_on_time(duration, v):
    plan = mission_for_duration(duration, cruise_speed=v)
    assert plan.total_duration == duration
    assert plan.segments[-1].t1 == pytest.approx(duration, abs=1e-6)
    pos, _ = plan.reference([duration + 1.0])
    np.testing.assert_allclose(pos[0], 0.0, atol=1e-9)


@given(st.floats(5, 200), st.floats(2, 200))
def test_segment_profile_covers_distance_without_jumps(d, T):
    from battmdp.vehicle import Segment

    seg = Segment("leg", 0.0, T, (0.0, 0.0, 0.0), (d, 0.0, 0.0))
    tau = np.linspace(0, T, 2001)
    s, v = seg.profile(tau)
    assert s[-1] == pytest.approx(d, rel=1e-9)
    assert np.all(np.diff(s) >= -1e-12)
    assert np.max(np.abs(np.diff(v))) <= max(seg.accel, 4 * d / T**2) * (T / 2000) * 1.0001
