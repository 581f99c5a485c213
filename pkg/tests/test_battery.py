import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from battmdp.battery import (
    CellParams, CellState, Grade, HealthCondition, OcvCurve, PackOptions, Temperature, apply_degradation,
    branch_eods, build_pack, cell_step, cell_voltage, degrade_battery, estimate_eod, ocv, ocv_from_cycles,
    pack_step,
)

LINEAR = OcvCurve((0.0, 1.0), (3.3, 4.2))


def make_cell(R0=0.006, r1=0.0099, c1=51500.0, Q=10897.56, gamma=300.0, M=0.0178, M0=0.0051,
              eta_c=0.973, eta_d=1.0, curve=LINEAR):
    return CellParams(R0, ((r1, c1),), Q, gamma, M, M0, eta_c, eta_d, curve)


# -- OCV ---------------------------------------------------------------------

def test_ocv_linear_midpoint_and_clamp():
    assert ocv(LINEAR, 0.5) == pytest.approx(3.75, abs=1e-12)
    assert ocv(LINEAR, 1.2) == 4.2
    assert ocv(LINEAR, -0.3) == 3.3


def test_ocv_three_knot_interpolation():
    curve = OcvCurve.from_knots([(0, 3.4), (0.5, 3.85), (1, 4.2)])
    assert curve(0.25) == pytest.approx(3.625, abs=1e-12)


def test_ocv_rejects_bad_knots():
    with pytest.raises(ValueError):
        OcvCurve((0.0, 0.0), (3.3, 4.2))
    with pytest.raises(ValueError):
        OcvCurve((0.0, 1.0), (4.2, 3.3))
    with pytest.raises(ValueError):
        OcvCurve((0.0,), (3.3,))


def test_soc_at_inverts_curve(cells):
    curve = cells[0].ocv
    for z in np.linspace(0.01, 0.99, 17):
        assert curve.soc_at(curve(z)) == pytest.approx(z, abs=1e-12)


def test_ocv_from_cycles():
    flat = ocv_from_cycles(OcvCurve((0, 1), (4.0, 4.0)), OcvCurve((0, 1), (3.8, 3.8)))
    assert all(v == pytest.approx(3.9) for v in flat.voltage)
    assert ocv_from_cycles(LINEAR, LINEAR) == LINEAR
    mean = ocv_from_cycles(OcvCurve((0, 1), (3.5, 4.2)), OcvCurve((0, 1), (3.3, 4.2)))
    assert mean.knots == [(0.0, pytest.approx(3.4)), (1.0, pytest.approx(4.2))]


# -- cell step / voltage -----------------------------------------------------

def test_zero_current_is_fixed_point_at_rest():
    p = make_cell()
    s0 = CellState(0.6, (0.0,), 0.3, -1.0)
    s1 = cell_step(s0, p, 0.0, 1.0)
    assert s1 == s0


def test_soc_drop_one_second_at_three_amps():
    p = make_cell()
    s1 = cell_step(CellState.at_rest(0.8), p, 3.0, 1.0)
    assert s1.z - 0.8 == pytest.approx(-2.7530e-4, abs=5e-8)


def test_rc_decay_factor():
    p = make_cell()
    s1 = cell_step(CellState(0.8, (1.0,)), p, 0.0, 1.0)
    assert s1.i_r[0] == pytest.approx(0.998041, abs=1e-6)
    assert s1.i_r[0] == pytest.approx(math.exp(-1.0 / 509.85), rel=1e-12)


def test_rest_voltage_is_ocv():
    p = make_cell()
    for z in (0.0, 0.3, 1.0):
        assert cell_voltage(CellState.at_rest(z), p, 0.0) == ocv(LINEAR, z)


def test_loaded_voltage_hand_value():
    z = (3.9 - 3.3) / 0.9
    p = make_cell()
    v = cell_voltage(CellState(z, (3.0,), 0.0, 0.0), p, 3.0)
    assert v == pytest.approx(3.8523, abs=1e-12)


def test_literal_rc_sign_adds_polarization():
    p = make_cell()
    s = CellState(0.5, (3.0,))
    assert cell_voltage(s, p, 3.0, literal_rc_sign=True) - cell_voltage(s, p, 3.0) == pytest.approx(
        2 * 0.0099 * 3.0)


def test_doubling_r0_lowers_voltage():
    p = make_cell()
    s = CellState(0.5, (1.0,), 0.1, 1.0)
    assert cell_voltage(s, make_cell(R0=0.012), 5.0) < cell_voltage(s, p, 5.0)


def test_cell_step_rejects_bad_inputs():
    p = make_cell()
    with pytest.raises(ValueError):
        cell_step(CellState.at_rest(0.5), p, float("nan"), 1.0)
    with pytest.raises(ValueError):
        cell_step(CellState.at_rest(0.5), p, 1.0, 0.0)
    with pytest.raises(ValueError):
        CellState(1.5)


def test_soc_clamps_at_empty():
    p = make_cell(Q=10.0)
    assert cell_step(CellState.at_rest(0.01), p, 50.0, 1.0).z == 0.0


currents = st.floats(-40, 40, allow_nan=False)


@given(st.lists(currents, min_size=1, max_size=60), st.floats(-1, 1))
def test_hysteresis_stays_bounded(seq, h0):
    p = make_cell(gamma=5000.0, Q=500.0)
    s = CellState(0.5, (0.0,), h0)
    for i in seq:
        s = cell_step(s, p, i, 0.5)
        assert abs(s.h) <= 1.0 + 1e-12


@given(currents.filter(lambda x: abs(x) > 1e-3), st.integers(1, 40))
def test_rc_current_converges_geometrically(i, n):
    p = make_cell(c1=500.0)
    F = math.exp(-1.0 / (0.0099 * 500.0))
    s = CellState.at_rest(0.5)
    for _ in range(n):
        s = cell_step(s, p, i, 1.0)
    assert s.i_r[0] - i == pytest.approx(-i * F**n, rel=1e-9, abs=1e-12)


@given(st.floats(0.05, 0.95), st.floats(-1, 1), st.floats(-30, 30), st.floats(-30, 30))
def test_voltage_strictly_decreasing_in_current(z, h, i_a, i_b):
    p = make_cell()
    s = CellState(z, (2.0,), h, 1.0)
    lo, hi = sorted((i_a, i_b))
    if hi - lo > 1e-6:
        assert cell_voltage(s, p, hi) < cell_voltage(s, p, lo)


@given(st.lists(st.floats(0, 30), min_size=1, max_size=200))
def test_coulomb_conservation(seq):
    p = make_cell(eta_c=1.0, eta_d=1.0, Q=1e6)
    s = CellState.at_rest(0.9)
    for i in seq:
        s = cell_step(s, p, i, 0.25)
    assert (0.9 - s.z) * p.Q == pytest.approx(sum(seq) * 0.25, rel=1e-9, abs=1e-9)


# -- degradation --------------------------------------------------------------

def test_healthy_params_unchanged():
    p = make_cell()
    assert apply_degradation(p, HealthCondition(Grade.F1, Temperature.TH)) is p


def test_f3_fades_capacity_and_resistance():
    p = make_cell()
    d = apply_degradation(p, HealthCondition.canonical(Grade.F3))
    assert d.Q == pytest.approx(0.8 * p.Q) and d.R0 == pytest.approx(2 * p.R0)


def test_f2_power_fade_cold_triples_resistance():
    p = make_cell()
    h = HealthCondition(Grade.F2, Temperature.TL, power_fade={0})
    d = apply_degradation(p, h, 0)
    assert d.R0 == pytest.approx(3 * p.R0) and d.Q == p.Q
    assert apply_degradation(p, h, 1).R0 == pytest.approx(1.5 * p.R0)


def test_health_condition_validation():
    with pytest.raises(ValueError):
        HealthCondition(Grade.F1, capacity_fade={0})
    with pytest.raises(ValueError):
        HealthCondition(Grade.F2)
    with pytest.raises(ValueError):
        HealthCondition(Grade.F3, capacity_fade={0})
    with pytest.raises(ValueError):
        HealthCondition.canonical(Grade.F2, f2_mode="both")


def test_canonical_f2_modes(cells):
    cap = degrade_battery(cells, HealthCondition.canonical("F2"))
    pwr = degrade_battery(cells, HealthCondition.canonical("F2", f2_mode="power"))
    assert cap[0].Q == pytest.approx(0.8 * cells[0].Q) and cap[1] is cells[1]
    assert pwr[0].R0 == pytest.approx(2 * cells[0].R0) and pwr[0].Q == cells[0].Q


# -- pack ---------------------------------------------------------------------

def test_identical_branches_split_evenly(cells):
    pack = pack_step(build_pack([cells, cells], 0.7), 30.0, 0.005)
    assert pack.branch_currents[0] == pytest.approx(15.0, abs=1e-12)
    assert pack.branch_currents[1] == pytest.approx(15.0, abs=1e-12)


def test_resistance_ratio_split():
    a = make_cell(R0=0.017 / 3)
    b = make_cell(R0=0.034 / 3)
    pack = pack_step(build_pack([[a] * 3, [b] * 3], 0.6, options=PackOptions("ocv")), 30.0, 0.005,
                     PackOptions("ocv"))
    assert pack.branch_currents[0] == pytest.approx(20.0, rel=1e-9)
    assert sum(pack.branch_currents) == pytest.approx(30.0, rel=1e-12)


def test_off_branch_is_open_circuit(cells):
    pack = build_pack([cells, cells], 0.7, switches=(True, False))
    z_before = pack.min_soc()[1]
    for _ in range(20):
        pack = pack_step(pack, 25.0, 0.1)
    assert pack.branch_currents[1] == 0.0
    assert pack.min_soc()[1] == z_before
    assert pack.branch_currents[0] == pytest.approx(25.0)


def test_all_off_with_demand_raises(cells):
    pack = build_pack([cells, cells], 0.7, switches=(False, False))
    with pytest.raises(ValueError):
        pack_step(pack, 1.0, 0.1)


@given(st.floats(0.2, 1.0), st.floats(0.2, 1.0), st.floats(0, 80), st.booleans())
def test_kirchhoff_sum(z1, z2, i, ocv_split):
    from battmdp.battery import load_cells

    cells = load_cells()
    opts = PackOptions("ocv" if ocv_split else "effective")
    degraded = degrade_battery(cells, HealthCondition.canonical("F3"))
    pack = pack_step(build_pack([cells, degraded], [z1, z2], options=opts), i, 0.01, opts)
    assert sum(pack.branch_currents) == pytest.approx(i, rel=1e-9, abs=1e-9)


@given(st.floats(0.2, 1.0), st.floats(0.2, 1.0), st.floats(1, 60))
def test_branch_permutation_symmetry(z1, z2, i):
    from battmdp.battery import load_cells

    cells = load_cells()
    a = pack_step(build_pack([cells, cells], [z1, z2]), i, 0.01)
    b = pack_step(build_pack([cells, cells], [z2, z1]), i, 0.01)
    assert a.branch_currents[0] == pytest.approx(b.branch_currents[1], rel=1e-12, abs=1e-12)


# -- EOD ----------------------------------------------------------------------

def test_eod_zero_current_is_horizon(cells):
    assert estimate_eod(build_pack([cells, cells], 0.9), 0.0, horizon=500.0) == 500.0


def test_eod_depleted_pack_is_zero(cells):
    assert estimate_eod(build_pack([cells, cells], 0.0), 10.0) == 0.0


def test_eod_negative_current_rejected(cells):
    with pytest.raises(ValueError):
        estimate_eod(build_pack([cells, cells], 0.9), -1.0)


def test_capacity_fade_shortens_eod(cells):
    faded = [replace(c, Q=0.8 * c.Q) for c in cells]
    healthy = estimate_eod(build_pack([cells, cells], 0.95), 30.0)
    weak = estimate_eod(build_pack([faded, faded], 0.95), 30.0)
    assert weak < healthy
    assert weak / healthy == pytest.approx(0.8, abs=0.05)


def test_branch_eods_off_branch_reports_horizon(cells):
    per, pack = branch_eods(build_pack([cells, cells], 0.9, switches=(True, False)), 20.0, horizon=3600.0)
    assert per[1] == 3600.0 and per[0] == pack < 3600.0


@given(st.floats(0.5, 1.0), st.floats(5, 40))
def test_eod_nonincreasing_under_capacity_fade(z, i):
    from battmdp.battery import load_cells

    cells = load_cells()
    faded = degrade_battery(cells, HealthCondition(Grade.F2, capacity_fade={0, 1, 2}))
    healthy = estimate_eod(build_pack([cells, cells], z), i)
    weak = estimate_eod(build_pack([faded, faded], z), i)
    assert weak <= healthy
