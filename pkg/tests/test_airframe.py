import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.optimize import bisect

from aircombat.airframe import (
    EARTH_RADIUS,
    AircraftState,
    AirframeConfig,
    ControlInput,
    Vec3,
    angle_between,
    relative_geometry,
    step_airframe,
    to_geodetic,
    velocity_from,
    wrap_angle,
)
from aircombat.errors import DegenerateGeometryError, InvalidStateError

CFG = AirframeConfig()
DT = 1.0 / 60.0

angles = st.floats(-math.pi, math.pi, allow_nan=False)
unit = st.floats(-1.0, 1.0, allow_nan=False)


@st.composite
def aircraft_states(draw):
    return AircraftState.level(
        Vec3(draw(st.floats(-5e4, 5e4)), draw(st.floats(-5e4, 5e4)), draw(st.floats(100.0, 12_000.0))),
        heading=draw(angles),
        airspeed=draw(st.floats(0.0, 400.0)),
        pitch=draw(st.floats(-CFG.max_pitch, CFG.max_pitch)),
        roll=draw(st.floats(-CFG.max_roll, CFG.max_roll)),
    )


@st.composite
def controls(draw):
    return ControlInput(draw(unit), draw(unit), draw(unit), draw(st.floats(0.0, 1.0)))


class TestVec3:
    def test_arithmetic(self):
        a, b = Vec3(1.0, 2.0, 3.0), Vec3(-1.0, 0.5, 2.0)
        assert a + b == Vec3(0.0, 2.5, 5.0)
        assert a - b == Vec3(2.0, 1.5, 1.0)
        assert a.scale(2.0) == Vec3(2.0, 4.0, 6.0)
        assert a.dot(b) == pytest.approx(6.0)
        assert a.cross(b) == pytest.approx(tuple(np.cross(a, b)))

    def test_angle_between_zero_vector_is_right_angle(self):
        assert angle_between(Vec3(), Vec3(1.0, 0.0, 0.0)) == pytest.approx(math.pi / 2)

    @given(angles)
    def test_wrap_angle_range(self, a):
        w = wrap_angle(a + 6 * math.pi)
        assert -math.pi <= w < math.pi
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)


class TestControlInput:
    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidStateError):
            ControlInput(aileron=1.5)
        with pytest.raises(InvalidStateError):
            ControlInput(throttle=-0.1)
        with pytest.raises(InvalidStateError):
            ControlInput(elevator=float("nan"))

    def test_clipped(self):
        c = ControlInput.clipped(2.0, -3.0, 0.5, 1.7)
        assert (c.aileron, c.elevator, c.rudder, c.throttle) == (1.0, -1.0, 0.5, 1.0)


class TestStepAirframe:
    def test_zero_dt_is_identity(self):
        s = AircraftState.level(Vec3(1.0, 2.0, 3000.0), 0.3, 200.0, roll=0.2)
        assert step_airframe(s, ControlInput(0.3, -0.2, 0.1, 0.7), CFG, 0.0) == s

    def test_no_roll_no_rudder_keeps_heading(self):
        s = AircraftState.level(Vec3(0.0, 0.0, 5000.0), 1.1, 250.0)
        out = step_airframe(s, ControlInput(0.0, 0.4, 0.0, 0.5), CFG, DT)
        assert out.heading == s.heading

    def test_trim_throttle_by_bisection_holds_speed(self):
        v = 237.0
        u_star = bisect(lambda u: u * CFG.max_thrust - CFG.drag_coefficient * v * v, 0.0, 1.0, xtol=1e-15)
        s = AircraftState.level(Vec3(0.0, 0.0, 5000.0), 0.0, v)
        out = step_airframe(s, ControlInput(throttle=u_star), CFG, DT)
        assert abs(out.airspeed - v) <= 1e-9
        assert CFG.trim_throttle(v) == pytest.approx(u_star, abs=1e-12)

    def test_hand_computed_step(self):
        # one step by hand: coordinated turn and thrust-drag balance
        s = AircraftState.level(Vec3(0.0, 0.0, 5000.0), 0.0, 200.0, roll=math.radians(30.0))
        ctrl = ControlInput(aileron=0.5, elevator=0.0, rudder=0.0, throttle=1.0)
        out = step_airframe(s, ctrl, CFG, 0.1)
        heading_rate = 9.81 / 200.0 * math.tan(math.radians(30.0))
        speed_rate = (120_000.0 - 0.96 * 200.0 ** 2) / 12_000.0
        assert out.heading == pytest.approx(heading_rate * 0.1, rel=1e-12)
        assert out.roll == pytest.approx(math.radians(30.0) + 2.0 * 0.5 * 0.1, rel=1e-12)
        assert out.airspeed == pytest.approx(200.0 + speed_rate * 0.1, rel=1e-12)
        assert out.position.x == pytest.approx(out.airspeed * math.cos(out.heading) * 0.1, rel=1e-12)
        assert out.acceleration.x == pytest.approx((out.velocity.x - 200.0) / 0.1, rel=1e-9)

    def test_roll_and_pitch_clamped(self):
        s = AircraftState.level(Vec3(0.0, 0.0, 5000.0), 0.0, 200.0, pitch=CFG.max_pitch, roll=CFG.max_roll)
        out = step_airframe(s, ControlInput(1.0, 1.0, 0.0, 0.5), CFG, 1.0)
        assert out.roll == CFG.max_roll and out.pitch == CFG.max_pitch

    def test_speed_floor_and_ceiling(self):
        slow = AircraftState.level(Vec3(0.0, 0.0, 5000.0), 0.0, 1.0, pitch=CFG.max_pitch)
        assert step_airframe(slow, ControlInput(), CFG, 1.0).airspeed == 0.0
        fast = AircraftState.level(Vec3(0.0, 0.0, 5000.0), 0.0, 399.9, pitch=-CFG.max_pitch)
        assert step_airframe(fast, ControlInput(throttle=1.0), CFG, 1.0).airspeed == CFG.max_speed

    def test_non_finite_state_rejected(self):
        s = AircraftState.level(Vec3(float("nan"), 0.0, 5000.0), 0.0, 200.0)
        with pytest.raises(InvalidStateError):
            step_airframe(s, ControlInput(), CFG, DT)

    def test_negative_dt_rejected(self):
        s = AircraftState.level(Vec3(0.0, 0.0, 5000.0), 0.0, 200.0)
        with pytest.raises(InvalidStateError):
            step_airframe(s, ControlInput(), CFG, -DT)

    def test_zero_controls_stay_in_vertical_plane(self):
        s = AircraftState.level(Vec3(0.0, 0.0, 5000.0), 0.0, 220.0)
        for _ in range(600):
            s = step_airframe(s, ControlInput(), CFG, DT)
        assert s.position.y == 0.0
        assert s.heading == 0.0

    def test_halved_steps_converge_at_second_order(self):
        s = AircraftState.level(Vec3(0.0, 0.0, 5000.0), 0.2, 230.0, pitch=0.1, roll=0.5)
        ctrl = ControlInput(0.3, -0.2, 0.1, 0.6)

        def gap(dt):
            one = step_airframe(s, ctrl, CFG, dt)
            two = step_airframe(step_airframe(s, ctrl, CFG, dt / 2), ctrl, CFG, dt / 2)
            return (one.position - two.position).norm()

        gaps = [gap(dt) for dt in (0.4, 0.2, 0.1, 0.05)]
        ratios = [a / b for a, b in zip(gaps, gaps[1:])]
        assert all(3.0 < r < 5.0 for r in ratios), ratios

    @given(aircraft_states(), controls())
    def test_invariants_after_step(self, s, ctrl):
        out = step_airframe(s, ctrl, CFG, DT)
        assert -math.pi <= out.heading < math.pi
        assert abs(out.velocity.norm() - out.airspeed) <= 1e-6 * max(1.0, out.airspeed)
        assert out.altitude == out.position.z
        assert 0.0 <= out.airspeed <= CFG.max_speed

    @given(st.floats(50.0, 400.0), angles)
    def test_zero_throttle_level_flight_loses_speed(self, v, heading):
        s = AircraftState.level(Vec3(0.0, 0.0, 5000.0), heading, v)
        out = step_airframe(s, ControlInput(throttle=0.0), CFG, DT)
        assert out.airspeed <= v


class TestRelativeGeometry:
    def test_collinear_nose_on(self):
        ego = AircraftState.level(Vec3(0.0, 0.0, 5000.0), 0.0, 200.0)
        other = AircraftState.level(Vec3(3000.0, 0.0, 5000.0), 0.0, 200.0)
        g = relative_geometry(ego, other)
        assert g.ao == 0.0
        assert g.delta_altitude == 0.0
        assert g.distance == 3000.0

    def test_beam_geometry_by_hand(self):
        ego = AircraftState.level(Vec3(0.0, 0.0, 5000.0), 0.0, 200.0)
        other = AircraftState.level(Vec3(0.0, 1000.0, 5000.0), math.pi, 200.0)
        g = relative_geometry(ego, other)
        assert g.ao == pytest.approx(math.pi / 2, abs=1e-12)
        # relative velocity (-400, 0, 0) has no east component, so the range is momentarily static
        los = np.array([0.0, 1000.0, 0.0])
        rel_v = np.array(other.velocity) - np.array(ego.velocity)
        assert g.closure_rate == pytest.approx(-(los @ rel_v) / 1000.0, abs=1e-9)
        assert g.closure_rate == pytest.approx(0.0, abs=1e-9)
        assert g.delta_heading == pytest.approx(-math.pi)

    def test_closing_head_on(self):
        ego = AircraftState.level(Vec3(0.0, 0.0, 5000.0), 0.0, 200.0)
        other = AircraftState.level(Vec3(5000.0, 0.0, 5600.0), math.pi, 150.0)
        g = relative_geometry(ego, other)
        expected = -np.dot(np.array(other.position) - ego.position, np.array(other.velocity) - ego.velocity) / g.distance
        assert g.closure_rate == pytest.approx(expected)
        assert g.delta_altitude == 600.0

    def test_coincident_positions_rejected(self):
        s = AircraftState.level(Vec3(0.0, 0.0, 5000.0), 0.0, 200.0)
        with pytest.raises(DegenerateGeometryError):
            relative_geometry(s, s)

    @given(aircraft_states(), aircraft_states())
    def test_angles_in_range(self, a, b):
        assume((a.position - b.position).norm() > 1e-3)
        g = relative_geometry(a, b)
        assert 0.0 <= g.ao <= math.pi and 0.0 <= g.ta <= math.pi
        assert g.distance > 0.0
        assert -math.pi <= g.delta_heading < math.pi


class TestGeodetic:
    def test_origin(self):
        assert to_geodetic(Vec3(), 0.5, -1.2) == (0.5, -1.2, 0.0)

    def test_north_offset(self):
        lat, lon, _ = to_geodetic(Vec3(EARTH_RADIUS * 1e-3, 0.0, 0.0), 0.3, 0.1)
        assert lat == pytest.approx(0.301, abs=1e-15)
        assert lon == 0.1

    def test_equator_east_offset(self):
        _, lon, alt = to_geodetic(Vec3(0.0, 5000.0, 1234.0), 0.0, 0.2)
        assert lon == pytest.approx(0.2 + 5000.0 / EARTH_RADIUS)
        assert alt == 1234.0

    def test_pole_rejected(self):
        with pytest.raises(InvalidStateError):
            to_geodetic(Vec3(), math.pi / 2, 0.0)


def test_velocity_from_components():
    v = velocity_from(100.0, math.pi / 2, 0.0)
    assert v.x == pytest.approx(0.0, abs=1e-12) and v.y == pytest.approx(100.0)
