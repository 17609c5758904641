"""Hierarchical control: discrete high-level commands and the PID cascade
that turns heading/altitude/speed targets into surface deflections."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..airframe import AircraftState, AirframeConfig, ControlInput, wrap_angle
from ..errors import InvalidActionError

HEADING_OFFSETS = (-math.pi / 3, -math.pi / 6, -math.pi / 12, 0.0, math.pi / 12, math.pi / 6, math.pi / 3)
ALTITUDE_OFFSETS = (-2100.0, -600.0, 0.0, 600.0, 2100.0)
SPEED_OFFSETS = (-60.0, -20.0, 0.0, 20.0, 60.0)
HEADING_ZERO = 3
ALTITUDE_ZERO = 2
SPEED_ZERO = 2


@dataclass(frozen=True)
class HighLevelAction:
    heading_bin: int = HEADING_ZERO
    altitude_bin: int = ALTITUDE_ZERO
    speed_bin: int = SPEED_ZERO
    shoot: bool = False

    def validate(self) -> None:
        for name, n in (("heading_bin", 7), ("altitude_bin", 5), ("speed_bin", 5)):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or not 0 <= v < n:
                raise InvalidActionError(f"{name}={v!r} not an index in [0, {n})")


@dataclass(frozen=True)
class RawAction:
    """Direct surface commands held for a whole decision interval."""

    control: ControlInput
    shoot: bool = False


class Targets(NamedTuple):
    heading: float
    altitude: float
    speed: float


def command_targets(action: HighLevelAction, state: AircraftState) -> Targets:
    """Offsets are relative to the aircraft's current heading, altitude and speed."""
    return Targets(
        wrap_angle(state.heading + HEADING_OFFSETS[action.heading_bin]),
        state.position.z + ALTITUDE_OFFSETS[action.altitude_bin],
        max(0.0, state.airspeed + SPEED_OFFSETS[action.speed_bin]),
    )


@dataclass(frozen=True)
class PidGains:
    heading_to_roll: float = 8.0
    max_roll_cmd: float = math.radians(75.0)
    roll_kp: float = 3.0
    roll_kd: float = 0.05
    altitude_to_pitch: float = 0.002
    max_pitch_cmd: float = math.radians(30.0)
    pitch_kp: float = 4.0
    pitch_kd: float = 0.05
    speed_kp: float = 0.05
    speed_ki: float = 0.01
    integral_limit: float = 0.3


class CascadePID:
    """Cascaded heading/altitude/speed autopilot for one aircraft.

    Outer loops turn heading and altitude errors into roll and pitch
    commands; inner PD loops drive aileron and elevator. Throttle is a trim
    feed-forward plus a PI term whose integrator stops while saturated.
    """

    def __init__(self, airframe: AirframeConfig | None = None, gains: PidGains | None = None):
        self.airframe = airframe or AirframeConfig()
        self.gains = gains or PidGains()
        self.reset()

    def reset(self) -> None:
        self.integral = 0.0
        self.prev_roll_err: float | None = None
        self.prev_pitch_err: float | None = None

    def get_state(self) -> list[float]:
        nan = float("nan")
        return [
            self.integral,
            nan if self.prev_roll_err is None else self.prev_roll_err,
            nan if self.prev_pitch_err is None else self.prev_pitch_err,
        ]

    def set_state(self, values) -> None:
        self.integral = float(values[0])
        self.prev_roll_err = None if math.isnan(values[1]) else float(values[1])
        self.prev_pitch_err = None if math.isnan(values[2]) else float(values[2])

    def __call__(self, targets: Targets, state: AircraftState, dt: float) -> ControlInput:
        g = self.gains
        roll_cmd = min(g.max_roll_cmd, max(-g.max_roll_cmd, g.heading_to_roll * wrap_angle(targets.heading - state.heading)))
        roll_err = roll_cmd - state.roll
        d_roll = 0.0 if self.prev_roll_err is None or dt <= 0 else (roll_err - self.prev_roll_err) / dt
        aileron = g.roll_kp * roll_err + g.roll_kd * d_roll

        pitch_cmd = min(g.max_pitch_cmd, max(-g.max_pitch_cmd, g.altitude_to_pitch * (targets.altitude - state.position.z)))
        pitch_err = pitch_cmd - state.pitch
        d_pitch = 0.0 if self.prev_pitch_err is None or dt <= 0 else (pitch_err - self.prev_pitch_err) / dt
        elevator = g.pitch_kp * pitch_err + g.pitch_kd * d_pitch

        speed_err = targets.speed - state.airspeed
        trim = self.airframe.trim_throttle(state.airspeed, state.pitch)
        unsat = trim + g.speed_kp * speed_err + g.speed_ki * self.integral
        if 0.0 < unsat < 1.0 or (unsat >= 1.0 and speed_err < 0) or (unsat <= 0.0 and speed_err > 0):
            self.integral += speed_err * dt
            limit = g.integral_limit / g.speed_ki
            self.integral = min(limit, max(-limit, self.integral))
        throttle = trim + g.speed_kp * speed_err + g.speed_ki * self.integral

        self.prev_roll_err = roll_err
        self.prev_pitch_err = pitch_err
        return ControlInput.clipped(aileron, elevator, 0.0, throttle)


def low_level_pid(targets: Targets, state: AircraftState, airframe: AirframeConfig | None = None,
                  controller: CascadePID | None = None, dt: float = 1.0 / 60.0) -> ControlInput:
    """One controller evaluation; a fresh controller is used when none is given."""
    controller = controller or CascadePID(airframe)
    return controller(targets, state, dt)
