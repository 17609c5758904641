"""Point-mass fixed-wing flight model in a local north-east-up frame.

Heading is measured from north toward east, so a positive roll (right wing
down) produces a positive heading rate. All functions are pure and operate
on immutable value types.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import DegenerateGeometryError, InvalidStateError

EARTH_RADIUS = 6_371_000.0
INNER_DT = 1.0 / 60.0


class Vec3(NamedTuple):
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def __add__(self, other):  # type: ignore[override]
        return Vec3(self.x + other.x, self.y + other.y, self.z + other.z)

    def __sub__(self, other):
        return Vec3(self.x - other.x, self.y - other.y, self.z - other.z)

    def __neg__(self):
        return Vec3(-self.x, -self.y, -self.z)

    def scale(self, k: float) -> Vec3:
        return Vec3(self.x * k, self.y * k, self.z * k)

    def dot(self, other) -> float:
        return self.x * other.x + self.y * other.y + self.z * other.z

    def cross(self, other) -> Vec3:
        return Vec3(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.z)


def wrap_angle(angle: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    wrapped = (angle + math.pi) % (2.0 * math.pi) - math.pi
    # float modulo can land exactly on +pi for inputs just below -pi
    if wrapped >= math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


def angle_between(a: Vec3, b: Vec3) -> float:
    """Unsigned angle in [0, pi]; pi/2 when either vector is zero."""
    na, nb = a.norm(), b.norm()
    if na == 0.0 or nb == 0.0:
        return math.pi / 2.0
    c = a.dot(b) / (na * nb)
    return math.acos(max(-1.0, min(1.0, c)))


def velocity_from(airspeed: float, heading: float, pitch: float) -> Vec3:
    horizontal = airspeed * math.cos(pitch)
    return Vec3(
        horizontal * math.cos(heading),
        horizontal * math.sin(heading),
        airspeed * math.sin(pitch),
    )


@dataclass(frozen=True)
class ControlInput:
    aileron: float = 0.0
    elevator: float = 0.0
    rudder: float = 0.0
    throttle: float = 0.0

    def __post_init__(self):
        for name in ("aileron", "elevator", "rudder"):
            v = getattr(self, name)
            if not (math.isfinite(v) and -1.0 <= v <= 1.0):
                raise InvalidStateError(f"{name}={v!r} outside [-1, 1]")
        if not (math.isfinite(self.throttle) and 0.0 <= self.throttle <= 1.0):
            raise InvalidStateError(f"throttle={self.throttle!r} outside [0, 1]")

    @classmethod
    def clipped(cls, aileron: float, elevator: float, rudder: float, throttle: float) -> ControlInput:
        return cls(
            min(1.0, max(-1.0, aileron)),
            min(1.0, max(-1.0, elevator)),
            min(1.0, max(-1.0, rudder)),
            min(1.0, max(0.0, throttle)),
        )


@dataclass(frozen=True)
class AirframeConfig:
    mass: float = 12_000.0
    max_thrust: float = 120_000.0
    drag_coefficient: float = 0.96
    roll_rate_gain: float = 2.0
    pitch_rate_gain: float = 0.5
    yaw_trim_gain: float = 0.05
    min_speed: float = 80.0
    max_speed: float = 400.0
    max_roll: float = math.radians(80.0)
    max_pitch: float = math.radians(45.0)
    gravity: float = 9.81

    def __post_init__(self):
        if self.mass <= 0:
            raise InvalidStateError("mass must be positive")
        if not self.min_speed < self.max_speed:
            raise InvalidStateError("min_speed must be below max_speed")
        if min(self.roll_rate_gain, self.pitch_rate_gain, self.yaw_trim_gain) <= 0:
            raise InvalidStateError("rate gains must be positive")

    def trim_throttle(self, airspeed: float, pitch: float = 0.0) -> float:
        """Throttle that holds airspeed constant at the given pitch, clipped to [0, 1]."""
        required = self.drag_coefficient * airspeed * airspeed + self.mass * self.gravity * math.sin(pitch)
        return min(1.0, max(0.0, required / self.max_thrust))


@dataclass(frozen=True)
class AircraftState:
    position: Vec3
    heading: float
    pitch: float
    roll: float
    airspeed: float
    velocity: Vec3
    acceleration: Vec3 = field(default_factory=Vec3)
    alive: bool = True

    @classmethod
    def level(cls, position: Vec3, heading: float, airspeed: float, pitch: float = 0.0, roll: float = 0.0) -> AircraftState:
        """Build a state whose velocity is consistent with airspeed/heading/pitch."""
        heading = wrap_angle(heading)
        return cls(
            position=Vec3(*position),
            heading=heading,
            pitch=pitch,
            roll=roll,
            airspeed=airspeed,
            velocity=velocity_from(airspeed, heading, pitch),
        )

    @property
    def altitude(self) -> float:
        return self.position.z

    def is_finite(self) -> bool:
        return (
            self.position.is_finite()
            and self.velocity.is_finite()
            and self.acceleration.is_finite()
            and all(math.isfinite(v) for v in (self.heading, self.pitch, self.roll, self.airspeed))
        )


def step_airframe(state: AircraftState, ctrl: ControlInput, cfg: AirframeConfig, dt: float) -> AircraftState:
    """Advance one explicit-Euler step of the kinematic 3-DOF model.

    Rates are evaluated at the incoming state. Velocity is rebuilt from the
    updated airspeed, heading and pitch, and position advances with it.
    """
    if dt < 0:
        raise InvalidStateError(f"negative dt {dt}")
    if not state.is_finite():
        raise InvalidStateError("non-finite aircraft state")
    if not all(math.isfinite(v) for v in (ctrl.aileron, ctrl.elevator, ctrl.rudder, ctrl.throttle)):
        raise InvalidStateError("non-finite control input")
    if dt == 0:
        return state

    g = cfg.gravity
    v = state.airspeed
    # coordinated turn law is singular at zero airspeed
    heading_rate = (g / max(v, 1.0)) * math.tan(state.roll) + cfg.yaw_trim_gain * ctrl.rudder
    speed_rate = (ctrl.throttle * cfg.max_thrust - cfg.drag_coefficient * v * v) / cfg.mass - g * math.sin(state.pitch)

    roll = min(cfg.max_roll, max(-cfg.max_roll, state.roll + cfg.roll_rate_gain * ctrl.aileron * dt))
    pitch = min(cfg.max_pitch, max(-cfg.max_pitch, state.pitch + cfg.pitch_rate_gain * ctrl.elevator * dt))
    heading = wrap_angle(state.heading + heading_rate * dt)
    airspeed = min(cfg.max_speed, max(0.0, v + speed_rate * dt))

    velocity = velocity_from(airspeed, heading, pitch)
    position = state.position + velocity.scale(dt)
    acceleration = (velocity - state.velocity).scale(1.0 / dt)
    return AircraftState(
        position=position,
        heading=heading,
        pitch=pitch,
        roll=roll,
        airspeed=airspeed,
        velocity=velocity,
        acceleration=acceleration,
        alive=state.alive,
    )


@dataclass(frozen=True)
class RelativeGeometry:
    distance: float
    closure_rate: float
    ao: float
    ta: float
    delta_altitude: float
    delta_heading: float


def relative_geometry(ego: AircraftState, other: AircraftState) -> RelativeGeometry:
    """Engagement geometry of ``other`` as seen from ``ego``.

    ``ao`` is the angle off ego's nose toward the other aircraft and ``ta`` the
    angle off the other's nose toward ego. Deltas are other minus ego.
    """
    los = other.position - ego.position
    distance = los.norm()
    if distance == 0.0:
        raise DegenerateGeometryError("coincident aircraft positions")
    rel_vel = other.velocity - ego.velocity
    return RelativeGeometry(
        distance=distance,
        closure_rate=-los.dot(rel_vel) / distance,
        ao=angle_between(ego.velocity, los),
        ta=angle_between(other.velocity, -los),
        delta_altitude=other.position.z - ego.position.z,
        delta_heading=wrap_angle(other.heading - ego.heading),
    )


def to_geodetic(local: Vec3, origin_lat: float, origin_lon: float) -> tuple[float, float, float]:
    """Equirectangular conversion of a local NEU offset to (lat, lon, alt) in radians/meters."""
    if not abs(origin_lat) < math.pi / 2:
        raise InvalidStateError("origin latitude must lie strictly inside (-pi/2, pi/2)")
    lat = origin_lat + local[0] / EARTH_RADIUS
    lon = origin_lon + local[1] / (EARTH_RADIUS * math.cos(origin_lat))
    return lat, lon, local[2]
