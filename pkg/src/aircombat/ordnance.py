"""Guided missile flyout: boost/coast thrust, quadratic drag and true
proportional navigation in vector form."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from .airframe import AircraftState, Vec3
from .errors import DegenerateGeometryError, InvalidLaunchError, InvalidStateError

GRAVITY = 9.81


class MissileStatus(enum.IntEnum):
    FLYING = 0
    HIT = 1
    EXPIRED = 2


@dataclass(frozen=True)
class MissileConfig:
    nav_constant: float = 3.0
    boost_thrust: float = 30_000.0
    boost_duration: float = 4.0
    mass: float = 150.0
    drag_coefficient: float = 0.0045
    max_lateral_g: float = 30.0
    explosive_radius: float = 300.0
    lifespan: float = 60.0

    def __post_init__(self):
        if self.nav_constant < 1:
            raise InvalidStateError("nav_constant must be >= 1")
        if self.explosive_radius <= 0 or self.lifespan <= 0:
            raise InvalidStateError("explosive_radius and lifespan must be positive")
        if self.mass <= 0:
            raise InvalidStateError("missile mass must be positive")


@dataclass(frozen=True)
class MissileState:
    position: Vec3
    velocity: Vec3
    shooter_id: int
    target_id: int
    age: float = 0.0
    status: MissileStatus = MissileStatus.FLYING

    @property
    def flying(self) -> bool:
        return self.status == MissileStatus.FLYING


def launch_missile(shooter: AircraftState, shooter_id: int, target_id: int, cfg: MissileConfig | None = None) -> MissileState:
    """Spawn a missile at the shooter's position with the shooter's velocity."""
    if not shooter.alive:
        raise InvalidLaunchError(f"aircraft {shooter_id} is dead and cannot launch")
    return MissileState(
        position=shooter.position,
        velocity=shooter.velocity,
        shooter_id=shooter_id,
        target_id=target_id,
    )


def pn_command(missile: MissileState, target: AircraftState, nav_constant: float) -> Vec3:
    """Unclamped true-PN acceleration ``N * (Omega x v_m)``.

    ``Omega = (r x v_rel) / (r . r)`` is the line-of-sight rotation rate.
    """
    r = target.position - missile.position
    rr = r.dot(r)
    if rr == 0.0:
        raise DegenerateGeometryError("missile and target coincide")
    v_rel = target.velocity - missile.velocity
    omega = r.cross(v_rel).scale(1.0 / rr)
    return omega.cross(missile.velocity).scale(nav_constant)


def clamp_magnitude(v: Vec3, limit: float) -> Vec3:
    n = v.norm()
    if n <= limit or n == 0.0:
        return v
    return v.scale(limit / n)


def step_missile(missile: MissileState, target: AircraftState, cfg: MissileConfig, dt: float) -> MissileState:
    """Advance a flying missile one Euler step; terminal missiles are returned as-is.

    Fusing is checked both before and after the integration step. Early expiry
    (slower than the target and opening) only applies once the motor burns out.
    """
    if dt <= 0:
        raise InvalidStateError(f"missile dt must be positive, got {dt}")
    if not missile.flying:
        return missile

    if (target.position - missile.position).norm() <= cfg.explosive_radius:
        return replace(missile, status=MissileStatus.HIT)
    if missile.age > cfg.lifespan:
        return replace(missile, status=MissileStatus.EXPIRED)

    v = missile.velocity
    speed = v.norm()
    thrust = Vec3()
    if missile.age < cfg.boost_duration and speed > 0.0:
        thrust = v.scale(cfg.boost_thrust / (cfg.mass * speed))
    drag = v.scale(-cfg.drag_coefficient * speed / cfg.mass)
    guidance = clamp_magnitude(pn_command(missile, target, cfg.nav_constant), cfg.max_lateral_g * GRAVITY)
    accel = thrust + drag + guidance + Vec3(0.0, 0.0, -GRAVITY)

    velocity = v + accel.scale(dt)
    position = missile.position + velocity.scale(dt)
    age = missile.age + dt
    out = replace(missile, position=position, velocity=velocity, age=age)

    los = target.position - position
    distance = los.norm()
    if distance <= cfg.explosive_radius:
        return replace(out, status=MissileStatus.HIT)
    if age > cfg.lifespan:
        return replace(out, status=MissileStatus.EXPIRED)
    if age >= cfg.boost_duration:
        closure = -los.dot(target.velocity - velocity) / distance
        if velocity.norm() < target.airspeed and closure <= 0.0:
            return replace(out, status=MissileStatus.EXPIRED)
    return out
