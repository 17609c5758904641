"""Three-part per-step reward: flight-safety penalties, posture shaping and
sparse combat events."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Optional

from .airframe import AircraftState, RelativeGeometry
from .errors import ConfigError


class EventKind(enum.IntEnum):
    SHOT_DOWN_BY_MISSILE = 0
    CRASH = 1
    ENEMY_KILL = 2


@dataclass(frozen=True)
class CombatEvent:
    kind: EventKind
    subject: int
    counterpart: Optional[int] = None

    def __post_init__(self):
        if self.kind == EventKind.ENEMY_KILL and self.counterpart is None:
            raise ValueError("EnemyKill events must name the destroyed aircraft")


@dataclass(frozen=True)
class RewardConfig:
    safe_altitude: float = 4000.0
    danger_altitude: float = 3500.0
    safe_speed: float = 150.0
    range_inner_km: float = 1.0
    range_outer_km: float = 3.0
    range_far_km: float = 10.0
    far_penalty_floor: float = -0.1
    event_kill: float = 200.0
    event_death: float = -200.0
    event_crash: float = -200.0
    weight_altitude: float = 1.0
    weight_posture: float = 1.0
    # opponent crashes do not count as kills unless enabled
    crash_counts_as_kill: bool = False

    def __post_init__(self):
        if self.danger_altitude > self.safe_altitude:
            raise ConfigError("danger_altitude must not exceed safe_altitude")
        if not (0 < self.range_inner_km < self.range_outer_km < self.range_far_km):
            raise ConfigError("range bands must satisfy 0 < inner < outer < far")
        if self.safe_speed <= 0 or self.danger_altitude <= 0:
            raise ConfigError("safe_speed and danger_altitude must be positive")
        if self.far_penalty_floor > 0:
            raise ConfigError("far_penalty_floor must be <= 0")


@dataclass(frozen=True)
class RewardBreakdown:
    altitude: float = 0.0
    posture: float = 0.0
    event: float = 0.0
    total: float = 0.0


def _clip01(x: float) -> float:
    return min(1.0, max(0.0, x))


def altitude_penalties(state: AircraftState, cfg: RewardConfig) -> tuple[float, float]:
    """(velocity penalty, altitude penalty), each in [-1, 0]."""
    alt = state.position.z
    pv = 0.0
    if alt < cfg.safe_altitude:
        pv = -_clip01((cfg.safe_speed - state.airspeed) / cfg.safe_speed)
    ph = 0.0
    if alt < cfg.danger_altitude:
        ph = -_clip01((cfg.danger_altitude - alt) / cfg.danger_altitude)
    return pv, ph


def altitude_reward(state: AircraftState, cfg: RewardConfig) -> float:
    pv, ph = altitude_penalties(state, cfg)
    return pv + ph


def orientation_factor(ao: float, ta: float) -> float:
    """+1 when nose-on to the enemy's tail, -1 when the enemy is nose-on to us."""
    return 0.5 * (math.cos(ao) - math.cos(ta))


def range_factor(distance: float, cfg: RewardConfig) -> float:
    """Trapezoidal engagement band in km, going negative past the far edge."""
    d = distance / 1000.0
    inner, outer, far = cfg.range_inner_km, cfg.range_outer_km, cfg.range_far_km
    if d < inner:
        return d / inner
    if d <= outer:
        return 1.0
    if d <= far:
        return 1.0 - (d - outer) / (far - outer)
    return max(cfg.far_penalty_floor, cfg.far_penalty_floor * (d - far) / far)


def posture_reward(geom: RelativeGeometry, cfg: RewardConfig) -> float:
    rf = range_factor(geom.distance, cfg)
    return orientation_factor(geom.ao, geom.ta) * max(rf, 0.0) + min(rf, 0.0)


def event_reward(events: Iterable[CombatEvent], agent: int, cfg: RewardConfig) -> float:
    values = {
        EventKind.SHOT_DOWN_BY_MISSILE: cfg.event_death,
        EventKind.CRASH: cfg.event_crash,
        EventKind.ENEMY_KILL: cfg.event_kill,
    }
    return sum((values[e.kind] for e in events if e.subject == agent), 0.0)


def compose(altitude: float, posture: float, event: float, cfg: RewardConfig) -> RewardBreakdown:
    total = cfg.weight_altitude * altitude + cfg.weight_posture * posture + event
    return RewardBreakdown(altitude=altitude, posture=posture, event=event, total=total)


def total_reward(
    state: AircraftState,
    geom: RelativeGeometry | None,
    events: Iterable[CombatEvent],
    cfg: RewardConfig,
    agent: int = 0,
) -> RewardBreakdown:
    """Compose all three terms for one agent. ``geom=None`` drops the posture term."""
    posture = posture_reward(geom, cfg) if geom is not None else 0.0
    return compose(altitude_reward(state, cfg), posture, event_reward(events, agent, cfg), cfg)
