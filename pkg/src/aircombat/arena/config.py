from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from ..airframe import INNER_DT, AirframeConfig
from ..errors import ConfigError
from ..ordnance import MissileConfig
from ..rewards import RewardConfig


class TaskKind(str, enum.Enum):
    SingleControlHeading = "SingleControlHeading"
    NoWeapon1v1 = "NoWeapon1v1"
    DodgeMissile1v1 = "DodgeMissile1v1"
    ShootMissile1v1 = "ShootMissile1v1"
    NoWeapon2v2 = "NoWeapon2v2"
    ShootMissile2v2 = "ShootMissile2v2"

    @property
    def n_agents(self) -> int:
        if self is TaskKind.SingleControlHeading:
            return 1
        return 4 if self.name.endswith("2v2") else 2

    @property
    def team_size(self) -> int:
        return 1 if self.n_agents <= 2 else 2

    @property
    def n_teams(self) -> int:
        return 1 if self is TaskKind.SingleControlHeading else 2

    @property
    def has_weapons(self) -> bool:
        return "Missile" in self.value

    @property
    def learned_shooting(self) -> bool:
        """True when firing is part of the action space."""
        return self.value.startswith("ShootMissile")

    @property
    def is_combat(self) -> bool:
        return self is not TaskKind.SingleControlHeading


@dataclass
class EnvConfig:
    task: TaskKind = TaskKind.NoWeapon1v1
    dt: float = INNER_DT
    decision_interval: int = 12
    max_decision_steps: int = 1000
    spawn_altitude: float = 6000.0
    spawn_altitude_spread: float = 1000.0
    spawn_separation: float = 14_000.0
    spawn_separation_spread: float = 2000.0
    spawn_speed: float = 250.0
    randomize_bearing: bool = True
    wingman_offset: float = 2000.0
    missiles_per_aircraft: int = 4
    shoot_range: float = 12_000.0
    shoot_max_ao: float = math.radians(60.0)
    dodge_range: float = 8000.0
    dodge_max_ao: float = math.radians(30.0)
    dodge_cooldown: float = 10.0
    shoot_prior_alpha: float = 10.0
    shoot_prior_beta: float = 10.0
    seed: int = 0
    reward: RewardConfig = field(default_factory=RewardConfig)
    missile: MissileConfig = field(default_factory=MissileConfig)
    airframe: AirframeConfig = field(default_factory=AirframeConfig)

    def __post_init__(self):
        self.task = TaskKind(self.task)
        if self.decision_interval < 1:
            raise ConfigError("decision_interval must be >= 1")
        if self.max_decision_steps < 1:
            raise ConfigError("max_decision_steps must be >= 1")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.missiles_per_aircraft < 0:
            raise ConfigError("missiles_per_aircraft must be >= 0")
        if self.shoot_prior_alpha <= 0 or self.shoot_prior_beta <= 0:
            raise ConfigError("Beta prior parameters must be positive")

    @property
    def decision_seconds(self) -> float:
        return self.dt * self.decision_interval
