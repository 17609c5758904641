"""Task environments, hierarchical control and the scripted baseline."""

from .config import EnvConfig, TaskKind
from .control import (
    ALTITUDE_OFFSETS,
    HEADING_OFFSETS,
    SPEED_OFFSETS,
    CascadePID,
    HighLevelAction,
    PidGains,
    RawAction,
    Targets,
    command_targets,
    low_level_pid,
)
from .env import (
    BetaShootPrior,
    CombatEnv,
    StepOutcome,
    build_observation,
    observation_size,
    pursue_baseline,
    shoot_gate,
)

__all__ = [
    "ALTITUDE_OFFSETS",
    "HEADING_OFFSETS",
    "SPEED_OFFSETS",
    "BetaShootPrior",
    "CascadePID",
    "CombatEnv",
    "EnvConfig",
    "HighLevelAction",
    "PidGains",
    "RawAction",
    "StepOutcome",
    "Targets",
    "TaskKind",
    "build_observation",
    "command_targets",
    "low_level_pid",
    "observation_size",
    "pursue_baseline",
    "shoot_gate",
]
