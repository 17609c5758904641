"""Per-physics-step trajectory export.

Column order (``i`` = aircraft/agent index, ``j`` = missile slot)::

    time,
    ac{i}_north, ac{i}_east, ac{i}_alt, ac{i}_heading, ac{i}_pitch, ac{i}_roll, ac{i}_speed, ac{i}_alive   (each i)
    m{j}_north, m{j}_east, m{j}_alt, m{j}_status                                                      (each j)
    r{i}_altitude, r{i}_posture, r{i}_event, r{i}_total                                               (each i)

Missile slots are assigned in launch order; there are ``n_agents *
missiles_per_aircraft`` of them in weapon tasks and none otherwise. An
unused slot has NaN position and status -1; otherwise status is 0 flying,
1 hit, 2 expired. Reward cells are zero except on the last physics step of
each decision, which carries that decision's reward. Aircraft rows freeze
once the aircraft is dead.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

from ..arena import CombatEnv
from .agents import PolicySet
from .config import RunConfig
from .evaluation import EVAL_STREAM, episode_seed, play_episodes

AIRCRAFT_COLUMNS = ("north", "east", "alt", "heading", "pitch", "roll", "speed", "alive")
MISSILE_COLUMNS = ("north", "east", "alt", "status")
REWARD_COLUMNS = ("altitude", "posture", "event", "total")


def missile_slots(cfg: RunConfig) -> int:
    return cfg.task.n_agents * cfg.env.missiles_per_aircraft if cfg.task.has_weapons else 0


def trajectory_columns(cfg: RunConfig) -> list[str]:
    n = cfg.task.n_agents
    cols = ["time"]
    cols += [f"ac{i}_{c}" for i in range(n) for c in AIRCRAFT_COLUMNS]
    cols += [f"m{j}_{c}" for j in range(missile_slots(cfg)) for c in MISSILE_COLUMNS]
    cols += [f"r{i}_{c}" for i in range(n) for c in REWARD_COLUMNS]
    return cols


class TrajectoryRecorder:
    def __init__(self, cfg: RunConfig):
        self.n_agents = cfg.task.n_agents
        self.slots = missile_slots(cfg)
        self.rows: list[list[float]] = []

    def __call__(self, env: CombatEnv, dt: float) -> None:
        row = [env.time]
        for ac in env.aircraft:
            row += [ac.position.x, ac.position.y, ac.position.z, ac.heading, ac.pitch, ac.roll, ac.airspeed,
                    float(ac.alive)]
        for j in range(self.slots):
            if j < len(env.missiles):
                m = env.missiles[j]
                row += [m.position.x, m.position.y, m.position.z, float(int(m.status))]
            else:
                row += [math.nan, math.nan, math.nan, -1.0]
        row += [0.0] * (len(REWARD_COLUMNS) * self.n_agents)
        self.rows.append(row)

    def attach_rewards(self, env: CombatEnv, outcome) -> None:
        start = len(self.rows[-1]) - len(REWARD_COLUMNS) * self.n_agents
        for i, r in enumerate(outcome.rewards):
            k = start + i * len(REWARD_COLUMNS)
            self.rows[-1][k:k + len(REWARD_COLUMNS)] = [r.altitude, r.posture, r.event, r.total]


def export_trajectory(policies: PolicySet, cfg: RunConfig, seed: int, out_path: str | Path) -> float:
    """Write one greedy evaluation episode; returns its score.

    The episode uses the same reset seed as the first episode of
    ``evaluate(policies, cfg, episodes, seed)``.
    """
    recorder = TrajectoryRecorder(cfg)
    score = play_episodes(policies, cfg, [episode_seed(seed, EVAL_STREAM, 0)], "greedy",
                          recorder=recorder, on_step=recorder.attach_rewards)[0]
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(trajectory_columns(cfg))
        for row in recorder.rows:
            writer.writerow(["%.17g" % v for v in row])
    return float(score)
