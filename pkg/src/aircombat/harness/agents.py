"""Who controls which aircraft, and how policy output rows become env actions.

Action rows follow the :class:`~aircombat.neural.PolicyHead` layout:
category indices first, then pre-squash continuous values. Hierarchical
heads pick (heading, altitude, speed[, shoot]) bins. Raw heads emit
aileron, elevator, rudder and throttle through ``tanh``, with the throttle
rescaled to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..airframe import ControlInput
from ..arena import (
    ALTITUDE_OFFSETS,
    HEADING_OFFSETS,
    SPEED_OFFSETS,
    CombatEnv,
    HighLevelAction,
    RawAction,
    observation_size,
    pursue_baseline,
)
from ..neural import Actor, PolicyHead, sample_from_output
from .config import RunConfig

RAW_CONTROLS = 4
HIERARCHY_GROUPS = (len(HEADING_OFFSETS), len(ALTITUDE_OFFSETS), len(SPEED_OFFSETS))


def policy_head(cfg: RunConfig) -> PolicyHead:
    shoot = (2,) if cfg.with_shoot else ()
    if cfg.protocol.hierarchical:
        return PolicyHead(HIERARCHY_GROUPS + shoot, 0)
    return PolicyHead(shoot, RAW_CONTROLS)


def learner_teams(cfg: RunConfig) -> list[list[int]]:
    """Agent indices of every team that is trained, in team order."""
    task = cfg.task
    if task.n_teams == 1:
        return [[0]]
    teams = [list(range(t * task.team_size, (t + 1) * task.team_size)) for t in range(task.n_teams)]
    return teams[:1] if cfg.protocol.vs_baseline else teams


def decode_row(row: np.ndarray, head: PolicyHead, hierarchical: bool):
    """Turn one policy action row into a :class:`HighLevelAction` or :class:`RawAction`."""
    n_cat = len(head.groups)
    shoot = bool(row[n_cat - 1] >= 0.5) if n_cat in (1, 4) else False
    if hierarchical:
        return HighLevelAction(int(row[0]), int(row[1]), int(row[2]), shoot)
    t = np.tanh(row[n_cat:n_cat + RAW_CONTROLS])
    control = ControlInput.clipped(float(t[0]), float(t[1]), float(t[2]), 0.5 * (float(t[3]) + 1.0))
    return RawAction(control, shoot)


def random_rows(head: PolicyHead, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform over each category group, standard normal before the squash."""
    rows = np.zeros((n, head.action_dim))
    for g, k in enumerate(head.groups):
        rows[:, g] = rng.integers(0, k, size=n)
    if head.cont_dim:
        rows[:, len(head.groups):] = rng.standard_normal((n, head.cont_dim))
    return rows


def baseline_action(env: CombatEnv, agent: int) -> Optional[HighLevelAction]:
    """Scripted pursuit of the nearest live enemy."""
    if not env.alive(agent):
        return None
    me = env.aircraft[agent].position
    enemies = [e for e in env.enemies(agent) if env.alive(e)]
    if not enemies:
        return HighLevelAction()
    target = min(enemies, key=lambda e: (env.aircraft[e].position - me).norm())
    if env.aircraft[target].position == me:
        return HighLevelAction()
    return pursue_baseline(env.aircraft[agent], env.aircraft[target], env.task)


@dataclass
class PolicySet:
    """Actors for learner agents; ``None`` marks a scripted agent."""

    cfg: RunConfig
    head: PolicyHead
    teams: list[list[int]]
    actors: list[Optional[Actor]]

    @classmethod
    def build(cls, cfg: RunConfig, rng: np.random.Generator) -> PolicySet:
        head = policy_head(cfg)
        teams = learner_teams(cfg)
        learners = {a for team in teams for a in team}
        obs_dim = observation_size(cfg.task)
        actors = [
            Actor(obs_dim, head, rng, hidden=cfg.hidden) if a in learners else None
            for a in range(cfg.task.n_agents)
        ]
        return cls(cfg, head, teams, actors)

    @property
    def n_agents(self) -> int:
        return len(self.actors)

    @property
    def learners(self) -> list[int]:
        return [a for team in self.teams for a in team]

    def rows(self, agent: int, obs: np.ndarray, rng: Optional[np.random.Generator], mode: str) -> np.ndarray:
        """Action rows for a batch of observations of one learner agent.

        ``mode`` is ``sample``, ``greedy`` or ``random``.
        """
        if mode == "random":
            return random_rows(self.head, obs.shape[0], rng)
        actor = self.actors[agent]
        out, _ = actor.trunk(obs)
        return sample_from_output(self.head, out, actor.log_std, rng, greedy=(mode == "greedy"))

    def env_actions(self, env: CombatEnv, rows: dict[int, np.ndarray]) -> list:
        """Combine learner rows with scripted actions into one env action list."""
        actions = []
        for agent in range(self.n_agents):
            if not env.alive(agent):
                actions.append(None)
            elif self.actors[agent] is None:
                actions.append(baseline_action(env, agent))
            else:
                actions.append(decode_row(rows[agent], self.head, self.cfg.protocol.hierarchical))
        return actions


def team_reward(totals, team: list[int]) -> float:
    """Team reward is the mean of the members' totals."""
    return math.fsum(totals[a] for a in team) / len(team)
