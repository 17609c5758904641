"""Multi-aircraft combat environment with hierarchical control.

Agents are indexed 0..n-1. Team 0 owns the first half of the indices and
team 1 the second half; the heading-control task has a single agent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from ..airframe import (
    AircraftState,
    RelativeGeometry,
    Vec3,
    relative_geometry,
    step_airframe,
    wrap_angle,
)
from ..errors import InvalidActionError
from ..ordnance import MissileState, MissileStatus, launch_missile, step_missile
from ..rewards import (
    CombatEvent,
    EventKind,
    RewardBreakdown,
    altitude_reward,
    compose,
    event_reward,
    posture_reward,
)
from .config import EnvConfig, TaskKind
from .control import (
    ALTITUDE_OFFSETS,
    HEADING_OFFSETS,
    SPEED_OFFSETS,
    CascadePID,
    HighLevelAction,
    RawAction,
    Targets,
    command_targets,
)

Action = Union[HighLevelAction, RawAction, None]

EGO_BLOCK = 9
OTHER_BLOCK = 6
MISSILE_BLOCK = 6
TASK_BLOCK = 4
AIRCRAFT_FIELDS = 14
MISSILE_FIELDS = 10


def _split_u128(value: int) -> list[float]:
    return [float((value >> (32 * k)) & 0xFFFFFFFF) for k in range(4)]


def _join_u128(chunks) -> int:
    return sum(int(c) << (32 * k) for k, c in enumerate(chunks))


def pcg64_to_array(rng: np.random.Generator) -> np.ndarray:
    """PCG64 generator state as 10 exactly representable floats."""
    st = rng.bit_generator.state
    if st["bit_generator"] != "PCG64":
        raise TypeError("only PCG64 generators can be serialized")
    inner = st["state"]
    return np.array(_split_u128(inner["state"]) + _split_u128(inner["inc"]) + [st["has_uint32"], st["uinteger"]],
                    dtype=np.float64)


def pcg64_from_array(values) -> np.random.Generator:
    values = np.asarray(values)
    bg = np.random.PCG64()
    bg.state = {
        "bit_generator": "PCG64",
        "state": {"state": _join_u128(values[0:4]), "inc": _join_u128(values[4:8])},
        "has_uint32": int(values[8]),
        "uinteger": int(values[9]),
    }
    return np.random.Generator(bg)


@dataclass
class BetaShootPrior:
    """Beta(alpha, beta) belief over the missile hit rate."""

    alpha: float = 10.0
    beta: float = 10.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("Beta prior parameters must be positive")

    @property
    def mean(self) -> float:
        return self.alpha / (self.alpha + self.beta)

    def record_hit(self) -> None:
        self.alpha += 1.0

    def record_miss(self) -> None:
        self.beta += 1.0


def shoot_gate(policy_shoot_prob: float, prior: BetaShootPrior, rng: np.random.Generator) -> bool:
    """Fire with probability ``policy_shoot_prob`` times the posterior hit rate."""
    if not 0.0 <= policy_shoot_prob <= 1.0:
        raise InvalidActionError(f"shoot probability {policy_shoot_prob} outside [0, 1]")
    return bool(rng.random() < policy_shoot_prob * prior.mean)


@dataclass
class StepOutcome:
    observations: list[np.ndarray]
    rewards: list[RewardBreakdown]
    dones: list[bool]
    episode_done: bool
    events: list[CombatEvent]
    info: dict = field(default_factory=dict)


def observation_size(task: TaskKind) -> int:
    if task is TaskKind.SingleControlHeading:
        return EGO_BLOCK + TASK_BLOCK
    return EGO_BLOCK + OTHER_BLOCK * (task.n_agents - 1) + MISSILE_BLOCK


def _nearest_bin(offsets: Sequence[float], wanted: float) -> int:
    return int(min(range(len(offsets)), key=lambda k: abs(offsets[k] - wanted)))


def pursue_baseline(agent_state: AircraftState, enemy_state: AircraftState, task: TaskKind) -> HighLevelAction:
    """Scripted pure-pursuit opponent: turn and climb toward the enemy at full speed."""
    los = enemy_state.position - agent_state.position
    bearing = math.atan2(los.y, los.x)
    heading_bin = _nearest_bin(HEADING_OFFSETS, wrap_angle(bearing - agent_state.heading))
    altitude_bin = _nearest_bin(ALTITUDE_OFFSETS, los.z)
    shoot = False
    if task.has_weapons:
        geom = relative_geometry(agent_state, enemy_state)
        shoot = geom.distance < 8000.0 and geom.ao < math.radians(30.0)
    return HighLevelAction(heading_bin, altitude_bin, len(SPEED_OFFSETS) - 1, shoot)


Recorder = Callable[["CombatEnv", float], None]


class CombatEnv:
    """One environment instance. Not thread-safe; give each worker its own.

    ``controller_factory`` builds the low-level controller for each aircraft
    and can be swapped for a learned controller with the same call signature.
    """

    def __init__(self, cfg: EnvConfig, controller_factory: Optional[Callable[[], CascadePID]] = None):
        self.cfg = cfg
        self.task = cfg.task
        self.n_agents = self.task.n_agents
        self.obs_dim = observation_size(self.task)
        self._controller_factory = controller_factory or (lambda: CascadePID(cfg.airframe))
        self.rng = np.random.default_rng(cfg.seed)
        self.aircraft: list[AircraftState] = []
        self.controllers: list[CascadePID] = []
        self.missiles: list[MissileState] = []
        self.ammo: list[int] = []
        self.priors: list[BetaShootPrior] = []
        self.last_launch: list[float] = []
        self.target_heading = 0.0
        self.target_altitude = 0.0
        self.target_speed = 0.0
        self.time = 0.0
        self.steps = 0
        self.episode_reward = [0.0] * self.n_agents
        self.episode_over = True

    # -- topology -----------------------------------------------------------

    def team_of(self, agent: int) -> int:
        return 0 if self.n_agents == 1 else agent // self.task.team_size

    def team_members(self, team: int) -> list[int]:
        return [a for a in range(self.n_agents) if self.team_of(a) == team]

    def teammates(self, agent: int) -> list[int]:
        return [a for a in self.team_members(self.team_of(agent)) if a != agent]

    def enemies(self, agent: int) -> list[int]:
        if self.n_agents == 1:
            return []
        return [a for a in range(self.n_agents) if self.team_of(a) != self.team_of(agent)]

    def alive(self, agent: int) -> bool:
        return self.aircraft[agent].alive

    # -- episode control ----------------------------------------------------

    def reset(self, seed: Optional[int] = None) -> list[np.ndarray]:
        """Respawn all aircraft; deterministic in (cfg, seed)."""
        cfg = self.cfg
        self.rng = np.random.default_rng(cfg.seed if seed is None else seed)
        rng = self.rng
        self.time = 0.0
        self.steps = 0
        self.missiles = []
        self.episode_reward = [0.0] * self.n_agents
        self.episode_over = False
        ammo = cfg.missiles_per_aircraft if self.task.has_weapons else 0
        self.ammo = [ammo] * self.n_agents
        self.priors = [BetaShootPrior(cfg.shoot_prior_alpha, cfg.shoot_prior_beta) for _ in range(self.n_agents)]
        self.last_launch = [-math.inf] * self.n_agents

        def altitude() -> float:
            return cfg.spawn_altitude + rng.uniform(-1.0, 1.0) * cfg.spawn_altitude_spread

        if self.task is TaskKind.SingleControlHeading:
            heading = rng.uniform(-math.pi, math.pi)
            self.aircraft = [AircraftState.level(Vec3(0.0, 0.0, altitude()), heading, cfg.spawn_speed)]
            self.target_heading = wrap_angle(rng.uniform(-math.pi, math.pi))
            self.target_altitude = self.aircraft[0].position.z
            self.target_speed = cfg.spawn_speed
        else:
            axis = rng.uniform(-math.pi, math.pi) if cfg.randomize_bearing else 0.0
            separation = cfg.spawn_separation + rng.uniform(-1.0, 1.0) * cfg.spawn_separation_spread
            along = (math.cos(axis), math.sin(axis))
            lateral = (-math.sin(axis), math.cos(axis))
            self.aircraft = []
            for agent in range(self.n_agents):
                team = self.team_of(agent)
                sign = -1.0 if team == 0 else 1.0
                slot = agent - self.team_members(team)[0]
                side = 0.0 if self.task.team_size == 1 else (slot - 0.5) * cfg.wingman_offset
                n = sign * 0.5 * separation * along[0] + side * lateral[0]
                e = sign * 0.5 * separation * along[1] + side * lateral[1]
                heading = axis if team == 0 else wrap_angle(axis + math.pi)
                self.aircraft.append(AircraftState.level(Vec3(n, e, altitude()), heading, cfg.spawn_speed))
        self.controllers = [self._controller_factory() for _ in range(self.n_agents)]
        return [self.build_observation(a) for a in range(self.n_agents)]

    def _validate(self, actions: Sequence[Action]) -> None:
        if len(actions) != self.n_agents:
            raise InvalidActionError(f"expected {self.n_agents} actions, got {len(actions)}")
        for agent, act in enumerate(actions):
            if not self.alive(agent):
                continue
            if isinstance(act, HighLevelAction):
                act.validate()
            elif not isinstance(act, RawAction):
                raise InvalidActionError(f"agent {agent}: unsupported action {act!r}")

    def step(self, actions: Sequence[Action], recorder: Optional[Recorder] = None) -> StepOutcome:
        """Advance one decision step (``decision_interval`` physics steps)."""
        if self.episode_over:
            raise RuntimeError("episode is over; call reset()")
        self._validate(actions)
        cfg = self.cfg
        alive_before = [ac.alive for ac in self.aircraft]

        targets: list[Optional[Targets]] = [None] * self.n_agents
        raw: list[Optional[RawAction]] = [None] * self.n_agents
        for agent, act in enumerate(actions):
            if not alive_before[agent]:
                continue
            if isinstance(act, HighLevelAction):
                targets[agent] = command_targets(act, self.aircraft[agent])
            else:
                raw[agent] = act

        self._fire(actions)

        events: list[CombatEvent] = []
        for _ in range(cfg.decision_interval):
            self._physics_step(targets, raw, events)
            if recorder is not None:
                recorder(self, cfg.dt)

        self.steps += 1
        rewards = []
        for agent in range(self.n_agents):
            if not alive_before[agent]:
                rewards.append(RewardBreakdown())
                continue
            r = self._reward(agent, events)
            self.episode_reward[agent] += r.total
            rewards.append(r)

        truncated = self.steps >= cfg.max_decision_steps
        terminated = self._terminated()
        self.episode_over = terminated or truncated
        dones = [self.episode_over or not ac.alive for ac in self.aircraft]
        return StepOutcome(
            observations=[self.build_observation(a) for a in range(self.n_agents)],
            rewards=rewards,
            dones=dones,
            episode_done=self.episode_over,
            events=events,
            info={
                "episode_reward": list(self.episode_reward),
                "step": self.steps,
                "terminated": terminated,
                "truncated": truncated and not terminated,
            },
        )

    def _terminated(self) -> bool:
        if self.task is TaskKind.SingleControlHeading:
            return not self.aircraft[0].alive
        return any(not any(self.alive(a) for a in self.team_members(t)) for t in range(2))

    # -- weapons ------------------------------------------------------------

    def _fire(self, actions: Sequence[Action]) -> None:
        cfg = self.cfg
        if not self.task.has_weapons:
            return
        for agent in range(self.n_agents):
            if not self.alive(agent) or self.ammo[agent] <= 0:
                continue
            if self.task.learned_shooting:
                act = actions[agent]
                if not getattr(act, "shoot", False):
                    continue
                target = self._gate_target(agent, cfg.shoot_range, cfg.shoot_max_ao)
                if target is None or not shoot_gate(1.0, self.priors[agent], self.rng):
                    continue
            else:
                # scripted launches: team 1 fires at team 0 on a range/angle rule
                if self.team_of(agent) != 1 or self.time - self.last_launch[agent] < cfg.dodge_cooldown:
                    continue
                target = self._gate_target(agent, cfg.dodge_range, cfg.dodge_max_ao)
                if target is None:
                    continue
            self.missiles.append(launch_missile(self.aircraft[agent], agent, target, cfg.missile))
            self.ammo[agent] -= 1
            self.last_launch[agent] = self.time

    def _gate_target(self, agent: int, max_range: float, max_ao: float) -> Optional[int]:
        best, best_d = None, math.inf
        for enemy in self.enemies(agent):
            if not self.alive(enemy):
                continue
            geom = relative_geometry(self.aircraft[agent], self.aircraft[enemy])
            if geom.distance < max_range and geom.ao < max_ao and geom.distance < best_d:
                best, best_d = enemy, geom.distance
        return best

    # -- physics ------------------------------------------------------------

    def _kill(self, agent: int) -> None:
        ac = self.aircraft[agent]
        self.aircraft[agent] = AircraftState(
            ac.position, ac.heading, ac.pitch, ac.roll, ac.airspeed, ac.velocity, ac.acceleration, alive=False
        )

    def _physics_step(self, targets, raw, events: list[CombatEvent]) -> None:
        cfg = self.cfg
        dt = cfg.dt
        for agent, ac in enumerate(self.aircraft):
            if not ac.alive:
                continue
            if targets[agent] is not None:
                ctrl = self.controllers[agent](targets[agent], ac, dt)
            else:
                ctrl = raw[agent].control
            ac = step_airframe(ac, ctrl, cfg.airframe, dt)
            self.aircraft[agent] = ac
            if ac.position.z <= 0.0:
                self._kill(agent)
                events.append(CombatEvent(EventKind.CRASH, agent))
                if cfg.reward.crash_counts_as_kill:
                    credit = self._nearest_alive_enemy(agent)
                    if credit is not None:
                        events.append(CombatEvent(EventKind.ENEMY_KILL, credit, agent))

        for i, m in enumerate(self.missiles):
            if not m.flying:
                continue
            target = self.aircraft[m.target_id]
            if not target.alive:
                m = MissileState(m.position, m.velocity, m.shooter_id, m.target_id, m.age, MissileStatus.EXPIRED)
            else:
                m = step_missile(m, target, cfg.missile, dt)
                if m.status == MissileStatus.HIT:
                    self._kill(m.target_id)
                    events.append(CombatEvent(EventKind.SHOT_DOWN_BY_MISSILE, m.target_id, m.shooter_id))
                    events.append(CombatEvent(EventKind.ENEMY_KILL, m.shooter_id, m.target_id))
            if m.status == MissileStatus.HIT:
                self.priors[m.shooter_id].record_hit()
            elif m.status == MissileStatus.EXPIRED:
                self.priors[m.shooter_id].record_miss()
            self.missiles[i] = m
        self.time += dt

    def _nearest_alive_enemy(self, agent: int) -> Optional[int]:
        me = self.aircraft[agent].position
        alive = [e for e in self.enemies(agent) if self.alive(e)]
        if not alive:
            return None
        return min(alive, key=lambda e: (self.aircraft[e].position - me).norm())

    # -- rewards and observations --------------------------------------------

    def heading_error(self) -> float:
        return wrap_angle(self.target_heading - self.aircraft[0].heading)

    def _reward(self, agent: int, events: list[CombatEvent]) -> RewardBreakdown:
        rcfg = self.cfg.reward
        ac = self.aircraft[agent]
        alt = altitude_reward(ac, rcfg)
        if self.task is TaskKind.SingleControlHeading:
            posture = -abs(self.heading_error()) / math.pi
        else:
            terms = [
                posture_reward(relative_geometry(ac, self.aircraft[e]), rcfg)
                for e in self.enemies(agent)
                if self.alive(e) and self.aircraft[e].position != ac.position
            ]
            posture = sum(terms) / len(terms) if terms else 0.0
        return compose(alt, posture, event_reward(events, agent, rcfg), rcfg)

    # -- snapshots ------------------------------------------------------------

    def get_state(self) -> dict:
        """Everything needed to continue this instance bit-exactly, as float arrays."""
        aircraft = np.array([
            [*ac.position, ac.heading, ac.pitch, ac.roll, ac.airspeed, *ac.velocity, *ac.acceleration, float(ac.alive)]
            for ac in self.aircraft
        ]).reshape(-1, AIRCRAFT_FIELDS)
        missiles = np.array([
            [*m.position, *m.velocity, m.shooter_id, m.target_id, m.age, int(m.status)] for m in self.missiles
        ]).reshape(-1, MISSILE_FIELDS)
        return {
            "aircraft": aircraft,
            "controllers": np.array([c.get_state() for c in self.controllers]).reshape(-1, 3),
            "missiles": missiles,
            "ammo": np.array(self.ammo, dtype=np.float64),
            "priors": np.array([[p.alpha, p.beta] for p in self.priors]).reshape(-1, 2),
            "last_launch": np.array(self.last_launch, dtype=np.float64),
            "scalars": np.array([
                self.target_heading, self.target_altitude, self.target_speed,
                self.time, self.steps, float(self.episode_over),
            ]),
            "episode_reward": np.array(self.episode_reward, dtype=np.float64),
            "rng": pcg64_to_array(self.rng),
        }

    def set_state(self, state: dict) -> None:
        self.aircraft = [
            AircraftState(Vec3(*r[0:3]), float(r[3]), float(r[4]), float(r[5]), float(r[6]),
                          Vec3(*r[7:10]), Vec3(*r[10:13]), bool(r[13]))
            for r in np.asarray(state["aircraft"]).tolist()
        ]
        self.controllers = []
        for values in np.asarray(state["controllers"]).tolist():
            ctrl = self._controller_factory()
            ctrl.set_state(values)
            self.controllers.append(ctrl)
        self.missiles = [
            MissileState(Vec3(*r[0:3]), Vec3(*r[3:6]), int(r[6]), int(r[7]), float(r[8]), MissileStatus(int(r[9])))
            for r in np.asarray(state["missiles"]).tolist()
        ]
        self.ammo = [int(a) for a in state["ammo"]]
        self.priors = [BetaShootPrior(float(a), float(b)) for a, b in np.asarray(state["priors"]).tolist()]
        self.last_launch = [float(t) for t in state["last_launch"]]
        th, ta, ts, time, steps, over = np.asarray(state["scalars"]).tolist()
        self.target_heading, self.target_altitude, self.target_speed = th, ta, ts
        self.time, self.steps, self.episode_over = time, int(steps), bool(over)
        self.episode_reward = [float(r) for r in state["episode_reward"]]
        self.rng = pcg64_from_array(state["rng"])

    def geometry(self, agent: int, other: int) -> RelativeGeometry:
        return relative_geometry(self.aircraft[agent], self.aircraft[other])

    def build_observation(self, agent: int) -> np.ndarray:
        return build_observation(agent, self)


def build_observation(agent: int, world: CombatEnv) -> np.ndarray:
    """Normalized feature vector; all zeros for a dead agent."""
    obs = np.zeros(world.obs_dim)
    ac = world.aircraft[agent]
    if not ac.alive:
        return obs
    obs[:EGO_BLOCK] = (
        ac.position.z / 5000.0,
        math.sin(ac.heading),
        math.cos(ac.heading),
        math.sin(ac.roll),
        math.cos(ac.roll),
        math.sin(ac.pitch),
        math.cos(ac.pitch),
        ac.airspeed / 340.0,
        ac.velocity.z / 100.0,
    )
    if world.task is TaskKind.SingleControlHeading:
        err = world.heading_error()
        obs[EGO_BLOCK:] = (
            math.sin(err),
            math.cos(err),
            (world.target_altitude - ac.position.z) / 5000.0,
            (world.target_speed - ac.airspeed) / 340.0,
        )
        return obs

    offset = EGO_BLOCK
    for other in world.teammates(agent) + world.enemies(agent):
        oc = world.aircraft[other]
        if oc.alive and oc.position != ac.position:
            g = relative_geometry(ac, oc)
            obs[offset:offset + OTHER_BLOCK] = (
                g.distance / 10_000.0,
                g.closure_rate / 340.0,
                g.ao / math.pi,
                g.ta / math.pi,
                g.delta_altitude / 5000.0,
                g.delta_heading / math.pi,
            )
        offset += OTHER_BLOCK

    threat = _nearest_threat(agent, world)
    if threat is not None:
        distance, closure, bearing, ttg = threat
        obs[offset:offset + MISSILE_BLOCK] = (
            1.0,
            distance / 10_000.0,
            closure / 680.0,
            math.sin(bearing),
            math.cos(bearing),
            ttg / 60.0,
        )
    return obs


def _nearest_threat(agent: int, world: CombatEnv):
    ac = world.aircraft[agent]
    best = None
    for m in world.missiles:
        if not m.flying or m.target_id != agent:
            continue
        los = ac.position - m.position
        distance = los.norm()
        if distance == 0.0:
            continue
        closure = -los.dot(ac.velocity - m.velocity) / distance
        ttg = min(60.0, distance / closure) if closure > 0 else 60.0
        if best is None or ttg < best[3]:
            bearing = wrap_angle(math.atan2(-los.y, -los.x) - ac.heading)
            best = (distance, closure, bearing, ttg)
    return best
