"""Training sessions: rollouts, trainer updates, evaluation, logging, checkpoints.

A :class:`Session` holds every piece of mutable state for one (config, seed)
run, so a checkpoint of it resumes bit-exactly. Timesteps count decision
steps summed over the parallel env instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..arena import CombatEnv, observation_size
from ..errors import IntegrityError
from ..arena.env import pcg64_from_array, pcg64_to_array
from ..happo import HappoTrainer, RolloutBuffer, compute_gae
from ..hasac import HasacTrainer, ReplayBuffer
from ..neural import AdamState, init_mlp
from .agents import PolicySet, team_reward
from .checkpoint import Checkpoint, array_to_text, load_checkpoint, save_checkpoint, text_to_array
from .config import Algorithm, RunConfig, apply_overrides, config_digest, dump_config, load_config, parse_config_text
from .evaluation import TRAIN_STREAM, episode_seed, evaluate
from .metrics import MetricsWriter, metric_keys


def run_dir(cfg: RunConfig, seed: int) -> Path:
    return Path(cfg.out_dir) / f"{cfg.algo.value}-seed{seed}"


class StatPool:
    """Running sums of named scalars between two metrics rows."""

    def __init__(self):
        self.sums: dict[str, float] = {}
        self.counts: dict[str, float] = {}

    def add(self, key: str, value: float, weight: float = 1.0) -> None:
        self.sums[key] = self.sums.get(key, 0.0) + float(value) * weight
        self.counts[key] = self.counts.get(key, 0.0) + weight

    def means(self) -> dict[str, float]:
        return {k: self.sums[k] / self.counts[k] for k in self.sums if self.counts[k] > 0}

    def clear(self) -> None:
        self.sums.clear()
        self.counts.clear()


@dataclass
class TrainResult:
    seed: int
    timestep: int
    metrics_path: Path
    checkpoint_path: Path
    last_eval: Optional[tuple[float, float]]


class Session:
    """All mutable state of one training run."""

    def __init__(self, cfg: RunConfig, seed: int):
        self.cfg = cfg
        self.seed = int(seed)
        self.digest = config_digest(cfg, self.seed)
        init_rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xA11]))
        self.rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x7A1]))
        self.policies = PolicySet.build(cfg, init_rng)
        self.obs_dim = observation_size(cfg.task)
        self.n_agents = cfg.task.n_agents
        self.teams = self.policies.teams
        self.happo = cfg.algo is Algorithm.happo
        self.n_envs = cfg.happo.n_envs if self.happo else cfg.hasac.n_envs
        if self.happo:
            self.trainers = [
                HappoTrainer([self.policies.actors[a] for a in team],
                             init_mlp((len(team) * self.obs_dim, *cfg.hidden, 1), init_rng), cfg.happo)
                for team in self.teams
            ]
            self.replays = []
        else:
            self.trainers = [
                HasacTrainer([self.policies.actors[a] for a in team], self.obs_dim, cfg.hasac, init_rng, cfg.hidden)
                for team in self.teams
            ]
            self.replays = [
                ReplayBuffer(cfg.hasac.buffer_capacity, len(team) * self.obs_dim, len(team), tr.act_dim)
                for team, tr in zip(self.teams, self.trainers)
            ]
        self.envs = [CombatEnv(cfg.env) for _ in range(self.n_envs)]
        self.episode_index = [0] * self.n_envs
        for i, env in enumerate(self.envs):
            env.reset(episode_seed(self.seed, TRAIN_STREAM, i, 0))
        self.episode_sums = np.zeros((self.n_envs, len(self.teams)))
        self.timestep = 0
        self.iteration = 0
        self.update_credit = 0.0
        self.next_eval = cfg.eval_interval
        self.next_metrics = cfg.metrics_interval
        self.pool = StatPool()
        self.last_eval: Optional[tuple[float, float]] = None

    # -- observation helpers -------------------------------------------------

    def observations(self) -> np.ndarray:
        """(n_envs, n_agents, obs_dim) for the current env states."""
        return np.array([[env.build_observation(a) for a in range(self.n_agents)] for env in self.envs])

    def share_obs(self, obs: np.ndarray, team: list[int]) -> np.ndarray:
        return obs[..., team, :].reshape(*obs.shape[:-2], len(team) * self.obs_dim)

    def _reset_env(self, i: int) -> None:
        self.episode_index[i] += 1
        self.envs[i].reset(episode_seed(self.seed, TRAIN_STREAM, i, self.episode_index[i]))

    def _finish_episode(self, i: int) -> None:
        self.pool.add("train_episode_reward", float(self.episode_sums[i].mean()))
        self.episode_sums[i] = 0.0

    # -- HAPPO ----------------------------------------------------------------

    def happo_iteration(self) -> dict:
        cfg = self.cfg.happo
        T, E = cfg.rollout_length, self.n_envs
        n_teams = len(self.teams)
        act_dim = self.policies.head.action_dim
        obs_buf = np.zeros((T, E, self.n_agents, self.obs_dim))
        act_buf = np.zeros((T, E, self.n_agents, act_dim))
        logp_buf = np.zeros((T, E, self.n_agents))
        active = np.zeros((T, E, self.n_agents))
        rewards = np.zeros((T, E, n_teams))
        dones = np.zeros((T, E))
        values = np.zeros((T + 1, E, n_teams))
        raw_reward_sum = 0.0

        for t in range(T):
            obs = self.observations()
            obs_buf[t] = obs
            for k, (team, trainer) in enumerate(zip(self.teams, self.trainers)):
                values[t, :, k] = trainer.value(self.share_obs(obs, team))
            rows = {}
            for a in self.policies.learners:
                rows[a] = self.policies.rows(a, obs[:, a], self.rng, "sample")
                act_buf[t, :, a] = rows[a]
                logp_buf[t, :, a] = self.policies.actors[a].logp_entropy(obs[:, a], rows[a])[0]
            for i, env in enumerate(self.envs):
                active[t, i] = [float(env.alive(a)) for a in range(self.n_agents)]
                out = env.step(self.policies.env_actions(env, {a: r[i] for a, r in rows.items()}))
                totals = [r.total for r in out.rewards]
                for k, team in enumerate(self.teams):
                    rewards[t, i, k] = team_reward(totals, team)
                raw_reward_sum += rewards[t, i].mean()
                self.episode_sums[i] += rewards[t, i]
                if out.episode_done:
                    dones[t, i] = 1.0
                    if out.info["truncated"]:
                        final = np.array(out.observations)
                        for k, (team, trainer) in enumerate(zip(self.teams, self.trainers)):
                            rewards[t, i, k] += cfg.gamma * float(trainer.value(self.share_obs(final, team)))
                    self._finish_episode(i)
                    self._reset_env(i)
        obs = self.observations()
        for k, (team, trainer) in enumerate(zip(self.teams, self.trainers)):
            values[T, :, k] = trainer.value(self.share_obs(obs, team))

        row: dict = {}
        v_losses, c_norms = [], []
        for k, (team, trainer) in enumerate(zip(self.teams, self.trainers)):
            adv, ret = compute_gae(rewards[:, :, k], values[:, :, k], dones, cfg.gamma, cfg.gae_lambda)
            nt = len(team)
            buf = RolloutBuffer(
                obs=obs_buf[:, :, team].reshape(T * E, nt, self.obs_dim),
                share_obs=self.share_obs(obs_buf, team).reshape(T * E, nt * self.obs_dim),
                actions=act_buf[:, :, team].reshape(T * E, nt, act_dim),
                logp_old=logp_buf[:, :, team].reshape(T * E, nt),
                active=active[:, :, team].reshape(T * E, nt),
                advantages=adv.reshape(T * E),
                returns=ret.reshape(T * E),
                values=values[:T, :, k].reshape(T * E),
            )
            stats = trainer.sequential_update(buf, self.rng)
            for local, agent in enumerate(team):
                s = stats[local]
                row[f"policy_loss/agent{agent}"] = s["policy_loss"]
                row[f"dist_entropy/agent{agent}"] = s["dist_entropy"]
                row[f"actor_grad_norm/agent{agent}"] = s["actor_grad_norm"]
                row[f"imp_weights_mean/agent{agent}"] = s["imp_weights_mean"]
            v_losses.append(stats["value_loss"])
            c_norms.append(stats["critic_grad_norm"])
        row["value_loss"] = float(np.mean(v_losses))
        row["critic_grad_norm"] = float(np.mean(c_norms))
        row["average_step_rewards"] = raw_reward_sum / (T * E)
        episodes = self.pool.means()
        row["train_episode_reward"] = episodes.get("train_episode_reward")
        self.pool.clear()
        self.timestep += T * E
        self.iteration += 1
        return row

    # -- HASAC ----------------------------------------------------------------

    def hasac_step(self) -> None:
        """Step every env once, store transitions and run the due updates."""
        cfg = self.cfg.hasac
        obs = self.observations()
        mode = "random" if self.timestep < cfg.warmup_steps else "sample"
        rows = {a: self.policies.rows(a, obs[:, a], self.rng, mode) for a in self.policies.learners}
        for i, env in enumerate(self.envs):
            out = env.step(self.policies.env_actions(env, {a: r[i] for a, r in rows.items()}))
            totals = [r.total for r in out.rewards]
            next_obs = np.array(out.observations)
            terminal = out.episode_done and not out.info["truncated"]
            for k, (team, replay) in enumerate(zip(self.teams, self.replays)):
                joint = np.zeros((len(team), replay.actions.shape[-1]))
                for local, a in enumerate(team):
                    joint[local, :rows[a].shape[1]] = rows[a][i]
                replay.store(self.share_obs(obs[i], team), joint, [totals[a] for a in team],
                             self.share_obs(next_obs, team), terminal)
                r = team_reward(totals, team)
                self.episode_sums[i, k] += r
            self.pool.add("average_step_rewards", float(np.mean([team_reward(totals, t) for t in self.teams])))
            if out.episode_done:
                self._finish_episode(i)
                self._reset_env(i)
        self.timestep += self.n_envs
        if self.timestep < cfg.warmup_steps:
            return
        self.update_credit += self.n_envs * cfg.updates_per_step
        while self.update_credit >= 1.0:
            if any(len(rep) < cfg.batch_size for rep in self.replays):
                self.update_credit = 0.0
                break
            self.update_credit -= 1.0
            for team, trainer, replay in zip(self.teams, self.trainers, self.replays):
                stats = trainer.train_step(replay.sample(cfg.batch_size, self.rng), self.rng)
                for local, agent in enumerate(team):
                    s = stats["agents"][local]
                    self.pool.add(f"policy_loss/agent{agent}", s["policy_loss"])
                    self.pool.add(f"dist_entropy/agent{agent}", s["dist_entropy"])
                    self.pool.add(f"actor_grad_norm/agent{agent}", s["actor_grad_norm"])
                self.pool.add("value_loss", stats["value_loss"])
                self.pool.add("critic_grad_norm", stats["critic_grad_norm"])
                self.pool.add("alpha", stats["alpha"])

    def hasac_row(self) -> dict:
        row = self.pool.means()
        self.pool.clear()
        return row

    # -- state ----------------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays: dict[str, np.ndarray] = {}

        def put_params(prefix, params):
            for k, v in params.items():
                arrays[f"{prefix}/{k}"] = v

        def put_adam(prefix, opt: AdamState):
            arrays[f"{prefix}/t"] = np.array([opt.t], dtype=np.float64)
            put_params(f"{prefix}/m", opt.m)
            put_params(f"{prefix}/v", opt.v)

        arrays["meta/config"] = text_to_array(dump_config(self.cfg, include_run_length=False))
        arrays["meta/counters"] = np.array([
            self.seed, self.timestep, self.iteration, self.update_credit, self.next_eval, self.next_metrics,
        ], dtype=np.float64)
        arrays["meta/rng"] = pcg64_to_array(self.rng)
        arrays["meta/episode_index"] = np.array(self.episode_index, dtype=np.float64)
        arrays["meta/episode_sums"] = self.episode_sums.copy()
        arrays["meta/pool_keys"] = text_to_array("\n".join(self.pool.sums))
        arrays["meta/pool"] = np.array([[self.pool.sums[k], self.pool.counts[k]] for k in self.pool.sums]).reshape(-1, 2)
        if self.last_eval is not None:
            arrays["meta/last_eval"] = np.array(self.last_eval)
        for a, actor in enumerate(self.policies.actors):
            if actor is not None:
                put_params(f"actor{a}", actor.params)
        for k, trainer in enumerate(self.trainers):
            team = self.teams[k]
            for local, agent in enumerate(team):
                put_adam(f"team{k}/actor_opt{agent}", trainer.actor_opt[local])
            if self.happo:
                put_params(f"team{k}/critic", trainer.critic)
                put_adam(f"team{k}/critic_opt", trainer.critic_opt)
            else:
                for c in range(2):
                    put_params(f"team{k}/critic{c}", trainer.critics[c])
                    put_params(f"team{k}/target{c}", trainer.targets[c])
                    put_adam(f"team{k}/critic_opt{c}", trainer.critic_opt[c])
                arrays[f"team{k}/log_alpha"] = np.array([trainer.log_alpha])
                rep = self.replays[k]
                n = rep.length
                arrays[f"team{k}/replay/cursor"] = np.array([rep.cursor, rep.length], dtype=np.float64)
                for name in ("share_obs", "actions", "rewards", "next_share_obs", "dones"):
                    arrays[f"team{k}/replay/{name}"] = getattr(rep, name)[:n]
        for i, env in enumerate(self.envs):
            for key, value in env.get_state().items():
                arrays[f"env{i}/{key}"] = value
        return arrays

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        def get_params(prefix, template):
            for k in template:
                template[k][...] = arrays[f"{prefix}/{k}"]

        def get_adam(prefix, opt: AdamState):
            opt.t = int(arrays[f"{prefix}/t"][0])
            for part, store in (("m", opt.m), ("v", opt.v)):
                store.clear()
                head = f"{prefix}/{part}/"
                for name in sorted(n for n in arrays if n.startswith(head)):
                    store[name[len(head):]] = arrays[name].copy()

        seed, timestep, iteration, credit, next_eval, next_metrics = arrays["meta/counters"].tolist()
        if int(seed) != self.seed:
            raise ValueError(f"checkpoint belongs to seed {int(seed)}, session has seed {self.seed}")
        self.timestep, self.iteration = int(timestep), int(iteration)
        self.update_credit = credit
        self.next_eval, self.next_metrics = int(next_eval), int(next_metrics)
        self.rng = pcg64_from_array(arrays["meta/rng"])
        self.episode_index = [int(x) for x in arrays["meta/episode_index"]]
        self.episode_sums = arrays["meta/episode_sums"].copy()
        keys = array_to_text(arrays["meta/pool_keys"])
        self.pool.clear()
        for key, (s, c) in zip(keys.split("\n") if keys else [], arrays["meta/pool"].tolist()):
            self.pool.sums[key] = s
            self.pool.counts[key] = c
        self.last_eval = tuple(arrays["meta/last_eval"].tolist()) if "meta/last_eval" in arrays else None
        for a, actor in enumerate(self.policies.actors):
            if actor is not None:
                get_params(f"actor{a}", actor.params)
        for k, trainer in enumerate(self.trainers):
            for local, agent in enumerate(self.teams[k]):
                get_adam(f"team{k}/actor_opt{agent}", trainer.actor_opt[local])
            if self.happo:
                get_params(f"team{k}/critic", trainer.critic)
                get_adam(f"team{k}/critic_opt", trainer.critic_opt)
            else:
                for c in range(2):
                    get_params(f"team{k}/critic{c}", trainer.critics[c])
                    get_params(f"team{k}/target{c}", trainer.targets[c])
                    get_adam(f"team{k}/critic_opt{c}", trainer.critic_opt[c])
                trainer.log_alpha = float(arrays[f"team{k}/log_alpha"][0])
                rep = self.replays[k]
                cursor, length = (int(x) for x in arrays[f"team{k}/replay/cursor"])
                for name in ("share_obs", "actions", "rewards", "next_share_obs", "dones"):
                    getattr(rep, name)[:length] = arrays[f"team{k}/replay/{name}"]
                rep.cursor, rep.length = cursor, length
        for i, env in enumerate(self.envs):
            prefix = f"env{i}/"
            env.set_state({n[len(prefix):]: v for n, v in arrays.items() if n.startswith(prefix)})

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.digest, self.timestep, self.state_arrays())

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint, cfg: Optional[RunConfig] = None) -> Session:
        """Rebuild a session; without ``cfg`` the config stored in the file is used."""
        if cfg is None:
            cfg = config_from_checkpoint(ckpt)
        seed = int(ckpt.arrays["meta/counters"][0])
        session = cls(cfg, seed)
        session.load_arrays(ckpt.arrays)
        return session


def config_from_checkpoint(ckpt: Checkpoint) -> RunConfig:
    return apply_overrides(RunConfig(), parse_config_text(array_to_text(ckpt.arrays["meta/config"]))).validate()


def _crossed(timestep: int, marker: int, interval: int) -> tuple[bool, int]:
    """Whether ``timestep`` reached ``marker``; returns the next marker beyond it."""
    if timestep < marker:
        return False, marker
    while marker <= timestep:
        marker += interval
    return True, marker


def train_session(session: Session, total_timesteps: int, metrics: MetricsWriter,
                  checkpoint_path: Path, log=None) -> TrainResult:
    """Advance ``session`` until ``total_timesteps`` and write its artifacts."""
    cfg = session.cfg

    def maybe_eval():
        due, session.next_eval = _crossed(session.timestep, session.next_eval, cfg.eval_interval)
        if due:
            avg, best = evaluate(session.policies, cfg, cfg.eval_episodes, session.seed)
            session.last_eval = (avg, best)
            metrics.write({"timestep": session.timestep, "eval_average_episode_rewards": avg,
                           "eval_max_episode_rewards": best})
            if log:
                log(f"seed {session.seed} step {session.timestep}: eval avg {avg:.3f} max {best:.3f}")

    def maybe_checkpoint(before: int):
        k = cfg.checkpoint_interval
        if k > 0 and session.timestep // k > before // k:
            save_checkpoint(checkpoint_path.with_name(f"checkpoint-{session.timestep}.ckpt"), session.checkpoint())

    while session.timestep < total_timesteps:
        before = session.timestep
        if session.happo:
            row = session.happo_iteration()
            row["timestep"] = session.timestep
            metrics.write(row)
        else:
            session.hasac_step()
            due, session.next_metrics = _crossed(session.timestep, session.next_metrics, cfg.metrics_interval)
            if due:
                row = session.hasac_row()
                row["timestep"] = session.timestep
                metrics.write(row)
        maybe_eval()
        maybe_checkpoint(before)
    save_checkpoint(checkpoint_path, session.checkpoint())
    return TrainResult(session.seed, session.timestep, metrics.path, checkpoint_path, session.last_eval)


def run_training(cfg: RunConfig, resume: Optional[str | Path] = None, force: bool = False, log=None) -> list[TrainResult]:
    """Train every seed in ``cfg``; with ``resume`` continue the single run in that checkpoint."""
    cfg.validate()
    results = []
    if resume is not None:
        ckpt = load_checkpoint(resume)
        seed = int(ckpt.arrays["meta/counters"][0])
        if ckpt.digest != config_digest(cfg, seed) and not force:
            raise IntegrityError("checkpoint was written under a different configuration (use --force to override)")
        session = Session.from_checkpoint(ckpt, cfg)
        directory = run_dir(cfg, seed)
        metrics = MetricsWriter(directory / "metrics.csv", metric_keys(cfg.algo.value, session.policies.learners),
                                resume_from=session.timestep)
        results.append(train_session(session, cfg.total_timesteps, metrics, directory / "checkpoint.ckpt", log))
        return results
    for seed in cfg.seeds:
        session = Session(cfg, seed)
        directory = run_dir(cfg, seed)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "config.txt").write_text(dump_config(cfg))
        metrics = MetricsWriter(directory / "metrics.csv", metric_keys(cfg.algo.value, session.policies.learners))
        results.append(train_session(session, cfg.total_timesteps, metrics, directory / "checkpoint.ckpt", log))
    return results


__all__ = [
    "Session",
    "StatPool",
    "TrainResult",
    "config_from_checkpoint",
    "load_config",
    "run_dir",
    "run_training",
    "train_session",
]
