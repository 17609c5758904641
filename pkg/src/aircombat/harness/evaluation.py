"""Episode playback shared by evaluation, baselines and trajectory export."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..arena import CombatEnv
from .agents import PolicySet, team_reward
from .config import RunConfig

TRAIN_STREAM = 0
EVAL_STREAM = 1


def episode_seed(seed: int, stream: int, *index: int) -> int:
    """Reset seed for one episode, derived from the run seed and a stream tag."""
    return int(np.random.SeedSequence([seed, stream, *index]).generate_state(1, np.uint64)[0])


def play_episodes(policies: PolicySet, cfg: RunConfig, seeds: list[int], mode: str = "greedy",
                  rng: Optional[np.random.Generator] = None, recorder=None, on_step=None) -> np.ndarray:
    """Run one episode per reset seed, all in lockstep; return each episode's score.

    The score is the per-step team reward (mean over members) summed over
    the episode, then averaged over learner teams. ``recorder`` (called every
    physics step) and ``on_step`` (called with each decision outcome) are only
    allowed with a single episode.
    """
    if (recorder is not None or on_step is not None) and len(seeds) != 1:
        raise ValueError("a recorder can only follow a single episode")
    if mode != "greedy" and rng is None:
        raise ValueError(f"mode {mode!r} needs an rng")
    envs = [CombatEnv(cfg.env) for _ in seeds]
    for env, s in zip(envs, seeds):
        env.reset(s)
    teams = policies.teams
    sums = np.zeros((len(envs), len(teams)))
    running = list(range(len(envs)))
    while running:
        obs = np.array([[envs[i].build_observation(a) for a in range(policies.n_agents)] for i in running])
        rows = {a: policies.rows(a, obs[:, a], rng, mode) for a in policies.learners}
        still = []
        for j, i in enumerate(running):
            env = envs[i]
            actions = policies.env_actions(env, {a: r[j] for a, r in rows.items()})
            out = env.step(actions, recorder)
            if on_step is not None:
                on_step(env, out)
            totals = [r.total for r in out.rewards]
            for t, team in enumerate(teams):
                sums[i, t] += team_reward(totals, team)
            if not out.episode_done:
                still.append(i)
        running = still
    return sums.mean(axis=1)


def evaluate(policies: PolicySet, cfg: RunConfig, episodes: int, seed: int, mode: str = "greedy") -> tuple[float, float]:
    """Average and maximum episode score over ``episodes`` fixed-seed episodes.

    Uses fresh env instances and its own random stream, so training state is
    never touched.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    seeds = [episode_seed(seed, EVAL_STREAM, k) for k in range(episodes)]
    rng = np.random.default_rng(np.random.SeedSequence([seed, EVAL_STREAM, 1 << 20])) if mode != "greedy" else None
    scores = play_episodes(policies, cfg, seeds, mode, rng)
    return float(scores.mean()), float(scores.max())
