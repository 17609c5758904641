"""Heterogeneous-agent PPO: GAE, the clipped multi-agent surrogate and the
sequential per-agent update with a running importance-weight correction."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .neural import (
    Actor,
    AdamState,
    Params,
    adam_step,
    backward,
    forward,
    global_norm_clip,
)


@dataclass
class HappoConfig:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 5
    minibatches: int = 4
    actor_lr: float = 5e-4
    critic_lr: float = 5e-4
    entropy_coef: float = 0.01
    value_coef: float = 1.0
    max_grad_norm: float = 0.5
    normalize_advantages: bool = True
    randomize_order: bool = True
    value_clip: bool = False
    rollout_length: int = 200
    n_envs: int = 4

    def __post_init__(self):
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be positive")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.epochs < 1 or self.minibatches < 1:
            raise ValueError("epochs and minibatches must be >= 1")


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, gamma: float, lam: float):
    """Generalized advantage estimation along axis 0.

    ``values`` carries one extra bootstrap row. ``dones[t]`` marks that the
    episode ended after step ``t``, which cuts both bootstrapping and the trace.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    T = rewards.shape[0]
    if values.shape[0] != T + 1:
        raise ValueError("values must have one more row than rewards")
    adv = np.zeros_like(rewards)
    last = np.zeros(rewards.shape[1:])
    for t in reversed(range(T)):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        adv[t] = last
    return adv, adv + values[:-1]


def normalize(x: np.ndarray) -> np.ndarray:
    std = x.std()
    if std == 0.0:
        return x - x.mean()
    return (x - x.mean()) / std


def surrogate_objective(ratio, factor, eps: float):
    """Pessimistic clipped objective ``min(r*m, clip(r, 1-eps, 1+eps)*m)``."""
    ratio = np.asarray(ratio, dtype=np.float64)
    factor = np.asarray(factor, dtype=np.float64)
    return np.minimum(ratio * factor, np.clip(ratio, 1.0 - eps, 1.0 + eps) * factor)


def masked_mean(x: np.ndarray, mask: np.ndarray) -> float:
    total = mask.sum()
    return float((x * mask).sum() / total) if total > 0 else 0.0


def actor_loss(actor: Actor, obs, actions, logp_old, factor, mask, eps: float, entropy_coef: float,
               params: Params | None = None):
    """Negated clipped surrogate minus entropy bonus, with gradients.

    Returns ``(loss, grads, stats)``; samples with ``mask == 0`` are ignored.
    """
    if params is not None:
        saved, actor.params = actor.params, params
    try:
        logp, ent, ctx = actor.logp_entropy(obs, actions)
        ratio = np.exp(logp - logp_old)
        obj = surrogate_objective(ratio, factor, eps)
        n = max(float(mask.sum()), 1.0)
        loss = -float((obj * mask).sum()) / n - entropy_coef * float((ent * mask).sum()) / n
        unclipped = ratio * factor <= np.clip(ratio, 1.0 - eps, 1.0 + eps) * factor
        dlogp = -np.where(unclipped, factor * ratio, 0.0) * mask / n
        dent = -entropy_coef * mask / n
        grads = actor.backward(ctx, actions, dlogp, dent)
    finally:
        if params is not None:
            actor.params = saved
    stats = {
        "policy_loss": -masked_mean(obj, mask),
        "entropy": masked_mean(ent, mask),
    }
    return loss, grads, stats


def value_loss(critic: Params, share_obs, returns, value_coef: float, old_values=None, clip_eps: float | None = None):
    """``value_coef * mean((V - R)^2)``, optionally with PPO-style value clipping."""
    out, cache = forward(critic, share_obs)
    v = out[:, 0]
    n = v.shape[0]
    err = v - returns
    if old_values is not None and clip_eps is not None:
        v_clip = old_values + np.clip(v - old_values, -clip_eps, clip_eps)
        err_clip = v_clip - returns
        use_clip = err_clip ** 2 > err ** 2
        loss = value_coef * float(np.mean(np.where(use_clip, err_clip ** 2, err ** 2)))
        inside = np.abs(v - old_values) < clip_eps
        dv = np.where(use_clip, 2.0 * err_clip * inside, 2.0 * err) * value_coef / n
    else:
        loss = value_coef * float(np.mean(err ** 2))
        dv = 2.0 * err * value_coef / n
    grads, _ = backward(critic, cache, dv[:, None])
    return loss, grads


@dataclass
class RolloutBuffer:
    """On-policy samples for one learner team, flattened over (time, env).

    ``obs``/``actions``/``logp_old``/``active`` are indexed ``[sample, agent]``;
    ``share_obs``, ``advantages``, ``returns`` and ``values`` by sample only.
    """

    obs: np.ndarray
    share_obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    active: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        n = self.obs.shape[0]
        for name in ("share_obs", "actions", "logp_old", "active", "advantages", "returns", "values"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"buffer field {name} has {getattr(self, name).shape[0]} rows, expected {n}")

    @property
    def size(self) -> int:
        return self.obs.shape[0]

    @property
    def n_agents(self) -> int:
        return self.obs.shape[1]


class HappoTrainer:
    """Sequential clipped updates over one team's actors plus a centralized critic."""

    def __init__(self, actors: list[Actor], critic: Params, cfg: HappoConfig):
        self.actors = actors
        self.critic = critic
        self.cfg = cfg
        self.actor_opt = [AdamState() for _ in actors]
        self.critic_opt = AdamState()

    def value(self, share_obs) -> np.ndarray:
        return forward(self.critic, share_obs)[0][..., 0]

    def sequential_update(self, buf: RolloutBuffer, rng: np.random.Generator, record_factors: bool = False) -> dict:
        """One training iteration. Returns metrics; with ``record_factors`` the
        running correction factor before each agent is included under ``factors``."""
        cfg = self.cfg
        n_agents = len(self.actors)
        adv = normalize(buf.advantages) if cfg.normalize_advantages else buf.advantages.copy()
        factor = adv.copy()
        order = rng.permutation(n_agents) if cfg.randomize_order else np.arange(n_agents)
        metrics: dict = {"order": order.tolist()}
        factors = []
        for agent in order:
            agent = int(agent)
            actor = self.actors[agent]
            mask = buf.active[:, agent].astype(np.float64)
            obs = buf.obs[:, agent]
            act = buf.actions[:, agent]
            logp_old = buf.logp_old[:, agent]
            if record_factors:
                factors.append((agent, factor.copy()))
            losses, ents, norms = [], [], []
            for _ in range(cfg.epochs):
                for idx in np.array_split(rng.permutation(buf.size), cfg.minibatches):
                    if idx.size == 0:
                        continue
                    loss, grads, stats = actor_loss(
                        actor, obs[idx], act[idx], logp_old[idx], factor[idx], mask[idx],
                        cfg.clip_eps, cfg.entropy_coef,
                    )
                    if not math.isfinite(loss):
                        raise NumericalError(f"non-finite actor loss for agent {agent}: {stats}")
                    grads, norm = global_norm_clip(grads, cfg.max_grad_norm)
                    adam_step(actor.params, grads, self.actor_opt[agent], cfg.actor_lr)
                    losses.append(stats["policy_loss"])
                    ents.append(stats["entropy"])
                    norms.append(norm)
            logp_new, _, _ = actor.logp_entropy(obs, act)
            ratio = np.where(mask > 0, np.exp(logp_new - logp_old), 1.0)
            factor = factor * ratio
            active_ratio = ratio[mask > 0] if mask.any() else np.ones(1)
            metrics[agent] = {
                "policy_loss": float(np.mean(losses)),
                "dist_entropy": float(np.mean(ents)),
                "actor_grad_norm": float(np.mean(norms)),
                "imp_weights_mean": float(active_ratio.mean()),
                "imp_weights_min": float(active_ratio.min()),
                "imp_weights_max": float(active_ratio.max()),
            }
        if record_factors:
            factors.append((None, factor.copy()))
            metrics["factors"] = factors

        v_losses, v_norms = [], []
        for _ in range(cfg.epochs):
            for idx in np.array_split(rng.permutation(buf.size), cfg.minibatches):
                if idx.size == 0:
                    continue
                loss, grads = value_loss(
                    self.critic, buf.share_obs[idx], buf.returns[idx], cfg.value_coef,
                    buf.values[idx] if cfg.value_clip else None, cfg.clip_eps if cfg.value_clip else None,
                )
                if not math.isfinite(loss):
                    raise NumericalError("non-finite critic loss")
                grads, norm = global_norm_clip(grads, cfg.max_grad_norm)
                adam_step(self.critic, grads, self.critic_opt, cfg.critic_lr)
                v_losses.append(loss)
                v_norms.append(norm)
        metrics["value_loss"] = float(np.mean(v_losses))
        metrics["critic_grad_norm"] = float(np.mean(v_norms))
        return metrics
