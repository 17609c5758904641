"""Heterogeneous-agent soft actor-critic.

Critics are a centralized twin pair over the joint observation and the joint
action encoding. Categorical action groups are handled with exact
expectations: for each agent, the critic is evaluated on every joint
combination of that agent's groups while the other agents' actions are held
fixed. Continuous components use a single reparameterized sample.
"""

from __future__ import annotations

import copy
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, NumericalError
from .neural import (
    LOG_2PI,
    Actor,
    AdamState,
    PolicyHead,
    adam_step,
    backward,
    categorical_log_probs,
    encode_actions,
    forward,
    global_norm_clip,
    init_mlp,
    log1m_tanh_sq,
    polyak_update,
    sample_from_output,
)


# keeps exp(log_alpha) a normal positive float under long adaptation runs
LOG_ALPHA_MIN, LOG_ALPHA_MAX = -20.0, 5.0


@dataclass
class HasacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    alpha: float = 0.2
    auto_alpha: bool = True
    target_entropy_scale: float = 0.6
    batch_size: int = 256
    warmup_steps: int = 2000
    updates_per_step: float = 1.0
    critic_lr: float = 3e-4
    actor_lr: float = 3e-4
    alpha_lr: float = 3e-4
    buffer_capacity: int = 200_000
    max_grad_norm: float = 10.0
    reward_scale: float = 1.0
    n_envs: int = 1
    randomize_order: bool = True

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size cannot exceed buffer_capacity")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


class ReplayBuffer:
    """Fixed-capacity FIFO ring of joint transitions with uniform sampling."""

    def __init__(self, capacity: int, share_dim: int, n_agents: int, act_dim: int):
        self.capacity = int(capacity)
        self.share_obs = np.zeros((capacity, share_dim))
        self.actions = np.zeros((capacity, n_agents, act_dim))
        self.rewards = np.zeros((capacity, n_agents))
        self.next_share_obs = np.zeros((capacity, share_dim))
        self.dones = np.zeros(capacity)
        self.cursor = 0
        self.length = 0

    def __len__(self) -> int:
        return self.length

    def store(self, share_obs, actions, rewards, next_share_obs, done) -> None:
        i = self.cursor
        self.share_obs[i] = share_obs
        self.actions[i] = actions
        self.rewards[i] = rewards
        self.next_share_obs[i] = next_share_obs
        self.dones[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.length = min(self.length + 1, self.capacity)

    def indices_in_order(self) -> np.ndarray:
        """Stored slots from oldest to newest."""
        start = self.cursor if self.length == self.capacity else 0
        return (start + np.arange(self.length)) % self.capacity

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.length < batch_size or batch_size < 1:
            raise InsufficientDataError(f"buffer holds {self.length} transitions, need {batch_size}")
        idx = rng.integers(0, self.length, size=batch_size)
        return {
            "share_obs": self.share_obs[idx],
            "actions": self.actions[idx],
            "rewards": self.rewards[idx],
            "next_share_obs": self.next_share_obs[idx],
            "dones": self.dones[idx],
        }


def discrete_table(head: PolicyHead) -> np.ndarray:
    """All joint category combinations of a head, shape (K, n_groups), row-major."""
    return np.array(list(itertools.product(*[range(k) for k in head.groups])), dtype=np.int64).reshape(-1, len(head.groups))


def joint_probs(log_probs: list[np.ndarray], table: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Probability and log-probability of every table row, shape (B, K)."""
    logp = np.zeros(log_probs[0].shape[:-1] + (table.shape[0],))
    for g, lp in enumerate(log_probs):
        logp += lp[..., table[:, g]]
    return np.exp(logp), logp


def expectation_grad(log_probs: list[np.ndarray], values: np.ndarray, groups) -> tuple[np.ndarray, list[np.ndarray]]:
    """``E = sum_k pi(k) values(k)`` for a product of categoricals, and dE/dlogits per group.

    ``values`` has shape (B, K) laid out row-major over ``groups``.
    """
    B = values.shape[0]
    probs = [np.exp(lp) for lp in log_probs]
    table = values.reshape(B, *groups)
    G = len(groups)
    letters = "abcdefghij"[:G]
    expectation = np.einsum(f"z{letters}," + ",".join(f"z{c}" for c in letters) + "->z", table, *probs)
    d_logits = []
    for g in range(G):
        others = [c for i, c in enumerate(letters) if i != g]
        subscripts = f"z{letters}," + ",".join(f"z{c}" for c in others) + f"->z{letters[g]}"
        d_prob = np.einsum(subscripts, table, *[probs[i] for i in range(G) if i != g]) if others else table
        d_logits.append(probs[g] * (d_prob - expectation[:, None]))
    return expectation, d_logits


def gaussian_logp(mean: np.ndarray, log_std: np.ndarray, u: np.ndarray) -> np.ndarray:
    z = (u - mean) / np.exp(log_std)
    return (-0.5 * z * z - log_std - 0.5 * LOG_2PI - log1m_tanh_sq(u)).sum(axis=-1)


class HasacTrainer:
    """Sequential soft actor-critic updates for one team of heterogeneous agents."""

    def __init__(self, actors: list[Actor], obs_dim: int, cfg: HasacConfig, rng: np.random.Generator,
                 hidden=(128, 128)):
        self.actors = actors
        self.cfg = cfg
        self.obs_dim = int(obs_dim)
        self.heads = [a.head for a in actors]
        self.n_agents = len(actors)
        self.enc_offsets = []
        offset = self.n_agents * self.obs_dim
        for h in self.heads:
            self.enc_offsets.append(offset)
            offset += h.encoding_dim
        self.input_dim = offset
        self.act_dim = max(h.action_dim for h in self.heads)
        self.critics = [init_mlp((offset, *hidden, 1), rng) for _ in range(2)]
        self.targets = [copy.deepcopy(c) for c in self.critics]
        self.critic_opt = [AdamState(), AdamState()]
        self.actor_opt = [AdamState() for _ in actors]
        self.log_alpha = math.log(cfg.alpha) if cfg.alpha > 0 else -math.inf
        self.tables = [discrete_table(h) if h.groups else None for h in self.heads]
        self.target_entropies = [
            cfg.target_entropy_scale * sum(math.log(k) for k in h.groups) - h.cont_dim for h in self.heads
        ]

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    # -- helpers ------------------------------------------------------------

    def agent_obs(self, share_obs: np.ndarray, agent: int) -> np.ndarray:
        return share_obs[..., agent * self.obs_dim:(agent + 1) * self.obs_dim]

    def critic_input(self, share_obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        parts = [share_obs] + [encode_actions(h, actions[:, i, :h.action_dim]) for i, h in enumerate(self.heads)]
        return np.concatenate(parts, axis=-1)

    def _enumerated(self, x: np.ndarray, agent: int) -> np.ndarray:
        """Copies of ``x`` with agent's categorical slots set to every combination."""
        head = self.heads[agent]
        table = self.tables[agent]
        onehots = encode_actions(PolicyHead(head.groups, 0), table.astype(np.float64))
        xe = np.repeat(x[:, None, :], table.shape[0], axis=1)
        start = self.enc_offsets[agent]
        xe[:, :, start:start + head.n_logits] = onehots[None]
        return xe

    @staticmethod
    def min_q(critics, x: np.ndarray) -> np.ndarray:
        return np.minimum(forward(critics[0], x)[0][..., 0], forward(critics[1], x)[0][..., 0])

    def sample_joint(self, share_obs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        joint = np.zeros((share_obs.shape[0], self.n_agents, self.act_dim))
        for i, actor in enumerate(self.actors):
            out, _ = actor.trunk(self.agent_obs(share_obs, i))
            joint[:, i, :actor.head.action_dim] = sample_from_output(actor.head, out, actor.log_std, rng)
        return joint

    # -- soft value ---------------------------------------------------------

    def soft_value(self, next_share_obs: np.ndarray, rng: np.random.Generator, alpha: float | None = None,
                   critics=None, actions: np.ndarray | None = None) -> np.ndarray:
        """Agent-factorized soft state value.

        ``V = mean_m E_{a_m ~ pi_m}[min Q(s', a_m, a_-m)] + alpha * sum_m H_m`` where
        categorical parts of ``a_m`` are enumerated exactly, the rest of the
        joint action is one draw from the current policies, and ``H_m`` is the
        exact categorical entropy plus a one-sample continuous estimate.
        """
        alpha = self.alpha if alpha is None else alpha
        critics = self.targets if critics is None else critics
        if actions is None:
            actions = self.sample_joint(next_share_obs, rng)
        x = self.critic_input(next_share_obs, actions)
        expectations = []
        entropy = np.zeros(next_share_obs.shape[0])
        base_q = None
        for m, actor in enumerate(self.actors):
            head = actor.head
            out, _ = actor.trunk(self.agent_obs(next_share_obs, m))
            if head.groups:
                lps = categorical_log_probs(head, out)
                pk, _ = joint_probs(lps, self.tables[m])
                q = self.min_q(critics, self._enumerated(x, m))
                expectations.append((pk * q).sum(axis=-1))
                entropy -= sum((np.exp(lp) * lp).sum(axis=-1) for lp in lps)
            else:
                if base_q is None:
                    base_q = self.min_q(critics, x)
                expectations.append(base_q)
            if head.cont_dim:
                u = actions[:, m, len(head.groups):head.action_dim]
                entropy -= gaussian_logp(out[:, head.n_logits:], actor.log_std, u)
        return np.mean(expectations, axis=0) + alpha * entropy

    # -- critic ---------------------------------------------------------------

    def critic_targets(self, batch: dict, rng: np.random.Generator) -> np.ndarray:
        cfg = self.cfg
        reward = batch["rewards"].mean(axis=1) * cfg.reward_scale
        nonterminal = 1.0 - batch["dones"]
        if cfg.gamma == 0.0:
            return reward
        v_next = self.soft_value(batch["next_share_obs"], rng)
        return reward + cfg.gamma * nonterminal * v_next

    def critic_loss(self, critic, x: np.ndarray, y: np.ndarray):
        out, cache = forward(critic, x)
        err = out[:, 0] - y
        grads, _ = backward(critic, cache, (2.0 * err / err.shape[0])[:, None])
        return float(np.mean(err ** 2)), grads

    def critic_update(self, batch: dict, rng: np.random.Generator) -> dict:
        y = self.critic_targets(batch, rng)
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite soft target (alpha={self.alpha})")
        x = self.critic_input(batch["share_obs"], batch["actions"])
        losses, norms = [], []
        for critic, opt in zip(self.critics, self.critic_opt):
            loss, grads = self.critic_loss(critic, x, y)
            grads, norm = global_norm_clip(grads, self.cfg.max_grad_norm)
            adam_step(critic, grads, opt, self.cfg.critic_lr)
            losses.append(loss)
            norms.append(norm)
        for target, critic in zip(self.targets, self.critics):
            polyak_update(target, critic, self.cfg.tau)
        return {"value_loss": float(np.mean(losses)), "critic_grad_norm": float(np.mean(norms))}

    # -- actors -------------------------------------------------------------

    def actor_loss(self, agent: int, share_obs: np.ndarray, joint_actions: np.ndarray, noise: np.ndarray | None,
                   alpha: float | None = None, params=None):
        """Soft policy loss for one agent with the others' actions fixed.

        ``mean_s[sum_a pi(a|s) (alpha log pi(a|s) - min Q(s, a, a_-m))]``.
        Returns ``(loss, grads, entropy)``; only agent ``agent`` receives gradients.
        """
        alpha = self.alpha if alpha is None else alpha
        actor = self.actors[agent]
        if params is not None:
            saved, actor.params = actor.params, params
        try:
            return self._actor_loss(agent, actor, share_obs, joint_actions, noise, alpha)
        finally:
            if params is not None:
                actor.params = saved

    def _actor_loss(self, agent, actor, share_obs, joint_actions, noise, alpha):
        head = actor.head
        B = share_obs.shape[0]
        out, cache = actor.trunk(self.agent_obs(share_obs, agent))
        actions = joint_actions.copy()
        log_std = actor.log_std
        u = None
        if head.cont_dim:
            std = np.exp(log_std)
            u = out[:, head.n_logits:] + std * noise
            actions[:, agent, len(head.groups):head.action_dim] = u
        x = self.critic_input(share_obs, actions)
        d_out = np.zeros_like(out)
        d_log_std = None
        loss_terms = np.zeros(B)
        entropy = np.zeros(B)
        grad_q_c = None

        if head.groups:
            lps = categorical_log_probs(head, out)
            xe = self._enumerated(x, agent)
            q1, c1 = forward(self.critics[0], xe)
            q2, c2 = forward(self.critics[1], xe)
            q1, q2 = q1[..., 0], q2[..., 0]
            qmin = np.minimum(q1, q2)
            expectation, d_logits_q = expectation_grad(lps, qmin, head.groups)
            h_groups = [-(np.exp(lp) * lp).sum(axis=-1) for lp in lps]
            h_disc = sum(h_groups)
            loss_terms += -expectation - alpha * h_disc
            entropy += h_disc
            for s, lp, dq, hg in zip(head.slices(), lps, d_logits_q, h_groups):
                p = np.exp(lp)
                dh = -p * (lp + hg[:, None])
                d_out[:, s] = (-dq - alpha * dh) / B
            if head.cont_dim:
                pk, _ = joint_probs(lps, self.tables[agent])
                use1 = q1 <= q2
                up1 = np.where(use1, -pk / B, 0.0)[..., None]
                up2 = np.where(use1, 0.0, -pk / B)[..., None]
                _, gx1 = backward(self.critics[0], c1, up1)
                _, gx2 = backward(self.critics[1], c2, up2)
                grad_q_c = (gx1 + gx2).sum(axis=1)
        else:
            q1, c1 = forward(self.critics[0], x)
            q2, c2 = forward(self.critics[1], x)
            q1, q2 = q1[:, 0], q2[:, 0]
            qmin = np.minimum(q1, q2)
            loss_terms += -qmin
            use1 = q1 <= q2
            _, gx1 = backward(self.critics[0], c1, np.where(use1, -1.0 / B, 0.0)[:, None])
            _, gx2 = backward(self.critics[1], c2, np.where(use1, 0.0, -1.0 / B)[:, None])
            grad_q_c = gx1 + gx2

        if head.cont_dim:
            start = self.enc_offsets[agent] + head.n_logits
            t = np.tanh(u)
            logp_c = gaussian_logp(out[:, head.n_logits:], log_std, u)
            loss_terms += alpha * logp_c
            entropy -= logp_c
            g_u = grad_q_c[:, start:start + head.cont_dim] * (1.0 - t * t) + alpha * 2.0 * t / B
            d_out[:, head.n_logits:] = g_u
            d_log_std = (g_u * std * noise).sum(axis=0) - alpha
        grads = actor.backward_output(cache, d_out, d_log_std)
        return float(loss_terms.mean()), grads, float(entropy.mean())

    def actor_update_sequential(self, batch: dict, rng: np.random.Generator) -> dict:
        share_obs = batch["share_obs"]
        joint = batch["actions"].copy()
        order = rng.permutation(self.n_agents) if self.cfg.randomize_order else np.arange(self.n_agents)
        stats = {"order": order.tolist(), "entropies": {}}
        for agent in order:
            agent = int(agent)
            actor = self.actors[agent]
            noise = rng.standard_normal((share_obs.shape[0], actor.head.cont_dim)) if actor.head.cont_dim else None
            loss, grads, ent = self.actor_loss(agent, share_obs, joint, noise)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite actor loss for agent {agent}")
            grads, norm = global_norm_clip(grads, self.cfg.max_grad_norm)
            adam_step(actor.params, grads, self.actor_opt[agent], self.cfg.actor_lr)
            # successors see this agent's updated behaviour
            out, _ = actor.trunk(self.agent_obs(share_obs, agent))
            joint[:, agent, :actor.head.action_dim] = sample_from_output(actor.head, out, actor.log_std, rng)
            stats[agent] = {"policy_loss": loss, "dist_entropy": ent, "actor_grad_norm": norm}
            stats["entropies"][agent] = ent
        return stats

    # -- temperature ----------------------------------------------------------

    def temperature_update(self, entropies) -> float:
        """SGD on ``log_alpha * (H_observed - H_target)``, with log_alpha clamped
        to [LOG_ALPHA_MIN, LOG_ALPHA_MAX] so alpha stays positive and finite."""
        if not self.cfg.auto_alpha or not math.isfinite(self.log_alpha):
            return self.alpha
        observed = float(np.mean(list(entropies)))
        target = float(np.mean(self.target_entropies))
        step = self.log_alpha - self.cfg.alpha_lr * (observed - target)
        self.log_alpha = min(max(step, LOG_ALPHA_MIN), LOG_ALPHA_MAX)
        return self.alpha

    def train_step(self, batch: dict, rng: np.random.Generator) -> dict:
        metrics = self.critic_update(batch, rng)
        actor_stats = self.actor_update_sequential(batch, rng)
        metrics["alpha"] = self.temperature_update(actor_stats["entropies"].values())
        metrics["agents"] = {a: actor_stats[a] for a in range(self.n_agents)}
        return metrics
