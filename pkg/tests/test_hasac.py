import itertools
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from aircombat.errors import InsufficientDataError
from aircombat.hasac import HasacConfig, HasacTrainer, ReplayBuffer
from aircombat.neural import Actor, GaussianHead, MultiDiscreteHead, PolicyHead, forward

from gradcheck import TOLERANCE, numeric_grad, relative_error

OBS = 4


def make_trainer(heads, seed=0, hidden=(8,), **cfg):
    rng = np.random.default_rng(seed)
    actors = [Actor(OBS, h, rng, hidden=hidden) for h in heads]
    for a in actors:
        for k in a.params:
            a.params[k] += rng.normal(0.0, 0.5, a.params[k].shape)
    trainer = HasacTrainer(actors, OBS, HasacConfig(batch_size=8, **cfg), rng, hidden=hidden)
    for nets in (trainer.critics, trainer.targets):
        for net in nets:
            for k in net:
                net[k] += rng.normal(0.0, 0.3, net[k].shape)
    return trainer, rng


def random_joint(trainer, rng, n):
    joint = np.zeros((n, trainer.n_agents, trainer.act_dim))
    for i, h in enumerate(trainer.heads):
        for g, k in enumerate(h.groups):
            joint[:, i, g] = rng.integers(0, k, n)
        joint[:, i, len(h.groups):h.action_dim] = rng.normal(size=(n, h.cont_dim))
    return joint


def one_hot(k, i):
    v = [0.0] * k
    v[i] = 1.0
    return v


def brute_soft_value(trainer, s, joint, alpha):
    """Per-sample loops over every categorical combination of each agent."""
    values = []
    for b in range(s.shape[0]):
        per_agent, entropy = [], 0.0
        for m, actor in enumerate(trainer.actors):
            head = actor.head
            out = forward({k: v for k, v in actor.params.items() if k != "log_std"}, s[b, m * OBS:(m + 1) * OBS])[0]
            probs = []
            for sl in head.slices():
                z = np.exp(out[sl] - out[sl].max())
                probs.append(z / z.sum())
            entropy -= sum(float(np.sum(p * np.log(p))) for p in probs)
            total = 0.0
            for combo in itertools.product(*[range(k) for k in head.groups]):
                enc = list(s[b])
                for j, h in enumerate(trainer.heads):
                    groups = combo if j == m else [int(x) for x in joint[b, j, :len(h.groups)]]
                    for k, idx in zip(h.groups, groups):
                        enc += one_hot(k, idx)
                    enc += [math.tanh(u) for u in joint[b, j, len(h.groups):h.action_dim]]
                x = np.array(enc)
                q = min(forward(c, x)[0][0] for c in trainer.targets)
                total += math.prod(p[i] for p, i in zip(probs, combo)) * q
            per_agent.append(total)
        values.append(sum(per_agent) / len(per_agent) + alpha * entropy)
    return np.array(values)


class TestReplayBuffer:
    def test_fifo_eviction(self):
        buf = ReplayBuffer(3, 2, 1, 1)
        for i in range(4):
            buf.store(np.full(2, i), np.full((1, 1), i), np.full(1, i), np.full(2, i), False)
        assert len(buf) == 3
        assert sorted(buf.share_obs[:, 0].tolist()) == [1.0, 2.0, 3.0]
        assert buf.share_obs[buf.indices_in_order(), 0].tolist() == [1.0, 2.0, 3.0]

    def test_single_item(self, rng):
        buf = ReplayBuffer(5, 2, 1, 1)
        buf.store(np.array([1.0, 2.0]), np.array([[3.0]]), np.array([4.0]), np.array([5.0, 6.0]), True)
        batch = buf.sample(1, rng)
        assert batch["share_obs"].tolist() == [[1.0, 2.0]] and batch["dones"].tolist() == [1.0]

    def test_underfilled(self, rng):
        buf = ReplayBuffer(5, 2, 1, 1)
        with pytest.raises(InsufficientDataError):
            buf.sample(1, rng)

    def test_uniform_sampling(self, rng):
        buf = ReplayBuffer(16, 1, 1, 1)
        for i in range(10):
            buf.store(np.array([i]), np.zeros((1, 1)), np.zeros(1), np.zeros(1), False)
        draws = np.concatenate([buf.sample(10, rng)["share_obs"][:, 0] for _ in range(10_000)]).astype(int)
        counts = np.bincount(draws, minlength=10)
        assert chisquare(counts).pvalue > 0.01

    def test_config_validation(self):
        with pytest.raises(ValueError):
            HasacConfig(tau=0.0)
        with pytest.raises(ValueError):
            HasacConfig(batch_size=10, buffer_capacity=5)


class TestSoftValue:
    @pytest.mark.parametrize("heads", [
        [MultiDiscreteHead((3,))],
        [MultiDiscreteHead((3, 2)), MultiDiscreteHead((2, 2, 2))],
        [MultiDiscreteHead((7, 5, 5, 2)), MultiDiscreteHead((7, 5, 5, 2))],
    ], ids=["single", "pair", "hierarchical"])
    @pytest.mark.parametrize("seed", range(4))
    def test_matches_enumeration(self, heads, seed):
        trainer, rng = make_trainer(heads, seed)
        s = rng.normal(size=(3, OBS * len(heads)))
        joint = random_joint(trainer, rng, 3)
        got = trainer.soft_value(s, rng, alpha=0.3, actions=joint)
        assert np.max(np.abs(got - brute_soft_value(trainer, s, joint, 0.3))) <= 1e-10

    def test_uniform_policy_constant_critic(self):
        trainer, rng = make_trainer([MultiDiscreteHead((7,))])
        for p in trainer.actors[0].params.values():
            p[...] = 0.0
        for c in trainer.targets:
            for p in c.values():
                p[...] = 0.0
            c["b1"][:] = 2.5
        v = trainer.soft_value(rng.normal(size=(4, OBS)), rng, alpha=0.2)
        np.testing.assert_allclose(v, 2.5 + 0.2 * math.log(7), atol=1e-14)

    def test_one_hot_policy_alpha_zero(self):
        trainer, rng = make_trainer([MultiDiscreteHead((3,))])
        actor = trainer.actors[0]
        for p in actor.params.values():
            p[...] = 0.0
        actor.params["b1"][:] = [0.0, 500.0, 0.0]
        s = rng.normal(size=(2, OBS))
        v = trainer.soft_value(s, rng, alpha=0.0)
        x = np.concatenate([s, np.tile([0.0, 1.0, 0.0], (2, 1))], axis=1)
        np.testing.assert_allclose(v, trainer.min_q(trainer.targets, x), atol=1e-12)

    def test_uses_target_minimum(self):
        trainer, rng = make_trainer([MultiDiscreteHead((3,))])
        s = rng.normal(size=(5, OBS))
        low = trainer.soft_value(s, rng, alpha=0.0)
        for k in trainer.targets[1]:
            trainer.targets[1][k] = trainer.targets[0][k].copy()
        trainer.targets[1]["b1"] += 1.0
        np.testing.assert_allclose(trainer.soft_value(s, rng, alpha=0.0),
                                   trainer.soft_value(s, rng, alpha=0.0, critics=[trainer.targets[0]] * 2))
        assert low.shape == (5,)


class TestCritic:
    def batch(self, trainer, rng, n=8, done=0.0):
        s = rng.normal(size=(n, OBS * trainer.n_agents))
        return {"share_obs": s, "actions": random_joint(trainer, rng, n), "rewards": rng.normal(size=(n, trainer.n_agents)),
                "next_share_obs": rng.normal(size=s.shape), "dones": np.full(n, done)}

    def test_gamma_zero_target_is_reward(self):
        trainer, rng = make_trainer([MultiDiscreteHead((3,))] * 2, gamma=0.0)
        b = self.batch(trainer, rng)
        np.testing.assert_array_equal(trainer.critic_targets(b, rng), b["rewards"].mean(axis=1))

    def test_terminal_target_is_reward(self):
        trainer, rng = make_trainer([MultiDiscreteHead((3,))] * 2)
        b = self.batch(trainer, rng, done=1.0)
        np.testing.assert_array_equal(trainer.critic_targets(b, rng), b["rewards"].mean(axis=1))

    def test_tau_one_copies(self):
        trainer, rng = make_trainer([MultiDiscreteHead((3,))], tau=1.0)
        trainer.critic_update(self.batch(trainer, rng), rng)
        for t, c in zip(trainer.targets, trainer.critics):
            for k in c:
                np.testing.assert_array_equal(t[k], c[k])

    def test_polyak_contracts_geometrically(self):
        trainer, rng = make_trainer([MultiDiscreteHead((3,))], tau=0.1)
        from aircombat.neural import flatten, polyak_update

        d0 = np.linalg.norm(flatten(trainer.targets[0]) - flatten(trainer.critics[0]))
        for _ in range(5):
            polyak_update(trainer.targets[0], trainer.critics[0], 0.1)
        d5 = np.linalg.norm(flatten(trainer.targets[0]) - flatten(trainer.critics[0]))
        assert d5 == pytest.approx(0.9 ** 5 * d0, rel=1e-10)

    @pytest.mark.parametrize("instance", range(20))
    def test_critic_gradient(self, instance):
        trainer, rng = make_trainer([MultiDiscreteHead((3, 2)), PolicyHead((2,), 2)], 600 + instance)
        b = self.batch(trainer, rng, n=6)
        x = trainer.critic_input(b["share_obs"], b["actions"])
        y = rng.normal(size=6)
        critic = trainer.critics[0]
        _, analytic = trainer.critic_loss(critic, x, y)
        numeric = numeric_grad(lambda: trainer.critic_loss(critic, x, y)[0], critic)
        assert relative_error(analytic, numeric) <= TOLERANCE


class TestActor:
    @pytest.mark.parametrize("head", [MultiDiscreteHead((3, 2)), GaussianHead(2), PolicyHead((2,), 2)], ids=str)
    @pytest.mark.parametrize("instance", range(20))
    def test_actor_gradient(self, head, instance):
        trainer, rng = make_trainer([head, MultiDiscreteHead((3,))], 700 + instance)
        s = rng.normal(size=(6, 2 * OBS))
        joint = random_joint(trainer, rng, 6)
        noise = rng.normal(size=(6, head.cont_dim)) if head.cont_dim else None
        actor = trainer.actors[0]
        _, analytic, _ = trainer.actor_loss(0, s, joint, noise, alpha=0.3)
        numeric = numeric_grad(lambda: trainer.actor_loss(0, s, joint, noise, alpha=0.3)[0], actor.params)
        assert relative_error(analytic, numeric) <= TOLERANCE

    def one_state_toy(self, q_values):
        trainer, rng = make_trainer([MultiDiscreteHead((len(q_values),))], hidden=())
        for c in trainer.critics:
            for p in c.values():
                p[...] = 0.0
            c["w0"][OBS:, 0] = q_values
        return trainer, np.zeros((1, OBS)), np.zeros((1, 1, 1))

    def test_large_alpha_pushes_to_uniform(self):
        trainer, s, joint = self.one_state_toy([1.0, 0.0])
        actor = trainer.actors[0]
        actor.params["b0"][:] = [1.0, -1.0]
        _, grads, ent = trainer.actor_loss(0, s, joint, None, alpha=1e3)
        actor.params["b0"] -= 1e-3 * grads["b0"]
        _, _, ent_after = trainer.actor_loss(0, s, joint, None, alpha=1e3)
        assert ent_after > ent
        # analytic direction: d loss / d logit_0 = alpha * p0 * p1 * (l0 - l1) minus the Q part
        p0 = 1.0 / (1.0 + math.exp(-2.0))
        expected = p0 * (1.0 - p0) * (1e3 * 2.0 - 1.0)
        assert grads["b0"][0] == pytest.approx(expected, rel=1e-9)

    def test_alpha_zero_moves_toward_argmax(self):
        trainer, s, joint = self.one_state_toy([0.2, 1.5, -0.3])
        actor = trainer.actors[0]
        actor.params["w0"][...] = 0.0
        actor.params["b0"][:] = [0.3, -0.2, 0.1]
        _, grads, _ = trainer.actor_loss(0, s, joint, None, alpha=0.0)
        p = np.exp(actor.params["b0"]) / np.exp(actor.params["b0"]).sum()
        q = np.array([0.2, 1.5, -0.3])
        np.testing.assert_allclose(grads["b0"], -p * (q - p @ q), atol=1e-12)
        assert np.argmin(grads["b0"]) == 1

    def test_bandit_concentrates_on_best_arm(self):
        rewards = np.array([0.0, 1.0, 0.3])
        rng = np.random.default_rng(1)
        actor = Actor(1, MultiDiscreteHead((3,)), rng, hidden=(8,))
        cfg = HasacConfig(gamma=0.0, alpha=0.0, auto_alpha=False, batch_size=32, critic_lr=1e-2, actor_lr=1e-2)
        trainer = HasacTrainer([actor], 1, cfg, rng, hidden=(8,))
        buf = ReplayBuffer(300, 1, 1, 1)
        for _ in range(300):
            a = rng.integers(0, 3)
            buf.store(np.ones(1), np.array([[a]]), np.array([rewards[a]]), np.ones(1), True)
        for _ in range(400):
            trainer.train_step(buf.sample(32, rng), rng)
        assert actor.probs(np.ones((1, 1)))[0][0, 1] > 0.95

    def test_zero_lr_keeps_policies(self):
        trainer, rng = make_trainer([MultiDiscreteHead((3,))] * 2, actor_lr=0.0)
        before = [{k: v.copy() for k, v in a.params.items()} for a in trainer.actors]
        b = TestCritic().batch(trainer, rng)
        stats = trainer.train_step(b, rng)
        assert set(stats["agents"]) == {0, 1}
        for a, saved in zip(trainer.actors, before):
            for k in saved:
                np.testing.assert_array_equal(a.params[k], saved[k])


class TestTemperature:
    def test_equal_entropy_keeps_alpha(self):
        trainer, _ = make_trainer([MultiDiscreteHead((7, 5, 5))])
        target = trainer.target_entropies[0]
        assert target == pytest.approx(0.6 * math.log(175))
        before = trainer.alpha
        assert trainer.temperature_update([target]) == before

    def test_low_entropy_raises_alpha(self):
        trainer, _ = make_trainer([MultiDiscreteHead((7, 5, 5))])
        before = trainer.alpha
        assert trainer.temperature_update([0.1]) > before
        trainer.log_alpha = math.log(before)
        assert trainer.temperature_update([10.0]) < before

    def test_alpha_stays_positive(self):
        trainer, _ = make_trainer([MultiDiscreteHead((2,))], alpha_lr=0.05)
        rng = np.random.default_rng(0)
        entropies = rng.uniform(0.0, 50.0, 1_000_000)
        lowest = math.inf
        for h in entropies:
            lowest = min(lowest, trainer.temperature_update((h,)))
        assert lowest > 0.0 and math.isfinite(trainer.alpha)
