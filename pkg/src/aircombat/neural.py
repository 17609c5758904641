"""Dense tanh networks with hand-written reverse-mode gradients, stochastic
policy heads and Adam.

Parameters live in plain ``dict[str, np.ndarray]`` containers so that
optimizers, gradient clipping and checkpointing can treat every network the
same way. Layer ``i`` stores ``w{i}`` with shape (fan_in, fan_out) and
``b{i}``; inputs are row batches.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Params = dict[str, np.ndarray]

LOG_2PI = math.log(2.0 * math.pi)
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0


def orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, hidden_gain: float = math.sqrt(2.0),
             output_gain: float = 1.0) -> Params:
    params: Params = {}
    n = len(sizes) - 1
    for i in range(n):
        gain = output_gain if i == n - 1 else hidden_gain
        params[f"w{i}"] = orthogonal(rng, sizes[i], sizes[i + 1], gain)
        params[f"b{i}"] = np.zeros(sizes[i + 1])
    return params


def n_layers(params: Params) -> int:
    n = 0
    while f"w{n}" in params:
        n += 1
    return n


def forward(params: Params, x: np.ndarray):
    """Affine+tanh chain with a linear output layer; returns (output, cache)."""
    x = np.asarray(x, dtype=np.float64)
    n = n_layers(params)
    if x.shape[-1] != params["w0"].shape[0]:
        raise ValueError(f"input width {x.shape[-1]} does not match first layer {params['w0'].shape[0]}")
    activations = [x]
    h = x
    for i in range(n):
        z = h @ params[f"w{i}"] + params[f"b{i}"]
        h = np.tanh(z) if i < n - 1 else z
        activations.append(h)
    return h, activations


def backward(params: Params, cache: list[np.ndarray], grad_out: np.ndarray):
    """Reverse pass. Returns (parameter gradients, gradient w.r.t. the input)."""
    n = n_layers(params)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != cache[-1].shape:
        raise ValueError(f"upstream gradient shape {grad_out.shape} != output shape {cache[-1].shape}")
    grads: Params = {}
    g = grad_out
    for i in reversed(range(n)):
        if i < n - 1:
            g = g * (1.0 - cache[i + 1] ** 2)
        inp = cache[i]
        grads[f"w{i}"] = inp.reshape(-1, inp.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        grads[f"b{i}"] = g.reshape(-1, g.shape[-1]).sum(axis=0)
        g = g @ params[f"w{i}"].T
    return grads, g


class Mlp:
    """Thin stateful wrapper around :func:`forward` / :func:`backward`."""

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator, output_gain: float = 1.0):
        self.sizes = tuple(int(s) for s in sizes)
        self.params = init_mlp(self.sizes, rng, output_gain=output_gain)

    def __call__(self, x):
        return forward(self.params, x)[0]

    def forward(self, x):
        return forward(self.params, x)

    def backward(self, cache, grad_out):
        return backward(self.params, cache, grad_out)

    def copy(self) -> Mlp:
        return copy.deepcopy(self)


# -- policy heads -------------------------------------------------------------


@dataclass(frozen=True)
class PolicyHead:
    """Product of independent categoricals and an optional tanh-squashed Gaussian.

    Actions are rows of ``len(groups) + cont_dim`` floats: category indices
    first, then the pre-squash Gaussian sample.
    """

    groups: tuple[int, ...] = ()
    cont_dim: int = 0

    @property
    def n_logits(self) -> int:
        return int(sum(self.groups))

    @property
    def n_outputs(self) -> int:
        return self.n_logits + self.cont_dim

    @property
    def action_dim(self) -> int:
        return len(self.groups) + self.cont_dim

    @property
    def encoding_dim(self) -> int:
        """Width of the one-hot plus squashed-continuous critic encoding."""
        return self.n_logits + self.cont_dim

    @property
    def n_discrete_actions(self) -> int:
        return int(np.prod(self.groups)) if self.groups else 1

    def slices(self):
        start = 0
        out = []
        for k in self.groups:
            out.append(slice(start, start + k))
            start += k
        return out


def MultiDiscreteHead(groups: Sequence[int]) -> PolicyHead:
    return PolicyHead(tuple(int(g) for g in groups), 0)


def GaussianHead(dim: int) -> PolicyHead:
    return PolicyHead((), int(dim))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def categorical_log_probs(head: PolicyHead, out: np.ndarray) -> list[np.ndarray]:
    return [log_softmax(out[..., s]) for s in head.slices()]


def log1m_tanh_sq(u: np.ndarray) -> np.ndarray:
    """Stable ``log(1 - tanh(u)**2)``."""
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def _check_actions(head: PolicyHead, actions: np.ndarray) -> None:
    for g, k in enumerate(head.groups):
        a = actions[..., g]
        if np.any(a < 0) or np.any(a >= k) or np.any(a != np.floor(a)):
            raise ValueError(f"action group {g} has indices outside [0, {k})")


def logp_entropy(head: PolicyHead, out: np.ndarray, log_std: np.ndarray | None, actions: np.ndarray):
    """Per-sample log-probability and entropy.

    Gaussian log-densities include the tanh change-of-variables term; the
    Gaussian entropy is that of the pre-squash normal.
    """
    actions = np.asarray(actions, dtype=np.float64)
    _check_actions(head, actions)
    batch = out.shape[:-1]
    logp = np.zeros(batch)
    ent = np.zeros(batch)
    for g, lp in enumerate(categorical_log_probs(head, out)):
        idx = actions[..., g].astype(np.int64)
        logp += np.take_along_axis(lp, idx[..., None], axis=-1)[..., 0]
        ent -= (np.exp(lp) * lp).sum(axis=-1)
    if head.cont_dim:
        mean = out[..., head.n_logits:]
        u = actions[..., len(head.groups):]
        z = (u - mean) / np.exp(log_std)
        logp += (-0.5 * z * z - log_std - 0.5 * LOG_2PI - log1m_tanh_sq(u)).sum(axis=-1)
        ent += (log_std + 0.5 * (1.0 + LOG_2PI)).sum() * np.ones(batch)
    return logp, ent


def logp_entropy_backward(head: PolicyHead, out: np.ndarray, log_std: np.ndarray | None, actions: np.ndarray,
                          dlogp: np.ndarray, dent: np.ndarray):
    """Gradients of ``sum(dlogp*logp + dent*ent)`` w.r.t. trunk output and log-std."""
    actions = np.asarray(actions, dtype=np.float64)
    d_out = np.zeros_like(out)
    for g, (s, lp) in enumerate(zip(head.slices(), categorical_log_probs(head, out))):
        p = np.exp(lp)
        idx = actions[..., g].astype(np.int64)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
        h = -(p * lp).sum(axis=-1, keepdims=True)
        d_out[..., s] = dlogp[..., None] * (onehot - p) - dent[..., None] * p * (lp + h)
    d_log_std = None
    if head.cont_dim:
        mean = out[..., head.n_logits:]
        u = actions[..., len(head.groups):]
        std = np.exp(log_std)
        z = (u - mean) / std
        d_out[..., head.n_logits:] = dlogp[..., None] * z / std
        d_log_std = (dlogp[..., None] * (z * z - 1.0)).reshape(-1, head.cont_dim).sum(axis=0)
        d_log_std = d_log_std + dent.sum()
    return d_out, d_log_std


def squash(u: np.ndarray) -> np.ndarray:
    return np.tanh(u)


class Actor:
    """Per-agent stochastic policy: tanh MLP trunk feeding a :class:`PolicyHead`."""

    def __init__(self, obs_dim: int, head: PolicyHead, rng: np.random.Generator,
                 hidden: Sequence[int] = (128, 128), init_log_std: float = -0.5):
        self.head = head
        self.obs_dim = int(obs_dim)
        self.params = init_mlp((obs_dim, *hidden, head.n_outputs), rng, output_gain=0.01)
        if head.cont_dim:
            self.params["log_std"] = np.full(head.cont_dim, float(init_log_std))

    @property
    def log_std(self):
        if not self.head.cont_dim:
            return None
        return np.clip(self.params["log_std"], LOG_STD_MIN, LOG_STD_MAX)

    def copy(self) -> Actor:
        return copy.deepcopy(self)

    def trunk(self, obs):
        trunk_params = {k: v for k, v in self.params.items() if k != "log_std"}
        return forward(trunk_params, obs)

    def probs(self, obs) -> list[np.ndarray]:
        out, _ = self.trunk(obs)
        return [np.exp(lp) for lp in categorical_log_probs(self.head, out)]

    def sample(self, obs, rng: np.random.Generator, greedy: bool = False) -> np.ndarray:
        out, _ = self.trunk(obs)
        return sample_from_output(self.head, out, self.log_std, rng, greedy)

    def logp_entropy(self, obs, actions):
        out, cache = self.trunk(obs)
        logp, ent = logp_entropy(self.head, out, self.log_std, actions)
        return logp, ent, (out, cache)

    def backward(self, ctx, actions, dlogp, dent) -> Params:
        out, cache = ctx
        d_out, d_log_std = logp_entropy_backward(self.head, out, self.log_std, actions, dlogp, dent)
        return self.backward_output(cache, d_out, d_log_std)

    def backward_output(self, cache, d_out, d_log_std=None) -> Params:
        trunk_params = {k: v for k, v in self.params.items() if k != "log_std"}
        grads, _ = backward(trunk_params, cache, d_out)
        if self.head.cont_dim:
            raw = self.params["log_std"]
            inside = (raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX)
            grads["log_std"] = np.zeros_like(raw) if d_log_std is None else d_log_std * inside
        return grads


def sample_from_output(head: PolicyHead, out: np.ndarray, log_std, rng: np.random.Generator,
                       greedy: bool = False) -> np.ndarray:
    batch = out.shape[:-1]
    actions = np.zeros((*batch, head.action_dim))
    for g, lp in enumerate(categorical_log_probs(head, out)):
        if greedy:
            actions[..., g] = lp.argmax(axis=-1)
        else:
            cdf = np.cumsum(np.exp(lp), axis=-1)
            draw = rng.random(batch)[..., None]
            actions[..., g] = np.minimum((draw >= cdf).sum(axis=-1), lp.shape[-1] - 1)
    if head.cont_dim:
        mean = out[..., head.n_logits:]
        if greedy:
            actions[..., len(head.groups):] = mean
        else:
            actions[..., len(head.groups):] = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    return actions


def encode_actions(head: PolicyHead, actions: np.ndarray) -> np.ndarray:
    """One-hot per categorical group, followed by squashed continuous values."""
    actions = np.asarray(actions)
    enc = np.zeros((*actions.shape[:-1], head.encoding_dim))
    for g, s in enumerate(head.slices()):
        idx = actions[..., g].astype(np.int64)
        block = np.zeros((*actions.shape[:-1], head.groups[g]))
        np.put_along_axis(block, idx[..., None], 1.0, axis=-1)
        enc[..., s] = block
    if head.cont_dim:
        enc[..., head.n_logits:] = squash(actions[..., len(head.groups):])
    return enc


# -- optimisation ---------------------------------------------------------------


@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    t: int = 0


def adam_step(params: Params, grads: Params, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """In-place bias-corrected Adam update of every parameter that has a gradient."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


def global_norm(grads: Params) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def global_norm_clip(grads: Params, max_norm: float):
    """Rescale all gradients jointly so their l2 norm is at most ``max_norm``.

    Returns the clipped gradients and the pre-clip norm.
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / norm
        grads = {k: g * scale for k, g in grads.items()}
    return grads, norm


def polyak_update(target: Params, online: Params, tau: float) -> None:
    for name, p in online.items():
        target[name] *= 1.0 - tau
        target[name] += tau * p


def flatten(params: Params) -> np.ndarray:
    return np.concatenate([params[k].ravel() for k in sorted(params)])


def unflatten(template: Params, flat: np.ndarray) -> Params:
    out: Params = {}
    pos = 0
    for k in sorted(template):
        n = template[k].size
        out[k] = flat[pos:pos + n].reshape(template[k].shape).copy()
        pos += n
    return out
