"""Soft actor-critic on top of :mod:`nbsp.nn`.

Supports tanh-squashed Gaussian policies for continuous actions and
categorical policies for discrete actions. Each loss is exposed on its own so
it can be checked in isolation; :meth:`SacAgent.update` chains them into one
gradient step and accepts per-network gradient masks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from nbsp.errors import NotReadyError, NumericError
from nbsp.nn import AdamState, DenseNet, adam_step, load_snapshot, save_snapshot

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)
NETWORKS = ("actor", "critic1", "critic2")


@dataclass
class SacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    policy_lr: float = 3e-4
    q_lr: float = 1e-3
    alpha_lr: float = 1e-3
    batch_size: int = 64
    hidden: tuple[int, ...] = (64, 64)
    init_alpha: float = 0.2
    autotune: bool = True
    target_entropy_scale: float = 0.89
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    mask_after_adam: bool = False

    def as_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    ids: np.ndarray

    def __len__(self) -> int:
        return len(self.rewards)


class ReplayBuffer:
    """Fixed-capacity FIFO ring buffer of transitions.

    Every pushed transition gets a monotonically increasing id, which makes
    provenance checks possible after eviction.
    """

    def __init__(self, capacity: int, obs_dim: int, action_dim: int, discrete: bool = False):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.capacity = capacity
        self.discrete = discrete
        act_shape = (capacity,) if discrete else (capacity, action_dim)
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(act_shape, dtype=np.int64 if discrete else np.float64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.ids = np.full(capacity, -1, dtype=np.int64)
        self.ptr = 0
        self.size = 0
        self.inserted = 0

    def __len__(self) -> int:
        return self.size

    def push(self, s, a, s_next, r, d, uid: int | None = None) -> None:
        i = self.ptr
        self.obs[i] = s
        self.actions[i] = a
        self.next_obs[i] = s_next
        self.rewards[i] = r
        self.dones[i] = float(d)
        self.ids[i] = self.inserted if uid is None else uid
        self.inserted += 1
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _order(self) -> np.ndarray:
        """Storage indices from oldest to newest."""
        if self.size < self.capacity:
            return np.arange(self.size)
        return (self.ptr + np.arange(self.capacity)) % self.capacity

    def take(self, idx) -> Batch:
        idx = np.asarray(idx)
        return Batch(self.obs[idx], self.actions[idx], self.next_obs[idx], self.rewards[idx],
                     self.dones[idx], self.ids[idx])

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform sample with replacement."""
        if self.size < batch_size or self.size == 0:
            raise NotReadyError(f"buffer holds {self.size} transitions, batch needs {batch_size}")
        return self.take(rng.integers(0, self.size, size=batch_size))

    def contents(self) -> Batch:
        return self.take(self._order())


def _softplus(x):
    return np.logaddexp(0.0, x)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _tanh_log_jacobian(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (LOG_2 - u - _softplus(-2.0 * u))


class _ScalarAdam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = self.v = 0.0
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, value: float, grad: float, lr: float) -> float:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return value - lr * m_hat / (math.sqrt(v_hat) + self.eps)


class SacAgent:
    """Twin-critic SAC with target networks and automatic temperature."""

    def __init__(self, obs_dim: int, action_dim: int, discrete: bool = False,
                 config: SacConfig | None = None, seed: int = 0):
        self.config = config or SacConfig()
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.discrete = discrete
        ss = np.random.SeedSequence(seed)
        init_rng, update_rng = (np.random.default_rng(s) for s in ss.spawn(2))
        self.rng = update_rng
        hidden = list(self.config.hidden)
        if discrete:
            actor_sizes = [obs_dim, *hidden, action_dim]
            critic_sizes = [obs_dim, *hidden, action_dim]
            head = "categorical_logits"
        else:
            actor_sizes = [obs_dim, *hidden, 2 * action_dim]
            critic_sizes = [obs_dim + action_dim, *hidden, 1]
            head = "gaussian_policy"
        self.actor = DenseNet(actor_sizes, head, init_rng, name="actor")
        self.critic1 = DenseNet(critic_sizes, "linear", init_rng, name="critic1")
        self.critic2 = DenseNet(critic_sizes, "linear", init_rng, name="critic2")
        self.target1 = self.critic1.copy()
        self.target1.name = "target1"
        self.target2 = self.critic2.copy()
        self.target2.name = "target2"
        self.log_alpha = math.log(self.config.init_alpha)
        if discrete:
            self.target_entropy = self.config.target_entropy_scale * math.log(action_dim)
        else:
            self.target_entropy = -float(action_dim)
        self.reset_optimizers()

    # -- bookkeeping -----------------------------------------------------

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    @property
    def networks(self) -> dict[str, DenseNet]:
        return {"actor": self.actor, "critic1": self.critic1, "critic2": self.critic2}

    def reset_optimizers(self) -> None:
        self.opt = {name: AdamState.for_net(net) for name, net in self.networks.items()}
        self.alpha_opt = _ScalarAdam()

    def reset_temperature(self) -> None:
        self.log_alpha = math.log(self.config.init_alpha)
        self.alpha_opt = _ScalarAdam()

    def all_finite(self) -> bool:
        nets = [*self.networks.values(), self.target1, self.target2]
        return all(n.is_finite() for n in nets) and math.isfinite(self.log_alpha)

    def save(self, path) -> None:
        save_snapshot(path, {**self.networks, "target1": self.target1, "target2": self.target2},
                      extras={"log_alpha": np.array([self.log_alpha])})

    def load(self, path) -> None:
        nets, extras = load_snapshot(path)
        for name, net in {**self.networks, "target1": self.target1, "target2": self.target2}.items():
            net.load_from(nets[name])
        self.log_alpha = float(extras["log_alpha"][0])

    # -- policy ------------------------------------------------------------

    def _gaussian(self, obs):
        out, cache = self.actor.forward_cache(obs)
        d = self.action_dim
        mean, raw = out[:, :d], out[:, d:]
        lo, hi = self.config.log_std_min, self.config.log_std_max
        th = np.tanh(raw)
        log_std = lo + 0.5 * (hi - lo) * (th + 1.0)
        if not (np.isfinite(mean).all() and np.isfinite(log_std).all()):
            raise NumericError("non-finite policy output")
        return mean, log_std, th, cache

    def _gaussian_sample(self, mean, log_std, noise):
        u = mean + np.exp(log_std) * noise
        a = np.tanh(u)
        logp = (-0.5 * noise ** 2 - log_std - 0.5 * LOG_2PI - _tanh_log_jacobian(u)).sum(axis=1)
        return u, a, logp

    def _categorical(self, obs):
        logits, cache = self.actor.forward_cache(obs)
        if not np.isfinite(logits).all():
            raise NumericError("non-finite policy logits")
        logp = _log_softmax(logits)
        return np.exp(logp), logp, cache

    def log_prob(self, obs, action) -> np.ndarray:
        """Log-density (or log-probability) of given actions; batched."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if self.discrete:
            _, logp, _ = self._categorical(obs)
            return logp[np.arange(len(obs)), np.asarray(action, dtype=np.int64).reshape(-1)]
        a = np.atleast_2d(np.asarray(action, dtype=np.float64))
        mean, log_std, _, _ = self._gaussian(obs)
        u = np.arctanh(a)
        noise = (u - mean) / np.exp(log_std)
        return (-0.5 * noise ** 2 - log_std - 0.5 * LOG_2PI - _tanh_log_jacobian(u)).sum(axis=1)

    def sample_action(self, obs, mode: str = "stochastic", rng: np.random.Generator | None = None):
        """Action and its log-probability for one observation or a batch."""
        obs = np.asarray(obs, dtype=np.float64)
        if not np.isfinite(obs).all():
            raise NumericError("non-finite observation")
        single = obs.ndim == 1
        x = obs[None, :] if single else obs
        rng = self.rng if rng is None else rng
        if mode not in ("stochastic", "deterministic"):
            raise ValueError(f"unknown sampling mode {mode!r}")
        if self.discrete:
            probs, logp, _ = self._categorical(x)
            if mode == "deterministic":
                a = probs.argmax(axis=1)
            else:
                u = rng.random(len(x))
                a = (probs.cumsum(axis=1) < u[:, None]).sum(axis=1)
                a = np.minimum(a, self.action_dim - 1)
            lp = logp[np.arange(len(x)), a]
        else:
            mean, log_std, _, _ = self._gaussian(x)
            noise = np.zeros_like(mean) if mode == "deterministic" else rng.standard_normal(mean.shape)
            _, a, lp = self._gaussian_sample(mean, log_std, noise)
        if single:
            return (int(a[0]) if self.discrete else a[0]), float(lp[0])
        return a, lp

    # -- critics -------------------------------------------------------------

    def _critic_in(self, obs, actions):
        if self.discrete:
            return obs
        return np.concatenate([obs, actions], axis=1)

    def critic_target(self, batch: Batch) -> np.ndarray:
        """Soft Bellman target; no gradient flows through it."""
        cfg = self.config
        alpha = self.alpha
        if self.discrete:
            probs, logp, _ = self._categorical(batch.next_obs)
            q1, _ = self.target1.forward(batch.next_obs)
            q2, _ = self.target2.forward(batch.next_obs)
            v = (probs * (np.minimum(q1, q2) - alpha * logp)).sum(axis=1)
        else:
            mean, log_std, _, _ = self._gaussian(batch.next_obs)
            noise = self.rng.standard_normal(mean.shape)
            _, a_next, logp = self._gaussian_sample(mean, log_std, noise)
            x = np.concatenate([batch.next_obs, a_next], axis=1)
            q1, _ = self.target1.forward(x)
            q2, _ = self.target2.forward(x)
            v = np.minimum(q1[:, 0], q2[:, 0]) - alpha * logp
        return batch.rewards + cfg.gamma * (1.0 - batch.dones) * v

    def critic_values(self, net: DenseNet, batch: Batch):
        out, cache = net.forward_cache(self._critic_in(batch.obs, batch.actions))
        if self.discrete:
            return out[np.arange(len(batch)), batch.actions.astype(np.int64)], out, cache
        return out[:, 0], out, cache

    def critic_loss(self, batch: Batch, y: np.ndarray):
        """Summed half-MSE of both critics against ``y``; returns ``(loss, [grads1, grads2])``."""
        n = len(batch)
        total = 0.0
        grads = []
        x = self._critic_in(batch.obs, batch.actions)
        for net in (self.critic1, self.critic2):
            q, out, cache = self.critic_values(net, batch)
            resid = q - y
            total += 0.5 * float(np.mean(resid ** 2))
            up = np.zeros_like(out)
            if self.discrete:
                up[np.arange(n), batch.actions.astype(np.int64)] = resid / n
            else:
                up[:, 0] = resid / n
            grads.append(net.backward(x, up, cache))
        return total, grads

    # -- actor ---------------------------------------------------------------

    def actor_loss(self, batch: Batch, noise: np.ndarray | None = None):
        """Returns ``(loss, actor_grads, logp)``; critics are held fixed.

        ``logp`` is per-sample log-probability (continuous) or the full
        ``(batch, actions)`` log-probability table (discrete), for the
        temperature step.
        """
        obs = batch.obs
        n = len(obs)
        alpha = self.alpha
        if self.discrete:
            probs, logp, cache = self._categorical(obs)
            q1, _ = self.critic1.forward(obs)
            q2, _ = self.critic2.forward(obs)
            f = alpha * logp - np.minimum(q1, q2)
            per = (probs * f).sum(axis=1)
            dz = probs * (f - per[:, None]) / n
            return float(per.mean()), self.actor.backward(obs, dz, cache), (probs, logp)

        mean, log_std, th, cache = self._gaussian(obs)
        if noise is None:
            noise = self.rng.standard_normal(mean.shape)
        u, a, logp = self._gaussian_sample(mean, log_std, noise)
        x = np.concatenate([obs, a], axis=1)
        o1, c1 = self.critic1.forward_cache(x)
        o2, c2 = self.critic2.forward_cache(x)
        q1, q2 = o1[:, 0], o2[:, 0]
        use1 = q1 <= q2
        qmin = np.where(use1, q1, q2)
        ones = np.ones((n, 1))
        g1 = self.critic1.input_gradient(ones, c1)[:, self.obs_dim:]
        g2 = self.critic2.input_gradient(ones, c2)[:, self.obs_dim:]
        dq_da = np.where(use1[:, None], g1, g2)
        sigma = np.exp(log_std)
        one_minus_a2 = 1.0 - a * a
        d_mean = (alpha * 2.0 * a - dq_da * one_minus_a2) / n
        d_logstd = (alpha * (-1.0 + 2.0 * a * sigma * noise) - dq_da * one_minus_a2 * sigma * noise) / n
        lo, hi = self.config.log_std_min, self.config.log_std_max
        d_raw = d_logstd * 0.5 * (hi - lo) * (1.0 - th * th)
        loss = float(np.mean(alpha * logp - qmin))
        grads = self.actor.backward(obs, np.concatenate([d_mean, d_raw], axis=1), cache)
        return loss, grads, logp

    # -- temperature -----------------------------------------------------------

    def temperature_grad(self, logp) -> float:
        """d/d(log_alpha) of the mean of -alpha (log pi + target entropy)."""
        if self.discrete:
            probs, lp = logp
            return -self.alpha * float(np.mean((probs * (lp + self.target_entropy)).sum(axis=1)))
        return -self.alpha * float(np.mean(np.asarray(logp) + self.target_entropy))

    def temperature_update(self, logp) -> float:
        g = self.temperature_grad(logp)
        if not math.isfinite(g):
            raise NumericError("non-finite temperature gradient")
        self.log_alpha = self.alpha_opt.step(self.log_alpha, g, self.config.alpha_lr)
        return self.log_alpha

    # -- targets -----------------------------------------------------------------

    def target_soft_update(self, tau: float | None = None) -> None:
        tau = self.config.tau if tau is None else tau
        if not 0.0 < tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        for src, dst in ((self.critic1, self.target1), (self.critic2, self.target2)):
            for l in range(src.n_layers):
                if tau == 1.0:
                    dst.weights[l][...] = src.weights[l]
                    dst.biases[l][...] = src.biases[l]
                else:
                    dst.weights[l] += tau * (src.weights[l] - dst.weights[l])
                    dst.biases[l] += tau * (src.biases[l] - dst.biases[l])

    # -- full step -----------------------------------------------------------------

    def update(self, batch: Batch, masks: dict | None = None) -> dict:
        """One SAC gradient step: critics, actor, temperature, targets.

        ``masks`` maps network name to a per-layer list of output-neuron
        multipliers; missing networks are unmasked.
        """
        cfg = self.config
        masks = masks or {}
        y = self.critic_target(batch)
        q_loss, (g1, g2) = self.critic_loss(batch, y)
        if not math.isfinite(q_loss):
            raise NumericError("non-finite critic loss")
        adam_step(self.critic1, g1, self.opt["critic1"], cfg.q_lr, masks.get("critic1"), cfg.mask_after_adam)
        adam_step(self.critic2, g2, self.opt["critic2"], cfg.q_lr, masks.get("critic2"), cfg.mask_after_adam)
        pi_loss, ga, logp = self.actor_loss(batch)
        if not math.isfinite(pi_loss):
            raise NumericError("non-finite actor loss")
        adam_step(self.actor, ga, self.opt["actor"], cfg.policy_lr, masks.get("actor"), cfg.mask_after_adam)
        if cfg.autotune:
            self.temperature_update(logp)
        self.target_soft_update()
        if self.discrete:
            probs, lp = logp
            entropy = float(-(probs * lp).sum(axis=1).mean())
        else:
            entropy = float(-np.mean(logp))
        return {"q_loss": q_loss, "pi_loss": pi_loss, "alpha": self.alpha, "entropy": entropy}

    def random_action(self, rng: np.random.Generator):
        if self.discrete:
            return int(rng.integers(self.action_dim))
        return rng.uniform(-1.0, 1.0, size=self.action_dim)
