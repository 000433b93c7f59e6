"""Deep deterministic policy gradient agent.

The agent follows the scikit-learn estimator conventions: hyperparameters
are constructor arguments (so ``get_params``/``set_params``/``clone``
work), :meth:`DDPGAgent.fit` trains against a :class:`~gridcascade.env.CascadeEnv`
and :meth:`DDPGAgent.predict` maps a batch of observations to actions.
"""

from __future__ import annotations

import io
import json
import logging
import zipfile

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .nn import MLP, Adam

__all__ = [
    "ReplayBuffer",
    "RunningScaler",
    "soft_update",
    "DDPGAgent",
    "NumericalAbort",
    "CHECKPOINT_VERSION",
]

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class NumericalAbort(RuntimeError):
    """Training produced a non-finite loss."""


class ReplayBuffer:
    """Ring buffer of ``(s, a, r, s_next, done)`` transitions.

    Storage grows on demand up to ``capacity``, after which the oldest
    transitions are overwritten.
    """

    def __init__(self, capacity, obs_dim, action_dim, rng=None):
        self.capacity = int(capacity)
        self.obs_dim, self.action_dim = int(obs_dim), int(action_dim)
        self._alloc(min(self.capacity, 1024))
        self.cursor = 0
        self.size = 0
        self.rng = np.random.default_rng(rng)

    def _alloc(self, n):
        old = getattr(self, "s", None)
        fresh = {
            "s": np.zeros((n, self.obs_dim)),
            "a": np.zeros((n, self.action_dim)),
            "r": np.zeros(n),
            "s_next": np.zeros((n, self.obs_dim)),
            "done": np.zeros(n),
        }
        if old is not None:
            for k, arr in fresh.items():
                cur = getattr(self, k)
                arr[: len(cur)] = cur
        for k, arr in fresh.items():
            setattr(self, k, arr)

    def __len__(self):
        return self.size

    def add(self, s, a, r, s_next, done):
        i = self.cursor
        if i >= len(self.r):
            self._alloc(min(self.capacity, 2 * len(self.r)))
        self.s[i], self.a[i], self.r[i], self.s_next[i], self.done[i] = s, a, r, s_next, float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size):
        if self.size < batch_size:
            raise ValueError(f"buffer holds {self.size} transitions, need {batch_size}")
        return self.rng.choice(self.size, size=batch_size, replace=False)

    def sample(self, batch_size):
        idx = self.sample_indices(batch_size)
        return self.s[idx], self.a[idx], self.r[idx], self.s_next[idx], self.done[idx]


class RunningScaler(BaseEstimator):
    """Standardise features with running mean and variance (Welford).

    ``clip`` bounds the standardised values; features with no spread so
    far are only centred.
    """

    def __init__(self, clip=5.0):
        self.clip = clip

    def partial_fit(self, X, y=None):
        X = check_array(X, ensure_2d=True, dtype=float)
        if not hasattr(self, "n_samples_seen_"):
            self.n_samples_seen_ = 0
            self.mean_ = np.zeros(X.shape[1])
            self.m2_ = np.zeros(X.shape[1])
        for row in X:
            self.n_samples_seen_ += 1
            delta = row - self.mean_
            self.mean_ += delta / self.n_samples_seen_
            self.m2_ += delta * (row - self.mean_)
        return self

    def fit(self, X, y=None):
        for attr in ("n_samples_seen_", "mean_", "m2_"):
            self.__dict__.pop(attr, None)
        return self.partial_fit(X)

    @property
    def scale_(self):
        var = self.m2_ / max(self.n_samples_seen_, 1)
        scale = np.sqrt(var)
        scale[scale < 1e-8] = 1.0
        return scale

    def transform(self, X):
        if not hasattr(self, "mean_"):
            return np.asarray(X, dtype=float)
        z = (np.asarray(X, dtype=float) - self.mean_) / self.scale_
        return np.clip(z, -self.clip, self.clip)


def soft_update(online, target, tau):
    """Blend ``online`` into ``target`` in place: ``t <- tau*o + (1-tau)*t``."""
    if len(online) != len(target):
        raise ValueError("parameter lists differ in length")
    for o, t in zip(online, target):
        if o.shape != t.shape:
            raise ValueError(f"shape mismatch {o.shape} vs {t.shape}")
        t *= 1.0 - tau
        t += tau * o
    return target


class DDPGAgent(BaseEstimator):
    """Actor-critic agent producing generation coefficients in [0, 1].

    Parameters
    ----------
    hidden_sizes : tuple of int
        Hidden layer widths shared by actor and critic.
    learning_rate, batch_size, gamma, tau
        Adam step size (both networks), minibatch size, discount and
        target-network blending rate.
    replay_capacity : int
        Transitions kept for replay.
    warmup_episodes : int
        Episodes played with uniform random actions before the actor takes
        over.
    reward_scale : float
        Multiplier applied to rewards before they enter the replay buffer.
    action_l2 : float
        Weight of the penalty ``sum((2a - 1)**2)`` added to the actor loss;
        stops the squashed outputs from saturating at 0 or 1 before the
        critic has learned the shape of the value surface.
    noise_start, noise_end : float
        Gaussian exploration sigma, decayed linearly across training
        episodes.
    init_seed, explore_seed : int
        Seeds for the weight initialisation and for exploration noise plus
        replay sampling.
    """

    def __init__(
        self,
        hidden_sizes=(128, 128),
        learning_rate=1e-4,
        batch_size=128,
        gamma=0.99,
        tau=0.001,
        replay_capacity=100_000,
        warmup_episodes=10,
        noise_start=0.2,
        noise_end=0.02,
        normalize=True,
        reward_scale=1e-3,
        action_l2=0.1,
        init_seed=0,
        explore_seed=1,
    ):
        self.hidden_sizes = hidden_sizes
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.gamma = gamma
        self.tau = tau
        self.replay_capacity = replay_capacity
        self.warmup_episodes = warmup_episodes
        self.noise_start = noise_start
        self.noise_end = noise_end
        self.normalize = normalize
        self.reward_scale = reward_scale
        self.action_l2 = action_l2
        self.init_seed = init_seed
        self.explore_seed = explore_seed

    # -- setup -------------------------------------------------------------
    def initialize(self, obs_dim, action_dim):
        """Create fresh networks, optimisers, scaler and replay buffer."""
        if not 0 < self.tau <= 1:
            raise ValueError(f"tau must be in (0, 1], got {self.tau}")
        if not 0 <= self.gamma < 1:
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma}")
        init_rng = np.random.default_rng(self.init_seed)
        hidden = tuple(int(h) for h in self.hidden_sizes)
        self.obs_dim_, self.action_dim_ = int(obs_dim), int(action_dim)
        self.actor_ = MLP((obs_dim, *hidden, action_dim), output="unit", rng=init_rng)
        self.critic_ = MLP((obs_dim + action_dim, *hidden, 1), output="linear", rng=init_rng)
        self.actor_target_ = self.actor_.copy()
        self.critic_target_ = self.critic_.copy()
        self.actor_opt_ = Adam(self.actor_.params, lr=self.learning_rate)
        self.critic_opt_ = Adam(self.critic_.params, lr=self.learning_rate)
        self.scaler_ = RunningScaler()
        seeds = np.random.SeedSequence(self.explore_seed).spawn(2)
        self.noise_rng_ = np.random.default_rng(seeds[0])
        self.buffer_ = ReplayBuffer(self.replay_capacity, obs_dim, action_dim, rng=np.random.default_rng(seeds[1]))
        self.n_updates_ = 0
        return self

    def _check_fitted(self):
        if not hasattr(self, "actor_"):
            raise NotFittedError("DDPGAgent is not initialised; call fit() or initialize()")

    def _norm(self, X):
        return self.scaler_.transform(X) if self.normalize else np.asarray(X, dtype=float)

    # -- acting --------------------------------------------------------------
    def predict(self, X):
        """Noise-free actions for a batch of observations, shape ``(n, m)``."""
        self._check_fitted()
        X = check_array(X, dtype=float)
        if X.shape[1] != self.obs_dim_:
            raise ValueError(f"observations have {X.shape[1]} features, agent expects {self.obs_dim_}")
        return self.actor_(self._norm(X))

    def act(self, obs, noise_scale=0.0):
        """One action; Gaussian noise of std ``noise_scale`` then clipping to [0, 1]."""
        obs = np.asarray(obs, dtype=float)
        if not np.all(np.isfinite(obs)):
            raise ValueError("observation has non-finite entries")
        a = self.predict(obs.reshape(1, -1))[0]
        if noise_scale > 0:
            a = a + self.noise_rng_.normal(0.0, noise_scale, size=a.shape)
        return np.clip(a, 0.0, 1.0)

    # -- learning ------------------------------------------------------------
    def critic_loss_and_grads(self, s, a, y):
        """Mean squared TD error on a (normalised) batch and its gradients."""
        q, cache = self.critic_.forward(np.hstack([s, a]))
        diff = q[:, 0] - y
        loss = float(np.mean(diff**2))
        grads, _ = self.critic_.backward(cache, (2.0 / len(y)) * diff[:, None])
        return loss, grads

    def actor_objective_and_grads(self, s):
        """Mean critic value of the actor's actions, and the gradients of
        its negation w.r.t. the actor parameters (ready for descent)."""
        a, a_cache = self.actor_.forward(s)
        q, c_cache = self.critic_.forward(np.hstack([s, a]))
        _, g_in = self.critic_.backward(c_cache, np.full_like(q, -1.0 / len(s)))
        g_a = g_in[:, self.obs_dim_:]
        if self.action_l2:
            # penalty action_l2 * mean_batch(sum_j (2a - 1)^2), keeps the squashing unsaturated
            g_a = g_a + self.action_l2 * 4.0 * (2.0 * a - 1.0) / len(s)
        grads, _ = self.actor_.backward(a_cache, g_a)
        return float(np.mean(q)), grads

    def td_target(self, r, s_next, done):
        a_next = self.actor_target_(s_next)
        q_next = self.critic_target_(np.hstack([s_next, a_next]))[:, 0]
        return r + self.gamma * (1.0 - done) * q_next

    def train_step(self):
        """One critic and one actor update on a replay minibatch, then soft
        target updates.  Returns ``{"critic_loss", "actor_objective"}``."""
        self._check_fitted()
        s, a, r, s_next, done = self.buffer_.sample(self.batch_size)
        s, s_next = self._norm(s), self._norm(s_next)
        y = self.td_target(r, s_next, done)
        critic_loss, c_grads = self.critic_loss_and_grads(s, a, y)
        if not np.isfinite(critic_loss):
            raise NumericalAbort(f"non-finite critic loss at update {self.n_updates_}")
        self.critic_opt_.step(self.critic_.params, c_grads)
        actor_obj, a_grads = self.actor_objective_and_grads(s)
        if not np.isfinite(actor_obj):
            raise NumericalAbort(f"non-finite actor objective at update {self.n_updates_}")
        self.actor_opt_.step(self.actor_.params, a_grads)
        soft_update(self.critic_.params, self.critic_target_.params, self.tau)
        soft_update(self.actor_.params, self.actor_target_.params, self.tau)
        self.n_updates_ += 1
        return {"critic_loss": critic_loss, "actor_objective": actor_obj}

    def noise_at(self, episode, n_episodes):
        if n_episodes <= 1:
            return self.noise_start
        frac = min(max(episode / (n_episodes - 1), 0.0), 1.0)
        return self.noise_start + frac * (self.noise_end - self.noise_start)

    def fit(self, env, n_episodes=300, seeds=None, callback=None):
        """Train against ``env`` for ``n_episodes`` episodes.

        ``seeds`` gives the attack seed of each episode (defaults to
        ``0..n_episodes-1``).  ``callback(episode, row)`` sees each
        finished episode.  Per-episode rows are kept in
        ``training_rows_``.
        """
        self.initialize(env.obs_dim, env.action_dim)
        seeds = list(range(n_episodes)) if seeds is None else list(seeds)
        self.training_rows_ = []
        for ep in range(n_episodes):
            obs = env.reset(seed=seeds[ep])
            if self.normalize:
                self.scaler_.partial_fit(obs[None, :])
            sigma = self.noise_at(ep, n_episodes)
            total, stages, diag = 0.0, 0, {}
            while True:
                if ep < self.warmup_episodes:
                    action = self.noise_rng_.uniform(0.0, 1.0, size=env.action_dim)
                else:
                    action = self.act(obs, sigma)
                out = env.step(action)
                self.buffer_.add(obs, action, self.reward_scale * out.reward, out.observation, out.done)
                if self.normalize:
                    self.scaler_.partial_fit(out.observation[None, :])
                if ep >= self.warmup_episodes and len(self.buffer_) >= self.batch_size:
                    diag = self.train_step()
                total += out.reward
                stages += 1
                obs = out.observation
                if out.done:
                    break
            row = {
                "episode": ep,
                "seed": seeds[ep],
                "verdict": out.verdict.value,
                "total_reward": total,
                "stages": stages,
                "noise": sigma,
                "critic_loss": diag.get("critic_loss", float("nan")),
            }
            self.training_rows_.append(row)
            if callback is not None:
                callback(ep, row)
            log.debug("episode %d: %s reward=%.2f", ep, row["verdict"], total)
        return self

    # -- checkpoints -----------------------------------------------------------
    def save(self, path):
        """Write a checkpoint: a zip of ``.npy`` arrays plus ``meta.json``.

        Entries carry a fixed timestamp so identical agents give identical
        bytes.  See the README for the layout.
        """
        self._check_fitted()
        arrays = {}
        for name in ("actor", "critic", "actor_target", "critic_target"):
            net = getattr(self, name + "_")
            for i, p in enumerate(net.params):
                arrays[f"{name}/{i}"] = p
        for name in ("actor_opt", "critic_opt"):
            opt = getattr(self, name + "_")
            for i, (m, v) in enumerate(zip(opt.m, opt.v)):
                arrays[f"{name}/m{i}"] = m
                arrays[f"{name}/v{i}"] = v
        if hasattr(self.scaler_, "mean_"):
            arrays["scaler/mean"] = self.scaler_.mean_
            arrays["scaler/m2"] = self.scaler_.m2_
        meta = {
            "format": "gridcascade-ddpg",
            "version": CHECKPOINT_VERSION,
            "params": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.get_params().items()},
            "obs_dim": self.obs_dim_,
            "action_dim": self.action_dim_,
            "actor_sizes": list(self.actor_.sizes),
            "critic_sizes": list(self.critic_.sizes),
            "adam_t": {"actor": self.actor_opt_.t, "critic": self.critic_opt_.t},
            "scaler_n": getattr(self.scaler_, "n_samples_seen_", 0),
            "n_updates": self.n_updates_,
            "rng": {
                "noise": self.noise_rng_.bit_generator.state,
                "replay": self.buffer_.rng.bit_generator.state,
            },
        }
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            for name in sorted(arrays):
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
                zf.writestr(_entry(name + ".npy"), buf.getvalue())
            zf.writestr(_entry("meta.json"), json.dumps(meta, sort_keys=True, indent=1))
        return path

    @classmethod
    def load(cls, path):
        """Rebuild an agent from :meth:`save` output."""
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            if meta.get("format") != "gridcascade-ddpg":
                raise ValueError(f"{path} is not a gridcascade checkpoint")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            arrays = {
                n[:-4]: np.lib.format.read_array(io.BytesIO(zf.read(n)), allow_pickle=False)
                for n in zf.namelist()
                if n.endswith(".npy")
            }
        params = meta["params"]
        params["hidden_sizes"] = tuple(params["hidden_sizes"])
        agent = cls(**params).initialize(meta["obs_dim"], meta["action_dim"])
        for name in ("actor", "critic", "actor_target", "critic_target"):
            net = getattr(agent, name + "_")
            net.params = [arrays[f"{name}/{i}"].copy() for i in range(len(net.params))]
        for name, key in (("actor_opt", "actor"), ("critic_opt", "critic")):
            opt = getattr(agent, name + "_")
            opt.m = [arrays[f"{name}/m{i}"].copy() for i in range(len(opt.m))]
            opt.v = [arrays[f"{name}/v{i}"].copy() for i in range(len(opt.v))]
            opt.t = meta["adam_t"][key]
        if "scaler/mean" in arrays:
            agent.scaler_.n_samples_seen_ = meta["scaler_n"]
            agent.scaler_.mean_ = arrays["scaler/mean"].copy()
            agent.scaler_.m2_ = arrays["scaler/m2"].copy()
        agent.n_updates_ = meta["n_updates"]
        agent.noise_rng_.bit_generator.state = meta["rng"]["noise"]
        agent.buffer_.rng.bit_generator.state = meta["rng"]["replay"]
        return agent


def _entry(name):
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    return info
