"""PPO learner in plain numpy, plus the fixed-wrench baseline.

Policy and value are separate tanh MLPs. The policy outputs the mean of a
diagonal Gaussian over pre-squash actions u; the executed action is
tanh(u). Buffers store u itself, so the squash log-Jacobian depends only on
stored data and cancels in the probability ratio.

All parameters (both networks and the log-std) live in one flat float64
vector; layers are row-major views into it. That keeps Adam, gradient
clipping and the checkpoint format trivial.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .env import (ACT_DIM, OBS_DIM, Action, EnvConfig, ScrapeEnv, action_from_raw,
                  derive_seed, normalize_observation)

LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_MAGIC = b"SCRP"
CHECKPOINT_VERSION = 1
OBS_CLIP = 10.0
CURVE_COLUMNS = ("update", "mean_return", "mean_removed_fraction", "mean_wrench")


class TrainingFailure(RuntimeError):
    """Non-finite network output or loss; carries the offending minibatch."""

    def __init__(self, message, batch=None):
        super().__init__(message)
        self.batch = batch


@dataclass
class PpoConfig:
    clip_epsilon: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    epochs_per_update: int = 10
    minibatch_size: int = 64
    rollout_steps: int = 2048
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    total_updates: int = 100
    hidden: tuple = (64, 64)
    init_log_std: float = -1.0
    # divide rewards by a running std of the discounted return
    normalize_rewards: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not self.clip_epsilon > 0:
            raise ValueError("clip_epsilon must be positive")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.minibatch_size < 1 or self.rollout_steps < 1 or self.epochs_per_update < 1:
            raise ValueError("batch sizes and epochs must be positive")
        if self.total_updates < 0:
            raise ValueError("total_updates must be non-negative")
        self.hidden = tuple(int(h) for h in self.hidden)


# ------------------------------------------------------------------ networks

def _layer_shapes(sizes):
    return [(sizes[i + 1], sizes[i] + 1) for i in range(len(sizes) - 1)]


class ActorCritic:
    """Gaussian tanh-squashed policy and a value function.

    Each layer is stored as one (out, in + 1) block whose last column is
    the bias. ``params`` holds policy layers, then value layers, then the
    log-std.
    """

    def __init__(self, obs_dim=OBS_DIM, act_dim=ACT_DIM, hidden=(64, 64), seed=0,
                 init_log_std=0.0, params=None):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.hidden = tuple(hidden)
        self.policy_shapes = _layer_shapes([obs_dim, *self.hidden, act_dim])
        self.value_shapes = _layer_shapes([obs_dim, *self.hidden, 1])
        n = sum(r * c for r, c in self.policy_shapes + self.value_shapes) + act_dim
        if params is None:
            self.params = np.zeros(n)
            self._bind()
            self._init(np.random.default_rng(seed), init_log_std)
        else:
            params = np.asarray(params, dtype=float)
            if params.shape != (n,):
                raise ValueError(f"expected {n} parameters, got {params.shape}")
            self.params = params.copy()
            self._bind()

    def _bind(self):
        views = []
        off = 0
        for r, c in self.policy_shapes + self.value_shapes:
            views.append(self.params[off:off + r * c].reshape(r, c))
            off += r * c
        npol = len(self.policy_shapes)
        self.policy_layers = views[:npol]
        self.value_layers = views[npol:]
        self.log_std = self.params[off:]

    def _init(self, rng, init_log_std):
        for layers in (self.policy_layers, self.value_layers):
            for i, w in enumerate(layers):
                fan_in = w.shape[1] - 1
                gain = 1.0
                if i == len(layers) - 1:
                    gain = 0.01 if layers is self.policy_layers else 1.0
                w[:, :-1] = rng.standard_normal((w.shape[0], fan_in)) * gain / math.sqrt(fan_in)
                w[:, -1] = 0.0
        self.log_std[:] = init_log_std

    def copy(self) -> "ActorCritic":
        return ActorCritic(self.obs_dim, self.act_dim, self.hidden, params=self.params)

    @property
    def layer_shapes(self):
        return self.policy_shapes + self.value_shapes

    # forward / backward ------------------------------------------------
    @staticmethod
    def _forward(layers, x):
        acts = [x]
        h = x
        for i, w in enumerate(layers):
            h = h @ w[:, :-1].T + w[:, -1]
            if i < len(layers) - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    @staticmethod
    def _backward(layers, acts, grad_out, grads):
        g = grad_out
        for i in range(len(layers) - 1, -1, -1):
            w = layers[i]
            grads[i][:, :-1] += g.T @ acts[i]
            grads[i][:, -1] += g.sum(axis=0)
            if i > 0:
                g = (g @ w[:, :-1]) * (1.0 - acts[i] ** 2)

    def mean(self, obs):
        return self._forward(self.policy_layers, np.atleast_2d(obs))[0]

    def value(self, obs):
        return self._forward(self.value_layers, np.atleast_2d(obs))[0][:, 0]

    def log_prob(self, u, mu=None, obs=None):
        """Exact log-density of the squashed action tanh(u)."""
        if mu is None:
            mu = self.mean(obs)
        return gaussian_log_prob(u, mu, self.log_std) - squash_log_jacobian(u)

    def entropy(self) -> float:
        """Entropy of the pre-squash Gaussian (state independent)."""
        return float(np.sum(self.log_std) + 0.5 * self.act_dim * (1.0 + LOG_2PI))

    def act(self, obs, rng: np.random.Generator | None, deterministic=False):
        """Returns (action in [-1, 1]^d, pre-squash u, log-prob, value)."""
        x = np.asarray(obs, dtype=float)[None, :]
        if not np.all(np.isfinite(x)):
            raise ValueError("observation is not finite")
        mu = self.mean(x)[0]
        v = float(self.value(x)[0])
        if not (np.all(np.isfinite(mu)) and math.isfinite(v)):
            raise TrainingFailure(f"non-finite network output: mean={mu}, value={v}")
        if deterministic:
            u = mu.copy()
        else:
            u = mu + np.exp(self.log_std) * rng.standard_normal(self.act_dim)
        lp = float(self.log_prob(u[None, :], mu[None, :])[0])
        return np.tanh(u), u, lp, v

    def loss_and_grad(self, obs, u, old_logp, adv, returns, cfg: PpoConfig):
        """Clipped-surrogate PPO loss and its exact gradient w.r.t. ``params``."""
        n = len(obs)
        grads = np.zeros_like(self.params)
        gviews = []
        off = 0
        for r, c in self.layer_shapes:
            gviews.append(grads[off:off + r * c].reshape(r, c))
            off += r * c
        g_pol = gviews[:len(self.policy_shapes)]
        g_val = gviews[len(self.policy_shapes):]
        g_logstd = grads[off:]

        mu, pacts = self._forward(self.policy_layers, obs)
        std = np.exp(self.log_std)
        logp = self.log_prob(u, mu)
        ratio = np.exp(logp - old_logp)
        clipped = np.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon)
        surr = np.minimum(ratio * adv, clipped * adv)
        policy_loss = -float(np.mean(surr))
        # the unclipped branch carries the gradient wherever it is the minimum
        active = ratio * adv <= clipped * adv
        dlogp = np.where(active, -ratio * adv, 0.0) / n
        z = (u - mu) / std
        g_mu = dlogp[:, None] * z / std
        g_logstd += np.sum(dlogp[:, None] * (z * z - 1.0), axis=0)
        self._backward(self.policy_layers, pacts, g_mu, g_pol)

        v, vacts = self._forward(self.value_layers, obs)
        diff = v[:, 0] - returns
        value_loss = float(np.mean(diff * diff))
        self._backward(self.value_layers, vacts, (cfg.value_coef * 2.0 / n) * diff[:, None],
                       g_val)

        entropy = self.entropy()
        g_logstd -= cfg.entropy_coef
        loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy
        stats = {"loss": loss, "policy_loss": policy_loss, "value_loss": value_loss,
                 "entropy": entropy, "clip_fraction": float(np.mean(~active)),
                 "approx_kl": float(np.mean(old_logp - logp))}
        return loss, grads, stats


def gaussian_log_prob(u, mu, log_std):
    z = (u - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * LOG_2PI, axis=-1)


def squash_log_jacobian(u):
    """sum log(1 - tanh(u)^2), computed stably."""
    return np.sum(2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u)), axis=-1)


# ---------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, n, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, params, grad):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        mhat = self.m / (1.0 - self.beta1 ** self.t)
        vhat = self.v / (1.0 - self.beta2 ** self.t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_grad_norm(grad, max_norm):
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        grad = grad * (max_norm / (norm + 1e-12))
    return grad, norm


# ------------------------------------------------------------------- buffer

@dataclass
class RolloutBuffer:
    obs: list = field(default_factory=list)
    u: list = field(default_factory=list)
    log_prob: list = field(default_factory=list)
    value: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    done: list = field(default_factory=list)

    def __len__(self):
        return len(self.reward)

    def add(self, obs, u, log_prob, value, reward, done):
        self.obs.append(obs)
        self.u.append(u)
        self.log_prob.append(log_prob)
        self.value.append(value)
        self.reward.append(reward)
        self.done.append(done)

    def extend(self, other: "RolloutBuffer"):
        for name in ("obs", "u", "log_prob", "value", "reward", "done"):
            getattr(self, name).extend(getattr(other, name))

    def arrays(self):
        return (np.array(self.obs), np.array(self.u), np.array(self.log_prob),
                np.array(self.value), np.array(self.reward), np.array(self.done, dtype=bool))


def gae_advantages(rewards, values, dones, gamma, lam, last_value=0.0):
    """Generalized advantage estimates; ``values[t]`` is V(s_t).

    The value after step t is ``values[t + 1]`` (``last_value`` after the
    final step) and is masked when ``dones[t]`` is set.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    if not len(rewards) == len(values) == len(dones):
        raise ValueError("rewards, values and dones must have equal length")
    n = len(rewards)
    adv = np.zeros(n)
    nxt_adv = 0.0
    for t in range(n - 1, -1, -1):
        nxt_v = last_value if t == n - 1 else values[t + 1]
        live = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * nxt_v * live - values[t]
        nxt_adv = delta + gamma * lam * live * nxt_adv
        adv[t] = nxt_adv
    return adv, adv + values


class RunningMoments:
    """Running mean/variance with the parallel-merge update."""

    def __init__(self):
        self.mean = 0.0
        self.var = 1.0
        self.count = 1e-4

    def update(self, x):
        x = np.asarray(x, dtype=float)
        if x.size == 0:
            return
        bm, bv, bc = float(x.mean()), float(x.var()), x.size
        delta = bm - self.mean
        tot = self.count + bc
        self.mean += delta * bc / tot
        m2 = self.var * self.count + bv * bc + delta * delta * self.count * bc / tot
        self.var = m2 / tot
        self.count = tot


def ppo_update(model: ActorCritic, optimizer: Adam, batch, cfg: PpoConfig,
               rng: np.random.Generator):
    """Epochs of shuffled minibatch steps; returns averaged loss statistics."""
    obs, u, old_logp, adv, returns = batch
    n = len(obs)
    if n == 0:
        raise ValueError("empty rollout buffer")
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    totals = {}
    count = 0
    for _ in range(cfg.epochs_per_update):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch_size):
            idx = order[start:start + cfg.minibatch_size]
            loss, grad, stats = model.loss_and_grad(obs[idx], u[idx], old_logp[idx], adv[idx],
                                                    returns[idx], cfg)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise TrainingFailure(f"non-finite loss {loss}",
                                      batch={"obs": obs[idx], "u": u[idx], "adv": adv[idx],
                                             "returns": returns[idx]})
            grad, norm = clip_grad_norm(grad, cfg.max_grad_norm)
            optimizer.step(model.params, grad)
            stats["grad_norm"] = norm
            for k, v in stats.items():
                totals[k] = totals.get(k, 0.0) + v
            count += 1
    return {k: v / count for k, v in totals.items()}


# -------------------------------------------------------------------- tasks

class ScrapeTask:
    """Adapter between :class:`ScrapeEnv` and the learner.

    Observations are normalized and clipped; actions arrive in [-1, 1]^3.
    ``reset(key)`` draws the material profile and friction from ``key``.
    """

    obs_dim = OBS_DIM
    act_dim = ACT_DIM

    def __init__(self, config: EnvConfig | None = None):
        self.env = ScrapeEnv(config)
        self.cfg = self.env.cfg
        self.horizon = self.cfg.episode.horizon

    def _vec(self, obs):
        v = normalize_observation(obs.to_vector(), self.cfg.geometry)
        return np.clip(v, -OBS_CLIP, OBS_CLIP)

    def reset(self, key: int, episode_seed: int = 0):
        return self._vec(self.env.reset(profile_seed=key, episode_seed=episode_seed))

    def step(self, raw):
        obs, reward, term, trunc, info = self.env.step(action_from_raw(raw, self.cfg))
        info = dict(info, wrench_norm=float(np.linalg.norm(info["wrench_mean"])))
        return self._vec(obs), reward, term or trunc, info


class ForceTrackingTask:
    """Toy 1-D force regulation with a closed-form optimum.

    The measured force is F = f_cmd + d with d ~ U[-2, 2] drawn every step
    and shown in the observation (index 0, as d / 2). f_cmd maps action[0]
    from [-1, 1] onto [0, 10] N. Reward is -|F - 4|, so the optimum
    f_cmd = 4 - d earns exactly 0.
    """

    obs_dim = OBS_DIM
    act_dim = ACT_DIM
    target = 4.0
    disturbance = 2.0
    f_max = 10.0

    def __init__(self, horizon: int = 16):
        self.horizon = horizon

    def _obs(self):
        o = np.zeros(self.obs_dim)
        o[0] = self.d / self.disturbance
        return o

    def reset(self, key: int, episode_seed: int = 0):
        self.rng = np.random.default_rng(derive_seed(key, episode_seed))
        self.t = 0
        self.d = self.rng.uniform(-self.disturbance, self.disturbance)
        return self._obs()

    def step(self, raw):
        f_cmd = 0.5 * (float(np.clip(raw[0], -1.0, 1.0)) + 1.0) * self.f_max
        err = abs(f_cmd + self.d - self.target)
        self.t += 1
        self.d = self.rng.uniform(-self.disturbance, self.disturbance)
        done = self.t >= self.horizon
        return self._obs(), -err, done, {"removed_fraction": 0.0, "wrench_norm": f_cmd,
                                         "abs_error": err}

    def score(self, model: ActorCritic, episodes: int = 20, seed: int = 12345) -> float:
        """1 - mean |error| / 4 N under the deterministic policy (1 is optimal)."""
        errs = []
        for e in range(episodes):
            obs = self.reset(seed, e)
            done = False
            while not done:
                a, *_ = model.act(obs, None, deterministic=True)
                obs, _, done, info = self.step(a)
                errs.append(info["abs_error"])
        return 1.0 - float(np.mean(errs)) / self.target


# ----------------------------------------------------------------- training

def run_episode(model: ActorCritic, task, key: int, rng, deterministic=False,
                episode_seed: int = 0):
    """One full episode; returns (buffer, summary dict)."""
    buf = RolloutBuffer()
    obs = task.reset(key, episode_seed)
    done = False
    ret = 0.0
    wrench = []
    info = {"removed_fraction": 0.0}
    while not done:
        a, u, lp, v = model.act(obs, rng, deterministic)
        nxt, r, done, info = task.step(a)
        buf.add(obs, u, lp, v, r, done)
        ret += r
        wrench.append(info.get("wrench_norm", 0.0))
        obs = nxt
    return buf, {"return": ret, "removed_fraction": info.get("removed_fraction", 0.0),
                 "mean_wrench": float(np.mean(wrench)) if wrench else 0.0, "steps": len(buf)}


def _episode_job(args):
    params, shape, task_factory, key, rng_seed = args
    model = ActorCritic(*shape, params=params)
    return run_episode(model, task_factory(), key, np.random.default_rng(rng_seed))


@dataclass
class TrainResult:
    model: ActorCritic
    curve: list
    stats: list


def episode_keys(seed: int, update: int, n: int):
    """(task key, sampling seed) per episode; independent of worker layout."""
    return [(derive_seed(seed, update, e, 1) % (1 << 31), derive_seed(seed, update, e, 2))
            for e in range(n)]


def train(task_factory: Callable, cfg: PpoConfig, seed: int = 0, workers: int = 1,
          checkpoint_every: int = 0, out_dir: str | Path | None = None,
          log: Callable | None = None, model: ActorCritic | None = None) -> TrainResult:
    """Alternate whole-episode rollouts and PPO updates.

    Each update collects ceil(rollout_steps / horizon) episodes. Every
    episode draws its task key and sampling noise from (seed, update,
    episode), so the result does not depend on ``workers``.
    """
    task = task_factory()
    if model is None:
        model = ActorCritic(task.obs_dim, task.act_dim, cfg.hidden, seed=derive_seed(seed, 0xAC),
                            init_log_std=cfg.init_log_std)
    opt = Adam(len(model.params), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
               cfg.adam_eps)
    moments = RunningMoments()
    n_eps = max(1, math.ceil(cfg.rollout_steps / task.horizon))
    shape = (model.obs_dim, model.act_dim, model.hidden)
    curve, all_stats = [], []
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    try:
        for update in range(1, cfg.total_updates + 1):
            keys = episode_keys(seed, update, n_eps)
            if pool is None:
                results = [run_episode(model, task, k, np.random.default_rng(s))
                           for k, s in keys]
            else:
                jobs = [(model.params, shape, task_factory, k, s) for k, s in keys]
                results = list(pool.map(_episode_job, jobs))
            buf = RolloutBuffer()
            advs, rets = [], []
            for b, _ in results:
                _, _, _, val, rew, done = b.arrays()
                if cfg.normalize_rewards:
                    disc = np.zeros(len(rew))
                    acc = 0.0
                    for t, r in enumerate(rew):
                        acc = acc * cfg.gamma + r
                        disc[t] = acc
                    moments.update(disc)
            scale = math.sqrt(moments.var + 1e-8) if cfg.normalize_rewards else 1.0
            for b, _ in results:
                _, _, _, val, rew, done = b.arrays()
                a, r = gae_advantages(rew / scale, val, done, cfg.gamma, cfg.gae_lambda)
                advs.append(a)
                rets.append(r)
                buf.extend(b)
            obs, u, logp, _, _, _ = buf.arrays()
            batch = (obs, u, logp, np.concatenate(advs), np.concatenate(rets))
            stats = ppo_update(model, opt, batch, cfg,
                               np.random.default_rng(derive_seed(seed, update, 0xB)))
            summaries = [s for _, s in results]
            row = {"update": update,
                   "mean_return": float(np.mean([s["return"] for s in summaries])),
                   "mean_removed_fraction": float(np.mean([s["removed_fraction"]
                                                           for s in summaries])),
                   "mean_wrench": float(np.mean([s["mean_wrench"] for s in summaries]))}
            curve.append(row)
            all_stats.append(stats)
            # a truthy return from ``log`` ends training early
            if log is not None and log(row, stats):
                break
            if out_dir is not None and checkpoint_every and update % checkpoint_every == 0:
                save_checkpoint(model, out_dir / f"checkpoint_{update:05d}.scrp")
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(model, curve, all_stats)


def curve_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in rows:
        w.writerow([r["update"], repr(r["mean_return"]), repr(r["mean_removed_fraction"]),
                    repr(r["mean_wrench"])])
    return buf.getvalue()


# --------------------------------------------------------------- checkpoint

def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(model: ActorCritic) -> bytes:
    """Byte layout (little endian)::

        "SCRP"  u16 version  u32 layer_count  u32 policy_layer_count
        layer_count x (u32 rows, u32 cols)      cols include the bias column
        f64 weights, row-major, layer after layer (policy first)
        f64 log_std[rows of the last policy layer]
        u64 FNV-1a of every byte after the magic
    """
    shapes = model.layer_shapes
    body = bytearray(struct.pack("<HII", CHECKPOINT_VERSION, len(shapes),
                                 len(model.policy_shapes)))
    for r, c in shapes:
        body += struct.pack("<II", r, c)
    body += model.params.astype("<f8").tobytes()
    return CHECKPOINT_MAGIC + bytes(body) + struct.pack("<Q", fnv1a64(bytes(body)))


def model_from_bytes(data: bytes) -> ActorCritic:
    if len(data) < 4 + 10 + 8 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    body, (stored,) = data[4:-8], struct.unpack("<Q", data[-8:])
    if fnv1a64(body) != stored:
        raise CheckpointError("checkpoint checksum mismatch")
    version, n_layers, n_policy = struct.unpack_from("<HII", body, 0)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    shapes = [struct.unpack_from("<II", body, 10 + 8 * i) for i in range(n_layers)]
    off = 10 + 8 * n_layers
    params = np.frombuffer(body[off:], dtype="<f8").astype(float)
    pol = shapes[:n_policy]
    obs_dim = pol[0][1] - 1
    act_dim = pol[-1][0]
    hidden = tuple(r for r, _ in pol[:-1])
    model = ActorCritic(obs_dim, act_dim, hidden, params=params)
    if model.layer_shapes != [tuple(s) for s in shapes]:
        raise CheckpointError("layer shapes do not describe a policy/value pair")
    return model


def save_checkpoint(model: ActorCritic, path):
    Path(path).write_bytes(checkpoint_bytes(model))


def load_checkpoint(path) -> ActorCritic:
    return model_from_bytes(Path(path).read_bytes())


# ----------------------------------------------------------------- baseline

@dataclass
class BaselineParams:
    force: float = 4.0
    tau: float = 0.5
    # optional final upward pass with a different force
    upward_sweep: bool = False
    sweep_start: float = 0.8
    sweep_force: float = 6.0


def fixed_wrench_policy(t: int, config: EnvConfig | None = None,
                        params: BaselineParams | None = None) -> Action:
    """Constant wrench while z descends linearly over the window.

    Without the upward sweep, z goes from window top at t = 0 to window
    bottom at t = horizon and holds there.
    """
    cfg = config or EnvConfig()
    p = params or BaselineParams()
    g = cfg.geometry
    horizon = cfg.episode.horizon
    top, bottom = g.window_z_max, g.window_z_min
    if not p.upward_sweep:
        s = min(max(t / horizon, 0.0), 1.0)
        return Action(p.force, p.tau, top + s * (bottom - top))
    t_turn = p.sweep_start * horizon
    if t <= t_turn:
        s = t / t_turn
        return Action(p.force, p.tau, top + s * (bottom - top))
    s = min((t - t_turn) / (horizon - t_turn), 1.0)
    return Action(p.sweep_force, p.tau, bottom + s * (top - bottom))


def policy_action(model: ActorCritic, obs_vector, cfg: EnvConfig) -> Action:
    """Deterministic-mode action for an unnormalized observation vector."""
    v = np.clip(normalize_observation(obs_vector, cfg.geometry), -OBS_CLIP, OBS_CLIP)
    a, *_ = model.act(v, None, deterministic=True)
    return action_from_raw(a, cfg)
