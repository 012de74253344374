"""Clipped-surrogate policy optimization with GAE, entropy bonus and a
KL-adaptive learning rate, over the from-scratch actor-critic.

The update minimizes  -E[min(rho*A, clip(rho, 1-eps, 1+eps)*A)]
                      + value MSE - ent_coef * entropy
for a fixed number of epochs over shuffled minibatches.  After every
minibatch the learning rate adapts on the analytic Gaussian KL between the
rollout policy and the current one: above 2x the target it divides by 1.5,
below half the target it multiplies by 1.5, clamped to [1e-6, 1e-2].
"""

import time
from dataclasses import dataclass

import numpy as np

from .networks import ActorCritic, Adam, clip_grads

LR_BOUNDS = (1e-6, 1e-2)


@dataclass
class PpoConfig:
    n_envs: int = 64
    horizon: int = 24
    epochs: int = 5
    num_minibatches: int = 4
    clip: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 1.0
    gamma: float = 0.99
    lam: float = 0.95
    kl_target: float = 0.01
    lr_init: float = 1e-3
    max_grad_norm: float = 1.0
    hidden: tuple = (128, 64)
    log_std_init: float = 0.0
    value_warmup_updates: int = 0   # critic-only updates before policy moves
    curriculum_updates: int = 0     # forward-task command range widens over these
    seed: int = 0

    def __post_init__(self):
        if self.clip <= 0:
            raise ValueError("clip range must be positive")
        if not (0 < self.gamma <= 1 and 0 < self.lam <= 1):
            raise ValueError("gamma and lambda must lie in (0, 1]")
        if (self.n_envs * self.horizon) % self.num_minibatches != 0:
            raise ValueError("minibatch count must divide the batch size")

    @property
    def batch_size(self):
        return self.n_envs * self.horizon


@dataclass
class RolloutBatch:
    """One horizon of experience, arrays shaped (n_envs, horizon, ...).

    Rewards are already bootstrapped for mid-horizon time limits; `dones`
    marks both terminations and time limits.  `bootstrap` is V(s_H) for the
    state following the last step of each row.
    """

    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    bootstrap: np.ndarray
    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self):
        lead = self.observations.shape[:2]
        for name in ("actions", "log_probs", "rewards", "values", "dones", "means"):
            arr = getattr(self, name)
            if arr.shape[:2] != lead:
                raise ValueError(f"{name} must share the leading (n_envs, horizon) shape")


def compute_gae(rewards, values, dones, bootstrap, gamma, lam, normalize=True):
    """Generalized advantage estimation over (n_envs, horizon) arrays.

    delta_t = r_t + gamma*V_{t+1}*(1 - done_t) - V_t
    A_t     = delta_t + gamma*lam*(1 - done_t)*A_{t+1}
    returns = A + V.  Advantages are normalized across the whole batch.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    not_done = 1.0 - np.asarray(dones, dtype=float)
    n, h = rewards.shape
    adv = np.zeros((n, h))
    last_adv = np.zeros(n)
    next_value = np.asarray(bootstrap, dtype=float)
    for t in range(h - 1, -1, -1):
        delta = rewards[:, t] + gamma * next_value * not_done[:, t] - values[:, t]
        last_adv = delta + gamma * lam * not_done[:, t] * last_adv
        adv[:, t] = last_adv
        next_value = values[:, t]
    returns = adv + values
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


class RunningNormalizer:
    """Streaming mean/variance observation normalizer, freezable for eval."""

    def __init__(self, dim, clip=10.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip
        self.frozen = False

    def update(self, batch):
        if self.frozen:
            return
        batch = batch.reshape(-1, batch.shape[-1])
        b_count = batch.shape[0]
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        delta = b_mean - self.mean
        total = self.count + b_count
        self.mean = self.mean + delta * b_count / total
        m_a = self.var * self.count
        m_b = b_var * b_count
        self.var = (m_a + m_b + delta * delta * self.count * b_count / total) / total
        self.count = total

    def normalize(self, obs):
        return np.clip((obs - self.mean) / np.sqrt(self.var + 1e-8),
                       -self.clip, self.clip)


def adapt_lr(lr, kl, kl_target, divisor=1.5):
    """KL-adaptive learning-rate rule, clamped to LR_BOUNDS."""
    if kl > 2.0 * kl_target:
        lr = lr / divisor
    elif kl < kl_target / 2.0:
        lr = lr * divisor
    return float(np.clip(lr, *LR_BOUNDS))


def gaussian_kl(mean_old, std_old, mean_new, std_new):
    """Mean KL(old || new) between diagonal Gaussians."""
    var_new = std_new * std_new
    kl = (np.log(std_new / std_old)
          + (std_old * std_old + (mean_old - mean_new) ** 2) / (2.0 * var_new)
          - 0.5)
    return float(kl.sum(axis=-1).mean())


def collect_rollout(env, policy, normalizer, cfg, rng, episode_tracker=None):
    """Gather one (n_envs, horizon) batch from the vectorized environment."""
    n, h = env.n_envs, cfg.horizon
    obs_dim, act_dim = env.obs_dim, getattr(env, "act_dim", 12)
    obs_buf = np.empty((n, h, obs_dim))
    act_buf = np.empty((n, h, act_dim))
    logp_buf = np.empty((n, h))
    rew_buf = np.empty((n, h))
    val_buf = np.empty((n, h))
    done_buf = np.zeros((n, h), dtype=bool)
    mean_buf = np.empty((n, h, act_dim))

    obs = env.observe()
    for t in range(h):
        normalizer.update(obs)
        obs_n = normalizer.normalize(obs)
        mean, std, value = policy.forward(obs_n)
        action = mean + std * rng.standard_normal(mean.shape)
        logp = policy.log_prob(mean, std, action)
        obs_buf[:, t] = obs_n
        act_buf[:, t] = action
        logp_buf[:, t] = logp
        val_buf[:, t] = value
        mean_buf[:, t] = mean
        obs, reward, done, info = env.step(action)
        if episode_tracker is not None:
            episode_tracker.record(reward, done, info)
        # bootstrap through time limits: the episode ended but the MDP did not
        tl = info["time_limit"]
        if tl.any():
            term_obs = normalizer.normalize(info["terminal_obs"][tl])
            reward = reward.copy()
            reward[tl] += cfg.gamma * policy.value(term_obs)
        rew_buf[:, t] = reward
        done_buf[:, t] = done
    bootstrap = policy.value(normalizer.normalize(obs))
    std = np.exp(policy.log_std)
    return RolloutBatch(obs_buf, act_buf, logp_buf, rew_buf, val_buf, done_buf,
                        bootstrap, mean_buf, np.broadcast_to(std, mean_buf.shape).copy())


def _loss_and_grads(policy, obs, actions, old_logp, adv, returns, old_mean,
                    old_std, cfg, policy_scale=1.0):
    """PPO loss, analytic parameter gradients and stats for one minibatch.

    policy_scale=0 freezes the actor (critic-warmup phase).
    """
    b = obs.shape[0]
    mean, actor_cache = policy.actor.forward(obs)
    value, critic_cache = policy.critic.forward(obs)
    value = value[:, 0]
    std = np.exp(policy.log_std)

    z = (actions - mean) / std
    logp = -0.5 * (z * z).sum(axis=-1) - policy.log_std.sum() \
        - 0.5 * policy.act_dim * np.log(2.0 * np.pi)
    ratio = np.exp(logp - old_logp)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    policy_loss = -np.minimum(unclipped, clipped).mean()
    value_err = value - returns
    value_loss = (value_err ** 2).mean()
    entropy = policy.entropy()
    loss = policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy

    # d(policy_loss)/d(logp): only where the unclipped branch is selected
    active = (unclipped <= clipped).astype(float)
    dlogp = -(ratio * adv * active) * (policy_scale / b)
    # chain into the Gaussian parameters
    dmean = dlogp[:, None] * z / std
    dlogstd_policy = (dlogp[:, None] * (z * z - 1.0)).sum(axis=0)
    dvalue = (2.0 * cfg.value_coef / b) * value_err

    actor_grads = policy.actor.backward(actor_cache, dmean)
    critic_grads = policy.critic.backward(critic_cache, dvalue[:, None])
    dlogstd = dlogstd_policy - policy_scale * cfg.entropy_coef \
        * np.ones_like(policy.log_std)
    if policy_scale == 0.0:
        actor_grads = [np.zeros_like(g) for g in actor_grads]
        dlogstd = np.zeros_like(dlogstd)
    grads = actor_grads + critic_grads + [dlogstd]

    kl = gaussian_kl(old_mean, old_std, mean, std)
    stats = {
        "policy_loss": float(policy_loss), "value_loss": float(value_loss),
        "entropy": float(entropy), "kl": kl, "loss": float(loss),
        "clip_fraction": float((np.abs(ratio - 1.0) > cfg.clip).mean()),
    }
    return loss, grads, stats


def ppo_update(policy, optimizer, batch, cfg, lr, rng, policy_scale=1.0):
    """One full PPO update (epochs x minibatches).  Returns (lr, stats)."""
    n, h = batch.rewards.shape
    adv, returns = compute_gae(batch.rewards, batch.values, batch.dones,
                               batch.bootstrap, cfg.gamma, cfg.lam)
    flat = lambda a: a.reshape(n * h, *a.shape[2:])
    obs = flat(batch.observations)
    actions = flat(batch.actions)
    old_logp = flat(batch.log_probs)
    old_mean = flat(batch.means)
    old_std = flat(batch.stds)
    adv = adv.reshape(-1)
    returns = returns.reshape(-1)

    backup = policy.copy_params()
    total = n * h
    mb_size = total // cfg.num_minibatches
    agg = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0, "kl": 0.0,
           "clip_fraction": 0.0, "grad_norm": 0.0}
    steps = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(total)
        for k in range(cfg.num_minibatches):
            idx = order[k * mb_size:(k + 1) * mb_size]
            loss, grads, stats = _loss_and_grads(
                policy, obs[idx], actions[idx], old_logp[idx], adv[idx],
                returns[idx], old_mean[idx], old_std[idx], cfg,
                policy_scale=policy_scale)
            if not np.isfinite(loss):
                policy.set_params(backup)
                return max(lr / 2.0, LR_BOUNDS[0]), {**agg, "reverted": True}
            grads, norm = clip_grads(grads, cfg.max_grad_norm)
            optimizer.step(policy.params(), grads, lr)
            policy.clamp_log_std()
            if policy_scale > 0.0:
                # frozen-actor warmup keeps KL at zero; adapting would peg
                # the rate at its ceiling before the first real update
                lr = adapt_lr(lr, stats["kl"], cfg.kl_target)
            for key in ("policy_loss", "value_loss", "entropy", "kl", "clip_fraction"):
                agg[key] += stats[key]
            agg["grad_norm"] += norm
            steps += 1
    for key in agg:
        agg[key] /= max(steps, 1)
    agg["reverted"] = False
    return lr, agg


class EpisodeTracker:
    """Accumulates per-episode returns and lengths across a vectorized env."""

    def __init__(self, n_envs):
        self.acc_reward = np.zeros(n_envs)
        self.acc_len = np.zeros(n_envs, dtype=int)
        self.finished_returns = []
        self.finished_lengths = []
        self.fall_count = 0
        self.episode_count = 0

    def record(self, reward, done, info):
        self.acc_reward += reward
        self.acc_len += 1
        for i in np.flatnonzero(done):
            self.finished_returns.append(self.acc_reward[i])
            self.finished_lengths.append(self.acc_len[i])
            self.acc_reward[i] = 0.0
            self.acc_len[i] = 0
            self.episode_count += 1
            if info["fallen"][i]:
                self.fall_count += 1

    def summary(self, window=100):
        if not self.finished_returns:
            return {"return_mean": 0.0, "return_std": 0.0, "ep_len": 0.0}
        r = np.array(self.finished_returns[-window:])
        l = np.array(self.finished_lengths[-window:])
        return {"return_mean": float(r.mean()), "return_std": float(r.std()),
                "ep_len": float(l.mean())}


@dataclass
class TrainResult:
    policy: ActorCritic
    normalizer: RunningNormalizer
    log_rows: list
    updates_done: int
    wall_seconds: float


def train(env, cfg, updates, log_every=1, callback=None, policy=None,
          normalizer=None, log_path=None):
    """Run PPO for `updates` iterations on a vectorized environment.

    `callback(update_idx, policy, normalizer, row)` may return True to stop
    early.  Returns a TrainResult with the trained policy and the CSV rows
    (one per logged update).
    """
    rng = np.random.default_rng(cfg.seed + 77)
    act_dim = getattr(env, "act_dim", 12)
    if policy is None:
        policy = ActorCritic(env.obs_dim, act_dim, hidden=cfg.hidden,
                             seed=cfg.seed, log_std_init=cfg.log_std_init)
    if normalizer is None:
        normalizer = RunningNormalizer(env.obs_dim)
    optimizer = Adam(policy.params())
    tracker = EpisodeTracker(env.n_envs)
    lr = cfg.lr_init
    rows = []
    t_start = time.time()
    log_file = open(log_path, "w") if log_path else None
    header = ("update,steps,return_mean,return_std,ep_len,kl,lr,policy_loss,"
              "value_loss,entropy,falls,episodes")
    if log_file:
        log_file.write(header + "\n")
    done_updates = 0
    try:
        for u in range(1, updates + 1):
            if cfg.curriculum_updates > 0 and hasattr(env, "forward_range"):
                frac = min(u / cfg.curriculum_updates, 1.0)
                env.forward_range = (0.5 - 0.3 * frac, 0.5 + 0.5 * frac)
            batch = collect_rollout(env, policy, normalizer, cfg, rng, tracker)
            warmup = u <= cfg.value_warmup_updates
            lr, stats = ppo_update(policy, optimizer, batch, cfg, lr, rng,
                                   policy_scale=0.0 if warmup else 1.0)
            done_updates = u
            if u % log_every == 0 or u == updates:
                summary = tracker.summary()
                row = {
                    "update": u, "steps": u * cfg.batch_size,
                    **summary, "kl": stats["kl"], "lr": lr,
                    "policy_loss": stats["policy_loss"],
                    "value_loss": stats["value_loss"],
                    "entropy": stats["entropy"],
                    "falls": tracker.fall_count,
                    "episodes": tracker.episode_count,
                }
                rows.append(row)
                if log_file:
                    log_file.write(",".join(repr(row[k]) for k in header.split(",")) + "\n")
                    log_file.flush()
                if callback is not None and callback(u, policy, normalizer, row):
                    break
    finally:
        if log_file:
            log_file.close()
    return TrainResult(policy, normalizer, rows, done_updates, time.time() - t_start)
