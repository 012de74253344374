import numpy as np
import pytest

from cpgloco.networks import ActorCritic, Adam
from cpgloco.ppo import (EpisodeTracker, PpoConfig, RolloutBatch,
                         RunningNormalizer, adapt_lr, collect_rollout,
                         compute_gae, gaussian_kl, ppo_update, _loss_and_grads,
                         LR_BOUNDS)

from oracles import gae_brute_force
from toy_mdp import ToyVelocityEnv


def small_cfg(**kw):
    kw.setdefault("n_envs", 2)
    kw.setdefault("horizon", 4)
    kw.setdefault("num_minibatches", 1)
    kw.setdefault("hidden", (8,))
    return PpoConfig(**kw)


# ---- GAE ----

def test_gae_single_terminal_step():
    adv, ret = compute_gae(np.array([[1.0]]), np.array([[0.5]]),
                           np.array([[True]]), np.array([9.0]),
                           0.99, 0.95, normalize=False)
    assert adv[0, 0] == pytest.approx(0.5)
    assert ret[0, 0] == pytest.approx(1.0)


def test_gae_telescopes_at_unit_discounts():
    rng = np.random.default_rng(0)
    r = rng.normal(0, 1, (3, 6))
    v = rng.normal(0, 1, (3, 6))
    boot = rng.normal(0, 1, 3)
    adv, _ = compute_gae(r, v, np.zeros((3, 6), bool), boot, 1.0, 1.0,
                         normalize=False)
    expected = r[:, ::-1].cumsum(axis=1)[:, ::-1] + boot[:, None] - v
    assert np.allclose(adv, expected, atol=1e-12)


def test_gae_matches_brute_force_1000_sequences():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        n = int(rng.integers(1, 4))
        h = int(rng.integers(1, 11))
        r = rng.normal(0, 2, (n, h))
        v = rng.normal(0, 2, (n, h))
        d = rng.random((n, h)) < 0.25
        boot = rng.normal(0, 2, n)
        gamma = rng.uniform(0.8, 1.0)
        lam = rng.uniform(0.8, 1.0)
        adv, ret = compute_gae(r, v, d, boot, gamma, lam, normalize=False)
        oracle = gae_brute_force(r, v, d, boot, gamma, lam)
        assert np.abs(adv - oracle).max() < 1e-12
        assert np.allclose(ret, adv + v, atol=1e-12)


def test_advantage_normalization_stats():
    rng = np.random.default_rng(1)
    r = rng.normal(0, 1, (8, 32))
    v = rng.normal(0, 1, (8, 32))
    adv, _ = compute_gae(r, v, np.zeros((8, 32), bool), rng.normal(0, 1, 8),
                         0.99, 0.95, normalize=True)
    assert abs(adv.mean()) < 1e-10
    assert 1 - 1e-6 < adv.var() <= 1.0 + 1e-6


# ---- learning-rate adaptation ----

def test_adapt_lr_rule():
    kl_star = 0.01
    assert adapt_lr(1e-3, 0.03, kl_star) == pytest.approx(1e-3 / 1.5)
    assert adapt_lr(1e-3, 0.004, kl_star) == pytest.approx(1.5e-3)
    assert adapt_lr(1e-3, 0.01, kl_star) == pytest.approx(1e-3)


def test_adapt_lr_monotone_and_clamped():
    kls = np.linspace(0.0, 0.05, 30)
    lrs = [adapt_lr(1e-3, kl, 0.01) for kl in kls]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    lr = 1e-6
    for _ in range(10):
        lr = adapt_lr(lr, 0.5, 0.01)
    assert lr == LR_BOUNDS[0]
    lr = 1e-2
    for _ in range(10):
        lr = adapt_lr(lr, 0.0, 0.01)
    assert lr == LR_BOUNDS[1]


def test_gaussian_kl_zero_for_identical():
    m = np.random.default_rng(0).normal(0, 1, (5, 3))
    s = np.full((5, 3), 0.7)
    assert gaussian_kl(m, s, m, s) == pytest.approx(0.0, abs=1e-15)
    assert gaussian_kl(m, s, m + 0.1, s) > 0.0


# ---- normalizer ----

def test_running_normalizer_matches_batch_stats():
    rng = np.random.default_rng(2)
    data = rng.normal(3.0, 2.5, (1000, 4))
    norm = RunningNormalizer(4)
    for chunk in np.split(data, 10):
        norm.update(chunk)
    assert np.allclose(norm.mean, data.mean(axis=0), atol=1e-6)
    assert np.allclose(norm.var, data.var(axis=0), rtol=1e-3)
    z = norm.normalize(data)
    assert abs(z.mean()) < 1e-2
    norm.frozen = True
    before = norm.mean.copy()
    norm.update(rng.normal(50, 1, (100, 4)))
    assert np.array_equal(norm.mean, before)


# ---- update invariants ----

def _fake_batch(policy, cfg, rng, adv_value=None):
    n, h = cfg.n_envs, cfg.horizon
    obs = rng.normal(0, 1, (n, h, policy.obs_dim))
    mean, std, value = policy.forward(obs.reshape(n * h, -1))
    actions = mean + std * rng.standard_normal(mean.shape)
    logp = policy.log_prob(mean, std, actions)
    rewards = rng.normal(0, 1, (n, h)) if adv_value is None \
        else value.reshape(n, h) * 0.99 ** -1  # engineered below
    batch = RolloutBatch(
        observations=obs,
        actions=actions.reshape(n, h, -1),
        log_probs=logp.reshape(n, h),
        rewards=rewards,
        values=value.reshape(n, h),
        dones=np.zeros((n, h), bool),
        bootstrap=np.zeros(n),
        means=mean.reshape(n, h, -1),
        stds=np.broadcast_to(std, (n, h, std.size)).copy(),
    )
    return batch


def test_ratio_one_surrogate_unclipped():
    # with old == new the surrogate equals -E[A] exactly
    rng = np.random.default_rng(3)
    policy = ActorCritic(4, 2, hidden=(8,), seed=0)
    cfg = small_cfg()
    obs = rng.normal(0, 1, (8, 4))
    mean, std, value = policy.forward(obs)
    actions = mean + std * rng.standard_normal(mean.shape)
    logp = policy.log_prob(mean, std, actions)
    adv = rng.normal(0, 1, 8)
    ret = rng.normal(0, 1, 8)
    loss, grads, stats = _loss_and_grads(policy, obs, actions, logp, adv, ret,
                                         mean, np.broadcast_to(std, mean.shape),
                                         cfg)
    assert stats["policy_loss"] == pytest.approx(-adv.mean(), abs=1e-12)
    assert stats["clip_fraction"] == 0.0
    assert stats["kl"] == pytest.approx(0.0, abs=1e-12)


def test_zero_advantage_leaves_actor_unchanged():
    # actor and critic are disjoint: zero advantages with zero entropy coef
    # move only the critic
    rng = np.random.default_rng(4)
    policy = ActorCritic(4, 2, hidden=(8,), seed=1)
    cfg = small_cfg(entropy_coef=0.0)
    batch = _fake_batch(policy, cfg, rng)
    batch.rewards[:] = batch.values  # engineered so advantages ~ small
    actor_before = [p.copy() for p in policy.actor.params()]
    log_std_before = policy.log_std.copy()
    critic_before = [p.copy() for p in policy.critic.params()]

    # zero out advantages explicitly by monkey-running the update with
    # rewards that reproduce values; instead call the loss directly
    obs = batch.observations.reshape(-1, 4)
    actions = batch.actions.reshape(-1, 2)
    logp = batch.log_probs.reshape(-1)
    adv = np.zeros_like(logp)
    ret = rng.normal(0, 1, logp.shape)
    _, grads, _ = _loss_and_grads(policy, obs, actions, logp, adv, ret,
                                  batch.means.reshape(-1, 2),
                                  batch.stds.reshape(-1, 2), cfg)
    n_actor = len(policy.actor.params())
    opt = Adam(policy.params())
    opt.step(policy.params(), grads, lr=1e-3)
    for before, after in zip(actor_before, policy.actor.params()):
        assert np.array_equal(before, after)
    assert np.array_equal(log_std_before, policy.log_std)
    changed = any(not np.array_equal(b, a)
                  for b, a in zip(critic_before, policy.critic.params()))
    assert changed


def test_update_reverts_on_nonfinite():
    rng = np.random.default_rng(5)
    policy = ActorCritic(4, 2, hidden=(8,), seed=2)
    cfg = small_cfg()
    batch = _fake_batch(policy, cfg, rng)
    batch.rewards[0, 0] = np.nan
    before = policy.copy_params()
    opt = Adam(policy.params())
    lr, stats = ppo_update(policy, opt, batch, cfg, 1e-3, rng)
    assert stats["reverted"]
    assert lr == pytest.approx(5e-4)
    for b, a in zip(before, policy.params()):
        assert np.array_equal(b, a)


def test_ppo_update_runs_and_reports():
    rng = np.random.default_rng(6)
    policy = ActorCritic(4, 2, hidden=(8,), seed=3)
    cfg = small_cfg(n_envs=4, horizon=8, num_minibatches=2)
    batch = _fake_batch(policy, cfg, rng)
    lr, stats = ppo_update(policy, Adam(policy.params()), batch, cfg, 1e-3, rng)
    for key in ("policy_loss", "value_loss", "entropy", "kl", "clip_fraction"):
        assert np.isfinite(stats[key])
    assert LR_BOUNDS[0] <= lr <= LR_BOUNDS[1]
    assert policy.is_finite()


def test_rollout_shapes_and_bootstrap():
    env = ToyVelocityEnv(4, seed=0, horizon=10)
    policy = ActorCritic(env.obs_dim, env.act_dim, hidden=(8,), seed=0)
    norm = RunningNormalizer(env.obs_dim)
    cfg = small_cfg(n_envs=4, horizon=25)
    batch = collect_rollout(env, policy, norm, cfg, np.random.default_rng(0))
    assert batch.observations.shape == (4, 25, env.obs_dim)
    assert batch.dones.shape == (4, 25)
    # 10-step toy episodes inside a 25-step horizon: dones at steps 10 and 20
    assert batch.dones[:, 9].all() and batch.dones[:, 19].all()
    assert batch.bootstrap.shape == (4,)


def test_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(clip=0.0)
    with pytest.raises(ValueError):
        PpoConfig(gamma=0.0)
    with pytest.raises(ValueError):
        PpoConfig(n_envs=3, horizon=5, num_minibatches=4)
    assert PpoConfig().batch_size == 64 * 24


def test_episode_tracker():
    tracker = EpisodeTracker(2)
    r = np.array([1.0, 2.0])
    done = np.array([False, True])
    info = {"fallen": np.array([False, True])}
    tracker.record(r, done, info)
    assert tracker.episode_count == 1
    assert tracker.fall_count == 1
    assert tracker.finished_returns == [2.0]
    summary = tracker.summary()
    assert summary["return_mean"] == 2.0
