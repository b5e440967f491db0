import numpy as np
import pytest

from pbl.comm import (BestBeliefTracker, PretrainDomainError, alpha_schedule, bernoulli_distance,
                      comm_reward, pretrain_loss, pretrain_target, shaped_reward)
from pbl.neural import MLP, Adam, ShapeError, softmax
from pbl.ppo import DecisionBatch, PPOConfig, discounted_returns, ppo_update, sample_actions


def test_comm_reward_examples():
    x = np.array([[1.0]])
    tr = BestBeliefTracker.start(x, np.array([[0.5]]))
    r = comm_reward(x, tr, np.array([[0.8]]))
    assert r[0] == pytest.approx(np.log(2) - np.log(1 / 0.8))
    assert r[0] == pytest.approx(0.470, abs=1e-3)
    tr = BestBeliefTracker.start(x, np.array([[0.5]]))
    r = comm_reward(x, tr, np.array([[0.3]]))
    assert r[0] == pytest.approx(np.log(2) - np.log(1 / 0.3)) and r[0] < 0


def test_no_change_no_reward_and_tracker_monotone():
    rng = np.random.default_rng(0)
    x = (rng.random((6, 8)) < 0.3).astype(float)
    b0 = rng.uniform(0.1, 0.9, (6, 8))
    tr = BestBeliefTracker.start(x, b0)
    assert np.allclose(comm_reward(x, tr, b0), 0.0)
    prev = tr.best.copy()
    for _ in range(10):
        comm_reward(x, tr, rng.uniform(0.05, 0.95, (6, 8)))
        assert np.all(tr.best <= prev)
        assert np.allclose(bernoulli_distance(x, tr.belief), tr.best)
        prev = tr.best.copy()


def test_comm_reward_rows_and_shapes():
    x = np.eye(3)
    tr = BestBeliefTracker.start(x, np.full((3, 3), 1 / 3), "categorical")
    r = comm_reward(x[[2]], tr, np.array([[0.1, 0.1, 0.8]]), "categorical", rows=np.array([2]))
    assert r[0] == pytest.approx(np.log(0.8) - np.log(1 / 3))
    assert tr.best[0] == pytest.approx(np.log(3))
    with pytest.raises(ShapeError):
        comm_reward(np.ones((1, 2)), BestBeliefTracker.start(np.ones((1, 3)), np.full((1, 3), .5)),
                    np.full((1, 3), .5))


def test_shaping_and_alpha():
    assert shaped_reward(0.3, 0.9, 0.0) == 0.3
    assert shaped_reward(0.0, 0.1, 5.0) == pytest.approx(0.5)
    assert alpha_schedule(5.0, 0.7, 0) == 5.0
    assert alpha_schedule(5.0, 0.7, 2) == pytest.approx(5 * 0.49)


def test_pretrain_loss():
    r = np.array([[0.2, -0.1, 0.5, 0.0]])
    tau = 0.3
    logits = np.log(pretrain_target(r, tau))
    loss, g = pretrain_loss(logits, r, tau)
    assert loss == pytest.approx(0.0, abs=1e-12) and np.allclose(g, 0)
    z = np.array([[0.3, 0.1, -0.2, 0.4]])
    loss, _ = pretrain_loss(z, np.zeros((1, 4)), 1.0)
    p = softmax(z)
    assert loss == pytest.approx(float((p * np.log(p * 4)).sum()))
    with pytest.raises(PretrainDomainError):
        pretrain_target(r, 0.0)


def test_pretrain_gradient_matches_finite_difference():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(3, 5))
    r = rng.normal(size=(3, 5))
    _, g = pretrain_loss(z, r, 0.5)
    h = 1e-6
    for i, j in [(0, 0), (1, 3), (2, 4)]:
        zp, zm = z.copy(), z.copy()
        zp[i, j] += h
        zm[i, j] -= h
        num = (pretrain_loss(zp, r, 0.5)[0] - pretrain_loss(zm, r, 0.5)[0]) / (2 * h)
        assert g[i, j] == pytest.approx(num, rel=1e-5, abs=1e-9)


def test_discounted_returns():
    r = np.array([[1.0, 0.0, 2.0]])
    assert np.allclose(discounted_returns(r, 1.0), [[3, 2, 2]])
    assert np.allclose(discounted_returns(r, 0.5), [[1.5, 1.0, 2.0]])


def test_sample_actions_respects_zero_probability():
    rng = np.random.default_rng(0)
    p = np.tile([0.0, 0.5, 0.0, 0.5], (1000, 1))
    a = sample_actions(p, rng)
    assert set(np.unique(a)) == {1, 3}


def _batch(rng, adv_zero=False):
    policy = MLP([3, 8, 4], "softmax", rng=rng)
    obs = rng.normal(size=(40, 3))
    probs = policy(obs)
    acts = sample_actions(probs, rng)
    logp = np.log(probs[np.arange(40), acts])
    returns = np.zeros(40) if adv_zero else rng.normal(size=40)
    return policy, DecisionBatch(obs, acts, logp, returns, np.arange(40))


def test_zero_advantage_leaves_policy_unchanged():
    rng = np.random.default_rng(0)
    policy, batch = _batch(rng, adv_zero=True)
    before = [p.copy() for p in policy.params]
    stats = ppo_update(batch, policy, None, Adam(policy), None, PPOConfig(minibatch_episodes=40), rng)
    assert all(np.array_equal(a, b) for a, b in zip(before, policy.params))
    assert stats.mean_ratio == pytest.approx(1.0)
    assert {"mean_ratio", "clip_frac", "entropy"} <= set(vars(stats))


def test_ppo_raises_probability_of_good_action():
    rng = np.random.default_rng(1)
    policy = MLP([2, 8, 3], "softmax", rng=rng)
    value = MLP([2, 8, 1], rng=rng)
    opt, vopt = Adam(policy, lr=1e-2), Adam(value, lr=1e-2)
    obs = np.tile([1.0, 0.0], (256, 1))
    start = policy(obs[:1])[0, 2]
    for _ in range(30):
        probs = policy(obs)
        a = sample_actions(probs, rng)
        ret = (a == 2).astype(float)
        batch = DecisionBatch(obs, a, np.log(probs[np.arange(256), a]), ret, np.arange(256))
        ppo_update(batch, policy, value, opt, vopt, PPOConfig(minibatch_episodes=128, epochs=2), rng)
    assert policy(obs[:1])[0, 2] > max(start, 0.9)
