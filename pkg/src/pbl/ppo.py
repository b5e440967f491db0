"""Clipped-surrogate policy optimisation on batches of recorded decisions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .neural import MLP, Adam, NumericError, backward, forward


@dataclass
class DecisionBatch:
    """Flattened decisions of one rollout pool.

    ``episode`` groups decisions so minibatches sample whole episodes.
    """

    obs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    returns: np.ndarray
    episode: np.ndarray
    mask: Optional[np.ndarray] = None
    value_obs: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.actions)

    def take(self, idx: np.ndarray) -> "DecisionBatch":
        pick = lambda a: None if a is None else a[idx]
        return DecisionBatch(self.obs[idx], self.actions[idx], self.logp[idx], self.returns[idx],
                             self.episode[idx], pick(self.mask), pick(self.value_obs))

    @property
    def critic_input(self) -> np.ndarray:
        return self.obs if self.value_obs is None else self.value_obs


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """``G[e, t] = sum_{u >= t} gamma^(u - t) rewards[e, u]`` (padding must be zero)."""
    out = np.zeros_like(rewards, dtype=np.float64)
    acc = np.zeros(rewards.shape[0])
    for t in range(rewards.shape[1] - 1, -1, -1):
        acc = rewards[:, t] + gamma * acc
        out[:, t] = acc
    return out


def log_probs(probs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.log(np.clip(probs[np.arange(len(actions)), actions], 1e-300, None))


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(len(probs))
    cdf = np.cumsum(probs, axis=1)
    a = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    # never pick a zero-probability (masked) action because of round-off
    a = np.minimum(a, probs.shape[1] - 1)
    bad = probs[np.arange(len(a)), a] <= 0
    if bad.any():
        a[bad] = probs[bad].argmax(axis=1)
    return a


@dataclass(frozen=True)
class PPOConfig:
    clip: float = 0.2
    epochs: int = 1
    minibatch_episodes: int = 2048
    ent_coef: float = 0.0
    normalize_advantages: bool = True


@dataclass
class PPOStats:
    mean_ratio: float
    clip_frac: float
    entropy: float
    policy_loss: float
    value_loss: float
    steps: int


def _entropy_terms(p: np.ndarray):
    logp = np.where(p > 0, np.log(np.clip(p, 1e-300, None)), 0.0)
    H = -(p * logp).sum(axis=1)
    dH = -p * (logp + H[:, None])
    return H, dH


def ppo_update(batch: DecisionBatch, policy: MLP, value: Optional[MLP], opt_p: Adam,
               opt_v: Optional[Adam], cfg: PPOConfig, rng: np.random.Generator) -> PPOStats:
    """One pass (``cfg.epochs`` of them) over episode minibatches of ``batch``.

    Advantages are returns minus the critic's prediction, computed once
    before any parameter changes.
    """
    if len(batch) == 0:
        return PPOStats(1.0, 0.0, 0.0, 0.0, 0.0, 0)
    if value is not None:
        baseline = value(batch.critic_input).reshape(-1)
    else:
        baseline = np.zeros(len(batch))
    adv = batch.returns - baseline
    if cfg.normalize_advantages and len(adv) > 1:
        sd = adv.std()
        adv = (adv - adv.mean()) / sd if sd > 1e-8 else np.zeros_like(adv)
    if not np.all(np.isfinite(adv)):
        raise NumericError("non-finite advantages")
    episodes = np.unique(batch.episode)
    per_mb = min(cfg.minibatch_episodes, len(episodes))
    n_mb = max(1, len(episodes) // per_mb)
    ratios, clipped, ents, plosses, vlosses, steps = [], [], [], [], [], 0
    for _ in range(cfg.epochs):
        order = rng.permutation(episodes)
        for m in range(n_mb):
            chosen = order[m * per_mb:(m + 1) * per_mb]
            idx = np.flatnonzero(np.isin(batch.episode, chosen))
            mb = batch.take(idx)
            a = adv[idx]
            n = len(idx)
            probs, cache = forward(policy, mb.obs, mb.mask)
            logp = log_probs(probs, mb.actions)
            ratio = np.exp(logp - mb.logp)
            lo, hi = 1 - cfg.clip, 1 + cfg.clip
            surr = np.minimum(ratio * a, np.clip(ratio, lo, hi) * a)
            active = ratio * a <= np.clip(ratio, lo, hi) * a
            H, dH = _entropy_terms(probs)
            loss = -surr.mean() - cfg.ent_coef * H.mean()
            if not np.isfinite(loss):
                raise NumericError(f"non-finite PPO loss (mean ratio {ratio.mean():.3g})")
            coef = np.where(active, ratio * a, 0.0)
            onehot = np.zeros_like(probs)
            onehot[np.arange(n), mb.actions] = 1.0
            g = -(coef[:, None] * (onehot - probs)) / n - cfg.ent_coef * dH / n
            opt_p.step(backward(policy, cache, g, wrt_logits=True))
            if value is not None:
                v, vcache = forward(value, mb.critic_input)
                err = v.reshape(-1) - mb.returns
                vlosses.append(float(0.5 * np.mean(err ** 2)))
                opt_v.step(backward(value, vcache, (err / n).reshape(v.shape)))
            ratios.append(float(ratio.mean()))
            clipped.append(float(np.mean((ratio < lo) | (ratio > hi))))
            ents.append(float(H.mean()))
            plosses.append(float(loss))
            steps += 1
    return PPOStats(float(np.mean(ratios)), float(np.mean(clipped)), float(np.mean(ents)),
                    float(np.mean(plosses)), float(np.mean(vlosses)) if vlosses else 0.0, steps)
