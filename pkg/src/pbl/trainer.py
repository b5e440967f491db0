"""The outer loop: alternate belief fitting and shaped-reward policy optimisation."""
from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .belief import BeliefConfig, train_belief
from .comm import alpha_schedule
from .neural import Adam, save_params
from .ppo import PPOConfig, ppo_update
from .tasks import CENTRALIZED, DISTRIBUTED, Agents

BASELINES = ("PBL", "IP", "NCR", "NPBI")
LOG_COLUMNS = ("pbl_iter", "pg_update", "mean_env_score", "mean_comm_reward", "belief_val_loss",
               "wallclock")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainerConfig:
    alpha0: float = 5.0
    alpha_decay: float = 0.7
    gamma: float = 1.0
    clip: float = 0.2
    pg_updates: int = 200
    episodes_per_update: int = 5000
    minibatch_episodes: int = 2048
    ppo_epochs: int = 1
    pbl_iters: int = 8
    mode: str = CENTRALIZED
    baseline: str = "PBL"
    tau: float = 0.1
    policy_lr: float = 1e-4
    value_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay: float = 0.95
    lr_decay_steps: int = 50
    ent_coef: float = 0.0
    pretrain_steps: int = 0
    pretrain_lr: float = 1e-3
    pretrain_batch: int = 1024
    eval_every: int = 10
    zero_belief: bool = False
    deterministic: bool = True
    belief: BeliefConfig = field(default_factory=BeliefConfig)

    def validate(self) -> "TrainerConfig":
        if self.alpha0 < 0:
            raise ConfigError("alpha0 must be non-negative")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.pbl_iters < 1:
            raise ConfigError("need at least one PBL iteration")
        if self.mode not in (CENTRALIZED, DISTRIBUTED):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.baseline not in BASELINES:
            raise ConfigError(f"unknown baseline {self.baseline!r}")
        if self.mode == DISTRIBUTED and self.baseline == "IP":
            raise ConfigError("the IP baseline has no belief input to distribute")
        if self.tau <= 0:
            raise ConfigError("pre-training temperature must be positive")
        if self.episodes_per_update < 1 or self.minibatch_episodes < 1:
            raise ConfigError("episode counts must be positive")
        if self.pg_updates < 0 or self.eval_every < 1:
            raise ConfigError("invalid update/evaluation counts")
        return self

    @property
    def uses_comm_reward(self) -> bool:
        return self.baseline in ("PBL", "NPBI")

    @property
    def belief_input_zeroed(self) -> bool:
        return self.zero_belief or self.baseline == "IP"

    def alpha(self, k: int) -> float:
        return alpha_schedule(self.alpha0, self.alpha_decay, k) if self.uses_comm_reward else 0.0


def desk_profile(**changes) -> TrainerConfig:
    """Reduced constants that fit a single workstation."""
    base = TrainerConfig(episodes_per_update=512, minibatch_episodes=256, pbl_iters=4,
                         belief=BeliefConfig(episodes=20_000))
    return replace(base, **changes)


def matrix_desk_profile(**changes) -> TrainerConfig:
    """The matrix game needs many short iterations rather than a few long ones.

    Frequent belief refits let the communication reward track Player 1's
    policy; entropy keeps the unused signals explored.
    """
    base = TrainerConfig(episodes_per_update=256, minibatch_episodes=256, pbl_iters=60,
                         pg_updates=10, eval_every=1, policy_lr=3e-4, value_lr=1e-2,
                         alpha0=20.0, alpha_decay=0.95, ent_coef=0.3,
                         belief=BeliefConfig(episodes=2000, batch_size=256, max_epochs=20,
                                             hidden=(32,)))
    return replace(base, **changes)


def bridge_desk_profile(**changes) -> TrainerConfig:
    """Mini-deck bridge: every variant starts from the pre-trained policy."""
    base = desk_profile(pretrain_steps=300, policy_lr=1e-3, alpha0=0.3, alpha_decay=0.5,
                        eval_every=20,
                        belief=BeliefConfig(episodes=5000, max_epochs=20, hidden=(128, 128)))
    return replace(base, **changes)


def guide_desk_profile(**changes) -> TrainerConfig:
    """Silent Guide: discounted, distributed beliefs fitted once on a scripted Guide."""
    base = TrainerConfig(gamma=0.95, mode=DISTRIBUTED, pbl_iters=2, pg_updates=100,
                         episodes_per_update=128, minibatch_episodes=128, eval_every=5,
                         policy_lr=1e-3, value_lr=1e-3, alpha0=1.0, alpha_decay=0.7,
                         belief=BeliefConfig(episodes=2000, max_epochs=20))
    return replace(base, **changes)


@dataclass
class RunResult:
    agents: Agents
    log: list[dict]
    belief_fits: list = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    pretrain_losses: list[float] = field(default_factory=list)


def _fit_beliefs(task, agents: Agents, cfg: TrainerConfig, rng: np.random.Generator, fits: list):
    """Fresh self-play data for every belief model (disjoint episodes per model)."""
    losses = []
    for name in list(agents.beliefs):
        ds = task.belief_data(agents, cfg.belief.episodes, rng)
        init = agents.beliefs[name] if agents.beliefs[name] is not None else task.new_belief(rng)
        fit = train_belief(ds, init, cfg.belief, rng)
        fits.append(fit)
        losses.append(fit.val_loss)
    for name, fit in zip(list(agents.beliefs), fits[-len(agents.beliefs):]):
        agents.beliefs[name] = fit.net
    return float(np.mean(losses))


def run_pbl(task, cfg: TrainerConfig, rng: np.random.Generator, out_dir: Optional[Path] = None,
            progress=None, agents: Optional[Agents] = None) -> RunResult:
    """Pre-train, then for each PBL iteration fit beliefs and run policy updates.

    IP zeroes the belief input and NCR the communication weight; NPBI fits
    beliefs only once but performs the same number of policy updates.
    Passing ``agents`` (e.g. a pre-trained policy) skips initialisation and
    pre-training.
    """
    cfg.validate()
    fresh = agents is None
    if fresh:
        agents = task.init_agents(rng, cfg.mode, cfg.belief_input_zeroed)
    result = RunResult(agents, [])
    if fresh and task.uses_pretraining and cfg.pretrain_steps > 0:
        result.pretrain_losses = task.pretrain(agents, cfg.pretrain_steps, cfg.tau, cfg.pretrain_lr,
                                               cfg.pretrain_batch, rng)
    adam = dict(beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps,
                decay_rate=cfg.lr_decay, decay_steps=cfg.lr_decay_steps)
    opt_p = {k: Adam(p, lr=cfg.policy_lr, **adam) for k, p in agents.policies.items()}
    opt_v = {k: Adam(v, lr=cfg.value_lr, **adam) for k, v in agents.values.items()}
    ppo_cfg = PPOConfig(cfg.clip, cfg.ppo_epochs, cfg.minibatch_episodes, cfg.ent_coef)
    start = time.perf_counter()
    clock = (lambda: 0.0) if cfg.deterministic else (lambda: time.perf_counter() - start)
    belief_loss = float("nan")
    update = 0
    for k in range(cfg.pbl_iters):
        refit = k == 0 or (cfg.baseline != "NPBI" and task.beliefs_every_iteration)
        if refit:
            belief_loss = _fit_beliefs(task, agents, cfg, rng, result.belief_fits)
        alpha = cfg.alpha(k)
        comm = []
        for u in range(cfg.pg_updates):
            ro = task.rollout(agents, cfg.episodes_per_update, rng, alpha, cfg.gamma)
            for name, batch in ro.batches.items():
                ppo_update(batch, agents.policies[name], agents.values[name], opt_p[name],
                           opt_v[name], ppo_cfg, rng)
            comm.append(ro.mean_comm)
            update += 1
            if update % cfg.eval_every == 0 or u == cfg.pg_updates - 1:
                ev = task.evaluate(agents, np.random.default_rng(update))
                ev.update({"train_env": ro.mean_env, **ro.extra})
                result.evals.append({k_: v for k_, v in ev.items() if np.isscalar(v)})
                result.log.append({
                    "pbl_iter": k, "pg_update": update, "mean_env_score": ev["mean_env_score"],
                    "mean_comm_reward": float(np.mean(comm)), "belief_val_loss": belief_loss,
                    "wallclock": clock(),
                })
                comm = []
                if progress:
                    progress(result.log[-1])
        if out_dir is not None:
            nets = {f"policy.{n}": p for n, p in agents.policies.items()}
            nets.update({f"value.{n}": v for n, v in agents.values.items()})
            nets.update({f"belief.{n}": b for n, b in agents.beliefs.items() if b is not None})
            save_params(Path(out_dir) / f"checkpoint_iter{k}.bin", nets,
                        meta={"pbl_iter": k, "task": task.name, "mode": cfg.mode})
    if cfg.pg_updates == 0:
        ev = task.evaluate(agents, np.random.default_rng(0))
        result.log.append({"pbl_iter": cfg.pbl_iters - 1, "pg_update": 0,
                           "mean_env_score": ev["mean_env_score"], "mean_comm_reward": 0.0,
                           "belief_val_loss": belief_loss, "wallclock": clock()})
    return result


def write_log(path: str | Path, log: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=LOG_COLUMNS)
        w.writeheader()
        for row in log:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def read_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as f:
        rows = []
        for row in csv.DictReader(f):
            rows.append({k: (int(v) if k in ("pbl_iter", "pg_update") else float(v)) for k, v in row.items()})
        return rows
