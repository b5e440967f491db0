"""Silent Guide: a two-agent particle world with three landmarks.

The Guide sees which landmark is the Listener's goal; the Listener does not.
Both receive the negative Listener-goal distance each step. States are
batched: every array has a leading episode axis.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

N_LANDMARKS = 3
N_ACTIONS = 5
# noop, +x, -x, +y, -y
ACTION_DIRS = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


@dataclass(frozen=True)
class GuideConfig:
    horizon: int = 50
    dt: float = 0.1
    damping: float = 0.75
    accel: float = 3.0
    landmark_range: float = 1.0
    start_range: float = 0.1


@dataclass(frozen=True)
class GuideState:
    guide_pos: np.ndarray
    guide_vel: np.ndarray
    listener_pos: np.ndarray
    listener_vel: np.ndarray
    landmarks: np.ndarray  # (B, 3, 2)
    goal: np.ndarray       # (B,)
    step: int = 0
    config: GuideConfig = GuideConfig()

    @property
    def batch(self) -> int:
        return self.goal.shape[0]

    @property
    def terminal(self) -> bool:
        return self.step >= self.config.horizon

    @property
    def goal_pos(self) -> np.ndarray:
        return self.landmarks[np.arange(self.batch), self.goal]


def guide_reset(n: int, rng: np.random.Generator, config: GuideConfig = GuideConfig()) -> GuideState:
    lr, sr = config.landmark_range, config.start_range
    return GuideState(
        guide_pos=rng.uniform(-sr, sr, size=(n, 2)),
        guide_vel=np.zeros((n, 2)),
        listener_pos=rng.uniform(-sr, sr, size=(n, 2)),
        listener_vel=np.zeros((n, 2)),
        landmarks=rng.uniform(-lr, lr, size=(n, N_LANDMARKS, 2)),
        goal=rng.integers(0, N_LANDMARKS, size=n),
        step=0,
        config=config,
    )


def listener_distance(state: GuideState) -> np.ndarray:
    return np.linalg.norm(state.listener_pos - state.goal_pos, axis=1)


def guide_step(state: GuideState, a_guide: np.ndarray, a_listener: np.ndarray):
    """Advance one step; returns ``(next_state, reward)`` with one reward per episode."""
    if state.terminal:
        raise RuntimeError("episode already finished")
    cfg = state.config
    a_guide = np.asarray(a_guide, dtype=np.int64).reshape(-1)
    a_listener = np.asarray(a_listener, dtype=np.int64).reshape(-1)
    gv = state.guide_vel * cfg.damping + ACTION_DIRS[a_guide] * cfg.accel * cfg.dt
    lv = state.listener_vel * cfg.damping + ACTION_DIRS[a_listener] * cfg.accel * cfg.dt
    nxt = replace(state, guide_pos=state.guide_pos + gv * cfg.dt, guide_vel=gv,
                  listener_pos=state.listener_pos + lv * cfg.dt, listener_vel=lv,
                  step=state.step + 1)
    return nxt, -listener_distance(nxt)


def _displacements(state: GuideState, pos: np.ndarray) -> np.ndarray:
    return (state.landmarks - pos[:, None, :]).reshape(state.batch, -1)


def guide_observations(state: GuideState) -> tuple[np.ndarray, np.ndarray]:
    """Guide: velocity, landmark displacements, goal one-hot. Listener: no goal."""
    goal = np.eye(N_LANDMARKS)[state.goal]
    obs_guide = np.concatenate([state.guide_vel, _displacements(state, state.guide_pos), goal], axis=1)
    obs_listener = np.concatenate([state.listener_vel, _displacements(state, state.listener_pos)],
                                  axis=1)
    return obs_guide, obs_listener


def guide_public(state: GuideState) -> np.ndarray:
    """What an onlooker sees of the Guide: its velocity and landmark displacements."""
    return np.concatenate([state.guide_vel, _displacements(state, state.guide_pos)], axis=1)


PUBLIC_DIM = 2 + 2 * N_LANDMARKS
GUIDE_OBS_DIM = 2 + 2 * N_LANDMARKS + N_LANDMARKS
LISTENER_BASE_DIM = 2 + 2 * N_LANDMARKS


def scripted_guide(state: GuideState, rng: np.random.Generator, noise: float = 0.3) -> np.ndarray:
    """Naive Guide that heads for the goal along its larger axis, with random slips."""
    d = state.goal_pos - state.guide_pos
    along_x = np.abs(d[:, 0]) >= np.abs(d[:, 1])
    act = np.where(along_x, np.where(d[:, 0] > 0, 1, 2), np.where(d[:, 1] > 0, 3, 4))
    slip = rng.random(state.batch) < noise
    return np.where(slip, rng.integers(0, N_ACTIONS, size=state.batch), act)


def write_trajectories(path: str | Path, frames: list[GuideState], rewards: Optional[list[np.ndarray]] = None,
                       limit: Optional[int] = None) -> None:
    """Line-delimited JSON, one episode per line, positions at every step."""
    first = frames[0]
    n = first.batch if limit is None else min(limit, first.batch)
    with open(path, "w") as f:
        for i in range(n):
            rec = {
                "episode": i,
                "landmarks": first.landmarks[i].tolist(),
                "goal": int(first.goal[i]),
                "guide": [s.guide_pos[i].tolist() for s in frames],
                "listener": [s.listener_pos[i].tolist() for s in frames],
            }
            if rewards is not None:
                rec["rewards"] = [float(r[i]) for r in rewards]
            f.write(json.dumps(rec) + "\n")
