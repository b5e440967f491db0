"""Communication reward, reward shaping and the pre-training objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neural import ShapeError, softmax

_EPS = 1e-12


def bernoulli_distance(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """KL(x || b) for a 0/1 vector ``x``: the summed binary cross-entropy.

    Works row-wise on batches; returns one value per row.
    """
    x = np.asarray(x, dtype=np.float64)
    b = np.clip(np.asarray(b, dtype=np.float64), _EPS, 1 - _EPS)
    if x.shape != b.shape:
        raise ShapeError(f"target {x.shape} and belief {b.shape} differ")
    return -(x * np.log(b) + (1 - x) * np.log(1 - b)).sum(axis=-1)


def categorical_distance(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """KL(onehot || b) = -log b[true index]."""
    x = np.asarray(x, dtype=np.float64)
    b = np.clip(np.asarray(b, dtype=np.float64), _EPS, 1.0)
    if x.shape != b.shape:
        raise ShapeError(f"target {x.shape} and belief {b.shape} differ")
    return -(x * np.log(b)).sum(axis=-1)


DISTANCES = {"bernoulli": bernoulli_distance, "categorical": categorical_distance}


@dataclass
class BestBeliefTracker:
    """Lowest belief distance reached so far in each episode, and the belief achieving it."""

    best: np.ndarray    # (episodes,)
    belief: np.ndarray  # (episodes, dim)

    @classmethod
    def start(cls, x: np.ndarray, b0: np.ndarray, kind: str = "bernoulli") -> "BestBeliefTracker":
        b0 = np.asarray(b0, dtype=np.float64)
        return cls(DISTANCES[kind](x, b0), b0.copy())

    def rows(self, rows: np.ndarray) -> "BestBeliefTracker":
        return BestBeliefTracker(self.best[rows], self.belief[rows])


def comm_reward(x: np.ndarray, tracker: BestBeliefTracker, b_next: np.ndarray,
                kind: str = "bernoulli", rows: np.ndarray | None = None) -> np.ndarray:
    """r_c = KL(x || b*) - KL(x || b_next); the tracker is updated in place.

    ``rows`` selects which tracked episodes ``x`` and ``b_next`` belong to.
    """
    rows = np.arange(len(tracker.best)) if rows is None else rows
    d_next = DISTANCES[kind](x, b_next)
    if d_next.shape != tracker.best[rows].shape:
        raise ShapeError("tracker and batch sizes differ")
    r = tracker.best[rows] - d_next
    better = d_next < tracker.best[rows]
    upd = rows[better]
    tracker.best[upd] = d_next[better]
    tracker.belief[upd] = np.asarray(b_next, dtype=np.float64)[better]
    return r


def shaped_reward(r_e, r_c, alpha: float):
    return r_e + alpha * r_c


def alpha_schedule(alpha0: float, decay: float, k: int) -> float:
    return alpha0 * decay ** k


class PretrainDomainError(ValueError):
    pass


def pretrain_target(r_e: np.ndarray, tau: float) -> np.ndarray:
    if tau <= 0:
        raise PretrainDomainError("temperature must be positive")
    return softmax(np.asarray(r_e, dtype=np.float64) / tau)


def pretrain_loss(logits: np.ndarray, r_e: np.ndarray, tau: float,
                  mask: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """KL(pi || softmax(r_e / tau)) averaged over rows, and its gradient w.r.t. logits.

    Masked actions carry zero policy probability and contribute nothing.
    """
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    q = np.atleast_2d(pretrain_target(r_e, tau))
    if z.shape != q.shape:
        raise ShapeError(f"logits {z.shape} and scores {q.shape} differ")
    if mask is not None:
        z = np.where(np.atleast_2d(mask), z, -1e30)
    p = softmax(z)
    logp = np.log(np.clip(p, 1e-300, None))
    logq = np.log(np.clip(q, 1e-300, None))
    diff = np.where(p > 0, logp - logq, 0.0)
    per = (p * diff).sum(axis=1)
    grad = p * (diff - per[:, None]) / len(z)
    return float(per.mean()), grad
