"""Two-player cooperative card signalling game and its brute-force optimum."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

ENUMERATION_LIMIT = 5_000_000


class MatrixDomainError(ValueError):
    pass


class EnumerationTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class MatrixGameSpec:
    """``payoff[c1, c2, a1, a2]``; both cards are drawn uniformly and independently."""

    payoff: np.ndarray
    actions_p1: tuple[str, ...] = ("A", "B", "C")
    actions_p2: tuple[str, ...] = ("A", "B", "C")

    def __post_init__(self):
        p = np.asarray(self.payoff, dtype=np.float64)
        object.__setattr__(self, "payoff", p)
        object.__setattr__(self, "actions_p1", tuple(self.actions_p1))
        object.__setattr__(self, "actions_p2", tuple(self.actions_p2))
        if p.ndim != 4 or p.shape[0] != p.shape[1]:
            raise MatrixDomainError("payoff must be indexed [card1][card2][a1][a2]")
        if p.shape[2:] != (len(self.actions_p1), len(self.actions_p2)):
            raise MatrixDomainError("payoff action axes do not match the action lists")
        if not np.all(np.isfinite(p)):
            raise MatrixDomainError("payoff entries must be finite")

    @property
    def n_cards(self) -> int:
        return self.payoff.shape[0]

    @property
    def n_a1(self) -> int:
        return len(self.actions_p1)

    @property
    def n_a2(self) -> int:
        return len(self.actions_p2)

    def to_json(self) -> dict:
        return {"actions_p1": list(self.actions_p1), "actions_p2": list(self.actions_p2),
                "payoff": self.payoff.tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "MatrixGameSpec":
        return cls(np.array(data["payoff"], dtype=np.float64),
                   tuple(data.get("actions_p1", ("A", "B", "C"))),
                   tuple(data.get("actions_p2", ("A", "B", "C"))))

    @classmethod
    def load(cls, path: str | Path) -> "MatrixGameSpec":
        return cls.from_json(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


def default_matrix_spec() -> MatrixGameSpec:
    """Default fixture.

    Player 2's best reply depends on both cards, so Player 1 must reveal its
    card. ``B`` is a safe, uninformative pair worth 8. Only Player 1 mapping
    card 1 -> C and card 2 -> A (with a decoding reply) attains 10 everywhere.
    """
    A, B, C = 0, 1, 2
    p = np.zeros((2, 2, 3, 3))
    p[:, :, B, :] = [4.0, 8.0, 4.0]
    # card 1 (index 0): C signals it; A pools with card 2 and aims the other way
    p[0, 0, C, A] = 10.0
    p[0, 1, C, C] = 10.0
    p[0, 0, A, A] = 10.0
    p[0, 1, A, C] = 10.0
    # card 2 (index 1): only A pays
    p[1, 0, A, C] = 10.0
    p[1, 1, A, A] = 10.0
    return MatrixGameSpec(p)


@dataclass(frozen=True)
class MatrixObservation:
    own_card: int
    a1: Optional[int] = None


def matrix_step(spec: MatrixGameSpec, stage: int, cards: tuple[int, int], a1: int,
                a2: Optional[int] = None):
    """Stage 1 returns Player 2's observation; stage 2 returns the shared payoff."""
    c1, c2 = cards
    if not (0 <= c1 < spec.n_cards and 0 <= c2 < spec.n_cards):
        raise MatrixDomainError("card index out of range")
    if not 0 <= a1 < spec.n_a1:
        raise MatrixDomainError("Player 1 action out of range")
    if stage == 1:
        return MatrixObservation(own_card=c2, a1=a1)
    if stage == 2:
        if a2 is None or not 0 <= a2 < spec.n_a2:
            raise MatrixDomainError("Player 2 action out of range")
        return float(spec.payoff[c1, c2, a1, a2])
    raise MatrixDomainError("stage must be 1 or 2")


@dataclass(frozen=True)
class MatrixProfile:
    p1: tuple[int, ...]             # card -> a1
    p2: tuple[tuple[int, ...], ...]  # [a1][card] -> a2


def expected_payoff(spec: MatrixGameSpec, p1_probs: np.ndarray, p2_probs: np.ndarray) -> float:
    """Expected payoff of stochastic policies ``p1[c1, a1]`` and ``p2[a1, c2, a2]``."""
    w = 1.0 / spec.n_cards ** 2
    return float(w * np.einsum("ia,ajb,ijab->", p1_probs, p2_probs, spec.payoff))


def matrix_optimum(spec: MatrixGameSpec, limit: int = ENUMERATION_LIMIT) -> tuple[float, MatrixProfile]:
    """Exhaustive best deterministic profile under uniform card draws.

    Player 2's reply to each observed ``(a1, card)`` pair is enumerated too;
    ``|A1|^n * |A2|^(|A1| n)`` profiles in total.
    """
    n, k1, k2 = spec.n_cards, spec.n_a1, spec.n_a2
    count = k1 ** n * k2 ** (k1 * n)
    if count > limit:
        raise EnumerationTooLarge(f"{count} profiles exceed the enumeration limit {limit}")
    w = 1.0 / n ** 2
    best_value, best = -np.inf, None
    p2_tables = list(itertools.product(range(k2), repeat=k1 * n))
    c1s, c2s = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    c1s, c2s = c1s.ravel(), c2s.ravel()
    for p1 in itertools.product(range(k1), repeat=n):
        a1s = np.array(p1)[c1s]
        # payoff of every reply for each card pair: (pairs, k2)
        rows = spec.payoff[c1s, c2s, a1s, :]
        for table in p2_tables:
            a2s = np.array(table).reshape(k1, n)[a1s, c2s]
            value = w * rows[np.arange(len(c1s)), a2s].sum()
            if value > best_value + 1e-12:
                best_value = value
                best = MatrixProfile(tuple(p1), tuple(tuple(r) for r in np.array(table).reshape(k1, n)))
    return float(best_value), best
