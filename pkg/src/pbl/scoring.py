"""Contract scoring, double-dummy score estimation and the double-pass penalty."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator, Optional

import numpy as np

from .core import DeckSpec, Hand, Seat, iter_bits, popcount
from .dds import DEFAULT_CARD_LIMIT, DeckTooLargeError, ns_tricks_batch


class ScoringDomainError(ValueError):
    pass


def trump_scale(deck: DeckSpec, strain: int) -> int:
    # lower half of the suit order are the minors
    if strain < deck.n_suits // 2:
        return 20
    return 30


def trump_bias(deck: DeckSpec, strain: int) -> int:
    return 10 if strain == deck.nt else 0


def duplicate_score(tricks_made: int, bid_level: int, trump: int,
                    deck: DeckSpec = DeckSpec(), real_bridge_bonuses: bool = False) -> int:
    """Raw score for the declaring side.

    The default follows the scoring routine literally: the game/part-score
    bonus replaces the contract points and undertricks cost ``bid_level * 50``.
    ``real_bridge_bonuses`` adds the bonus instead and charges 50 per
    undertrick.
    """
    if not 0 <= tricks_made <= deck.tricks_per_deal:
        raise ScoringDomainError(f"tricks_made={tricks_made} outside [0, {deck.tricks_per_deal}]")
    if not 1 <= bid_level <= deck.max_level:
        raise ScoringDomainError(f"bid_level={bid_level} outside [1, {deck.max_level}]")
    if not 0 <= trump < deck.n_strains:
        raise ScoringDomainError(f"unknown strain {trump}")
    scale = trump_scale(deck, trump)
    delta = tricks_made - (bid_level + deck.book)
    score = 0
    if delta >= 0:
        score += bid_level * scale + trump_bias(deck, trump)
        bonus = 300 if score >= 100 else 50
        score = score + bonus if real_bridge_bonuses else bonus
        if delta == 6:
            score += 500
        elif delta == 7:
            score += 1000
        if delta > 0:
            score += delta * scale
    else:
        score -= (-delta if real_bridge_bonuses else bid_level) * 50
    return score


@lru_cache(maxsize=32)
def max_abs_score(deck: DeckSpec = DeckSpec(), real_bridge_bonuses: bool = False) -> int:
    best = 0
    for tricks in range(deck.tricks_per_deal + 1):
        for level in range(1, deck.max_level + 1):
            for strain in range(deck.n_strains):
                best = max(best, abs(duplicate_score(tricks, level, strain, deck, real_bridge_bonuses)))
    return best


@lru_cache(maxsize=32)
def score_lookup(deck: DeckSpec, real_bridge_bonuses: bool = False) -> np.ndarray:
    """``table[strain, tricks, level - 1]`` of raw duplicate scores."""
    out = np.zeros((deck.n_strains, deck.tricks_per_deal + 1, deck.max_level))
    for s in range(deck.n_strains):
        for t in range(deck.tricks_per_deal + 1):
            for level in range(1, deck.max_level + 1):
                out[s, t, level - 1] = duplicate_score(t, level, s, deck, real_bridge_bonuses)
    out.setflags(write=False)
    return out


def contract_column(deck: DeckSpec, level: int, strain: int) -> int:
    """Column of a contract in a score row (bid index minus one)."""
    return (level - 1) * deck.n_strains + strain


@dataclass(frozen=True)
class ScoreTable:
    """Per-deal environment reward for every contract, in normalized units."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)

    @property
    def r_dp(self) -> float:
        return double_pass_reward(self)

    def contract(self, deck: DeckSpec, level: int, strain: int) -> float:
        return float(self.values[contract_column(deck, level, strain)])


def double_pass_reward(table: ScoreTable | np.ndarray) -> float:
    values = table.values if isinstance(table, ScoreTable) else np.asarray(table)
    return -float(np.max(values))


@dataclass(frozen=True)
class DDAConfig:
    samples: int = 20
    seed: int = 0
    exhaustive: bool = False
    card_limit: int = DEFAULT_CARD_LIMIT
    real_bridge_bonuses: bool = False

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("DDA sample count must be >= 1")

    def to_dict(self) -> dict:
        return {"samples": self.samples, "seed": self.seed, "exhaustive": self.exhaustive,
                "card_limit": self.card_limit, "real_bridge_bonuses": self.real_bridge_bonuses}


def declarer_for_strain(deck: DeckSpec, hand_n: int, hand_s: int, strain: int) -> Seat:
    """Seat assumed to have named ``strain`` first: longer trumps, ties to North.

    For no-trump the seat with more high-card points is used.
    """
    if strain == deck.nt:
        hcp = deck.card_hcp()
        n = sum(hcp[c] for c in iter_bits(hand_n))
        s = sum(hcp[c] for c in iter_bits(hand_s))
    else:
        mask = deck.suit_mask(strain)
        n, s = popcount(hand_n & mask), popcount(hand_s & mask)
    return Seat.S if s > n else Seat.N


def _ew_layouts(deck: DeckSpec, rest: list[int], cfg: DDAConfig,
                rng: np.random.Generator) -> Iterator[tuple[int, int]]:
    k = deck.cards_per_hand
    if cfg.exhaustive:
        for east in itertools.combinations(rest, k):
            others = [c for c in rest if c not in east]
            emask = sum(1 << c for c in east)
            for west in itertools.combinations(others, k):
                yield emask, sum(1 << c for c in west)
    else:
        arr = np.array(rest)
        for _ in range(cfg.samples):
            perm = rng.permutation(arr)
            yield (sum(1 << int(c) for c in perm[:k]), sum(1 << int(c) for c in perm[k:2 * k]))


def estimate_re(hand_n: Hand | int, hand_s: Hand | int, deck: DeckSpec, cfg: DDAConfig = DDAConfig(),
                rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Mean raw duplicate score of every contract over East/West layouts.

    Returns one entry per contract (bid index minus one). When North and South
    hold the whole deck the declaring side takes every trick.
    """
    n = hand_n.mask if isinstance(hand_n, Hand) else int(hand_n)
    s = hand_s.mask if isinstance(hand_s, Hand) else int(hand_s)
    if n & s:
        raise ValueError("North and South hands overlap")
    if 4 * deck.cards_per_hand > cfg.card_limit and 2 * deck.cards_per_hand < deck.n_cards:
        raise DeckTooLargeError(
            f"{deck.n_cards}-card deals exceed the exact-search limit of {cfg.card_limit}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    lookup = score_lookup(deck, cfg.real_bridge_bonuses)
    rest = list(iter_bits(deck.full_mask & ~(n | s)))
    k = deck.cards_per_hand
    declarers = [declarer_for_strain(deck, n, s, st) for st in range(deck.n_strains)]
    if not rest:
        tricks = np.full((1, deck.n_strains), k)
    else:
        if len(rest) < 2 * k:
            raise ValueError("not enough remaining cards to deal East and West")
        layouts = list(_ew_layouts(deck, rest, cfg, rng))
        hands, leaders, trumps = [], [], []
        for e, w in layouts:
            for st, decl in enumerate(declarers):
                hands.append((n, e, s, w))
                leaders.append(int(decl.left))
                trumps.append(st)
        ns = ns_tricks_batch(deck, np.array(hands), np.array(leaders), np.array(trumps))
        tricks = ns.reshape(len(layouts), deck.n_strains)
    # scores[u, strain, level]
    scores = lookup[np.arange(deck.n_strains)[None, :], tricks, :]
    mean = scores.mean(axis=0)
    # reorder to (level, strain) contract columns
    return mean.T.reshape(-1)


def normalize(raw: np.ndarray, deck: DeckSpec, real_bridge_bonuses: bool = False) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / max_abs_score(deck, real_bridge_bonuses)


def score_table(hand_n: Hand | int, hand_s: Hand | int, deck: DeckSpec,
                cfg: DDAConfig = DDAConfig(), rng: Optional[np.random.Generator] = None) -> ScoreTable:
    raw = estimate_re(hand_n, hand_s, deck, cfg, rng)
    return ScoreTable(normalize(raw, deck, cfg.real_bridge_bonuses))
