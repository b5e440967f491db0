"""Deck-parametric cards, bids, hands and bidding histories.

Cards are indexed ``suit_index * n_ranks + rank_index``; a hand is a bitmask
over that index space. Bids carry a level and a strain index where strain
``len(suits)`` means no-trump, so ordering is deck independent.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

HCP_BY_RANK = {"A": 4, "K": 3, "Q": 2, "J": 1}


class Seat(enum.IntEnum):
    """Seats in clockwise order; ``seat % 2`` is the partnership (0 = N/S)."""

    N = 0
    E = 1
    S = 2
    W = 3

    @property
    def partner(self) -> "Seat":
        return Seat((self + 2) % 4)

    @property
    def left(self) -> "Seat":
        return Seat((self + 1) % 4)


class Ordering(enum.IntEnum):
    LT = -1
    EQ = 0
    GT = 1


class DeckError(ValueError):
    pass


@dataclass(frozen=True)
class DeckSpec:
    suits: tuple[str, ...] = ("C", "D", "H", "S")
    ranks: tuple[str, ...] = ("2", "3", "4", "5", "6", "7", "8", "9", "T", "J", "Q", "K", "A")
    cards_per_hand: int = 13
    max_level: int = 7

    def __post_init__(self):
        object.__setattr__(self, "suits", tuple(self.suits))
        object.__setattr__(self, "ranks", tuple(self.ranks))
        if not self.suits or not self.ranks:
            raise DeckError("deck needs at least one suit and one rank")
        if len(set(self.suits)) != len(self.suits) or len(set(self.ranks)) != len(self.ranks):
            raise DeckError("suit and rank identifiers must be unique")
        if "NT" in self.suits:
            raise DeckError("'NT' is reserved for no-trump")
        if self.cards_per_hand < 1 or 2 * self.cards_per_hand > self.n_cards:
            raise DeckError(
                f"cards_per_hand={self.cards_per_hand} does not fit two hands in {self.n_cards} cards")
        if not 1 <= self.max_level <= self.cards_per_hand:
            raise DeckError("max_level must lie in [1, cards_per_hand]")

    @classmethod
    def standard(cls) -> "DeckSpec":
        return cls()

    @classmethod
    def mini(cls, n_ranks: int = 4, cards_per_hand: Optional[int] = None,
             max_level: Optional[int] = None) -> "DeckSpec":
        """Four suits holding the top ``n_ranks`` ranks; 16 cards by default."""
        ranks = cls.ranks_default[-n_ranks:]
        cph = n_ranks if cards_per_hand is None else cards_per_hand
        level = max(1, cph - 1) if max_level is None else max_level
        return cls(suits=("C", "D", "H", "S"), ranks=ranks, cards_per_hand=cph, max_level=level)

    ranks_default = ("2", "3", "4", "5", "6", "7", "8", "9", "T", "J", "Q", "K", "A")

    @property
    def n_suits(self) -> int:
        return len(self.suits)

    @property
    def n_ranks(self) -> int:
        return len(self.ranks)

    @property
    def n_cards(self) -> int:
        return len(self.suits) * len(self.ranks)

    @property
    def n_strains(self) -> int:
        return len(self.suits) + 1

    @property
    def nt(self) -> int:
        return len(self.suits)

    @property
    def n_contracts(self) -> int:
        return self.max_level * self.n_strains

    @property
    def n_bids(self) -> int:
        return 1 + self.n_contracts

    @property
    def book(self) -> int:
        """Tricks the declaring side must take beyond the bid level."""
        return self.cards_per_hand - self.max_level

    @property
    def tricks_per_deal(self) -> int:
        return self.cards_per_hand

    @property
    def full_mask(self) -> int:
        return (1 << self.n_cards) - 1

    def strain_name(self, strain: int) -> str:
        return "NT" if strain == self.nt else self.suits[strain]

    def strain_index(self, name: str) -> int:
        if name.upper() == "NT" or name.upper() == "N":
            return self.nt
        return self.suits.index(name.upper())

    def card_index(self, suit: int, rank: int) -> int:
        return suit * self.n_ranks + rank

    def card_suit(self, card: int) -> int:
        return card // self.n_ranks

    def card_rank(self, card: int) -> int:
        return card % self.n_ranks

    def card_name(self, card: int) -> str:
        return self.suits[self.card_suit(card)] + self.ranks[self.card_rank(card)]

    def parse_card(self, name: str) -> int:
        return self.card_index(self.suits.index(name[0].upper()), self.ranks.index(name[1:].upper()))

    def suit_mask(self, suit: int) -> int:
        return ((1 << self.n_ranks) - 1) << (suit * self.n_ranks)

    def card_hcp(self) -> np.ndarray:
        """HCP value of every card index."""
        per_rank = np.array([HCP_BY_RANK.get(r, 0) for r in self.ranks], dtype=np.float64)
        return np.tile(per_rank, self.n_suits)

    def to_dict(self) -> dict:
        return {"suits": list(self.suits), "ranks": list(self.ranks),
                "cards_per_hand": self.cards_per_hand, "max_level": self.max_level}

    @classmethod
    def from_dict(cls, d: dict) -> "DeckSpec":
        return cls(suits=tuple(d["suits"]), ranks=tuple(d["ranks"]),
                   cards_per_hand=int(d["cards_per_hand"]), max_level=int(d.get("max_level", 7)))

    # bid indexing: PASS = 0, contracts ascending by (level, strain)
    def bid_index(self, bid: "Bid") -> int:
        if bid.is_pass:
            return 0
        if not 1 <= bid.level <= self.max_level or not 0 <= bid.strain < self.n_strains:
            raise DeckError(f"bid {bid} not valid for this deck")
        return 1 + (bid.level - 1) * self.n_strains + bid.strain

    def bid_from_index(self, index: int) -> "Bid":
        if index == 0:
            return PASS
        if not 1 <= index < self.n_bids:
            raise DeckError(f"bid index {index} out of range")
        level, strain = divmod(index - 1, self.n_strains)
        return Bid(level + 1, strain)

    def bid_name(self, bid: "Bid") -> str:
        return "PASS" if bid.is_pass else f"{bid.level}{self.strain_name(bid.strain)}"

    def parse_bid(self, text: str) -> "Bid":
        text = text.strip().upper()
        if text in ("P", "PASS"):
            return PASS
        return Bid(int(text[0]), self.strain_index(text[1:]))

    def all_bids(self) -> list["Bid"]:
        return [self.bid_from_index(i) for i in range(self.n_bids)]


@dataclass(frozen=True)
class Bid:
    """A call: PASS (level 0) or a contract ``level`` in strain ``strain``."""

    level: int = 0
    strain: int = 0

    @property
    def is_pass(self) -> bool:
        return self.level == 0

    def key(self) -> tuple[int, int]:
        return (self.level, self.strain)


PASS = Bid(0, 0)


def compare_bids(a: Bid, b: Bid) -> Ordering:
    if a.is_pass or b.is_pass:
        raise ValueError("compare_bids is defined on contract bids only")
    ka, kb = a.key(), b.key()
    if ka < kb:
        return Ordering.LT
    if ka > kb:
        return Ordering.GT
    return Ordering.EQ


def legal_followup(prev: Bid, nxt: Bid) -> bool:
    return compare_bids(nxt, prev) is Ordering.GT


def iter_bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def popcount(mask: int) -> int:
    return bin(mask).count("1")


@dataclass(frozen=True)
class Hand:
    deck: DeckSpec
    mask: int

    def __post_init__(self):
        if self.mask < 0 or self.mask > self.deck.full_mask:
            raise DeckError("hand mask outside deck")
        if popcount(self.mask) != self.deck.cards_per_hand:
            raise DeckError(
                f"hand holds {popcount(self.mask)} cards, expected {self.deck.cards_per_hand}")

    @classmethod
    def from_cards(cls, deck: DeckSpec, cards: Iterable[int]) -> "Hand":
        mask = 0
        for c in cards:
            mask |= 1 << int(c)
        return cls(deck, mask)

    @classmethod
    def parse(cls, deck: DeckSpec, text: str) -> "Hand":
        return cls.from_cards(deck, (deck.parse_card(t) for t in text.split()))

    @property
    def cards(self) -> list[int]:
        return list(iter_bits(self.mask))

    def __contains__(self, card: int) -> bool:
        return bool(self.mask >> card & 1)

    def __str__(self) -> str:
        return " ".join(self.deck.card_name(c) for c in self.cards)


@dataclass(frozen=True)
class HCP:
    per_suit: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.per_suit)


def hand_hcp(hand: Hand) -> HCP:
    deck = hand.deck
    points = [0] * deck.n_suits
    for c in iter_bits(hand.mask):
        points[deck.card_suit(c)] += HCP_BY_RANK.get(deck.ranks[deck.card_rank(c)], 0)
    return HCP(tuple(points))


def encode_mask(deck: DeckSpec, mask: int) -> np.ndarray:
    out = np.zeros(deck.n_cards)
    for c in iter_bits(mask):
        out[c] = 1.0
    return out


def encode_hand(hand: Hand) -> np.ndarray:
    return encode_mask(hand.deck, hand.mask)


def decode_hand(deck: DeckSpec, vec: np.ndarray) -> Hand:
    return Hand.from_cards(deck, np.flatnonzero(np.asarray(vec) > 0.5))


@dataclass(frozen=True)
class BiddingHistory:
    """Public auction so far. ``recall`` limits how many entries are kept."""

    entries: tuple[tuple[Seat, Bid], ...] = ()
    recall: Optional[int] = None

    def __post_init__(self):
        if self.recall is not None and self.recall < 1:
            raise ValueError("recall limit must be positive")
        last = None
        for _, bid in self.entries:
            if bid.is_pass:
                continue
            if last is not None and not legal_followup(last, bid):
                raise ValueError("contract bids must strictly increase")
            last = bid

    def append(self, seat: Seat, bid: Bid) -> "BiddingHistory":
        return BiddingHistory(self.entries + ((Seat(seat), bid),), self.recall)

    @property
    def highest(self) -> Optional[Bid]:
        for _, bid in reversed(self.entries):
            if not bid.is_pass:
                return bid
        return None

    def recalled(self) -> tuple[tuple[Seat, Bid], ...]:
        if self.recall is None:
            return self.entries
        return self.entries[-self.recall:]

    def __len__(self) -> int:
        return len(self.entries)


def full_recall_slots(deck: DeckSpec) -> int:
    """Slots that hold the longest possible N/S auction: every contract, then a pass."""
    return deck.n_contracts + 1


def history_slot_width(deck: DeckSpec) -> int:
    return deck.n_bids + 2


def encode_history(history: BiddingHistory | Sequence[tuple[Seat, Bid]], slots: int,
                   deck: DeckSpec, viewer: Optional[Seat] = None) -> np.ndarray:
    """Flat fixed-width encoding, most recent entry in the last slot.

    Each slot is a one-hot over bid indices, a validity bit and a seat bit.
    The seat bit marks North's bids, or, when ``viewer`` is given, bids made
    by the viewer's partner.
    """
    if slots < 1:
        raise ValueError("slot count must be >= 1")
    if isinstance(history, BiddingHistory):
        entries = history.recalled()
    else:
        entries = tuple(history)
    width = history_slot_width(deck)
    out = np.zeros((slots, width))
    kept = entries[-slots:]
    offset = slots - len(kept)
    for j, (seat, bid) in enumerate(kept):
        row = out[offset + j]
        row[deck.bid_index(bid)] = 1.0
        row[deck.n_bids] = 1.0
        flag = seat == Seat.N if viewer is None else seat != viewer
        row[deck.n_bids + 1] = 1.0 if flag else 0.0
    return out.reshape(-1)


def encode_history_batch(actions: np.ndarray, lengths: np.ndarray, slots: int, deck: DeckSpec,
                         viewer_is_north: np.ndarray, recall: Optional[int] = None) -> np.ndarray:
    """Vectorised ``encode_history`` for N/S auctions where North bids first.

    ``actions[i, :lengths[i]]`` are bid indices of episode ``i``; entry ``j`` was
    made by North iff ``j`` is even. A recall limit keeps only the last
    ``recall`` entries.
    """
    n = actions.shape[0]
    width = history_slot_width(deck)
    out = np.zeros((n, slots, width))
    keep = np.minimum(lengths, slots if recall is None else min(slots, recall))
    rows = np.arange(n)
    for j in range(slots):
        # slot j holds entry e = lengths - slots + j
        e = lengths - slots + j
        valid = (e >= 0) & (e >= lengths - keep)
        if not valid.any():
            continue
        r = rows[valid]
        ev = e[valid]
        out[r, j, actions[r, ev]] = 1.0
        out[r, j, deck.n_bids] = 1.0
        by_north = ev % 2 == 0
        # by partner of viewer: viewer N -> entries by S (odd); viewer S -> entries by N
        out[r, j, deck.n_bids + 1] = (by_north != viewer_is_north[valid]).astype(float)
    return out.reshape(n, -1)
