"""Non-competitive bidding: North and South bid, East and West always pass.

A pass by N or S after a contract ends the auction (with the two implicit
East/West passes that makes three in a row). Two opening passes end the
episode with the double-pass flag set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import (PASS, Bid, BiddingHistory, DeckSpec, Hand, Seat, full_recall_slots,
                   encode_hand, encode_history, encode_history_batch, history_slot_width,
                   iter_bits, legal_followup)


class InvalidDealError(ValueError):
    pass


class AuctionError(RuntimeError):
    """An action was taken that the auction rules forbid."""


@dataclass(frozen=True)
class Contract:
    level: int
    strain: int
    declarer: Seat


@dataclass(frozen=True)
class AuctionState:
    hand_n: Hand
    hand_s: Hand
    history: BiddingHistory = BiddingHistory()
    to_act: Seat = Seat.N
    terminal: bool = False
    final_contract: Optional[Contract] = None
    double_pass: bool = False

    @property
    def highest(self) -> Optional[Bid]:
        return self.history.highest

    @property
    def deck(self) -> DeckSpec:
        return self.hand_n.deck

    def hand(self, seat: Seat) -> Hand:
        return self.hand_n if seat == Seat.N else self.hand_s


@dataclass(frozen=True)
class Observation:
    own_hand: np.ndarray
    history_enc: np.ndarray


class BridgeEnv:
    def __init__(self, deck: DeckSpec = DeckSpec(), history_slots: Optional[int] = None):
        self.deck = deck
        self.history_slots = full_recall_slots(deck) if history_slots is None else history_slots

    @property
    def n_actions(self) -> int:
        return self.deck.n_bids

    @property
    def history_dim(self) -> int:
        return self.history_slots * history_slot_width(self.deck)

    def reset(self, deal: tuple[Hand, Hand] | tuple[int, int]) -> AuctionState:
        n, s = deal
        try:
            hn = n if isinstance(n, Hand) else Hand(self.deck, int(n))
            hs = s if isinstance(s, Hand) else Hand(self.deck, int(s))
        except ValueError as exc:
            raise InvalidDealError(str(exc)) from exc
        if hn.deck != self.deck or hs.deck != self.deck:
            raise InvalidDealError("hands belong to a different deck")
        if hn.mask & hs.mask:
            raise InvalidDealError("North and South hands overlap")
        return AuctionState(hn, hs)

    def legal_actions(self, state: AuctionState) -> np.ndarray:
        if state.terminal:
            raise AuctionError("no legal actions in a terminal state")
        mask = np.zeros(self.n_actions, dtype=bool)
        mask[0] = True
        hi = state.highest
        start = 1 if hi is None else self.deck.bid_index(hi) + 1
        mask[start:] = True
        return mask

    def step(self, state: AuctionState, action: int) -> AuctionState:
        if state.terminal:
            raise AuctionError("auction is over")
        action = int(action)
        if not 0 <= action < self.n_actions or not self.legal_actions(state)[action]:
            raise AuctionError(f"illegal action {action}")
        bid = self.deck.bid_from_index(action)
        history = state.history.append(state.to_act, bid)
        nxt = Seat.S if state.to_act == Seat.N else Seat.N
        if bid.is_pass:
            hi = state.highest
            if hi is not None:
                return AuctionState(state.hand_n, state.hand_s, history, nxt, True,
                                    Contract(hi.level, hi.strain, _declarer(history, hi.strain)))
            if len(history) == 2:
                return AuctionState(state.hand_n, state.hand_s, history, nxt, True, None, True)
        return AuctionState(state.hand_n, state.hand_s, history, nxt)

    def observation(self, state: AuctionState, seat: Seat) -> Observation:
        seat = Seat(seat)
        if seat not in (Seat.N, Seat.S):
            raise ValueError("only North and South observe the auction")
        return Observation(encode_hand(state.hand(seat)),
                           encode_history(state.history, self.history_slots, self.deck, viewer=seat))

    def replay(self, deal, actions: Iterable[int]) -> AuctionState:
        state = self.reset(deal)
        for a in actions:
            state = self.step(state, a)
        return state


def _declarer(history: BiddingHistory, strain: int) -> Seat:
    for seat, bid in history.entries:
        if not bid.is_pass and bid.strain == strain:
            return seat
    raise AssertionError("final strain never bid")


def max_episode_steps(deck: DeckSpec) -> int:
    # an opening pass, every contract in increasing order, then a closing pass
    return deck.n_bids + 1


class BatchAuction:
    """Many auctions advanced in lock-step; mirrors ``BridgeEnv`` semantics.

    ``actions[i, j]`` is the j-th bid index of episode ``i``; North makes the
    even-numbered bids.
    """

    def __init__(self, deck: DeckSpec, hands_n: np.ndarray, hands_s: np.ndarray):
        self.deck = deck
        n = len(hands_n)
        self.hands_n = np.asarray(hands_n, dtype=np.float64)
        self.hands_s = np.asarray(hands_s, dtype=np.float64)
        self.actions = np.zeros((n, max_episode_steps(deck)), dtype=np.int64)
        self.lengths = np.zeros(n, dtype=np.int64)
        self.highest = np.zeros(n, dtype=np.int64)  # 0 = none
        self.done = np.zeros(n, dtype=bool)
        self.double_pass = np.zeros(n, dtype=bool)

    @property
    def n(self) -> int:
        return len(self.lengths)

    def north_to_act(self) -> np.ndarray:
        return self.lengths % 2 == 0

    def legal_mask(self) -> np.ndarray:
        idx = np.arange(self.deck.n_bids)[None, :]
        mask = idx > self.highest[:, None]
        mask[:, 0] = True
        return mask

    def own_hands(self, north: np.ndarray) -> np.ndarray:
        return np.where(north[:, None], self.hands_n, self.hands_s)

    def history(self, viewer_is_north: np.ndarray, slots: int,
                rows: Optional[np.ndarray] = None, recall: Optional[int] = None) -> np.ndarray:
        rows = np.arange(self.n) if rows is None else rows
        return encode_history_batch(self.actions[rows], self.lengths[rows], slots, self.deck,
                                    viewer_is_north, recall)

    def step(self, rows: np.ndarray, acts: np.ndarray) -> np.ndarray:
        """Apply ``acts`` to episodes ``rows``; returns which of them just ended."""
        acts = np.asarray(acts, dtype=np.int64)
        if np.any(self.done[rows]):
            raise AuctionError("stepping a finished auction")
        if np.any((acts != 0) & (acts <= self.highest[rows])):
            raise AuctionError("illegal bid in batch")
        self.actions[rows, self.lengths[rows]] = acts
        self.lengths[rows] += 1
        is_pass = acts == 0
        final = is_pass & (self.highest[rows] > 0)
        dp = is_pass & (self.highest[rows] == 0) & (self.lengths[rows] == 2)
        self.highest[rows] = np.where(is_pass, self.highest[rows], acts)
        ended = final | dp
        self.done[rows] |= ended
        self.double_pass[rows] |= dp
        return ended

    def contract_columns(self) -> np.ndarray:
        """Score-row column of each final contract, -1 for double pass."""
        return np.where(self.double_pass, -1, self.highest - 1)

    def declarers(self) -> list[Optional[Seat]]:
        out = []
        ns = self.deck.n_strains
        for i in range(self.n):
            if self.double_pass[i] or self.highest[i] == 0:
                out.append(None)
                continue
            strain = (self.highest[i] - 1) % ns
            for j in range(self.lengths[i]):
                a = self.actions[i, j]
                if a and (a - 1) % ns == strain:
                    out.append(Seat.N if j % 2 == 0 else Seat.S)
                    break
        return out


def write_traces(path: str | Path, deck: DeckSpec, records: Sequence[dict]) -> None:
    """Episode traces as line-delimited JSON."""
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")


def trace_record(deck: DeckSpec, hand_n: int, hand_s: int, actions: Sequence[int],
                 contract: Optional[Contract], rewards: Sequence[float]) -> dict:
    return {
        "hand_n": [deck.card_name(c) for c in iter_bits(int(hand_n))],
        "hand_s": [deck.card_name(c) for c in iter_bits(int(hand_s))],
        "actions": [deck.bid_name(deck.bid_from_index(int(a))) for a in actions],
        "final_contract": None if contract is None else {
            "level": contract.level, "strain": deck.strain_name(contract.strain),
            "declarer": contract.declarer.name},
        "rewards": [float(r) for r in rewards],
    }
