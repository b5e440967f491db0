"""Exact double-dummy trick counting on reduced decks.

Hands are bitmasks over card indices (``suit * n_ranks + rank``). The search
is full-information minimax over the playing phase with a transposition table
at trick boundaries, alpha-beta inside a trick, and equivalent-card pruning
(touching cards in one hand, counting only cards still in play, are
interchangeable).
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from typing import Sequence

from .core import DeckSpec, Seat, iter_bits, popcount

DEFAULT_CARD_LIMIT = 16


class DeckTooLargeError(ValueError):
    """Raised when a deal is too large for exact search."""


def _check_hands(hands: Sequence[int]) -> int:
    if len(hands) != 4:
        raise ValueError("need four hands")
    sizes = {popcount(h) for h in hands}
    if len(sizes) != 1:
        raise ValueError("all four hands must hold the same number of cards")
    seen = 0
    for h in hands:
        if seen & h:
            raise ValueError("hands overlap")
        seen |= h
    return sizes.pop()


@lru_cache(maxsize=64)
def _suit_masks(n_suits: int, n_ranks: int) -> tuple[int, ...]:
    return tuple(((1 << n_ranks) - 1) << (s * n_ranks) for s in range(n_suits))


class _Solver:
    """One solve context: deck geometry, trump, and a boundary memo."""

    def __init__(self, n_suits: int, n_ranks: int, trump: int):
        self.n_ranks = n_ranks
        self.suit_masks = _suit_masks(n_suits, n_ranks)
        self.trump = trump if trump < n_suits else -1
        self.memo: dict[tuple, int] = {}

    def candidates(self, hand: int, in_play: int, lead_suit: int) -> list[int]:
        """Representative legal cards, highest first within each suit."""
        if lead_suit >= 0:
            follow = hand & self.suit_masks[lead_suit]
            suits = [lead_suit] if follow else range(len(self.suit_masks))
        else:
            suits = range(len(self.suit_masks))
        out = []
        nr = self.n_ranks
        for s in suits:
            mine = hand & self.suit_masks[s]
            if not mine:
                continue
            live = in_play & self.suit_masks[s]
            prev_mine = False
            # walk live cards of the suit from high to low
            for r in range(nr - 1, -1, -1):
                bit = 1 << (s * nr + r)
                if not live & bit:
                    continue
                if mine & bit:
                    if not prev_mine:
                        out.append(s * nr + r)
                    prev_mine = True
                else:
                    prev_mine = False
        return out

    def beats(self, card: int, best: int) -> bool:
        nr = self.n_ranks
        cs, bs = card // nr, best // nr
        if cs == bs:
            return card > best
        return cs == self.trump

    def solve(self, hands: tuple[int, int, int, int], leader: int) -> int:
        """Tricks won by N/S (seats 0 and 2) from this trick boundary on."""
        if not hands[leader]:
            return 0
        key = (hands, leader)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        remaining = popcount(hands[0])
        value = self._trick(list(hands), leader, -1, -1, -1, 0, 0, -1, remaining + 1)
        self.memo[key] = value
        return value

    def _trick(self, hands: list[int], seat: int, lead_suit: int, best_card: int,
               best_seat: int, n_played: int, table: int, alpha: int, beta: int) -> int:
        if n_played == 4:
            won = 1 if best_seat % 2 == 0 else 0
            return won + self.solve(tuple(hands), best_seat)
        live = hands[0] | hands[1] | hands[2] | hands[3] | table
        maximizing = seat % 2 == 0
        hand = hands[seat]
        nxt = (seat + 1) % 4
        value = -1 if maximizing else 1 << 30
        for card in self.candidates(hand, live, lead_suit):
            bit = 1 << card
            hands[seat] = hand & ~bit
            if n_played == 0:
                v = self._trick(hands, nxt, card // self.n_ranks, card, seat, 1, bit, alpha, beta)
            elif self.beats(card, best_card):
                v = self._trick(hands, nxt, lead_suit, card, seat, n_played + 1, table | bit,
                                alpha, beta)
            else:
                v = self._trick(hands, nxt, lead_suit, best_card, best_seat, n_played + 1,
                                table | bit, alpha, beta)
            hands[seat] = hand
            if maximizing:
                if v > value:
                    value = v
                if value > alpha:
                    alpha = value
            else:
                if v < value:
                    value = v
                if value < beta:
                    beta = value
            if alpha >= beta:
                break
        return value


def dd_tricks(deck: DeckSpec, hands: Sequence[int], declarer: Seat | int, trump: int,
              card_limit: int = DEFAULT_CARD_LIMIT) -> int:
    """Tricks won by the declaring side under perfect play by everyone.

    ``hands`` are the N, E, S, W masks; ``trump`` is a strain index (``deck.nt``
    for no-trump). The opening lead comes from the seat left of declarer.
    """
    hands = tuple(int(h) for h in hands)
    per_hand = _check_hands(hands)
    if 4 * per_hand > card_limit:
        raise DeckTooLargeError(
            f"{4 * per_hand} cards exceed the exact-search limit of {card_limit}; "
            "load a precomputed score table instead")
    declarer = Seat(declarer)
    if _compiled_ns_tricks is not None and 3 * deck.n_cards <= 62:
        ns = _compiled_ns_tricks(deck, hands, int(declarer.left), trump)
    else:
        ns = _Solver(deck.n_suits, deck.n_ranks, trump).solve(hands, int(declarer.left))
    return ns if declarer % 2 == 0 else per_hand - ns


def reference_tricks(deck: DeckSpec, hands: Sequence[int], declarer: Seat | int, trump: int) -> int:
    """Pure-Python path of the pruned search (no compilation)."""
    hands = tuple(int(h) for h in hands)
    per_hand = _check_hands(hands)
    declarer = Seat(declarer)
    ns = _Solver(deck.n_suits, deck.n_ranks, trump).solve(hands, int(declarer.left))
    return ns if declarer % 2 == 0 else per_hand - ns


def brute_force_tricks(deck: DeckSpec, hands: Sequence[int], declarer: Seat | int, trump: int) -> int:
    """Plain full-tree minimax without pruning or memo; reference oracle."""
    hands = list(int(h) for h in hands)
    per_hand = _check_hands(hands)
    nr = deck.n_ranks
    suit_masks = _suit_masks(deck.n_suits, nr)
    declarer = Seat(declarer)
    side = declarer % 2

    def legal(hand: int, lead_suit: int) -> list[int]:
        if lead_suit >= 0 and hand & suit_masks[lead_suit]:
            return list(iter_bits(hand & suit_masks[lead_suit]))
        return list(iter_bits(hand))

    def winner(cards: list[tuple[int, int]]) -> int:
        lead_suit = cards[0][1] // nr
        trumps = [(c, s) for s, c in cards if trump < deck.n_suits and c // nr == trump]
        pool = trumps if trumps else [(c, s) for s, c in cards if c // nr == lead_suit]
        return max(pool)[1]

    def play(leader: int, seat: int, trick: list[tuple[int, int]]) -> int:
        if len(trick) == 4:
            w = winner(trick)
            won = 1 if w % 2 == side else 0
            if not hands[0]:
                return won
            return won + play(w, w, [])
        lead_suit = trick[0][1] // nr if trick else -1
        results = []
        for card in legal(hands[seat], lead_suit):
            hands[seat] &= ~(1 << card)
            results.append(play(leader, (seat + 1) % 4, trick + [(seat, card)]))
            hands[seat] |= 1 << card
        return max(results) if seat % 2 == side else min(results)

    if per_hand == 0:
        return 0
    lead = int(declarer.left)
    return play(lead, lead, [])


# Compiled search used by dd_tricks for small decks. Same algorithm as _Solver.

try:
    import numba
    from numba import types as _nbt
    from numba.typed import Dict as _NbDict
except ImportError:  # pragma: no cover
    numba = None

if numba is not None:
    # Depth-first alpha-beta with an explicit frame stack. numba cannot cache
    # self-recursive functions, so the recursion of _Solver is unrolled here.

    @numba.njit(cache=True)
    def _nb_candidates(hand, live, lead_suit, n_suits, n_ranks, out):
        full_suit = (1 << n_ranks) - 1
        must_follow = lead_suit >= 0 and (hand >> (lead_suit * n_ranks)) & full_suit != 0
        k = 0
        for s in range(n_suits):
            if must_follow and s != lead_suit:
                continue
            mine = (hand >> (s * n_ranks)) & full_suit
            if mine == 0:
                continue
            suit_live = (live >> (s * n_ranks)) & full_suit
            prev_mine = False
            for r in range(n_ranks - 1, -1, -1):
                if not (suit_live >> r) & 1:
                    continue
                if not (mine >> r) & 1:
                    prev_mine = False
                    continue
                if not prev_mine:
                    out[k] = s * n_ranks + r
                    k += 1
                prev_mine = True
        return k

    @numba.njit(cache=True)
    def _nb_solve(hands, leader, trump, n_suits, n_ranks, n_cards, memo):
        per_hand = 0
        m = hands[0]
        while m:
            m &= m - 1
            per_hand += 1
        if per_hand == 0:
            return 0
        depth = n_cards + 2
        seat = np.zeros(depth, np.int64)
        n_played = np.zeros(depth, np.int64)
        lead = np.zeros(depth, np.int64)
        best_card = np.zeros(depth, np.int64)
        best_seat = np.zeros(depth, np.int64)
        table = np.zeros(depth, np.int64)
        alpha = np.zeros(depth, np.int64)
        beta = np.zeros(depth, np.int64)
        value = np.zeros(depth, np.int64)
        hand = np.zeros(depth, np.int64)
        cands = np.zeros((depth, n_cards), np.int64)
        n_cand = np.zeros(depth, np.int64)
        idx = np.zeros(depth, np.int64)
        boundary = np.zeros(depth, np.bool_)
        key0 = np.zeros(depth, np.int64)
        key1 = np.zeros(depth, np.int64)
        won = np.zeros(depth, np.int64)

        # root frame
        d = 0
        seat[0] = leader
        lead[0] = -1
        best_card[0] = -1
        best_seat[0] = -1
        alpha[0] = -1
        beta[0] = per_hand + 1
        value[0] = -1 if leader % 2 == 0 else 1 << 30
        hand[0] = hands[leader]
        n_cand[0] = _nb_candidates(hands[leader], hands[0] | hands[1] | hands[2] | hands[3], -1,
                                   n_suits, n_ranks, cands[0])
        while True:
            if idx[d] < n_cand[d]:
                card = cands[d, idx[d]]
                idx[d] += 1
                bit = 1 << card
                sd = seat[d]
                hands[sd] = hand[d] & ~bit
                s = card // n_ranks
                if n_played[d] == 0:
                    c_lead, c_bc, c_bs = s, card, sd
                else:
                    c_lead = lead[d]
                    bs = best_card[d] // n_ranks
                    wins = card > best_card[d] if s == bs else s == trump
                    if wins:
                        c_bc, c_bs = card, sd
                    else:
                        c_bc, c_bs = best_card[d], best_seat[d]
                c_table = table[d] | bit
                v = -1
                e = d + 1
                if n_played[d] == 3:
                    w = 1 if c_bs % 2 == 0 else 0
                    if hands[0] == 0:
                        v = w
                    else:
                        k0 = hands[0] | (hands[1] << n_cards) | (hands[2] << (2 * n_cards))
                        k1 = hands[3] | (c_bs << n_cards)
                        key = (k0, k1)
                        if key in memo:
                            v = w + memo[key]
                        else:
                            remaining = 0
                            m = hands[0]
                            while m:
                                m &= m - 1
                                remaining += 1
                            seat[e] = c_bs
                            n_played[e] = 0
                            lead[e] = -1
                            best_card[e] = -1
                            best_seat[e] = -1
                            table[e] = 0
                            alpha[e] = -1
                            beta[e] = remaining + 1
                            boundary[e] = True
                            key0[e] = k0
                            key1[e] = k1
                            won[e] = w
                else:
                    seat[e] = (sd + 1) % 4
                    n_played[e] = n_played[d] + 1
                    lead[e] = c_lead
                    best_card[e] = c_bc
                    best_seat[e] = c_bs
                    table[e] = c_table
                    alpha[e] = alpha[d]
                    beta[e] = beta[d]
                    boundary[e] = False
                if v < 0:
                    # descend into frame e
                    se = seat[e]
                    value[e] = -1 if se % 2 == 0 else 1 << 30
                    hand[e] = hands[se]
                    idx[e] = 0
                    live = hands[0] | hands[1] | hands[2] | hands[3] | table[e]
                    n_cand[e] = _nb_candidates(hands[se], live, lead[e], n_suits, n_ranks, cands[e])
                    d = e
                    continue
            else:
                v = value[d]
                if boundary[d]:
                    memo[(key0[d], key1[d])] = v
                    v += won[d]
                if d == 0:
                    return v
                d -= 1
            # child of frame d finished with value v
            hands[seat[d]] = hand[d]
            if seat[d] % 2 == 0:
                if v > value[d]:
                    value[d] = v
                if value[d] > alpha[d]:
                    alpha[d] = value[d]
            else:
                if v < value[d]:
                    value[d] = v
                if value[d] < beta[d]:
                    beta[d] = value[d]
            if alpha[d] >= beta[d]:
                idx[d] = n_cand[d]

    _KEY_TYPE = _nbt.UniTuple(_nbt.int64, 2)

    @numba.njit(cache=True)
    def _nb_solve_batch(hands, leaders, trumps, n_suits, n_ranks, n_cards):
        out = np.zeros(hands.shape[0], dtype=np.int64)
        for i in range(hands.shape[0]):
            memo = _NbDict.empty(key_type=_KEY_TYPE, value_type=_nbt.int64)
            out[i] = _nb_solve(hands[i].copy(), leaders[i], trumps[i], n_suits, n_ranks,
                               n_cards, memo)
        return out

    def _compiled_ns_tricks(deck: DeckSpec, hands: tuple, leader: int, trump: int) -> int:
        return int(ns_tricks_batch(deck, np.array([hands]), np.array([leader]),
                                   np.array([trump]))[0])
else:  # pragma: no cover
    _compiled_ns_tricks = None


def ns_tricks_batch(deck: DeckSpec, hands: np.ndarray, leaders: np.ndarray,
                    trumps: np.ndarray) -> np.ndarray:
    """N/S tricks for many (hands, leader, strain) problems at once.

    ``hands`` has shape (n, 4) of N, E, S, W masks. Inputs are not validated.
    """
    hands = np.asarray(hands, dtype=np.int64)
    leaders = np.asarray(leaders, dtype=np.int64)
    trumps = np.where(np.asarray(trumps) >= deck.n_suits, -1, trumps).astype(np.int64)
    if numba is None or 3 * deck.n_cards > 62:
        out = np.zeros(len(hands), dtype=np.int64)
        for i in range(len(hands)):
            solver = _Solver(deck.n_suits, deck.n_ranks, int(trumps[i]) % (deck.n_suits + 1))
            solver.trump = int(trumps[i])
            out[i] = solver.solve(tuple(int(x) for x in hands[i]), int(leaders[i]))
        return out
    return _nb_solve_batch(hands, leaders, trumps, deck.n_suits, deck.n_ranks, deck.n_cards)
