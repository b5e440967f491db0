"""Evaluation summaries for trained bidders: HCP convention tables and belief traces."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .bridge_env import BatchAuction
from .core import DeckSpec
from .data import DealSet

STAGES = {"opening": 0, "response": 1}
SOURCES = ("own", "belief", "own+belief")


def suit_hcp_matrix(deck: DeckSpec) -> np.ndarray:
    """(n_cards, n_suits) matrix mapping a card vector to per-suit HCP."""
    m = np.zeros((deck.n_cards, deck.n_suits))
    m[np.arange(deck.n_cards), np.arange(deck.n_cards) // deck.n_ranks] = deck.card_hcp()
    return m


def belief_hcp(deck: DeckSpec, probs: np.ndarray) -> np.ndarray:
    """Expected HCP per suit under card probabilities (works on 0/1 hands too)."""
    return np.asarray(probs, dtype=np.float64) @ suit_hcp_matrix(deck)


@dataclass
class BidEpisodes:
    """Greedy auctions with the beliefs held around every bid.

    ``belief_before[e, t]`` is the actor's belief about its partner just
    before bid ``t``; ``belief_after[e, t]`` is the partner's belief about the
    actor once bid ``t`` is visible. Padding beyond ``lengths`` is zero.
    """

    deck: DeckSpec
    hands_n: np.ndarray
    hands_s: np.ndarray
    actions: np.ndarray
    lengths: np.ndarray
    belief_before: np.ndarray
    belief_after: np.ndarray
    scores: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.lengths)

    def actor_hands(self, t: int) -> np.ndarray:
        return self.hands_n if t % 2 == 0 else self.hands_s


def replay_beliefs(task, agents, hands_n: np.ndarray, hands_s: np.ndarray, actions: np.ndarray,
                   lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Belief vectors before and after each recorded bid."""
    if not agents.has_beliefs():
        raise ValueError("agents carry no trained belief model")
    deck = task.deck
    E, T = actions.shape
    before = np.zeros((E, T, deck.n_cards))
    after = np.zeros((E, T, deck.n_cards))
    auction = BatchAuction(deck, hands_n, hands_s)
    for t in range(T):
        rows = np.flatnonzero(lengths > t)
        if len(rows) == 0:
            break
        north = np.full(len(rows), t % 2 == 0)
        hist = auction.history(north, task.slots, rows, task.recall)
        before[rows, t] = task._belief(agents, north, hist)
        auction.step(rows, actions[rows, t])
        hist_p = auction.history(~north, task.slots, rows, task.recall)
        after[rows, t] = task._belief(agents, ~north, hist_p)
    return before, after


def record_episodes(task, agents, deals: Optional[DealSet] = None,
                    n_episodes: Optional[int] = None) -> BidEpisodes:
    """Play greedy auctions on ``deals`` (the task's test set by default)."""
    deals = task.test if deals is None else deals
    n = len(deals) if n_episodes is None else min(n_episodes, len(deals))
    deals = deals.subset(np.arange(n))
    hn, hs = deals.encoded()
    res = task.play(agents, deals, (hn, hs), deals.r_dp, np.random.default_rng(0), greedy=True)
    auction = res["auction"]
    before, after = replay_beliefs(task, agents, hn, hs, auction.actions, auction.lengths)
    return BidEpisodes(task.deck, hn, hs, auction.actions.copy(), auction.lengths.copy(),
                       before, after, res["r_e"])


@dataclass(frozen=True)
class HCPRow:
    bid: int
    name: str
    count: int
    per_suit: tuple[float, ...]
    total: float
    max_suit: Optional[int]  # marked column, suited bids only


def hcp_table(episodes: BidEpisodes, stage: str = "opening", source: str = "own") -> list[HCPRow]:
    """Mean per-suit HCP grouped by the bid made at ``stage``.

    ``own`` is the bidder's hand, ``belief`` the partner's belief about the
    bidder after seeing the bid, and ``own+belief`` the bidder's hand plus its
    belief about the partner at decision time (the policy's own input).
    Groups without episodes are omitted.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}")
    if source not in SOURCES:
        raise ValueError(f"unknown source {source!r}")
    deck = episodes.deck
    t = STAGES[stage]
    live = episodes.lengths > t
    if source == "own":
        vec = episodes.actor_hands(t)
    elif source == "belief":
        vec = episodes.belief_after[:, t]
    else:
        vec = episodes.actor_hands(t) + episodes.belief_before[:, t]
    hcp = belief_hcp(deck, vec[live])
    bids = episodes.actions[live, t]
    rows = []
    for b in np.unique(bids):
        sel = bids == b
        means = hcp[sel].mean(axis=0)
        bid = deck.bid_from_index(int(b))
        suited = not bid.is_pass and bid.strain < deck.nt
        rows.append(HCPRow(int(b), deck.bid_name(bid), int(sel.sum()),
                           tuple(float(v) for v in means), float(means.sum()),
                           int(np.argmax(means)) if suited else None))
    return rows


def suited_rows_peak_in_bid_suit(rows: list[HCPRow], deck: DeckSpec) -> bool:
    """True when every suited row has its marked column in the bid's own suit."""
    for r in rows:
        if r.max_suit is not None and r.max_suit != deck.bid_from_index(r.bid).strain:
            return False
    return True


def format_hcp_table(rows: list[HCPRow], deck: DeckSpec) -> str:
    """Plain-text table; the row maximum of a suited bid is starred."""
    head = ["bid", "n", *deck.suits, "total"]
    lines = ["\t".join(head)]
    for r in rows:
        cells = [f"{v:.2f}" + ("*" if r.max_suit == i else "") for i, v in enumerate(r.per_suit)]
        lines.append("\t".join([r.name, str(r.count), *cells, f"{r.total:.2f}"]))
    return "\n".join(lines)


def write_hcp_csv(path: str | Path, rows: list[HCPRow], deck: DeckSpec) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bid", "count", *deck.suits, "total", "max_suit"])
        for r in rows:
            w.writerow([r.name, r.count, *(repr(v) for v in r.per_suit), repr(r.total),
                        "" if r.max_suit is None else deck.suits[r.max_suit]])


def belief_trace(task, agents, hand_n: np.ndarray, hand_s: np.ndarray) -> dict:
    """One greedy auction with both seats' beliefs reduced to per-suit HCP.

    Step 0 is the empty history; step ``k`` follows the ``k``-th bid.
    """
    deck = task.deck
    hn = np.asarray(hand_n, dtype=np.float64).reshape(1, -1)
    hs = np.asarray(hand_s, dtype=np.float64).reshape(1, -1)
    deal = DealSet(deck, [_to_mask(hn[0])], [_to_mask(hs[0])])
    res = task.play(agents, _placeholder_scores(deal), (hn, hs), np.zeros(1),
                    np.random.default_rng(0), greedy=True)
    auction = res["auction"]
    n_bids = int(auction.lengths[0])
    replay = BatchAuction(deck, hn, hs)
    steps = []
    for k in range(n_bids + 1):
        rows = np.zeros(1, dtype=np.int64)
        b_n = task._belief(agents, np.array([True]), replay.history(np.array([True]), task.slots, rows, task.recall))
        b_s = task._belief(agents, np.array([False]), replay.history(np.array([False]), task.slots, rows, task.recall))
        steps.append({
            "step": k,
            "bid": None if k == 0 else deck.bid_name(deck.bid_from_index(int(auction.actions[0, k - 1]))),
            "north_belief_hcp": belief_hcp(deck, b_n[0]).round(6).tolist(),
            "south_belief_hcp": belief_hcp(deck, b_s[0]).round(6).tolist(),
        })
        if k < n_bids:
            replay.step(rows, auction.actions[0, k:k + 1])
    return {
        "suits": list(deck.suits),
        "hand_n": [deck.card_name(int(c)) for c in np.flatnonzero(hn[0])],
        "hand_s": [deck.card_name(int(c)) for c in np.flatnonzero(hs[0])],
        "hand_n_hcp": belief_hcp(deck, hn[0]).tolist(),
        "hand_s_hcp": belief_hcp(deck, hs[0]).tolist(),
        "bids": [s["bid"] for s in steps[1:]],
        "steps": steps,
    }


def _to_mask(vec: np.ndarray) -> int:
    return int(sum(1 << int(c) for c in np.flatnonzero(vec)))


def _placeholder_scores(deal: DealSet) -> DealSet:
    # greedy play reads score rows only to compute the reward, which a trace ignores
    scores = np.zeros((len(deal), deal.deck.n_contracts))
    return DealSet(deal.deck, deal.hands_n, deal.hands_s, scores, deal.seed, deal.dda, deal.meta)
