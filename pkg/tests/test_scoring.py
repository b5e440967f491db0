import numpy as np
import pytest

from oracles import ew_partitions, random_deal_masks, transcribed_table
from pbl.core import DeckSpec, Hand, Seat, iter_bits
from pbl.dds import DeckTooLargeError, brute_force_tricks, dd_tricks
from pbl.scoring import (DDAConfig, ScoreTable, ScoringDomainError, declarer_for_strain,
                         double_pass_reward, duplicate_score, estimate_re, max_abs_score,
                         score_lookup, score_table)

STD = DeckSpec()
NT = STD.nt
C, D, H, S = range(4)


@pytest.mark.parametrize("args,expected", [
    ((9, 3, NT), 300),
    ((7, 1, C), 50),
    ((13, 1, NT), 730),
    ((6, 2, H), -100),
])
def test_spot_scores(args, expected):
    assert duplicate_score(*args) == expected


def test_full_table_matches_transcription():
    for (t, lv, s), expected in transcribed_table().items():
        assert duplicate_score(t, lv, s) == expected, (t, lv, s)


def test_monotone_in_tricks():
    for lv in range(1, 8):
        for s in range(5):
            scores = [duplicate_score(t, lv, s) for t in range(14)]
            assert all(a <= b for a, b in zip(scores, scores[1:]))


@pytest.mark.parametrize("args", [(14, 1, C), (-1, 1, C), (7, 0, C), (7, 8, C), (7, 1, 5)])
def test_out_of_range(args):
    with pytest.raises(ScoringDomainError):
        duplicate_score(*args)


def test_real_bridge_toggle():
    # additive game bonus and per-trick undertricks
    assert duplicate_score(9, 3, NT, real_bridge_bonuses=True) == 400
    assert duplicate_score(6, 2, H, real_bridge_bonuses=True) == -100
    assert duplicate_score(5, 2, H, real_bridge_bonuses=True) == -150
    assert duplicate_score(5, 2, H) == -100


def test_max_abs_score():
    assert max_abs_score(STD) == 730
    assert max_abs_score(DeckSpec.mini()) > 0
    assert duplicate_score(9, 3, NT) / max_abs_score(STD) == pytest.approx(0.411, abs=1e-3)


def test_double_pass_reward():
    assert double_pass_reward(ScoreTable(np.array([0.1, 0.8, -0.3]))) == pytest.approx(-0.8)
    assert double_pass_reward(ScoreTable(np.array([-0.4, -0.1]))) == pytest.approx(0.1)
    t = np.array([0.3, -0.2, 0.5, 0.0])
    assert double_pass_reward(t) == double_pass_reward(t[::-1])


def test_dd_single_trump_card():
    deck = DeckSpec(suits=("C", "D", "H", "S"), ranks=("A",), cards_per_hand=1, max_level=1)
    # N holds the spade; E leads a club; N ruffs
    hands = [1 << deck.card_index(S, 0), 1 << deck.card_index(C, 0),
             1 << deck.card_index(D, 0), 1 << deck.card_index(H, 0)]
    assert dd_tricks(deck, hands, Seat.N, S) == 1
    assert dd_tricks(deck, hands, Seat.N, NT) == 0


def test_dd_matches_brute_force_small():
    rng = np.random.default_rng(11)
    for n_ranks in (1, 2):
        deck = DeckSpec.mini(n_ranks=n_ranks)
        for _ in range(60):
            hands = random_deal_masks(rng, deck.n_cards, deck.cards_per_hand)
            for decl in Seat:
                for strain in range(deck.n_strains):
                    assert dd_tricks(deck, hands, decl, strain) == brute_force_tricks(
                        deck, hands, decl, strain)


def test_dd_seat_relabelling_invariant():
    deck = DeckSpec.mini()
    rng = np.random.default_rng(5)
    for _ in range(30):
        n, e, s_, w = random_deal_masks(rng, 16, 4)
        for strain in range(5):
            got = dd_tricks(deck, [n, e, s_, w], Seat.N, strain)
            assert 0 <= got <= 4
            # rotate the table by two seats: same hands, same opening leader
            assert dd_tricks(deck, [s_, w, n, e], Seat.S, strain) == got


def test_dd_size_guard():
    rng = np.random.default_rng(0)
    hands = random_deal_masks(rng, 52, 13)
    with pytest.raises(DeckTooLargeError):
        dd_tricks(STD, hands, Seat.N, NT)
    with pytest.raises(DeckTooLargeError):
        estimate_re(hands[0], hands[2], STD)


def test_declarer_heuristic():
    deck = DeckSpec.mini()
    n = Hand.parse(deck, "SA SK HA CJ")
    s = Hand.parse(deck, "SQ HK HQ HJ")
    assert declarer_for_strain(deck, n.mask, s.mask, S) == Seat.N
    assert declarer_for_strain(deck, n.mask, s.mask, H) == Seat.S
    assert declarer_for_strain(deck, n.mask, s.mask, D) == Seat.N  # tie
    assert declarer_for_strain(deck, n.mask, s.mask, deck.nt) == Seat.N  # 12 vs 8 HCP


def test_estimate_when_ns_hold_everything():
    deck = DeckSpec(suits=("C", "D"), ranks=("Q", "K", "A", "J"), cards_per_hand=4, max_level=2)
    n = Hand.parse(deck, "CA CK CQ CJ")
    s = Hand.parse(deck, "DA DK DQ DJ")
    a = estimate_re(n, s, deck, DDAConfig(samples=1, seed=1))
    b = estimate_re(n, s, deck, DDAConfig(samples=20, seed=9))
    assert np.array_equal(a, b)
    lookup = score_lookup(deck)
    assert a[0] == lookup[0, 4, 0]


def _exhaustive_by_hand(deck, n, s):
    rest = [c for c in range(deck.n_cards) if not (n | s) >> c & 1]
    rows = []
    for e, w in ew_partitions(rest, deck.cards_per_hand):
        row = []
        for level in range(1, deck.max_level + 1):
            for strain in range(deck.n_strains):
                decl = declarer_for_strain(deck, n, s, strain)
                t = brute_force_tricks(deck, [n, e, s, w], decl, strain)
                row.append(duplicate_score(t, level, strain, deck))
        rows.append(row)
    return np.mean(rows, axis=0)


def test_exhaustive_estimate_matches_brute_force():
    deck = DeckSpec.mini(n_ranks=2)
    rng = np.random.default_rng(2)
    for _ in range(10):
        hands = random_deal_masks(rng, deck.n_cards, deck.cards_per_hand)
        got = estimate_re(hands[0], hands[2], deck, DDAConfig(exhaustive=True))
        assert np.allclose(got, _exhaustive_by_hand(deck, hands[0], hands[2]))


def test_exhaustive_ignores_seed():
    deck = DeckSpec.mini(n_ranks=2)
    hands = random_deal_masks(np.random.default_rng(4), 8, 2)
    a = estimate_re(hands[0], hands[2], deck, DDAConfig(exhaustive=True, seed=1))
    b = estimate_re(hands[0], hands[2], deck, DDAConfig(exhaustive=True, seed=77))
    assert np.array_equal(a, b)


def test_sampled_estimate_deterministic_given_seed():
    deck = DeckSpec.mini()
    hands = random_deal_masks(np.random.default_rng(4), 16, 4)
    a = estimate_re(hands[0], hands[2], deck, DDAConfig(seed=3))
    b = estimate_re(hands[0], hands[2], deck, DDAConfig(seed=3))
    assert np.array_equal(a, b)
    assert DDAConfig().samples == 20


def test_score_table_normalized():
    deck = DeckSpec.mini()
    hands = random_deal_masks(np.random.default_rng(8), 16, 4)
    t = score_table(hands[0], hands[2], deck)
    assert t.values.shape == (deck.n_contracts,)
    assert np.all(np.abs(t.values) <= 1.0)
    assert t.r_dp == -t.values.max()
