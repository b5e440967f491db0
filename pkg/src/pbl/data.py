"""Pre-generated deal sets with their score rows, and the files they live in."""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import DeckSpec, iter_bits
from .dds import DeckTooLargeError, ns_tricks_batch
from .scoring import (DDAConfig, _ew_layouts, declarer_for_strain, normalize,
                      score_lookup)


class DataError(ValueError):
    """Malformed, inconsistent or incomplete deal data."""


@dataclass
class DealSet:
    deck: DeckSpec
    hands_n: np.ndarray                  # (n,) card masks
    hands_s: np.ndarray
    scores: Optional[np.ndarray] = None  # (n, n_contracts) normalized
    seed: Optional[int] = None
    dda: Optional[dict] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.hands_n = np.asarray(self.hands_n, dtype=np.int64)
        self.hands_s = np.asarray(self.hands_s, dtype=np.int64)
        if self.hands_n.shape != self.hands_s.shape:
            raise DataError("North and South hand arrays differ in length")
        if np.any(self.hands_n & self.hands_s):
            raise DataError("a deal has overlapping North and South hands")
        if self.scores is not None:
            self.scores = np.asarray(self.scores, dtype=np.float64)
            if self.scores.shape != (len(self), self.deck.n_contracts):
                raise DataError(f"score rows must have shape ({len(self)}, {self.deck.n_contracts})")

    def __len__(self) -> int:
        return len(self.hands_n)

    @property
    def scored(self) -> bool:
        return self.scores is not None

    @property
    def r_dp(self) -> np.ndarray:
        if self.scores is None:
            raise DataError("deal set is not scored")
        return -self.scores.max(axis=1)

    def subset(self, idx) -> "DealSet":
        idx = np.asarray(idx)
        return DealSet(self.deck, self.hands_n[idx], self.hands_s[idx],
                       None if self.scores is None else self.scores[idx], self.seed, self.dda,
                       dict(self.meta))

    def encoded(self) -> tuple[np.ndarray, np.ndarray]:
        """0/1 card vectors of the North and South hands."""
        bits = np.arange(self.deck.n_cards)
        return ((self.hands_n[:, None] >> bits) & 1).astype(np.float64), \
               ((self.hands_s[:, None] >> bits) & 1).astype(np.float64)

    def pair_keys(self) -> np.ndarray:
        return self.hands_n * (1 << self.deck.n_cards) + self.hands_s if self.deck.n_cards <= 31 \
            else np.array([hash((int(a), int(b))) for a, b in zip(self.hands_n, self.hands_s)])

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.deck.to_dict(), sort_keys=True).encode())
        h.update(self.hands_n.astype("<i8").tobytes())
        h.update(self.hands_s.astype("<i8").tobytes())
        if self.scores is not None:
            h.update(self.scores.astype("<f8").tobytes())
        return h.hexdigest()


def _masks_from_cards(cards: np.ndarray) -> np.ndarray:
    return (np.int64(1) << cards.astype(np.int64)).sum(axis=1)


def gen_deals(deck: DeckSpec, n: int, seed: int, exclude: Optional[DealSet] = None) -> DealSet:
    """Uniform random North/South hands from a seeded shuffle of the deck.

    Deals whose (N, S) pair occurs in ``exclude`` are redrawn, so a test set
    generated this way is disjoint from the training set.
    """
    if n < 1:
        raise DataError("need at least one deal")
    rng = np.random.default_rng(seed)
    k = deck.cards_per_hand
    banned = set() if exclude is None else set(exclude.pair_keys().tolist())
    hn, hs = [], []
    while len(hn) < n:
        want = n - len(hn)
        order = np.argsort(rng.random((want, deck.n_cards)), axis=1)
        a, b = _masks_from_cards(order[:, :k]), _masks_from_cards(order[:, k:2 * k])
        if banned:
            keys = DealSet(deck, a, b).pair_keys()
            keep = np.array([int(x) not in banned for x in keys], dtype=bool)
            a, b = a[keep], b[keep]
        hn.extend(a.tolist())
        hs.extend(b.tolist())
    return DealSet(deck, np.array(hn[:n]), np.array(hs[:n]), seed=seed)


def train_test_seeds(seed: int) -> tuple[int, int]:
    a, b = np.random.SeedSequence(seed).spawn(2)
    return int(a.generate_state(1)[0]), int(b.generate_state(1)[0])


def _score_chunk(args) -> np.ndarray:
    deck_dict, hands_n, hands_s, indices, cfg_dict = args
    deck = DeckSpec.from_dict(deck_dict)
    cfg = DDAConfig(**cfg_dict)
    return _score_rows(deck, hands_n, hands_s, indices, cfg)


def _score_rows(deck: DeckSpec, hands_n, hands_s, indices, cfg: DDAConfig) -> np.ndarray:
    """Raw mean duplicate scores; deal ``i`` draws its layouts from ``(cfg.seed, i)``."""
    k = deck.cards_per_hand
    lookup = score_lookup(deck, cfg.real_bridge_bonuses)
    ns_ = deck.n_strains
    problems, leaders, trumps = [], [], []
    n_layouts = []
    for n, s, i in zip(hands_n, hands_s, indices):
        n, s = int(n), int(s)
        rest = list(iter_bits(deck.full_mask & ~(n | s)))
        decl = [int(declarer_for_strain(deck, n, s, st).left) for st in range(ns_)]
        if not rest:
            n_layouts.append(0)
            continue
        rng = None if cfg.exhaustive else np.random.default_rng([cfg.seed, int(i)])
        layouts = list(_ew_layouts(deck, rest, cfg, rng))
        n_layouts.append(len(layouts))
        for e, w in layouts:
            for st in range(ns_):
                problems.append((n, e, s, w))
                leaders.append(decl[st])
                trumps.append(st)
    tricks = ns_tricks_batch(deck, np.array(problems, dtype=np.int64).reshape(-1, 4),
                             np.array(leaders, dtype=np.int64), np.array(trumps, dtype=np.int64))
    out = np.zeros((len(n_layouts), deck.n_contracts))
    pos = 0
    strains = np.arange(ns_)
    for j, m in enumerate(n_layouts):
        if m == 0:
            t = np.full((1, ns_), k)
        else:
            t = tricks[pos:pos + m * ns_].reshape(m, ns_)
            pos += m * ns_
        scores = lookup[strains[None, :], t, :]
        out[j] = scores.mean(axis=0).T.reshape(-1)
    return out


def score_deals(deals: DealSet, cfg: DDAConfig = DDAConfig(), workers: int = 1,
                chunk: int = 500) -> DealSet:
    """Attach normalized score rows; results do not depend on ``workers``."""
    deck = deals.deck
    if 4 * deck.cards_per_hand > cfg.card_limit and 2 * deck.cards_per_hand < deck.n_cards:
        raise DeckTooLargeError(f"{deck.n_cards}-card deals need an imported score table")
    idx = np.arange(len(deals))
    parts = [(deck.to_dict(), deals.hands_n[i:i + chunk], deals.hands_s[i:i + chunk],
              idx[i:i + chunk], cfg.to_dict()) for i in range(0, len(deals), chunk)]
    if workers > 1 and len(parts) > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_score_chunk, parts))
    else:
        rows = [_score_chunk(p) for p in parts]
    raw = np.concatenate(rows) if rows else np.zeros((0, deck.n_contracts))
    out = deals.subset(idx)
    out.scores = normalize(raw, deck, cfg.real_bridge_bonuses)
    out.dda = cfg.to_dict()
    return out


def check_disjoint(a: DealSet, b: DealSet) -> None:
    if set(a.pair_keys().tolist()) & set(b.pair_keys().tolist()):
        raise DataError("train and test deal sets share a deal")


# files

_MAGIC = b"PBLDEALS"
_VERSION = 1


def write_deals(path: str | Path, deals: DealSet) -> None:
    """Header (magic, version, JSON provenance) then fixed-width little-endian records."""
    header = {"deck": deals.deck.to_dict(), "seed": deals.seed, "count": len(deals),
              "dda": deals.dda, "scored": deals.scored, "n_contracts": deals.deck.n_contracts,
              "meta": deals.meta}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(blob)))
        f.write(blob)
        cols = [("n", "<u8"), ("s", "<u8")]
        if deals.scored:
            cols += [("scores", "<f8", (deals.deck.n_contracts,)), ("r_dp", "<f8")]
        rec = np.zeros(len(deals), dtype=np.dtype(cols))
        rec["n"] = deals.hands_n
        rec["s"] = deals.hands_s
        if deals.scored:
            rec["scores"] = deals.scores
            rec["r_dp"] = deals.r_dp
        f.write(rec.tobytes())


def read_deals(path: str | Path) -> DealSet:
    raw = Path(path).read_bytes()
    if raw[:len(_MAGIC)] != _MAGIC:
        raise DataError(f"{path} is not a deal file")
    version, n = struct.unpack_from("<II", raw, len(_MAGIC))
    if version != _VERSION:
        raise DataError(f"unsupported deal file version {version}")
    start = len(_MAGIC) + 8
    header = json.loads(raw[start:start + n])
    deck = DeckSpec.from_dict(header["deck"])
    cols = [("n", "<u8"), ("s", "<u8")]
    if header["scored"]:
        cols += [("scores", "<f8", (header["n_contracts"],)), ("r_dp", "<f8")]
    dtype = np.dtype(cols)
    body = raw[start + n:]
    if len(body) != dtype.itemsize * header["count"]:
        raise DataError(f"{path}: record section has the wrong length")
    rec = np.frombuffer(body, dtype=dtype)
    scores = rec["scores"].copy() if header["scored"] else None
    return DealSet(deck, rec["n"].astype(np.int64), rec["s"].astype(np.int64), scores,
                   header["seed"], header["dda"], header.get("meta", {}))


def _hand_text(deck: DeckSpec, mask: int) -> str:
    return " ".join(deck.card_name(c) for c in iter_bits(int(mask)))


def write_deals_csv(path: str | Path, deals: DealSet) -> None:
    deck = deals.deck
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        head = ["index", "hand_n", "hand_s"]
        if deals.scored:
            head += ["r_dp"] + [deck.bid_name(b) for b in deck.all_bids()[1:]]
        w.writerow(head)
        for i in range(len(deals)):
            row = [i, _hand_text(deck, deals.hands_n[i]), _hand_text(deck, deals.hands_s[i])]
            if deals.scored:
                row += [repr(float(deals.r_dp[i]))] + [repr(float(v)) for v in deals.scores[i]]
            w.writerow(row)


def import_score_csv(path: str | Path, deck: DeckSpec = DeckSpec(), deals: Optional[DealSet] = None,
                     real_bridge_bonuses: bool = False) -> DealSet:
    """Read externally computed raw scores: ``hand_n_hex, hand_s_hex, score_1 ... score_k``.

    With ``deals`` given, rows are matched to those deals (every deal must be
    covered); otherwise the file defines the set.
    """
    hn, hs, rows = [], [], []
    with open(path, newline="") as f:
        for lineno, row in enumerate(csv.reader(f), 1):
            if not row or row[0].startswith("#"):
                continue
            if lineno == 1 and not _is_hex(row[0]):
                continue  # header line
            if len(row) != 2 + deck.n_contracts:
                raise DataError(f"{path}:{lineno}: expected {2 + deck.n_contracts} fields, got {len(row)}")
            try:
                hn.append(int(row[0], 16))
                hs.append(int(row[1], 16))
                rows.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    k = deck.cards_per_hand
    for i, (a, b) in enumerate(zip(hn, hs)):
        if bin(a).count("1") != k or bin(b).count("1") != k or a & b or (a | b) >> deck.n_cards:
            raise DataError(f"{path}: row {i} does not hold two disjoint {k}-card hands")
    scores = normalize(np.array(rows).reshape(-1, deck.n_contracts), deck, real_bridge_bonuses)
    table = DealSet(deck, np.array(hn, dtype=np.int64), np.array(hs, dtype=np.int64), scores,
                    meta={"source": str(path)})
    if deals is None:
        return table
    lookup = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(table.hands_n, table.hands_s))}
    picked = []
    for i, (a, b) in enumerate(zip(deals.hands_n, deals.hands_s)):
        j = lookup.get((int(a), int(b)))
        if j is None:
            raise DataError(f"no score row for deal {i}")
        picked.append(j)
    out = deals.subset(np.arange(len(deals)))
    out.scores = table.scores[picked]
    out.meta["source"] = str(path)
    return out


def _is_hex(text: str) -> bool:
    try:
        int(text, 16)
        return True
    except ValueError:
        return False
