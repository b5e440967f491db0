"""Belief modules: supervised prediction of the partner's hidden information.

A belief net maps an encoded public history to either independent Bernoulli
probabilities over cards (bridge) or a categorical distribution (matrix game
card, Silent Guide goal).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .neural import MLP, Adam, backward, forward

KINDS = ("bernoulli", "categorical")
_EPS = 1e-12


class BeliefDomainError(ValueError):
    pass


@dataclass
class BeliefDataset:
    """``inputs[j]`` is an encoded history, ``targets[j]`` the hidden info it should predict."""

    inputs: np.ndarray
    targets: np.ndarray
    kind: str = "bernoulli"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise BeliefDomainError(f"unknown target kind {self.kind!r}")
        if len(self.inputs) != len(self.targets):
            raise BeliefDomainError("inputs and targets differ in length")
        t = self.targets
        if t.size and not np.all((t == 0) | (t == 1)):
            raise BeliefDomainError("targets must be 0/1")
        if self.kind == "categorical" and t.size and not np.all(t.sum(axis=1) == 1):
            raise BeliefDomainError("categorical targets must be one-hot")

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def target_dim(self) -> int:
        return self.targets.shape[1]

    @classmethod
    def concat(cls, parts: list["BeliefDataset"]) -> "BeliefDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise BeliefDomainError("nothing to concatenate")
        return cls(np.concatenate([p.inputs for p in parts]),
                   np.concatenate([p.targets for p in parts]), parts[0].kind)

    @classmethod
    def empty(cls, input_dim: int, target_dim: int, kind: str = "bernoulli") -> "BeliefDataset":
        return cls(np.zeros((0, input_dim), np.uint8), np.zeros((0, target_dim), np.uint8), kind)


def belief_loss(b: np.ndarray, target: np.ndarray, kind: str = "bernoulli") -> float:
    """Summed cross-entropy per example, averaged over the batch."""
    b = np.clip(np.asarray(b, dtype=np.float64), _EPS, 1 - _EPS)
    t = np.asarray(target, dtype=np.float64)
    if b.shape != t.shape:
        raise BeliefDomainError(f"belief {b.shape} and target {t.shape} differ")
    if kind == "bernoulli":
        per = -(t * np.log(b) + (1 - t) * np.log(1 - b)).sum(axis=-1)
    elif kind == "categorical":
        per = -(t * np.log(b)).sum(axis=-1)
    else:
        raise BeliefDomainError(f"unknown target kind {kind!r}")
    return float(np.mean(per))


def belief_net(input_dim: int, target_dim: int, kind: str, hidden=(256, 256),
               rng: Optional[np.random.Generator] = None) -> MLP:
    head = "sigmoid" if kind == "bernoulli" else "softmax"
    return MLP([input_dim, *hidden, target_dim], head, rng=rng)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = x.astype(np.uint64) + np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def validation_mask(n: int, val_frac: float = 0.1) -> np.ndarray:
    """Membership of pair ``j`` is a fixed function of ``j``, not of data order or RNG."""
    h = _splitmix64(np.arange(n))
    return (h % np.uint64(10_000)).astype(np.int64) < int(round(val_frac * 10_000))


@dataclass(frozen=True)
class BeliefConfig:
    lr: float = 1e-3
    batch_size: int = 1024
    decay_rate: float = 0.95
    decay_steps: int = 50
    val_frac: float = 0.1
    patience: int = 5
    max_epochs: int = 50
    episodes: int = 300_000
    hidden: tuple[int, ...] = (256, 256)


@dataclass
class BeliefFit:
    net: MLP
    val_loss: float
    init_val_loss: float
    train_loss: float
    epochs: int
    history: list[float] = field(default_factory=list)


def _loss_in_chunks(net: MLP, x: np.ndarray, t: np.ndarray, kind: str, chunk: int = 8192) -> float:
    if len(x) == 0:
        return float("nan")
    total = 0.0
    for i in range(0, len(x), chunk):
        total += belief_loss(net(x[i:i + chunk].astype(np.float64)), t[i:i + chunk], kind) * len(x[i:i + chunk])
    return total / len(x)


def train_belief(ds: BeliefDataset, net: MLP, cfg: BeliefConfig = BeliefConfig(),
                 rng: Optional[np.random.Generator] = None) -> BeliefFit:
    """Minibatch Adam with early stopping on the held-out split.

    Validation is evaluated once per epoch; training stops after ``patience``
    epochs without improvement and the best parameters are returned.
    """
    if len(ds) == 0:
        raise BeliefDomainError("cannot train a belief module on an empty dataset")
    rng = rng if rng is not None else np.random.default_rng(0)
    net = net.copy()
    val = validation_mask(len(ds), cfg.val_frac)
    if val.all() or not val.any():
        # tiny datasets: evaluate on the training data itself
        val = np.zeros(len(ds), bool)
        xv, tv = ds.inputs, ds.targets
    else:
        xv, tv = ds.inputs[val], ds.targets[val]
    xt, tt = ds.inputs[~val], ds.targets[~val]
    opt = Adam(net, lr=cfg.lr, decay_rate=cfg.decay_rate, decay_steps=cfg.decay_steps)
    best_loss = init = _loss_in_chunks(net, xv, tv, ds.kind)
    best, stale, epochs, history, train_loss = net.copy(), 0, 0, [init], float("nan")
    for epoch in range(cfg.max_epochs):
        order = rng.permutation(len(xt))
        running, seen = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            x = xt[idx].astype(np.float64)
            t = tt[idx].astype(np.float64)
            out, cache = forward(net, x)
            running += belief_loss(out, t, ds.kind) * len(idx)
            seen += len(idx)
            # sigmoid/softmax with cross-entropy: the logit gradient is (b - t)
            grads = backward(net, cache, (out - t) / len(idx), wrt_logits=True)
            opt.step(grads)
        epochs = epoch + 1
        train_loss = running / max(seen, 1)
        loss = _loss_in_chunks(net, xv, tv, ds.kind)
        history.append(loss)
        if loss < best_loss - 1e-9:
            best_loss, best, stale = loss, net.copy(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return BeliefFit(best, float(best_loss), float(init), float(train_loss), epochs, history)


# dataset files

_MAGIC = b"PBLBELF1"


def write_dataset(path: str | Path, ds: BeliefDataset) -> None:
    """Header, then per record: history length, history values, packed target bits.

    Binary histories are bit-packed; real-valued ones are stored as float32.
    """
    binary = bool(np.all((ds.inputs == 0) | (ds.inputs == 1)))
    header = {"kind": ds.kind, "count": len(ds), "input_dim": int(ds.inputs.shape[1]),
              "target_dim": int(ds.targets.shape[1]), "input_format": "bits" if binary else "f4"}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for x, t in zip(ds.inputs, ds.targets):
            f.write(struct.pack("<H", len(x)))
            if binary:
                f.write(np.packbits(x.astype(np.uint8)).tobytes())
            else:
                f.write(np.asarray(x, dtype="<f4").tobytes())
            f.write(np.packbits(t.astype(np.uint8)).tobytes())


def iter_dataset(path: str | Path, batch: int = 4096) -> Iterator[BeliefDataset]:
    """Stream a dataset file in chunks of at most ``batch`` records."""
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise BeliefDomainError(f"{path} is not a belief dataset file")
        (n,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(n))
        tdim = header["target_dim"]
        tbytes = (tdim + 7) // 8
        bits = header["input_format"] == "bits"
        dtype = np.uint8 if bits else np.float32
        if header["count"] == 0:
            yield BeliefDataset(np.zeros((0, header["input_dim"]), dtype), np.zeros((0, tdim), np.uint8),
                                header["kind"])
            return
        xs, ts = [], []
        for _ in range(header["count"]):
            (length,) = struct.unpack("<H", f.read(2))
            if bits:
                x = np.unpackbits(np.frombuffer(f.read((length + 7) // 8), np.uint8))[:length]
            else:
                x = np.frombuffer(f.read(4 * length), "<f4").astype(np.float32)
            t = np.unpackbits(np.frombuffer(f.read(tbytes), np.uint8))[:tdim]
            xs.append(x)
            ts.append(t)
            if len(xs) == batch:
                yield BeliefDataset(np.array(xs, dtype=dtype), np.array(ts, np.uint8), header["kind"])
                xs, ts = [], []
        if xs:
            yield BeliefDataset(np.array(xs, dtype=dtype), np.array(ts, np.uint8), header["kind"])


def read_dataset(path: str | Path) -> BeliefDataset:
    parts = list(iter_dataset(path))
    return parts[0] if len(parts) == 1 else BeliefDataset.concat(parts)
