"""Dense ReLU networks with reverse-mode gradients, Adam, and checkpoint files.

Networks operate on batches: inputs are ``(batch, in_dim)`` arrays (a 1-D
vector is treated as a batch of one and returned as 1-D).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

HEADS = ("softmax", "sigmoid", "linear")
_MASKED = -1e30


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class StaleCacheError(RuntimeError):
    pass


class MLP:
    """Affine-ReLU stack followed by a softmax, sigmoid or linear head.

    This is the parameter bundle: ``params`` is the flat list
    ``[W0, b0, W1, b1, ...]`` with ``W`` shaped ``(fan_in, fan_out)``.
    """

    def __init__(self, sizes: Sequence[int], head: str = "linear",
                 rng: Optional[np.random.Generator] = None, out_scale: float = 1.0,
                 params: Optional[list[np.ndarray]] = None):
        if head not in HEADS:
            raise ValueError(f"unknown head {head!r}")
        if len(sizes) < 2:
            raise ShapeError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.head = head
        self.version = 0
        if params is not None:
            self.params = [np.array(p, dtype=np.float64) for p in params]
            self._check_shapes()
            return
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = []
        n_layers = len(self.sizes) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            limit = np.sqrt(6.0 / fan_in)
            W = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            if i == n_layers - 1:
                W *= out_scale
            self.params += [W, np.zeros(fan_out)]

    def _check_shapes(self):
        if len(self.params) != 2 * (len(self.sizes) - 1):
            raise ShapeError("parameter count does not match layer sizes")
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if self.params[2 * i].shape != (fan_in, fan_out) or self.params[2 * i + 1].shape != (fan_out,):
                raise ShapeError(f"layer {i} shapes do not chain")

    @property
    def in_dim(self) -> int:
        return self.sizes[0]

    @property
    def out_dim(self) -> int:
        return self.sizes[-1]

    @property
    def names(self) -> list[str]:
        out = []
        for i in range(len(self.sizes) - 1):
            out += [f"fc{i}.weight", f"fc{i}.bias"]
        return out

    def copy(self) -> "MLP":
        return MLP(self.sizes, self.head, params=[p.copy() for p in self.params])

    def zeros_like(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.params]

    def touch(self):
        """Mark parameters as modified so older caches become stale."""
        self.version += 1

    def forward(self, x: np.ndarray, mask: Optional[np.ndarray] = None):
        return forward(self, x, mask)

    def __call__(self, x: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
        return forward(self, x, mask)[0]


@dataclass
class Cache:
    net_id: int
    version: int
    squeeze: bool
    inputs: list
    pre: list
    logits: np.ndarray
    out: np.ndarray
    mask: Optional[np.ndarray] = None


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(net: MLP, x: np.ndarray, mask: Optional[np.ndarray] = None):
    """Returns ``(output, cache)``; a boolean ``mask`` hides softmax entries."""
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.shape[-1] != net.in_dim:
        raise ShapeError(f"input width {h.shape[-1]} != network input {net.in_dim}")
    inputs, pre = [], []
    n_layers = len(net.sizes) - 1
    for i in range(n_layers):
        W, b = net.params[2 * i], net.params[2 * i + 1]
        inputs.append(h)
        z = h @ W + b
        if i < n_layers - 1:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            logits = z
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if squeeze and mask.ndim == 1:
            mask = mask[None, :]
        logits = np.where(mask, logits, _MASKED)
    if net.head == "softmax":
        out = softmax(logits)
    elif net.head == "sigmoid":
        out = sigmoid(logits)
    else:
        out = logits
    cache = Cache(id(net), net.version, squeeze, inputs, pre, logits, out, mask)
    return (out[0] if squeeze else out), cache


def backward(net: MLP, cache: Cache, grad: np.ndarray, wrt_logits: bool = False) -> list[np.ndarray]:
    """Gradients of a scalar loss with respect to every parameter.

    ``grad`` is dLoss/dOutput, or dLoss/dLogits when ``wrt_logits`` is set
    (numerically preferable for cross-entropy losses).
    """
    if cache.net_id != id(net) or cache.version != net.version:
        raise StaleCacheError("cache does not belong to the current parameters")
    g = np.asarray(grad, dtype=np.float64)
    if cache.squeeze and g.ndim == 1:
        g = g[None, :]
    if g.shape != cache.out.shape:
        raise ShapeError(f"gradient shape {g.shape} != output shape {cache.out.shape}")
    if not wrt_logits:
        p = cache.out
        if net.head == "softmax":
            g = p * (g - (p * g).sum(axis=-1, keepdims=True))
        elif net.head == "sigmoid":
            g = g * p * (1.0 - p)
    if cache.mask is not None:
        g = np.where(cache.mask, g, 0.0)
    grads = [None] * len(net.params)
    n_layers = len(net.sizes) - 1
    for i in range(n_layers - 1, -1, -1):
        h = cache.inputs[i]
        grads[2 * i] = h.T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i > 0:
            g = (g @ net.params[2 * i].T) * (cache.pre[i - 1] > 0)
    return grads


class Adam:
    """Adam with bias correction and exponential learning-rate decay.

    The step size at update ``t`` (1-based) is
    ``lr * decay_rate ** ((t - 1) / decay_steps)``.
    """

    def __init__(self, net: MLP, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, decay_rate: float = 0.95, decay_steps: int = 50):
        self.net = net
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.decay_rate, self.decay_steps = decay_rate, decay_steps
        self.m = net.zeros_like()
        self.v = net.zeros_like()
        self.t = 0

    def current_lr(self) -> float:
        return self.lr * self.decay_rate ** (max(self.t - 1, 0) / self.decay_steps)

    def step(self, grads: list[np.ndarray]) -> MLP:
        adam_step(self.net, grads, self, self.t + 1)
        return self.net


def adam_step(net: MLP, grads: list[np.ndarray], state: Adam, t: int) -> MLP:
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    if len(grads) != len(net.params):
        raise ShapeError("gradient list does not match parameters")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    state.t = t
    lr = state.current_lr()
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(net.params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ShapeError("gradient shape mismatch")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    net.touch()
    return net


LossFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


def grad_check(net: MLP, x: np.ndarray, loss: LossFn, n_samples: int = 50, seed: int = 0,
               h: float = 1e-5, mask: Optional[np.ndarray] = None) -> float:
    """Max relative error between backprop and central differences.

    ``loss(output)`` returns the scalar loss and its gradient w.r.t. the output.
    A random sample of ``n_samples`` parameter entries is checked.
    """
    out, cache = forward(net, x, mask)
    _, dout = loss(out)
    analytic = backward(net, cache, dout)
    rng = np.random.default_rng(seed)
    sizes = np.array([p.size for p in net.params])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        idx = np.unravel_index(int(flat - offsets[k]), net.params[k].shape)
        p = net.params[k]
        orig = p[idx]
        p[idx] = orig + h
        lp = loss(forward(net, x, mask)[0])[0]
        p[idx] = orig - h
        lm = loss(forward(net, x, mask)[0])[0]
        p[idx] = orig
        numeric = (lp - lm) / (2 * h)
        a = analytic[k][idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


def policy_input(private: np.ndarray, belief: np.ndarray, mode: str = "sum") -> np.ndarray:
    """Combine private information with a belief vector.

    ``sum`` adds them elementwise (they must share the card space);
    ``concat`` appends the belief.
    """
    private = np.asarray(private, dtype=np.float64)
    belief = np.asarray(belief, dtype=np.float64)
    if mode == "sum":
        if private.shape != belief.shape:
            raise ShapeError(f"private {private.shape} and belief {belief.shape} differ")
        return private + belief
    if mode == "concat":
        return np.concatenate([private, belief], axis=-1)
    raise ValueError(f"unknown combine mode {mode!r}")


# checkpoint files

_MAGIC = b"PBLPARAM"
_FORMAT_VERSION = 1


def save_params(path: str | Path, nets: dict[str, MLP], meta: Optional[dict] = None) -> None:
    header = {"format_version": _FORMAT_VERSION, "meta": meta or {}, "networks": {},
              "order": list(nets)}
    for name, net in nets.items():
        header["networks"][name] = {
            "head": net.head, "activation": "relu", "sizes": list(net.sizes),
            "tensors": [{"name": n, "shape": list(p.shape)} for n, p in zip(net.names, net.params)],
        }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _FORMAT_VERSION, len(blob)))
        f.write(blob)
        for net in nets.values():
            for p in net.params:
                f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_params(path: str | Path) -> tuple[dict[str, MLP], dict]:
    with open(path, "rb") as f:
        if f.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path} is not a parameter checkpoint")
        version, n = struct.unpack("<II", f.read(8))
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(f.read(n).decode("utf-8"))
        nets = {}
        for name in header["order"]:
            spec = header["networks"][name]
            params = []
            for t in spec["tensors"]:
                count = int(np.prod(t["shape"])) if t["shape"] else 1
                params.append(np.frombuffer(f.read(8 * count), dtype="<f8").reshape(t["shape"]).copy())
            nets[name] = MLP(spec["sizes"], spec["head"], params=params)
    return nets, header.get("meta", {})
