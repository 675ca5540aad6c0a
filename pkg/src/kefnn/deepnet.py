"""Fully connected ReLU regression network with Adam training (numpy, float64)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericalError

__all__ = [
    "ReluNetwork",
    "TrainConfig",
    "TruncationBound",
    "AdamState",
    "TrainResult",
    "init_network",
    "forward",
    "grad",
    "adam_init",
    "adam_step",
    "train",
    "predict_truncated",
    "mse",
]


@dataclass
class ReluNetwork:
    """Affine layers with ReLU between them and a linear scalar output.

    ``weights[l]`` has shape ``(fan_in, fan_out)``; activations are rows.
    """

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise InputError("need matching, non-empty weight and bias lists")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise InputError(f"layer {l}: weight {w.shape} and bias {b.shape} disagree")
            if l and w.shape[0] != self.weights[l - 1].shape[1]:
                raise InputError(f"layer {l} expects {w.shape[0]} inputs, previous layer gives {self.weights[l - 1].shape[1]}")
        if self.weights[-1].shape[1] != 1:
            raise InputError("output layer must have width 1")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    def params(self) -> list:
        return [*self.weights, *self.biases]

    def copy(self) -> "ReluNetwork":
        return ReluNetwork([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def __call__(self, x):
        return forward(self, x)

    def to_dict(self) -> dict:
        return {
            "layer_dims": self.layer_dims,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ReluNetwork":
        net = cls(
            [np.array(w, dtype=float).reshape(len(w), -1) for w in doc["weights"]],
            [np.array(b, dtype=float).reshape(-1) for b in doc["biases"]],
        )
        if net.layer_dims != list(doc["layer_dims"]):
            raise InputError(f"stored layer_dims {doc['layer_dims']} do not match arrays {net.layer_dims}")
        return net


INIT_SCHEMES = ("he", "uniform")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    epochs: int = 500
    batch_size: int = 64
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    init: str = "he"

    def __post_init__(self):
        if self.init not in INIT_SCHEMES:
            raise InputError(f"unknown init scheme {self.init!r}; expected one of {INIT_SCHEMES}")
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be positive")
        if self.epochs < 1:
            raise InputError("epochs must be >= 1")
        if self.batch_size < 1:
            raise InputError("batch_size must be >= 1")


@dataclass(frozen=True)
class TruncationBound:
    L: float

    def __post_init__(self):
        if not self.L > 0:
            raise InputError("truncation level must be positive")


def init_network(layer_dims, seed: int, scheme: str = "he") -> ReluNetwork:
    """Random initial network.

    ``"he"``: normal weights with std ``sqrt(2 / fan_in)`` and zero biases.
    ``"uniform"``: weights and biases uniform on ``+-1 / sqrt(fan_in)``.
    """
    if scheme not in INIT_SCHEMES:
        raise InputError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise InputError(f"invalid layer dims {layer_dims}")
    if dims[-1] != 1:
        raise InputError("the output width must be 1")
    rng = np.random.default_rng(seed)
    if scheme == "he":
        weights = [rng.normal(0.0, math.sqrt(2.0 / a), size=(a, b)) for a, b in zip(dims[:-1], dims[1:])]
        biases = [np.zeros(b) for b in dims[1:]]
    else:
        weights, biases = [], []
        for a, b in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(a)
            weights.append(rng.uniform(-bound, bound, size=(a, b)))
            biases.append(rng.uniform(-bound, bound, size=b))
    return ReluNetwork(weights, biases)


def _as_batch(net: ReluNetwork, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise InputError(f"network expects inputs of length {net.input_dim}, got shape {x.shape}")
    return x, single


def forward(net: ReluNetwork, x):
    """Network output; a scalar for one input vector, an array for a batch of rows."""
    a, single = _as_batch(net, x)
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        a = a @ w + b
        if l < last:
            np.maximum(a, 0.0, out=a)
    out = a[:, 0]
    return float(out[0]) if single else out


def grad(net: ReluNetwork, x, y):
    """Mean squared error on the batch and its gradient.

    Returns ``(loss, weight_grads, bias_grads)``.  The ReLU derivative at 0
    is taken as 0.
    """
    a, _ = _as_batch(net, x)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) != len(a) or len(y) == 0:
        raise InputError("need a non-empty batch with one target per input")
    acts = [a]
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = acts[-1] @ w + b
        if l < last:
            z = np.maximum(z, 0.0)
        acts.append(z)
    resid = acts[-1][:, 0] - y
    loss = float(resid @ resid) / len(y)
    delta = (2.0 / len(y)) * resid[:, None]
    gw = [None] * len(net.weights)
    gb = [None] * len(net.weights)
    for l in range(last, -1, -1):
        gw[l] = acts[l].T @ delta
        gb[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ net.weights[l].T) * (acts[l] > 0.0)
    return loss, gw, gb


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def adam_init(net: ReluNetwork) -> AdamState:
    return AdamState([np.zeros_like(p) for p in net.params()], [np.zeros_like(p) for p in net.params()])


def adam_step(net: ReluNetwork, state: AdamState, grads, config: TrainConfig):
    """One bias-corrected Adam update, applied in place; returns ``(net, state)``.

    ``grads`` is ``(weight_grads, bias_grads)`` as produced by :func:`grad`.
    """
    gw, gb = grads
    flat = [*gw, *gb]
    params = net.params()
    if len(flat) != len(params) or any(g.shape != p.shape for g, p in zip(flat, params)):
        raise InputError("gradient shapes do not match the network")
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    step = config.learning_rate / c1
    for p, g, m, v in zip(params, flat, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= step * m / (np.sqrt(v / c2) + config.eps)
    return net, state


def mse(net: ReluNetwork, x, y) -> float:
    r = np.asarray(forward(net, x)) - np.asarray(y, dtype=float)
    return float(np.mean(r * r))


@dataclass
class TrainResult:
    network: ReluNetwork
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_mse: float = math.inf


class _FlatParams:
    """Network whose arrays are views into one contiguous buffer, so Adam runs on a single vector."""

    def __init__(self, net: ReluNetwork):
        params = net.params()
        self.flat = np.concatenate([p.ravel() for p in params])
        self.grad = np.zeros_like(self.flat)
        views, gviews, pos = [], [], 0
        for p in params:
            views.append(self.flat[pos : pos + p.size].reshape(p.shape))
            gviews.append(self.grad[pos : pos + p.size].reshape(p.shape))
            pos += p.size
        k = len(net.weights)
        self.net = ReluNetwork(views[:k], views[k:])
        self._gviews = gviews
        self.m = np.zeros_like(self.flat)
        self.v = np.zeros_like(self.flat)
        self._tmp = np.zeros_like(self.flat)
        self.t = 0

    def load_grads(self, gw, gb):
        for dst, src in zip(self._gviews, [*gw, *gb]):
            dst[...] = src

    def step(self, config: TrainConfig):
        # same arithmetic as adam_step, on one buffer
        self.t += 1
        b1, b2 = config.beta1, config.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        g, m, v, tmp = self.grad, self.m, self.v, self._tmp
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - b2
        v += tmp
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += config.eps
        np.divide(m, tmp, out=tmp)
        tmp *= config.learning_rate / c1
        self.flat -= tmp


def train(net: ReluNetwork, train_set, validation_set, config: TrainConfig) -> TrainResult:
    """Shuffled mini-batch Adam; keeps the snapshot with the lowest validation MSE.

    ``net`` is not modified.  ``history`` has one entry per epoch with the
    mean training batch loss and the validation MSE.
    """
    x_tr, y_tr = np.asarray(train_set[0], dtype=float), np.asarray(train_set[1], dtype=float).reshape(-1)
    x_va, y_va = np.asarray(validation_set[0], dtype=float), np.asarray(validation_set[1], dtype=float).reshape(-1)
    n = len(y_tr)
    if n == 0 or len(y_va) == 0:
        raise InputError("training and validation sets must be non-empty")
    if len(x_tr) != n or len(x_va) != len(y_va):
        raise InputError("inputs and targets differ in length")
    if config.batch_size > n:
        raise InputError(f"batch_size {config.batch_size} exceeds the {n} training samples")
    state = _FlatParams(net)
    work = state.net
    rng = np.random.default_rng(config.seed)
    result = TrainResult(work.copy())
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for k, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            loss, gw, gb = grad(work, x_tr[idx], y_tr[idx])
            if not math.isfinite(loss):
                raise NumericalError(
                    f"non-finite training loss at epoch {epoch}, batch {k}",
                    {"epoch": epoch, "batch": k, "loss": repr(loss)},
                )
            state.load_grads(gw, gb)
            state.step(config)
            total += loss * len(idx)
        val = mse(work, x_va, y_va)
        if not math.isfinite(val):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}", {"epoch": epoch, "batch": None})
        result.history.append({"epoch": epoch, "train_mse": total / n, "val_mse": val})
        if val < result.best_val_mse:
            result.best_val_mse = val
            result.best_epoch = epoch
            result.network = work.copy()
    return result


def predict_truncated(net: ReluNetwork, x, bound: TruncationBound):
    """Network output clipped to ``[-L, L]``."""
    out = forward(net, x)
    if np.ndim(out) == 0:
        return float(min(max(out, -bound.L), bound.L))
    return np.clip(out, -bound.L, bound.L)
