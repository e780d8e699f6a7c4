"""Dense feed-forward networks with hand-written backpropagation.

Weights are stored per layer as ``W`` of shape ``(fan_in, fan_out)`` and a bias
vector of length ``fan_out``; a batch ``X`` of shape ``(n, fan_in)`` maps to
``X @ W + b``. The same class backs the surrogate model, the NFQ Q-function
and the PSONN policy body.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "identity", "softmax", "tanh")
LOSSES = ("mse", "xent")


@dataclass
class Mlp:
    sizes: list
    activations: list
    weights: list
    biases: list
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.sizes) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if len(self.activations) != len(self.sizes) - 1:
            raise ValueError("one activation tag per weight layer is required")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i} has inconsistent shapes {W.shape}, {b.shape}")

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def __call__(self, X):
        return forward(self, X)

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)


def init_mlp(sizes, activations=None, seed=0) -> Mlp:
    """Fan-in scaled Gaussian weights (He for rectifier layers), zero biases.

    ``activations`` defaults to rectifier hidden layers and a linear output.
    """
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ValueError("empty layer size list")
    if len(sizes) < 2:
        raise ValueError("an MLP needs at least an input and an output layer")
    if activations is None:
        activations = ["relu"] * (len(sizes) - 2) + ["identity"]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
        gain = 2.0 if act == "relu" else 1.0
        weights.append(rng.normal(0.0, np.sqrt(gain / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, list(activations), weights, biases)


def _activate(z, act):
    if act == "relu":
        return np.maximum(z, 0.0)
    if act == "tanh":
        return np.tanh(z)
    if act == "softmax":
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    return z


def _as_batch(m, X):
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[-1] != m.sizes[0]:
        raise ValueError(f"expected input width {m.sizes[0]}, got {X.shape[-1]}")
    return X, single


def forward(m: Mlp, X) -> np.ndarray:
    X, single = _as_batch(m, X)
    h = X
    for W, b, act in zip(m.weights, m.biases, m.activations):
        h = _activate(h @ W + b, act)
    return h[0] if single else h


def _forward_cache(m, X):
    hs, zs = [X], []
    h = X
    for W, b, act in zip(m.weights, m.biases, m.activations):
        z = h @ W + b
        h = _activate(z, act)
        zs.append(z)
        hs.append(h)
    return hs, zs


def loss_value(m: Mlp, X, target, loss="mse") -> float:
    X, _ = _as_batch(m, X)
    Y = forward(m, X)
    T = np.asarray(target, dtype=float).reshape(Y.shape)
    if loss == "mse":
        return float(np.mean((Y - T) ** 2))
    if loss == "xent":
        return float(-np.mean(np.sum(T * np.log(np.clip(Y, 1e-300, None)), axis=1)))
    raise ValueError(f"unknown loss {loss!r}")


def gradient(m: Mlp, X, target, loss="mse"):
    """Backpropagate the batch loss.

    ``mse`` is the mean of squared errors over all output elements; ``xent``
    is the mean categorical cross-entropy and requires a softmax output. Returns
    ``(loss, [(dW, db), ...])``.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    X, _ = _as_batch(m, X)
    hs, zs = _forward_cache(m, X)
    Y = hs[-1]
    T = np.asarray(target, dtype=float).reshape(Y.shape)
    n = X.shape[0]
    if loss == "mse":
        value = float(np.mean((Y - T) ** 2))
        dY = 2.0 * (Y - T) / Y.size
        delta = _output_delta(dY, Y, m.activations[-1])
    else:
        if m.activations[-1] != "softmax":
            raise ValueError("cross-entropy requires a softmax output layer")
        value = float(-np.mean(np.sum(T * np.log(np.clip(Y, 1e-300, None)), axis=1)))
        delta = (Y - T) / n
    grads = [None] * len(m.weights)
    for i in range(len(m.weights) - 1, -1, -1):
        grads[i] = (hs[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            dh = delta @ m.weights[i].T
            delta = _hidden_delta(dh, zs[i - 1], hs[i], m.activations[i - 1])
    return value, grads


def _output_delta(dY, Y, act):
    if act == "identity":
        return dY
    if act == "tanh":
        return dY * (1.0 - Y ** 2)
    if act == "relu":
        return dY * (Y > 0)
    # softmax Jacobian-vector product
    return Y * (dY - np.sum(dY * Y, axis=1, keepdims=True))


def _hidden_delta(dh, z, h, act):
    if act == "relu":
        return dh * (z > 0)
    if act == "tanh":
        return dh * (1.0 - h ** 2)
    if act == "identity":
        return dh
    return _output_delta(dh, h, act)


def get_flat(m: Mlp) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(m.weights, m.biases)])


def set_flat(m: Mlp, x) -> Mlp:
    """Return a copy of ``m`` whose parameters are taken from the flat vector ``x``."""
    x = np.asarray(x, dtype=float)
    if x.size != m.n_params:
        raise ValueError(f"expected {m.n_params} parameters, got {x.size}")
    weights, biases, k = [], [], 0
    for W, b in zip(m.weights, m.biases):
        weights.append(x[k:k + W.size].reshape(W.shape).copy())
        k += W.size
        biases.append(x[k:k + b.size].copy())
        k += b.size
    return Mlp(list(m.sizes), list(m.activations), weights, biases, dict(m.meta))


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 0.01
    lr_decay: float = 0.5
    decay_every: int = 100
    momentum: float = 0.9
    loss: str = "mse"
    seed: int = 0
    patience: int = 30
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")


def split_indices(n, val_fraction, rng):
    idx = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    if n_val == 0 or n_val == n:
        return idx, idx
    return idx[n_val:], idx[:n_val]


def train(m: Mlp, inputs, targets, cfg: TrainConfig):
    """Mini-batch momentum SGD with step-decayed learning rate and early stopping.

    Works on a private copy of ``m`` and returns ``(best_model, history)``
    where ``history`` holds ``(train_loss, val_loss)`` per epoch and the
    returned weights are those of the best validation epoch.
    """
    X = np.asarray(inputs, dtype=float)
    Y = np.asarray(targets, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if Y.ndim == 1:
        Y = Y[:, None]
    if len(X) == 0:
        raise ValueError("empty dataset")
    if len(X) != len(Y):
        raise ValueError("inputs and targets differ in length")
    rng = np.random.default_rng(cfg.seed)
    tr, va = split_indices(len(X), cfg.val_fraction, rng)
    net = m.copy()
    vel = [(np.zeros_like(W), np.zeros_like(b)) for W, b in zip(net.weights, net.biases)]
    best = net.copy()
    best_val = loss_value(net, X[va], Y[va], cfg.loss)
    history = []
    stale = 0
    for epoch in range(cfg.epochs):
        lr = cfg.lr * cfg.lr_decay ** (epoch // cfg.decay_every)
        order = tr[rng.permutation(len(tr))]
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            bi = order[start:start + cfg.batch_size]
            value, grads = gradient(net, X[bi], Y[bi], cfg.loss)
            total += value * len(bi)
            for i, (dW, db) in enumerate(grads):
                vW, vb = vel[i]
                vW *= cfg.momentum
                vW -= lr * dW
                vb *= cfg.momentum
                vb -= lr * db
                net.weights[i] += vW
                net.biases[i] += vb
        val = loss_value(net, X[va], Y[va], cfg.loss)
        if not np.isfinite(val):
            raise FloatingPointError(f"training diverged at epoch {epoch}")
        history.append((total / len(tr), val))
        if val < best_val:
            best_val, best, stale = val, net.copy(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    best.meta = {**best.meta, "best_val_loss": best_val, "epochs_run": len(history)}
    return best, history


def mlp_to_dict(m: Mlp) -> dict:
    return {
        "sizes": list(m.sizes),
        "activations": list(m.activations),
        "weights": [W.tolist() for W in m.weights],
        "biases": [b.tolist() for b in m.biases],
        "meta": m.meta,
    }


def mlp_from_dict(d: dict) -> Mlp:
    return Mlp(
        list(d["sizes"]),
        list(d["activations"]),
        [np.array(W, dtype=float).reshape(a, b) for W, a, b in zip(d["weights"], d["sizes"][:-1], d["sizes"][1:])],
        [np.array(b, dtype=float) for b in d["biases"]],
        dict(d.get("meta", {})),
    )


def save_mlp(m: Mlp, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(mlp_to_dict(m)))
    tmp.replace(path)


def load_mlp(path) -> Mlp:
    return mlp_from_dict(json.loads(Path(path).read_text()))
