"""Learned world model and model-based policy evaluation.

The world model consists of four delta-state regressors (one per state
variable, each ``5-10-10-10-1``) and a ``5-10-10-10-3`` softmax reward
classifier. Model and simulator expose the same ``step(x, failed, action)``
interface, so :func:`discounted_returns` serves both the "model" and the
"system" evaluator.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dynamics import MAX_FORCE, STATE_NAMES, Batch, State, TrueDynamics
from .neural import Mlp, TrainConfig, init_mlp, load_mlp, save_mlp, train

log = logging.getLogger(__name__)

REWARD_CLASSES = np.array([0.0, -0.1, -1.0])
HIDDEN = (10, 10, 10)
DELTA_FILES = tuple(f"delta_{n}.json" for n in STATE_NAMES)
REWARD_FILE = "reward.json"
STATS_FILE = "stats.json"


def encode_reward(r) -> np.ndarray:
    """One-hot reward classes: 0 -> [1,0,0], -0.1 -> [0,1,0], -1 -> [0,0,1]."""
    r = np.atleast_1d(np.asarray(r, dtype=float))
    idx = np.argmin(np.abs(r[:, None] - REWARD_CLASSES[None, :]), axis=1)
    return np.eye(3)[idx]


def decode_reward(probs) -> np.ndarray:
    return REWARD_CLASSES[np.argmax(np.atleast_2d(probs), axis=1)]


class WorldModel:
    """Delta-state regressors plus reward classifier with normalization stats."""

    name = "model"

    def __init__(self, delta_nets, reward_net, in_mean, in_std, out_mean, out_std, meta=None):
        if len(delta_nets) != 4:
            raise ValueError("four delta regressors are required")
        for net in delta_nets:
            if net.sizes[0] != 5 or net.sizes[-1] != 1:
                raise ValueError("delta regressors must map 5 inputs to 1 output")
        if reward_net.sizes[0] != 5 or reward_net.sizes[-1] != 3 or reward_net.activations[-1] != "softmax":
            raise ValueError("reward classifier must map 5 inputs to a 3-way softmax")
        self.delta_nets = list(delta_nets)
        self.reward_net = reward_net
        self.in_mean = np.asarray(in_mean, dtype=float)
        self.in_std = np.asarray(in_std, dtype=float)
        self.out_mean = np.asarray(out_mean, dtype=float)
        self.out_std = np.asarray(out_std, dtype=float)
        self.meta = dict(meta or {})
        self._stack = None

    # inference ----------------------------------------------------------
    def _stacked(self):
        """Stack the five nets into one batched forward pass (shared shapes)."""
        if self._stack is None:
            nets = self.delta_nets + [self.reward_net]
            if len({tuple(n.sizes[:-1]) for n in nets}) != 1:
                self._stack = False
                return self._stack
            layers = []
            for li in range(len(nets[0].weights)):
                width = max(n.weights[li].shape[1] for n in nets)
                W = np.zeros((5, nets[0].weights[li].shape[0], width))
                b = np.zeros((5, 1, width))
                for k, n in enumerate(nets):
                    W[k, :, : n.weights[li].shape[1]] = n.weights[li]
                    b[k, 0, : n.biases[li].shape[0]] = n.biases[li]
                layers.append((W, b))
            self._stack = layers
        return self._stack

    def _raw_outputs(self, Z):
        """Return normalized deltas ``(n, 4)`` and reward-class logits ``(n, 3)``."""
        stack = self._stacked()
        if stack is False:
            deltas = np.column_stack([n(Z)[:, 0] for n in self.delta_nets])
            return deltas, None, self.reward_net(Z)
        h = Z[None]
        for W, b in stack[:-1]:
            h = np.maximum(h @ W + b, 0.0)
        W, b = stack[-1]
        out = h @ W + b
        return out[:4, :, 0].T, out[4, :, :3], None

    def features(self, x, a):
        return (np.column_stack([x, a]) - self.in_mean) / self.in_std

    def step(self, x, failed, action):
        x = np.asarray(x, dtype=float)
        failed = np.asarray(failed, dtype=bool)
        a = np.clip(np.asarray(action, dtype=float), -MAX_FORCE, MAX_FORCE)
        deltas, logits, probs = self._raw_outputs(self.features(x, a))
        cls = np.argmax(logits if probs is None else probs, axis=1)
        nxt = x + deltas * self.out_std + self.out_mean
        nxt = np.where(failed[:, None], x, nxt)
        r = np.where(failed, REWARD_CLASSES[2], REWARD_CLASSES[cls])
        return nxt, failed | (cls == 2), r

    def reward_probs(self, x, a) -> np.ndarray:
        a = np.clip(np.asarray(a, dtype=float), -MAX_FORCE, MAX_FORCE)
        return self.reward_net(self.features(np.atleast_2d(x), np.atleast_1d(a)))

    def predict(self, s: State, a: float):
        """One model step from a single state: returns ``(State, reward)``."""
        x, f, r = self.step(s.as_array()[None], np.array([s.failed]), np.array([float(a)]))
        return State.from_array(x[0], f[0]), float(r[0])

    # persistence ----------------------------------------------------------
    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for net, fname in zip(self.delta_nets, DELTA_FILES):
            save_mlp(net, d / fname)
        save_mlp(self.reward_net, d / REWARD_FILE)
        stats = {
            "in_mean": self.in_mean.tolist(), "in_std": self.in_std.tolist(),
            "out_mean": self.out_mean.tolist(), "out_std": self.out_std.tolist(),
            "meta": self.meta,
        }
        tmp = d / (STATS_FILE + ".tmp")
        tmp.write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n")
        tmp.replace(d / STATS_FILE)

    @classmethod
    def load(cls, directory) -> "WorldModel":
        d = Path(directory)
        stats = json.loads((d / STATS_FILE).read_text())
        return cls([load_mlp(d / f) for f in DELTA_FILES], load_mlp(d / REWARD_FILE),
                   stats["in_mean"], stats["in_std"], stats["out_mean"], stats["out_std"],
                   stats.get("meta"))


def _safe_stats(X, names):
    mean, std = X.mean(axis=0), X.std(axis=0)
    flat = ~(std > 1e-12)
    for k in np.flatnonzero(flat):
        log.warning("feature %s has zero variance; using unit scale", names[k])
    std = np.where(flat, 1.0, std)
    return mean, std


DEFAULT_MODEL_TRAIN = TrainConfig(epochs=300, batch_size=32, lr=0.01, lr_decay=0.5,
                                  decay_every=100, momentum=0.9, patience=40)


def fit(batch: Batch, cfg: TrainConfig | None = None, reward_cfg: TrainConfig | None = None) -> WorldModel:
    """Train the world model on a transition batch.

    Delta regressors learn ``s_next - s`` on transitions whose successor did
    not fail (the clamped failure state is not a physical successor); the
    reward classifier sees every transition. All normalization statistics come
    from the batch.
    """
    cfg = cfg or DEFAULT_MODEL_TRAIN
    reward_cfg = reward_cfg or replace(cfg, loss="xent")
    S, A, S2, R, F = batch.arrays()
    X = np.column_stack([S, A])
    in_mean, in_std = _safe_stats(X, STATE_NAMES + ("action",))
    Z = (X - in_mean) / in_std
    ok = ~F if np.any(~F) else np.ones_like(F)
    D = (S2 - S)[ok]
    out_mean, out_std = _safe_stats(D, [f"delta_{n}" for n in STATE_NAMES])
    Dn = (D - out_mean) / out_std
    delta_nets = []
    for k in range(4):
        net = init_mlp([5, *HIDDEN, 1], seed=cfg.seed * 10 + k)
        net, hist = train(net, Z[ok], Dn[:, k], replace(cfg, seed=cfg.seed * 10 + k, loss="mse"))
        delta_nets.append(net)
    rnet = init_mlp([5, *HIDDEN, 3], ["relu"] * len(HIDDEN) + ["softmax"], seed=cfg.seed * 10 + 4)
    rnet, _ = train(rnet, Z, encode_reward(R), replace(reward_cfg, seed=cfg.seed * 10 + 4, loss="xent"))
    meta = {"n_transitions": len(batch), "batch_seed": batch.seed, "train_seed": cfg.seed}
    return WorldModel(delta_nets, rnet, in_mean, in_std, out_mean, out_std, meta)


def holdout_report(model: WorldModel, batch: Batch) -> dict:
    """Per-variable delta RMSE and reward-class accuracy on a batch."""
    S, A, S2, R, F = batch.arrays()
    nxt, _, r = model.step(S, np.zeros(len(S), bool), A)
    ok = ~F
    rmse = np.sqrt(np.mean((nxt[ok] - S2[ok]) ** 2, axis=0)) if ok.any() else np.full(4, np.nan)
    acc = float(np.mean(np.isclose(r, R)))
    return {"delta_rmse": dict(zip(STATE_NAMES, map(float, rmse))), "reward_accuracy": acc}


# rollouts ------------------------------------------------------------------
def discounted_returns(stepper, act, x0, T: int, gamma: float, failed0=None, trace=None):
    """Discounted sum of ``T`` rewards for every row of ``x0``.

    ``act`` maps stacked observations to actions. ``stepper`` is a
    :class:`WorldModel` or :class:`~cpbrl.dynamics.TrueDynamics`. When
    ``trace`` is a list, ``(x, action, reward)`` arrays are appended per step.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    x = np.array(x0, dtype=float)
    failed = np.zeros(len(x), bool) if failed0 is None else np.array(failed0, dtype=bool)
    ret = np.zeros(len(x))
    disc = 1.0
    for _ in range(T):
        a = np.asarray(act(x), dtype=float)
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("policy produced a non-finite action")
        a = np.clip(a, -MAX_FORCE, MAX_FORCE)
        x_next, failed, r = stepper.step(x, failed, a)
        if trace is not None:
            trace.append((x, a, r))
        ret += disc * r
        disc *= gamma
        x = x_next
    return ret


def policy_returns(stepper, policy, states, T: int = 100, gamma: float = 0.97, trace=None):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if hasattr(policy, "reset"):
        policy.reset(len(states))
    act = policy.act if hasattr(policy, "act") else (lambda x: np.array([policy(o) for o in x]))
    return discounted_returns(stepper, act, states, T, gamma, trace=trace)


@dataclass(frozen=True)
class ValueEstimate:
    value: float
    T: int
    gamma: float


def value_estimate(model, policy, s0, T: int = 100, gamma: float = 0.97) -> ValueEstimate:
    x0 = s0.as_array()[None] if isinstance(s0, State) else np.atleast_2d(s0)
    return ValueEstimate(float(policy_returns(model, policy, x0, T, gamma)[0]), T, gamma)


def avg_return(model, policy, test_states, T: int = 100, gamma: float = 0.97) -> float:
    states = np.atleast_2d(np.asarray(test_states, dtype=float))
    if len(states) == 0:
        raise ValueError("empty test-state set")
    return float(np.mean(policy_returns(model, policy, states, T, gamma)))


def penalty(policy, evaluator, test_states, T: int = 100, gamma: float = 0.97) -> float:
    """Negated average discounted return (lower is better).

    ``evaluator`` is a step-function object, or the string ``"system"`` for
    the true dynamics.
    """
    if isinstance(evaluator, str):
        if evaluator != "system":
            raise ValueError("pass a WorldModel instance to score on the model")
        evaluator = TrueDynamics()
    return -avg_return(evaluator, policy, test_states, T, gamma)


def population_penalties(stepper, act_many, n_candidates: int, test_states, T=100, gamma=0.97):
    """Penalties of ``n_candidates`` policies rolled out together.

    ``act_many(obs)`` receives observations shaped ``(n_candidates, n_states, 4)``
    and returns actions shaped ``(n_candidates, n_states)``.
    """
    S = np.atleast_2d(np.asarray(test_states, dtype=float))
    n = len(S)
    x0 = np.tile(S, (n_candidates, 1))

    def act(x):
        return np.asarray(act_many(x.reshape(n_candidates, n, 4))).reshape(-1)

    ret = discounted_returns(stepper, act, x0, T, gamma)
    return -ret.reshape(n_candidates, n).mean(axis=1)
