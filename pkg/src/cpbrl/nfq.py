"""Neural fitted Q iteration over a small discrete action set.

Every iteration regresses a fresh network onto Bellman targets computed from
the previous Q-function over the whole batch. Checkpoints are kept so that a
policy can be selected afterwards by its penalty on the world model. A dense
table backend runs the identical loop on toy MDPs and serves as an exact
oracle.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dynamics import MAX_FORCE, Batch
from .neural import Mlp, TrainConfig, forward, init_mlp, mlp_from_dict, mlp_to_dict, train
from .policies import Policy, register
from .surrogate import population_penalties

log = logging.getLogger(__name__)

DEFAULT_ACTIONS = (-10.0, 0.0, 10.0)


def tie_break_order(actions) -> np.ndarray:
    """Action indices ordered by preference among equal values: smaller |a|, then list order."""
    actions = np.asarray(actions, dtype=float)
    return np.array(sorted(range(len(actions)), key=lambda i: (abs(actions[i]), i)))


def greedy_index(values, actions) -> np.ndarray:
    """Row-wise argmax of ``values`` ``(n, n_actions)`` with the tie-break rule."""
    order = tie_break_order(actions)
    return order[np.argmax(np.asarray(values)[:, order], axis=1)]


@dataclass
class QFunction:
    """``q(s, a)`` as a network over normalized state and ``a / 10``."""

    net: Mlp
    actions: tuple = DEFAULT_ACTIONS
    in_mean: np.ndarray = field(default_factory=lambda: np.zeros(4))
    in_std: np.ndarray = field(default_factory=lambda: np.ones(4))
    out_mean: float = 0.0
    out_std: float = 1.0

    def __post_init__(self):
        self.actions = tuple(float(a) for a in self.actions)
        if not self.actions:
            raise ValueError("the action set must not be empty")
        if any(abs(a) > MAX_FORCE for a in self.actions):
            raise ValueError("actions must lie in [-10, 10]")
        self.in_mean = np.asarray(self.in_mean, dtype=float)
        self.in_std = np.asarray(self.in_std, dtype=float)

    def inputs(self, S, A) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        A = np.broadcast_to(np.asarray(A, dtype=float), (len(S),))
        return np.column_stack([(S - self.in_mean) / self.in_std, A / MAX_FORCE])

    def q(self, S, A) -> np.ndarray:
        return forward(self.net, self.inputs(S, A))[:, 0] * self.out_std + self.out_mean

    def values(self, S) -> np.ndarray:
        S = np.atleast_2d(np.asarray(S, dtype=float))
        X = np.concatenate([self.inputs(S, a) for a in self.actions])
        v = forward(self.net, X)[:, 0] * self.out_std + self.out_mean
        return v.reshape(len(self.actions), len(S)).T

    def max_values(self, S) -> np.ndarray:
        return self.values(S).max(axis=1)

    def to_dict(self) -> dict:
        return {"net": mlp_to_dict(self.net), "actions": list(self.actions),
                "in_mean": self.in_mean.tolist(), "in_std": self.in_std.tolist(),
                "out_mean": self.out_mean, "out_std": self.out_std}

    @classmethod
    def from_dict(cls, d) -> "QFunction":
        return cls(mlp_from_dict(d["net"]), tuple(d["actions"]), np.array(d["in_mean"]),
                   np.array(d["in_std"]), d["out_mean"], d["out_std"])


@dataclass
class TabularQ:
    """Dense ``(n_states, n_actions)`` table; states and actions are indices."""

    table: np.ndarray
    actions: tuple | None = None

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=float)
        if not np.all(np.isfinite(self.table)):
            raise ValueError("table entries must be finite")
        if self.actions is None:
            self.actions = tuple(float(i) for i in range(self.table.shape[1]))

    def values(self, S) -> np.ndarray:
        return self.table[np.asarray(S, dtype=int)]

    def max_values(self, S) -> np.ndarray:
        return self.values(S).max(axis=1)


def bellman_targets(q, batch, gamma: float) -> np.ndarray:
    """``r + gamma * max_a q(s', a)``; transitions into a failed state use ``r``.

    ``batch`` is a :class:`Batch` or a tuple ``(S, A, S2, R, F)``; the
    returned targets line up with its transitions.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    S, A, S2, R, F = batch.arrays() if isinstance(batch, Batch) else batch
    R = np.asarray(R, dtype=float)
    F = np.asarray(F, dtype=bool)
    if q is None or gamma == 0.0:
        return R.copy()
    boot = np.zeros(len(R))
    live = ~F
    if live.any():
        boot[live] = q.max_values(np.asarray(S2)[live])
    return R + gamma * boot


@dataclass
class FqiConfig:
    iterations: int = 20
    gamma: float = 0.97
    actions: tuple = DEFAULT_ACTIONS
    hidden: tuple = (20, 20)
    warm_start: bool = False
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=60, batch_size=64, lr=0.01,
                                                                  decay_every=30, patience=15))
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def fit_tabular(S, A, targets, shape) -> TabularQ:
    """Least-squares table fit: the mean target of each visited (s, a) cell."""
    S, A = np.asarray(S, dtype=int), np.asarray(A, dtype=int)
    total = np.zeros(shape)
    count = np.zeros(shape)
    np.add.at(total, (S, A), targets)
    np.add.at(count, (S, A), 1)
    return TabularQ(np.divide(total, count, out=np.zeros(shape), where=count > 0))


def fqi_tabular(transitions, n_states: int, n_actions: int, iterations: int, gamma: float):
    """Fitted Q iteration with the table backend; ``transitions`` is ``(S, A, S2, R, F)``
    with integer states and action indices. Returns ``(q_last, checkpoints)``."""
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    S, A, S2, R, F = transitions
    q, checkpoints = None, []
    for _ in range(iterations):
        y = bellman_targets(q, (S, A, S2, R, F), gamma)
        q = fit_tabular(S, A, y, (n_states, n_actions))
        checkpoints.append(q)
    return q, checkpoints


def fqi_run(batch: Batch, cfg: FqiConfig | None = None, callback=None):
    """Neural fitted Q iteration. Returns ``(q_last, checkpoints)``."""
    cfg = cfg or FqiConfig()
    S, A, S2, R, F = batch.arrays()
    in_mean, in_std = S.mean(axis=0), S.std(axis=0)
    in_std = np.where(in_std > 1e-12, in_std, 1.0)
    sizes = [5, *cfg.hidden, 1]
    q, checkpoints = None, []
    for k in range(cfg.iterations):
        y = bellman_targets(q, (S, A, S2, R, F), cfg.gamma)
        out_mean, out_std = float(y.mean()), float(y.std())
        out_std = out_std if out_std > 1e-12 else 1.0
        if cfg.warm_start and q is not None:
            net = q.net
        else:
            net = init_mlp(sizes, seed=cfg.seed * 1000 + k)
        shell = QFunction(net, cfg.actions, in_mean, in_std, out_mean, out_std)
        try:
            net, _ = train(net, shell.inputs(S, A), (y - out_mean) / out_std,
                           replace(cfg.train, seed=cfg.seed * 1000 + k, loss="mse"))
        except FloatingPointError as exc:
            raise FloatingPointError(f"FQI iteration {k}: {exc}") from exc
        q = QFunction(net, cfg.actions, in_mean, in_std, out_mean, out_std)
        checkpoints.append(q)
        if callback is not None:
            callback(k, q)
    return q, checkpoints


@register
class GreedyPolicy(Policy):
    """Greedy action of a Q-function over its discrete action set."""

    kind = "nfq"

    def __init__(self, q: QFunction):
        self.q = q
        self._actions = np.asarray(q.actions)

    def raw(self, obs):
        return self._actions[greedy_index(self.q.values(obs), self._actions)]

    def payload(self):
        return {"q": self.q.to_dict()}

    @classmethod
    def from_payload(cls, payload):
        return cls(QFunction.from_dict(payload["q"]))

    def __eq__(self, other):
        return isinstance(other, GreedyPolicy) and self.payload() == other.payload()


def greedy_policy(q: QFunction) -> GreedyPolicy:
    return GreedyPolicy(q)


@dataclass
class Selection:
    selected: GreedyPolicy
    last: GreedyPolicy
    selected_index: int
    penalties: list  # surrogate penalty per checkpoint

    def report(self) -> dict:
        return {"selected_index": self.selected_index, "last_index": len(self.penalties) - 1,
                "penalties": [float(p) for p in self.penalties]}

    def save_report(self, path) -> None:
        path = Path(path)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text(json.dumps(self.report(), indent=1) + "\n")
        tmp.replace(path)


def select_policy(checkpoints, model, test_states, T: int = 100, gamma: float = 0.97) -> Selection:
    """Pick the checkpoint whose greedy policy has the lowest model penalty."""
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    policies = [GreedyPolicy(q) for q in checkpoints]

    def act_many(obs):
        return np.stack([p.act(o) for p, o in zip(policies, obs)])

    pens = population_penalties(model, act_many, len(policies), test_states, T, gamma)
    best = int(np.argmin(pens))
    return Selection(policies[best], policies[-1], best, list(pens))
