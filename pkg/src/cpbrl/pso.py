"""Particle swarm optimization and the three swarm-based policy trainers.

``optimize`` maximizes a score over a box with a global-best swarm. On top of
it sit the receding-horizon planner (PSO-P), neural policy training (PSONN)
and fuzzy rule training (FPSRL). Scores are returns, so larger is better;
penalties are reported as their negation.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dynamics import MAX_FORCE, Batch
from .expr import TANH_ARG_LIMIT, WIDTH_FLOOR
from .neural import init_mlp, set_flat
from .policies import NeuralPolicy, Policy, decode_params, fuzzy_dim, register
from .surrogate import discounted_returns, population_penalties

log = logging.getLogger(__name__)


@dataclass
class SwarmConfig:
    particles: int = 30
    iterations: int = 100
    w: float = 0.729
    c1: float = 1.49445
    c2: float = 1.49445
    vclamp: float = 0.2
    low: object = -1.0
    high: object = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.particles < 2:
            raise ValueError("swarm size must be >= 2")
        if self.iterations < 0:
            raise ValueError("iteration budget must be >= 0")

    def box(self, dim: int):
        low = np.broadcast_to(np.asarray(self.low, dtype=float), (dim,)).copy()
        high = np.broadcast_to(np.asarray(self.high, dtype=float), (dim,)).copy()
        if np.any(low >= high):
            raise ValueError("every lower bound must be below its upper bound")
        return low, high


class OptimizeResult(NamedTuple):
    x: np.ndarray
    score: float
    history: list


def reflect(x, v, low, high):
    """Reflect positions that left the box back inside and flip their velocity."""
    over, under = x > high, x < low
    x = np.where(over, 2 * high - x, np.where(under, 2 * low - x, x))
    v = np.where(over | under, -v, v)
    return np.clip(x, low, high), v


def _finite_scores(s):
    s = np.asarray(s, dtype=float)
    return np.where(np.isfinite(s), s, -np.inf)


def optimize_many(objective, cfg: SwarmConfig, dim: int, n_problems: int = 1, init=None, callback=None):
    """Run ``n_problems`` independent swarms in lock step.

    ``objective`` maps positions shaped ``(n_problems, particles, dim)`` to
    scores shaped ``(n_problems, particles)``. ``init`` optionally fixes the
    first particles of each swarm, shaped ``(n_problems, k, dim)``. Each
    particle draws from its own random stream spawned from ``cfg.seed``.
    Returns best positions ``(n_problems, dim)``, best scores and the
    per-iteration best-score history ``(iterations + 1, n_problems)``.
    """
    low, high = cfg.box(dim)
    P = cfg.particles
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(P)]

    def draw(shape):
        return np.stack([g.random((n_problems,) + shape) for g in streams], axis=1)

    x = low + draw((dim,)) * (high - low)
    vmax = cfg.vclamp * (high - low)
    v = (2 * draw((dim,)) - 1) * vmax
    if init is not None:
        init = np.asarray(init, dtype=float).reshape(n_problems, -1, dim)
        k = min(init.shape[1], P)
        x[:, :k] = np.clip(init[:, :k], low, high)
    score = _finite_scores(objective(x))
    pbest, pscore = x.copy(), score.copy()
    g = np.argmax(pscore, axis=1)
    rows = np.arange(n_problems)
    gbest, gscore = pbest[rows, g].copy(), pscore[rows, g].copy()
    history = [gscore.copy()]
    for it in range(cfg.iterations):
        r1, r2 = draw((dim,)), draw((dim,))
        v = cfg.w * v + cfg.c1 * r1 * (pbest - x) + cfg.c2 * r2 * (gbest[:, None] - x)
        v = np.clip(v, -vmax, vmax)
        x, v = reflect(x + v, v, low, high)
        score = _finite_scores(objective(x))
        better = score > pscore
        pbest[better], pscore[better] = x[better], score[better]
        g = np.argmax(pscore, axis=1)
        improved = pscore[rows, g] > gscore
        gbest[improved] = pbest[rows, g][improved]
        gscore[improved] = pscore[rows, g][improved]
        history.append(gscore.copy())
        if callback is not None:
            callback(it + 1, gbest, gscore)
    return gbest, gscore, np.array(history)


def optimize(objective, cfg: SwarmConfig, dim: int | None = None, init=None, batch: bool = False) -> OptimizeResult:
    """Maximize ``objective`` over the box of ``cfg``.

    With ``batch=False`` the objective takes one position vector; with
    ``batch=True`` it takes the whole swarm ``(particles, dim)`` and returns
    one score per particle. Non-finite scores count as ``-inf``.
    """
    if dim is None:
        dim = np.broadcast(np.asarray(cfg.low), np.asarray(cfg.high)).size
    if batch:
        obj = lambda X: objective(X[0])[None, :]
    else:
        obj = lambda X: np.array([[_call_scalar(objective, xi) for xi in X[0]]])
    init3 = None if init is None else np.asarray(init, dtype=float).reshape(1, -1, dim)
    best, score, hist = optimize_many(obj, cfg, dim, 1, init3)
    return OptimizeResult(best[0], float(score[0]), [float(h) for h in hist[:, 0]])


def _call_scalar(f, x):
    try:
        return float(f(x))
    except (FloatingPointError, OverflowError, ZeroDivisionError):
        return -np.inf


def write_history(history, path) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "best_score"])
        for i, s in enumerate(history):
            w.writerow([i, repr(float(s))])
    tmp.replace(path)


# PSO-P ------------------------------------------------------------------------
@dataclass
class PlannerConfig:
    horizon: int = 50
    gamma: float = 0.97
    swarm: SwarmConfig = field(default_factory=lambda: SwarmConfig(particles=16, iterations=15,
                                                                   low=-MAX_FORCE, high=MAX_FORCE))


def sequence_returns(model, states, sequences, gamma):
    """Discounted open-loop returns; ``sequences`` is ``(n_states, k, T)``."""
    B, K, T = sequences.shape
    x0 = np.repeat(np.asarray(states, dtype=float), K, axis=0)
    seq = sequences.reshape(B * K, T)
    t = [0]

    def act(_):
        a = seq[:, t[0]]
        t[0] += 1
        return a

    return discounted_returns(model, act, x0, T, gamma).reshape(B, K)


def plan_many(model, states, cfg: PlannerConfig, warm=None):
    """Best open-loop action sequences for each row of ``states``."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    T = cfg.horizon
    if T < 1:
        raise ValueError("planning horizon must be >= 1")
    swarm = cfg.swarm
    swarm = SwarmConfig(**{**vars(swarm), "low": -MAX_FORCE, "high": MAX_FORCE})
    init = np.zeros((len(states), 1, T))
    if warm is not None:
        init = np.concatenate([init, np.asarray(warm, dtype=float).reshape(len(states), -1, T)], axis=1)
    best, score, _ = optimize_many(lambda X: sequence_returns(model, states, X, cfg.gamma),
                                   swarm, T, len(states), init)
    return best, score


def plan(model, s, T: int = 10, gamma: float = 0.97, cfg: PlannerConfig | None = None) -> np.ndarray:
    cfg = cfg or PlannerConfig()
    cfg = PlannerConfig(T, gamma, cfg.swarm)
    x = s.as_array() if hasattr(s, "as_array") else np.asarray(s, dtype=float)
    best, _ = plan_many(model, x[None], cfg)
    return best[0]


@register
class PsoPlanner(Policy):
    """Receding-horizon policy: plan on the model, apply the first action.

    The previous plan shifted by one step seeds the next swarm. Each call
    re-seeds the swarm from ``swarm.seed`` plus the call count so a rollout
    is reproducible.
    """

    kind = "psop"

    def __init__(self, model, cfg: PlannerConfig | None = None, model_path=None):
        self.model = model
        self.cfg = cfg or PlannerConfig()
        self.model_path = None if model_path is None else str(model_path)
        self._warm = None
        self._calls = 0

    def reset(self, n: int = 1) -> None:
        self._warm = None
        self._calls = 0

    def raw(self, obs):
        obs = np.atleast_2d(obs)
        warm = self._warm if self._warm is not None and len(self._warm) == len(obs) else None
        swarm = SwarmConfig(**{**vars(self.cfg.swarm), "seed": self.cfg.swarm.seed + self._calls})
        best, _ = plan_many(self.model, obs, PlannerConfig(self.cfg.horizon, self.cfg.gamma, swarm), warm)
        self._warm = np.concatenate([best[:, 1:], np.zeros((len(obs), 1))], axis=1)
        self._calls += 1
        return best[:, 0]

    def payload(self):
        s = vars(self.cfg.swarm)
        return {"model": self.model_path, "horizon": self.cfg.horizon, "gamma": self.cfg.gamma,
                "swarm": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in s.items()}}

    @classmethod
    def from_payload(cls, payload):
        from .surrogate import WorldModel

        if not payload.get("model"):
            raise ValueError("a stored planner needs the path of its world model")
        cfg = PlannerConfig(payload["horizon"], payload["gamma"], SwarmConfig(**payload["swarm"]))
        return cls(WorldModel.load(payload["model"]), cfg, payload["model"])


# PSONN ------------------------------------------------------------------------
@dataclass
class PsonnConfig:
    hidden: tuple = (8,)
    weight_bound: float = 3.0
    T: int = 100
    gamma: float = 0.97
    swarm: SwarmConfig = field(default_factory=lambda: SwarmConfig(particles=30, iterations=100))


def _layer_shapes(sizes):
    return [(a, b) for a, b in zip(sizes[:-1], sizes[1:])]


def batched_tanh_net(flat, sizes):
    """Evaluate a tanh network for every parameter row of ``flat``.

    Returns ``act(obs)`` mapping ``(n, m, in)`` to ``(n, m)`` scaled forces,
    with the same flat layout as :func:`cpbrl.neural.get_flat`.
    """
    flat = np.asarray(flat, dtype=float)
    n = len(flat)
    layers, k = [], 0
    for a, b in _layer_shapes(sizes):
        W = flat[:, k:k + a * b].reshape(n, a, b)
        k += a * b
        layers.append((W, flat[:, k:k + b][:, None, :]))
        k += b

    def act(obs):
        h = obs
        for W, b in layers:
            h = np.tanh(h @ W + b)
        return MAX_FORCE * h[..., 0]

    return act


def train_psonn(model, test_states, cfg: PsonnConfig | None = None):
    """Swarm search over the flat weights of a fixed tanh network.

    The zero weight vector (the do-nothing policy) is one of the initial
    particles, so the result never scores below zero action on the model.
    Returns ``(NeuralPolicy, OptimizeResult)``.
    """
    cfg = cfg or PsonnConfig()
    sizes = [4, *cfg.hidden, 1]
    template = init_mlp(sizes, ["tanh"] * (len(sizes) - 1))
    dim = template.n_params
    swarm = SwarmConfig(**{**vars(cfg.swarm), "low": -cfg.weight_bound, "high": cfg.weight_bound})

    def objective(X):
        return -population_penalties(model, batched_tanh_net(X, sizes), len(X), test_states, cfg.T, cfg.gamma)

    res = optimize(objective, swarm, dim, init=np.zeros((1, dim)), batch=True)
    net = set_flat(template, res.x)
    return NeuralPolicy(net), res


# FPSRL ------------------------------------------------------------------------
@dataclass
class FpsrlConfig:
    rules: int = 2
    alpha_bounds: tuple = (0.1, 10.0)
    T: int = 100
    gamma: float = 0.97
    swarm: SwarmConfig = field(default_factory=lambda: SwarmConfig(particles=30, iterations=100))


def fuzzy_bounds(states, n_rules: int, alpha_bounds=(0.1, 10.0)):
    """Search box for the fuzzy parameter vector from the range of ``states``."""
    lo, hi = states.min(axis=0), states.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    rule_lo = np.concatenate([lo, np.full(4, WIDTH_FLOOR), [-1.0]])
    rule_hi = np.concatenate([hi, span, [1.0]])
    low = np.concatenate([np.tile(rule_lo, n_rules), [alpha_bounds[0]]])
    high = np.concatenate([np.tile(rule_hi, n_rules), [alpha_bounds[1]]])
    return low, high


def batched_fuzzy(flat, n_rules: int):
    """Evaluate fuzzy policies for every parameter row; see :func:`batched_tanh_net`."""
    flat = np.asarray(flat, dtype=float)
    n = len(flat)
    blocks = flat[:, :-1].reshape(n, n_rules, 9)
    c = blocks[:, :, :4][:, None]
    s = np.maximum(blocks[:, :, 4:8], WIDTH_FLOOR)[:, None]
    o = blocks[:, :, 8][:, None]
    alpha = flat[:, -1][:, None]

    def act(obs):
        L = -np.sum((obs[:, :, None, :] - c) ** 2 / (2.0 * s ** 2), axis=-1)
        wts = np.exp(L - L.max(axis=-1, keepdims=True))
        mean = (wts * o).sum(axis=-1) / wts.sum(axis=-1)
        return MAX_FORCE * np.tanh(np.clip(alpha * mean, -TANH_ARG_LIMIT, TANH_ARG_LIMIT))

    return act


def fuzzy_seed_particles(batch_states, n_rules, n_particles, low, high, rng):
    """Initial particles: rule centers drawn from batch states, plus one
    zero-output particle (all outputs 0) that reproduces the do-nothing policy."""
    dim = len(low)
    X = low + rng.random((n_particles, dim)) * (high - low)
    for k in range(n_rules):
        idx = rng.integers(0, len(batch_states), n_particles)
        X[:, 9 * k: 9 * k + 4] = batch_states[idx]
    zero = 0.5 * (low + high)
    for k in range(n_rules):
        zero[9 * k: 9 * k + 4] = batch_states.mean(axis=0)
        zero[9 * k + 8] = 0.0
    zero[-1] = 1.0
    X[0] = zero
    return X


def train_fpsrl(model, test_states, batch: Batch | np.ndarray, cfg: FpsrlConfig | None = None):
    """Swarm search over ``9C + 1`` fuzzy parameters. Returns ``(FuzzyPolicy, OptimizeResult)``."""
    cfg = cfg or FpsrlConfig()
    if cfg.rules < 1:
        raise ValueError("at least one rule is required")
    states = batch.arrays()[0] if isinstance(batch, Batch) else np.asarray(batch, dtype=float)
    low, high = fuzzy_bounds(states, cfg.rules, cfg.alpha_bounds)
    swarm = SwarmConfig(**{**vars(cfg.swarm), "low": low, "high": high})
    rng = np.random.default_rng(cfg.swarm.seed)
    init = fuzzy_seed_particles(states, cfg.rules, swarm.particles, low, high, rng)

    def objective(X):
        return -population_penalties(model, batched_fuzzy(X, cfg.rules), len(X), test_states, cfg.T, cfg.gamma)

    res = optimize(objective, swarm, fuzzy_dim(cfg.rules), init=init, batch=True)
    return decode_params(res.x, cfg.rules), res
