"""Cart-pole balancing simulator.

State vectors are ordered ``(theta, theta_dot, rho, rho_dot)``: pole angle,
pole angular velocity, cart position and cart velocity. Most functions here
work on stacked arrays of shape ``(n, 4)`` together with a boolean ``failed``
mask of shape ``(n,)`` so that whole test sets can be rolled out at once; the
scalar :class:`State` API is a thin wrapper over the same code path.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
POLE_HALF_LENGTH = 0.5
DT = 0.025
MAX_FORCE = 10.0

THETA_LIMIT = 0.7
RHO_LIMIT = 2.4
THETA_GOAL = 0.25
RHO_GOAL = 0.5

REWARD_GOAL = 0.0
REWARD_OUTSIDE = -0.1
REWARD_FAIL = -1.0

STATE_NAMES = ("theta", "theta_dot", "rho", "rho_dot")

BATCH_HEADER = [
    "theta", "theta_dot", "rho", "rho_dot", "action",
    "theta_next", "theta_dot_next", "rho_next", "rho_dot_next",
    "reward", "failed_next",
]


class DomainError(ValueError):
    """Raised for non-finite states or otherwise invalid simulator input."""


@dataclass(frozen=True)
class State:
    theta: float = 0.0
    theta_dot: float = 0.0
    rho: float = 0.0
    rho_dot: float = 0.0
    failed: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.theta_dot, self.rho, self.rho_dot], dtype=float)

    @classmethod
    def from_array(cls, x, failed=False) -> "State":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]), float(x[2]), float(x[3]), bool(failed))


@dataclass(frozen=True)
class Transition:
    s: State
    a: float
    s_next: State
    r: float


@dataclass
class Batch:
    """Ordered transitions plus the seed and exploration descriptor that made them."""

    transitions: list
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.transitions:
            raise ValueError("a batch needs at least one transition")

    def __len__(self):
        return len(self.transitions)

    def arrays(self):
        """Return ``(S, A, S_next, R, failed_next)`` as numpy arrays."""
        S = np.array([t.s.as_array() for t in self.transitions])
        A = np.array([t.a for t in self.transitions], dtype=float)
        S2 = np.array([t.s_next.as_array() for t in self.transitions])
        R = np.array([t.r for t in self.transitions], dtype=float)
        F = np.array([t.s_next.failed for t in self.transitions], dtype=bool)
        return S, A, S2, R, F


def _check_finite(x, what="state"):
    if not np.all(np.isfinite(x)):
        raise DomainError(f"non-finite {what}: {x!r}")


def derivatives(x: np.ndarray, force: np.ndarray) -> np.ndarray:
    """Time derivative of stacked states under the given forces (frictionless)."""
    theta, theta_dot, _, rho_dot = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    total_mass = CART_MASS + POLE_MASS
    ml = POLE_MASS * POLE_HALF_LENGTH
    sin, cos = np.sin(theta), np.cos(theta)
    temp = (force + ml * theta_dot ** 2 * sin) / total_mass
    theta_acc = (GRAVITY * sin - cos * temp) / (
        POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos ** 2 / total_mass))
    rho_acc = temp - ml * theta_acc * cos / total_mass
    return np.stack([theta_dot, theta_acc, rho_dot, rho_acc], axis=-1)


def integrate(x: np.ndarray, force: np.ndarray, dt: float = DT) -> np.ndarray:
    """One classical Runge-Kutta step of the unconstrained equations of motion."""
    k1 = derivatives(x, force)
    k2 = derivatives(x + 0.5 * dt * k1, force)
    k3 = derivatives(x + 0.5 * dt * k2, force)
    k4 = derivatives(x + dt * k3, force)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_array(x: np.ndarray, failed: np.ndarray, action: np.ndarray, dt: float = DT):
    """Advance stacked states by one control interval.

    Returns ``(x_next, failed_next)``. Failed rows are returned unchanged; rows
    that leave the admissible region are clamped to the violated bound with
    zero velocities and flagged as failed.
    """
    if dt <= 0:
        raise DomainError("dt must be positive")
    x = np.asarray(x, dtype=float)
    failed = np.asarray(failed, dtype=bool)
    action = np.asarray(action, dtype=float)
    _check_finite(x)
    _check_finite(action, "action")
    force = np.clip(action, -MAX_FORCE, MAX_FORCE)
    nxt = integrate(x, force, dt)
    out = np.abs(nxt[..., 0]) > THETA_LIMIT
    out |= np.abs(nxt[..., 2]) > RHO_LIMIT
    if np.any(out):
        nxt[..., 0] = np.where(out, np.clip(nxt[..., 0], -THETA_LIMIT, THETA_LIMIT), nxt[..., 0])
        nxt[..., 2] = np.where(out, np.clip(nxt[..., 2], -RHO_LIMIT, RHO_LIMIT), nxt[..., 2])
        nxt[..., 1] = np.where(out, 0.0, nxt[..., 1])
        nxt[..., 3] = np.where(out, 0.0, nxt[..., 3])
    nxt = np.where(failed[..., None], x, nxt)
    return nxt, failed | out


def reward_array(x: np.ndarray, failed: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    _check_finite(x)
    th, rh = np.abs(x[..., 0]), np.abs(x[..., 2])
    r = np.full(th.shape, REWARD_OUTSIDE)
    r = np.where((th < THETA_GOAL) & (rh < RHO_GOAL), REWARD_GOAL, r)
    fail = np.asarray(failed, dtype=bool) | (th > THETA_LIMIT) | (rh > RHO_LIMIT)
    return np.where(fail, REWARD_FAIL, r)


def step(s: State, a: float, dt: float = DT) -> State:
    if s.failed:
        _check_finite(s.as_array())
        return s
    x, f = step_array(s.as_array()[None], np.array([False]), np.array([float(a)]), dt)
    return State.from_array(x[0], f[0])


def reward(s_next: State) -> float:
    return float(reward_array(s_next.as_array()[None], np.array([s_next.failed]))[0])


class TrueDynamics:
    """Step-function adapter over the simulator, shared with the learned model.

    ``step(x, failed, action)`` returns ``(x_next, failed_next, reward)``.
    """

    name = "system"

    def __init__(self, dt: float = DT):
        self.dt = dt

    def step(self, x, failed, action):
        nxt, f = step_array(x, failed, action, self.dt)
        return nxt, f, reward_array(nxt, f)


def policy_actions(policy, obs: np.ndarray) -> np.ndarray:
    """Evaluate a policy on stacked observations; accepts plain callables too."""
    if hasattr(policy, "act"):
        return np.asarray(policy.act(obs), dtype=float)
    return np.array([float(policy(o)) for o in obs])


def run_episode(policy, s0: State, T: int, dt: float = DT) -> list:
    """Roll out ``policy`` on the simulator for exactly ``T`` transitions."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if hasattr(policy, "reset"):
        policy.reset(1)
    traj = []
    s = s0
    for _ in range(T):
        a = float(np.clip(policy_actions(policy, s.as_array()[None])[0], -MAX_FORCE, MAX_FORCE))
        s_next = step(s, a, dt)
        traj.append(Transition(s, a, s_next, reward(s_next)))
        s = s_next
    return traj


RESTART_LOW = np.array([-0.3, -0.5, -1.0, -0.5])
RESTART_HIGH = np.array([0.3, 0.5, 1.0, 0.5])


def gen_batch(n: int, seed: int = 0, explore=None, episode_cap: int = 200,
              dt: float = DT) -> Batch:
    """Collect ``n`` transitions with an exploration policy.

    ``explore`` defaults to a uniformly random force resampled every step. A
    custom ``explore(obs, rng)`` callable may be passed instead. Episodes are
    restarted after a failure or after ``episode_cap`` steps.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    transitions = []
    s, t = None, 0
    while len(transitions) < n:
        if s is None or s.failed or t >= episode_cap:
            s = State.from_array(rng.uniform(RESTART_LOW, RESTART_HIGH))
            t = 0
        if explore is None:
            a = float(rng.uniform(-MAX_FORCE, MAX_FORCE))
        else:
            a = float(np.clip(explore(s.as_array(), rng), -MAX_FORCE, MAX_FORCE))
        s_next = step(s, a, dt)
        transitions.append(Transition(s, a, s_next, reward(s_next)))
        s, t = s_next, t + 1
    meta = {
        "explore": "uniform[-10,10]" if explore is None else getattr(explore, "__name__", "custom"),
        "episode_cap": episode_cap,
        "restart_low": RESTART_LOW.tolist(),
        "restart_high": RESTART_HIGH.tolist(),
        "dt": dt,
        "limits": {"theta": THETA_LIMIT, "rho": RHO_LIMIT},
    }
    return Batch(transitions, seed=seed, meta=meta)


def save_batch(batch: Batch, path) -> None:
    """Write the batch CSV plus a ``.json`` sidecar next to it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BATCH_HEADER)
        for t in batch.transitions:
            row = [repr(float(v)) for v in t.s.as_array()] + [repr(float(t.a))]
            row += [repr(float(v)) for v in t.s_next.as_array()]
            row += [repr(float(t.r)), "1" if t.s_next.failed else "0"]
            w.writerow(row)
    tmp.replace(path)
    side = {"seed": batch.seed, "n": len(batch), **batch.meta}
    sidecar = path.with_suffix(".json")
    tmp = sidecar.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")
    tmp.replace(sidecar)


def load_batch(path) -> Batch:
    path = Path(path)
    transitions = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != BATCH_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            s = State(*(float(row[k]) for k in BATCH_HEADER[:4]))
            s2 = State(*(float(row[k]) for k in BATCH_HEADER[5:9]),
                       failed=row["failed_next"] == "1")
            transitions.append(Transition(s, float(row["action"]), s2, float(row["reward"])))
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return Batch(transitions, seed=meta.pop("seed", None), meta=meta)


TEST_STATE_LOW = np.array([-0.3, -0.5, -1.5, -0.5])
TEST_STATE_HIGH = np.array([0.3, 0.5, 1.5, 0.5])
TEST_STATE_SEED = 20200710
TEST_STATE_FILE = Path(__file__).with_name("data") / "test_states.csv"


def make_test_states(n: int = 100, seed: int = TEST_STATE_SEED) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(TEST_STATE_LOW, TEST_STATE_HIGH, size=(n, 4))


def save_states(states, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATE_NAMES)
        for x in np.asarray(states):
            w.writerow([repr(float(v)) for v in x])


def load_states(path=None) -> np.ndarray:
    """Load a test-state CSV; defaults to the shared 100-state set."""
    path = TEST_STATE_FILE if path is None else Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != STATE_NAMES:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [[float(v) for v in r] for r in reader if r]
    return np.array(rows, dtype=float)


def mechanical_energy(x: np.ndarray) -> np.ndarray:
    """Total energy of the frictionless cart-pole, potential measured at the pivot."""
    theta, theta_dot, _, rho_dot = x[..., 0], x[..., 1], x[..., 2], x[..., 3]
    m, M, l = POLE_MASS, CART_MASS, POLE_HALF_LENGTH
    kinetic = (0.5 * (M + m) * rho_dot ** 2 + m * l * rho_dot * theta_dot * np.cos(theta)
               + 0.5 * (4.0 / 3.0) * m * l ** 2 * theta_dot ** 2)
    return kinetic + m * GRAVITY * l * np.cos(theta)


def is_balanced(x: np.ndarray, failed: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    return (~np.asarray(failed)) & (np.abs(x[..., 0]) < THETA_GOAL) & (np.abs(x[..., 2]) < RHO_GOAL)

