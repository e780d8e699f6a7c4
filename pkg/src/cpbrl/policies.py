"""Policy representations for the cart-pole task.

Every policy maps stacked observations ``(n, 4)`` to forces in [-10, 10]
through :meth:`Policy.act`; calling a policy on a single :class:`State` or
4-vector returns a float. Policies whose raw output lives in (-1, 1) (fuzzy
rule bases, fuzzy trees, tanh networks) are scaled by ``MAX_FORCE``.
"""
from __future__ import annotations

import importlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics import DT, MAX_FORCE, STATE_NAMES, State
from .expr import (ALGEBRAIC, FUZZY, WIDTH_FLOOR, ExprTree, ParseError, defuzzify,
                   describe_fuzzy, parse_tree, to_infix)
from .neural import Mlp, forward, mlp_from_dict, mlp_to_dict

FORMAT_VERSION = 1
POLICY_KINDS: dict = {}


def register(cls):
    POLICY_KINDS[cls.kind] = cls
    return cls


def _obs(s) -> np.ndarray:
    if isinstance(s, State):
        return s.as_array()[None]
    x = np.asarray(s, dtype=float)
    return x[None] if x.ndim == 1 else x


class Policy:
    kind = "policy"

    def act(self, obs) -> np.ndarray:
        return np.clip(self.raw(np.asarray(obs, dtype=float)), -MAX_FORCE, MAX_FORCE)

    def raw(self, obs) -> np.ndarray:
        raise NotImplementedError

    def reset(self, n: int) -> None:
        """Clear internal state before a rollout over ``n`` parallel states."""

    def __call__(self, s) -> float:
        return float(self.act(_obs(s))[0])

    def payload(self) -> dict:
        raise NotImplementedError

    @classmethod
    def from_payload(cls, payload: dict) -> "Policy":
        raise NotImplementedError


@register
class ZeroPolicy(Policy):
    kind = "zero"

    def raw(self, obs):
        return np.zeros(len(obs))

    def payload(self):
        return {}

    @classmethod
    def from_payload(cls, payload):
        return cls()

    def __eq__(self, other):
        return isinstance(other, ZeroPolicy)


@register
class LinearPolicy(Policy):
    """``a = gains . (theta, theta_dot, rho, rho_dot)``, clamped to the force range."""

    kind = "linear"

    def __init__(self, gains):
        self.gains = np.asarray(gains, dtype=float).reshape(4)
        if not np.all(np.isfinite(self.gains)):
            raise ValueError("gains must be finite")

    def raw(self, obs):
        return obs @ self.gains

    def payload(self):
        return {"gains": self.gains.tolist()}

    @classmethod
    def from_payload(cls, payload):
        return cls(payload["gains"])

    def __eq__(self, other):
        return isinstance(other, LinearPolicy) and np.array_equal(self.gains, other.gains)

    def __repr__(self):
        return f"LinearPolicy({self.gains.tolist()})"


def eval_linear(p: LinearPolicy, s) -> float:
    return p(s)


@dataclass
class PidChannel:
    kp: float
    ki: float
    kd: float
    window: int = 1

    def __post_init__(self):
        if int(self.window) < 1:
            raise ValueError("integral window must be >= 1 step")
        self.window = int(self.window)
        self.kp, self.ki, self.kd = float(self.kp), float(self.ki), float(self.kd)


@register
class PidPolicy(Policy):
    """Two independent PID loops on the angle and position errors.

    Errors are ``setpoint - measurement``; with the default zero setpoints that
    is ``-theta`` and ``-rho``. The integral is a rectangular sum over the last
    ``window`` past errors times ``dt``, the derivative a backward difference
    over ``dt`` seconds.
    """

    kind = "pid"

    def __init__(self, theta: PidChannel, rho: PidChannel, k_theta=0.95, k_rho=0.05, dt=DT):
        self.channels = (theta, rho)
        self.k_theta = float(k_theta)
        self.k_rho = float(k_rho)
        self.dt = float(dt)
        self._hist = None
        self._prev = None
        self._count = 0

    def reset(self, n: int = 1) -> None:
        self._hist = [np.zeros((n, ch.window)) for ch in self.channels]
        self._prev = None
        self._count = 0

    def eval_errors(self, e_theta, e_rho) -> np.ndarray:
        errs = (np.atleast_1d(np.asarray(e_theta, dtype=float)),
                np.atleast_1d(np.asarray(e_rho, dtype=float)))
        n = len(errs[0])
        if self._hist is None or self._hist[0].shape[0] != n:
            self.reset(n)
        out = np.zeros(n)
        for c, (ch, e, mix) in enumerate(zip(self.channels, errs, (self.k_theta, self.k_rho))):
            integral = ch.ki * self.dt * self._hist[c].sum(axis=1)
            deriv = 0.0 if self._prev is None else ch.kd * (e - self._prev[c]) / self.dt
            out += mix * (ch.kp * e + integral + deriv)
            self._hist[c][:, self._count % ch.window] = e
        self._prev = errs
        self._count += 1
        return np.clip(out, -MAX_FORCE, MAX_FORCE)

    def raw(self, obs):
        return self.eval_errors(-obs[:, 0], -obs[:, 2])

    def payload(self):
        return {
            "theta": vars(self.channels[0]).copy(),
            "rho": vars(self.channels[1]).copy(),
            "k_theta": self.k_theta,
            "k_rho": self.k_rho,
            "dt": self.dt,
        }

    @classmethod
    def from_payload(cls, payload):
        return cls(PidChannel(**payload["theta"]), PidChannel(**payload["rho"]),
                   payload["k_theta"], payload["k_rho"], payload.get("dt", DT))

    def __eq__(self, other):
        return isinstance(other, PidPolicy) and self.payload() == other.payload()


def eval_pid(p: PidPolicy, e_theta: float, e_rho: float) -> float:
    return float(p.eval_errors(e_theta, e_rho)[0])


@dataclass
class FuzzyRule:
    center: np.ndarray
    width: np.ndarray
    output: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(4)
        self.width = np.asarray(self.width, dtype=float).reshape(4)
        self.output = float(self.output)
        if np.any(self.width <= 0):
            raise ValueError("membership widths must be positive")

    def log_membership(self, obs) -> np.ndarray:
        return -np.sum((obs - self.center) ** 2 / (2.0 * self.width ** 2), axis=-1)

    def __eq__(self, other):
        return (isinstance(other, FuzzyRule) and np.array_equal(self.center, other.center)
                and np.array_equal(self.width, other.width) and self.output == other.output)


def membership(rule: FuzzyRule, s) -> float:
    return float(np.exp(rule.log_membership(_obs(s))[0]))


@register
class FuzzyPolicy(Policy):
    """Gaussian rule base defuzzified as ``tanh(alpha * weighted mean output)``."""

    kind = "fuzzy"

    def __init__(self, rules, alpha=1.0):
        self.rules = list(rules)
        if not self.rules:
            raise ValueError("a fuzzy policy needs at least one rule")
        self.alpha = float(alpha)
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")

    def raw_unit(self, obs) -> np.ndarray:
        obs = np.asarray(obs, dtype=float)
        logm = np.stack([r.log_membership(obs) for r in self.rules])
        return defuzzify(logm, [r.output for r in self.rules], self.alpha)

    def raw(self, obs):
        return MAX_FORCE * self.raw_unit(obs)

    def payload(self):
        return {
            "alpha": self.alpha,
            "rules": [{"center": r.center.tolist(), "width": r.width.tolist(), "output": r.output}
                      for r in self.rules],
        }

    @classmethod
    def from_payload(cls, payload):
        return cls([FuzzyRule(r["center"], r["width"], r["output"]) for r in payload["rules"]],
                   payload["alpha"])

    def __eq__(self, other):
        return isinstance(other, FuzzyPolicy) and self.alpha == other.alpha and self.rules == other.rules


def eval_fuzzy(p: FuzzyPolicy, s) -> float:
    return p(s)


def fuzzy_dim(n_rules: int, n_inputs: int = 4) -> int:
    return n_rules * (2 * n_inputs + 1) + 1


def encode_params(p: FuzzyPolicy) -> np.ndarray:
    """Flatten to ``(c_1, sigma_1, o_1, ..., c_C, sigma_C, o_C, alpha)``."""
    parts = [np.concatenate([r.center, r.width, [r.output]]) for r in p.rules]
    return np.concatenate(parts + [[p.alpha]])


def decode_params(x, n_rules: int) -> FuzzyPolicy:
    x = np.asarray(x, dtype=float)
    if x.size != fuzzy_dim(n_rules):
        raise ValueError(f"expected {fuzzy_dim(n_rules)} parameters for {n_rules} rules, got {x.size}")
    rules = []
    for k in range(n_rules):
        block = x[9 * k: 9 * k + 9]
        rules.append(FuzzyRule(block[:4], np.maximum(block[4:8], WIDTH_FLOOR), block[8]))
    return FuzzyPolicy(rules, x[-1])


@register
class TreePolicy(Policy):
    """Policy backed by an :class:`~cpbrl.expr.ExprTree`.

    Algebraic trees give the force directly; fuzzy trees end in a tanh
    defuzzifier and are scaled by ``MAX_FORCE``.
    """

    kind = "tree"

    def __init__(self, tree: ExprTree):
        self.tree = tree

    def raw(self, obs):
        val = self.tree.evaluate(obs)
        return MAX_FORCE * val if self.tree.fset is FUZZY else val

    def payload(self):
        return {"function_set": self.tree.fset.name, "expr": to_infix(self.tree)}

    @classmethod
    def from_payload(cls, payload):
        return cls(parse_tree(payload["expr"], payload["function_set"]))

    def __eq__(self, other):
        return isinstance(other, TreePolicy) and self.tree == other.tree

    def __repr__(self):
        return f"TreePolicy({to_infix(self.tree)!r})"


def eval_tree(t: ExprTree, s) -> float:
    return TreePolicy(t)(s)


@register
class NeuralPolicy(Policy):
    """Feed-forward network policy; the (tanh) output is multiplied by ``scale``."""

    kind = "neural"

    def __init__(self, net: Mlp, scale: float = MAX_FORCE):
        self.net = net
        self.scale = float(scale)

    def raw(self, obs):
        return self.scale * forward(self.net, obs)[:, 0]

    def payload(self):
        return {"net": mlp_to_dict(self.net), "scale": self.scale}

    @classmethod
    def from_payload(cls, payload):
        return cls(mlp_from_dict(payload["net"]), payload.get("scale", MAX_FORCE))

    def __eq__(self, other):
        return isinstance(other, NeuralPolicy) and self.payload() == other.payload()


# serialization ------------------------------------------------------------
# kinds registered by modules that depend on this one
_PLUGIN_KINDS = {"psop": "cpbrl.pso", "nfq": "cpbrl.nfq"}


def to_json(p: Policy) -> dict:
    return {"kind": p.kind, "version": FORMAT_VERSION, "payload": p.payload()}


def from_json(d: dict) -> Policy:
    kind = d.get("kind")
    if kind in _PLUGIN_KINDS and kind not in POLICY_KINDS:
        importlib.import_module(_PLUGIN_KINDS[kind])
    if kind not in POLICY_KINDS:
        raise ValueError(f"unknown policy kind {kind!r}")
    if d.get("version", FORMAT_VERSION) > FORMAT_VERSION:
        raise ValueError(f"policy file version {d['version']} is newer than supported")
    return POLICY_KINDS[kind].from_payload(d["payload"])


def save_policy(p: Policy, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(to_json(p), indent=1) + "\n")
    tmp.replace(path)


def load_policy(path) -> Policy:
    return from_json(json.loads(Path(path).read_text()))


def _num(v: float) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def serialize(p: Policy) -> str:
    """Human-readable text form; :func:`parse` inverts it exactly."""
    if isinstance(p, LinearPolicy):
        text = ""
        for k, (g, name) in enumerate(zip(p.gains, STATE_NAMES)):
            if k == 0:
                text = f"{_num(g)}*{name}"
            elif g < 0 or (g == 0 and np.signbit(g)):
                text += f" - {_num(-g)}*{name}"
            else:
                text += f" + {_num(g)}*{name}"
        return text
    if isinstance(p, FuzzyPolicy):
        lines = [f"FUZZY alpha={p.alpha!r}"]
        for r in p.rules:
            premise = " AND ".join(f"{n}~N({float(c)!r}, {float(w)!r})" for n, c, w in zip(STATE_NAMES, r.center, r.width))
            lines.append(f"IF {premise} THEN {r.output!r}")
        return "\n".join(lines)
    if isinstance(p, TreePolicy):
        return to_infix(p.tree)
    if isinstance(p, PidPolicy):
        th, rh = p.channels
        return (f"PID theta(kp={th.kp!r}, ki={th.ki!r}, kd={th.kd!r}, window={th.window}) "
                f"rho(kp={rh.kp!r}, ki={rh.ki!r}, kd={rh.kd!r}, window={rh.window}) "
                f"mix(theta={p.k_theta!r}, rho={p.k_rho!r}) dt={p.dt!r}")
    if isinstance(p, ZeroPolicy):
        return "0"
    return "JSON " + json.dumps(to_json(p))


_NUM = r"[-+]?(?:\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|inf|nan)"
_LINEAR = re.compile(
    rf"^({_NUM})\*theta ([+-]) ({_NUM})\*theta_dot ([+-]) ({_NUM})\*rho ([+-]) ({_NUM})\*rho_dot$")
_RULE = re.compile(
    r"^IF " + " AND ".join(rf"{n}~N\(({_NUM}), ({_NUM})\)" for n in STATE_NAMES) + rf" THEN ({_NUM})$")
_PID = re.compile(
    rf"^PID theta\(kp=({_NUM}), ki=({_NUM}), kd=({_NUM}), window=(\d+)\) "
    rf"rho\(kp=({_NUM}), ki=({_NUM}), kd=({_NUM}), window=(\d+)\) "
    rf"mix\(theta=({_NUM}), rho=({_NUM})\) dt=({_NUM})$")


def parse(text: str) -> Policy:
    text = text.strip()
    if text.startswith("JSON "):
        return from_json(json.loads(text[5:]))
    if text == "0":
        return ZeroPolicy()
    if text.startswith("FUZZY"):
        lines = text.splitlines()
        m = re.match(rf"^FUZZY alpha=({_NUM})$", lines[0].strip())
        if not m:
            raise ParseError("malformed fuzzy header", 0)
        rules, offset = [], len(lines[0]) + 1
        for line in lines[1:]:
            r = _RULE.match(line.strip())
            if not r:
                raise ParseError("malformed fuzzy rule", offset)
            v = [float(g) for g in r.groups()]
            rules.append(FuzzyRule(v[0:8:2], v[1:8:2], v[8]))
            offset += len(line) + 1
        return FuzzyPolicy(rules, float(m.group(1)))
    if text.startswith("PID"):
        m = _PID.match(text)
        if not m:
            raise ParseError("malformed PID description", 0)
        g = m.groups()
        th = PidChannel(float(g[0]), float(g[1]), float(g[2]), int(g[3]))
        rh = PidChannel(float(g[4]), float(g[5]), float(g[6]), int(g[7]))
        return PidPolicy(th, rh, float(g[8]), float(g[9]), float(g[10]))
    m = _LINEAR.match(text)
    if m:
        g = m.groups()
        gains = [float(g[0])]
        for sign, val in zip(g[1::2], g[2::2]):
            gains.append(float(val) if sign == "+" else -float(val))
        return LinearPolicy(gains)
    return TreePolicy(parse_tree(text))


def describe(p: Policy) -> str:
    """Interpretable rendering for console output."""
    if isinstance(p, TreePolicy) and p.tree.fset is FUZZY:
        return describe_fuzzy(p.tree)
    if isinstance(p, FuzzyPolicy):
        lines = [f"action = 10 * tanh({p.alpha:.4g} * weighted mean of rule outputs)"]
        for k, r in enumerate(p.rules, 1):
            premise = " AND ".join(f"{n} is N({c:.3g}, {w:.3g})" for n, c, w in zip(STATE_NAMES, r.center, r.width))
            lines.append(f"R{k}: IF {premise} THEN {r.output:.3g}")
        return "\n".join(lines)
    if isinstance(p, LinearPolicy):
        return " + ".join(f"{g:.3g}*{n}" for g, n in zip(p.gains, STATE_NAMES)).replace("+ -", "- ")
    if isinstance(p, (TreePolicy, PidPolicy, ZeroPolicy)):
        return serialize(p)
    return f"<{p.kind} policy>"


__all__ = [
    "Policy", "ZeroPolicy", "LinearPolicy", "PidChannel", "PidPolicy", "FuzzyRule", "FuzzyPolicy",
    "TreePolicy", "NeuralPolicy", "eval_linear", "eval_pid", "eval_fuzzy", "eval_tree", "membership",
    "encode_params", "decode_params", "fuzzy_dim", "serialize", "parse", "describe", "to_json",
    "from_json", "save_policy", "load_policy", "register", "POLICY_KINDS", "ALGEBRAIC", "FUZZY",
]
