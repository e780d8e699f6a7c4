"""Typed expression trees stored as prefix-ordered node arrays.

Two function sets are provided. ``ALGEBRAIC`` builds plain equations over the
four state variables; ``FUZZY`` builds Gaussian-membership rule bases whose
root defuzzifies the weighted rule outputs through ``tanh``. Every node has a
type, and genetic operators only exchange subtrees of equal type, so any tree
produced by them is valid by construction.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .dynamics import STATE_NAMES

BIG = 1e12
DIV_EPS = 0.001
WIDTH_FLOOR = 1e-3
TANH_ARG_LIMIT = 18.0


class ParseError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


@dataclass(frozen=True)
class Node:
    name: str
    value: float | None = None
    kind: str | None = None  # constant type, only set for ``const`` nodes

    def __repr__(self):
        if self.name == "const":
            return f"Node(const={self.value!r}, kind={self.kind!r})"
        return f"Node({self.name})"


@dataclass(frozen=True)
class FunctionSet:
    name: str
    root: str
    functions: dict  # name -> (return type, argument types)
    feature_type: str
    const_ranges: dict  # constant type -> (low, high)

    def arity(self, node: Node) -> int:
        f = self.functions.get(node.name)
        return len(f[1]) if f else 0

    def type_of(self, node: Node) -> str:
        if node.name == "const":
            return node.kind
        if node.name in STATE_NAMES:
            return self.feature_type
        return self.functions[node.name][0]

    def functions_returning(self, t):
        return [name for name, (ret, _) in self.functions.items() if ret == t]

    def has_terminal(self, t):
        return t == self.feature_type or t in self.const_ranges

    def min_depths(self) -> dict:
        types = {self.root, self.feature_type, *self.const_ranges}
        for ret, args in self.functions.values():
            types.add(ret)
            types.update(args)
        depth = {t: (1 if self.has_terminal(t) else np.inf) for t in types}
        changed = True
        while changed:
            changed = False
            for ret, args in self.functions.values():
                d = 1 + max(depth[a] for a in args)
                if d < depth[ret]:
                    depth[ret], changed = d, True
        return depth


ALGEBRAIC = FunctionSet(
    name="algebraic",
    root="real",
    functions={
        "add": ("real", ("real", "real")),
        "sub": ("real", ("real", "real")),
        "mul": ("real", ("real", "real")),
        "div": ("real", ("real", "real")),
        "tanh": ("real", ("real",)),
    },
    feature_type="real",
    const_ranges={"real": (-10.0, 10.0)},
)

FUZZY = FunctionSet(
    name="fuzzy",
    root="action",
    functions={
        "defuzz": ("action", ("slope", "rules")),
        "join": ("rules", ("rules", "rules")),
        "rule": ("rules", ("mem", "out")),
        "and": ("mem", ("mem", "mem")),
        "gauss": ("mem", ("feat", "center", "width")),
    },
    feature_type="feat",
    const_ranges={
        "slope": (0.1, 10.0),
        "out": (-1.0, 1.0),
        "center": (-2.4, 2.4),
        "width": (0.01, 3.0),
    },
)

FUNCTION_SETS = {"algebraic": ALGEBRAIC, "fuzzy": FUZZY}
_INFIX = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


def feature(name: str) -> Node:
    if name not in STATE_NAMES:
        raise ValueError(f"unknown state variable {name!r}")
    return Node(name)


def const(value: float, kind: str = "real") -> Node:
    return Node("const", float(value), kind)


def protected_div(x, y):
    """``x / y`` with denominators inside (-0.001, 0.001) pushed out to +-0.001."""
    y = np.asarray(y, dtype=float)
    safe = np.where(np.abs(y) < DIV_EPS, np.where(y < 0, -DIV_EPS, DIV_EPS), y)
    return x / safe


class ExprTree:
    """Immutable prefix-encoded tree over a :class:`FunctionSet`."""

    __slots__ = ("nodes", "fset", "_key")

    def __init__(self, nodes, fset: FunctionSet = ALGEBRAIC, check: bool = True):
        self.nodes = tuple(nodes)
        self.fset = fset
        self._key = None
        if check:
            self.validate()

    # structure ---------------------------------------------------------
    def validate(self):
        if not self.nodes:
            raise ValueError("empty tree")
        end = self._check(0, self.fset.root)
        if end != len(self.nodes):
            raise ValueError(f"trailing nodes after position {end}")

    def _check(self, i, expected):
        if i >= len(self.nodes):
            raise ValueError("tree ends prematurely")
        node = self.nodes[i]
        if node.name not in self.fset.functions and node.name not in STATE_NAMES and node.name != "const":
            raise ValueError(f"unknown primitive {node.name!r}")
        if node.name == "const":
            if node.kind not in self.fset.const_ranges or node.value is None or not np.isfinite(node.value):
                raise ValueError(f"invalid constant {node!r}")
        t = self.fset.type_of(node)
        if t != expected:
            raise ValueError(f"node {i} ({node.name}) has type {t}, expected {expected}")
        j = i + 1
        if node.name in self.fset.functions:
            for arg in self.fset.functions[node.name][1]:
                j = self._check(j, arg)
        return j

    def __len__(self):
        return len(self.nodes)

    @property
    def complexity(self) -> int:
        return len(self.nodes)

    def subtree_end(self, i: int) -> int:
        need, j = 1, i
        while need:
            need += self.fset.arity(self.nodes[j]) - 1
            j += 1
        return j

    def depth(self) -> int:
        best, stack = 0, []
        for node in self.nodes:
            d = stack.pop() if stack else 1
            best = max(best, d)
            stack.extend([d + 1] * self.fset.arity(node))
        return best

    def node_depth(self, i: int) -> int:
        """Depth (root = 1) at which node ``i`` sits."""
        stack, d = [], 1
        for j, node in enumerate(self.nodes):
            d = stack.pop() if stack else 1
            if j == i:
                return d
            stack.extend([d + 1] * self.fset.arity(node))
        raise IndexError(i)

    def node_type(self, i: int) -> str:
        return self.fset.type_of(self.nodes[i])

    def replace(self, i: int, sub) -> "ExprTree":
        sub = sub.nodes if isinstance(sub, ExprTree) else tuple(sub)
        return ExprTree(self.nodes[:i] + sub + self.nodes[self.subtree_end(i):], self.fset, check=False)

    def key(self):
        if self._key is None:
            self._key = (self.fset.name, self.nodes)
        return self._key

    def __eq__(self, other):
        return isinstance(other, ExprTree) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"ExprTree({to_infix(self)!r})"

    def __str__(self):
        return to_infix(self)

    def features_used(self):
        return sorted({n.name for n in self.nodes if n.name in STATE_NAMES}, key=STATE_NAMES.index)

    # evaluation --------------------------------------------------------
    def evaluate(self, X) -> np.ndarray:
        """Evaluate on stacked states ``(n, 4)``; returns a length-``n`` array.

        Algebraic trees return the raw expression value; fuzzy trees return
        the defuzzified output in (-1, 1).
        """
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        val, _ = _eval(self.nodes, 0, X, self.fset)
        val = np.broadcast_to(np.asarray(val, dtype=float), (X.shape[0],)).copy()
        return val[0] if single else val


def _clip(v):
    return np.clip(v, -BIG, BIG)


def _eval(nodes, i, X, fset):
    node = nodes[i]
    name = node.name
    if name == "const":
        return node.value, i + 1
    if name in STATE_NAMES:
        return _clip(X[:, STATE_NAMES.index(name)]), i + 1
    if name == "tanh":
        a, j = _eval(nodes, i + 1, X, fset)
        return np.tanh(a), j
    if name in _INFIX:
        a, j = _eval(nodes, i + 1, X, fset)
        b, j = _eval(nodes, j, X, fset)
        if name == "add":
            return _clip(a + b), j
        if name == "sub":
            return _clip(a - b), j
        if name == "mul":
            return _clip(np.asarray(a) * b), j
        return _clip(protected_div(a, b)), j
    # fuzzy primitives: memberships travel in log space, rule bases as lists
    if name == "gauss":
        x, j = _eval(nodes, i + 1, X, fset)
        c, j = _eval(nodes, j, X, fset)
        w, j = _eval(nodes, j, X, fset)
        w = max(abs(w), WIDTH_FLOOR)
        return -((x - c) ** 2) / (2.0 * w * w), j
    if name == "and":
        a, j = _eval(nodes, i + 1, X, fset)
        b, j = _eval(nodes, j, X, fset)
        return a + b, j
    if name == "rule":
        m, j = _eval(nodes, i + 1, X, fset)
        o, j = _eval(nodes, j, X, fset)
        return [(m, o)], j
    if name == "join":
        a, j = _eval(nodes, i + 1, X, fset)
        b, j = _eval(nodes, j, X, fset)
        return a + b, j
    if name == "defuzz":
        slope, j = _eval(nodes, i + 1, X, fset)
        rules, j = _eval(nodes, j, X, fset)
        logm = np.stack([np.broadcast_to(m, (X.shape[0],)) for m, _ in rules])
        outs = np.array([o for _, o in rules])
        return defuzzify(logm, outs, slope), j
    raise ValueError(f"unknown primitive {name!r}")


def defuzzify(log_memberships, outputs, alpha):
    """``tanh(alpha * sum(m_i o_i) / sum(m_i))`` computed from log-memberships.

    ``log_memberships`` has shape ``(C, n)``. Shifting by the per-column
    maximum cancels in the ratio, so the weighted mean is exact even where
    every membership underflows; there it tends to the output of the rule
    with the largest log-membership.
    """
    L = np.asarray(log_memberships, dtype=float)
    w = np.exp(L - L.max(axis=0, keepdims=True))
    mean = (w * np.asarray(outputs, dtype=float)[:, None]).sum(axis=0) / w.sum(axis=0)
    return np.tanh(np.clip(alpha * mean, -TANH_ARG_LIMIT, TANH_ARG_LIMIT))


# rendering --------------------------------------------------------------
def _fmt(v: float) -> str:
    return repr(float(v))


def to_infix(tree: ExprTree) -> str:
    text, _ = _render(tree.nodes, 0, tree.fset)
    if text.startswith("(") and text.endswith(")") and _balanced_outer(text):
        text = text[1:-1]
    return text


def _balanced_outer(text):
    depth = 0
    for k, ch in enumerate(text):
        depth += ch == "("
        depth -= ch == ")"
        if depth == 0 and k < len(text) - 1:
            return False
    return True


def _render(nodes, i, fset):
    node = nodes[i]
    if node.name == "const":
        return _fmt(node.value), i + 1
    if node.name in STATE_NAMES:
        return node.name, i + 1
    args, j = [], i + 1
    for _ in fset.functions[node.name][1]:
        a, j = _render(nodes, j, fset)
        args.append(a)
    if node.name in _INFIX:
        return f"({args[0]} {_INFIX[node.name]} {args[1]})", j
    return f"{node.name}({', '.join(args)})", j


def describe_fuzzy(tree: ExprTree) -> str:
    """Human-readable IF-THEN listing of a fuzzy tree."""
    if tree.fset is not FUZZY:
        return to_infix(tree)
    slope = tree.nodes[1].value
    lines = [f"action = 10 * tanh({slope:.4g} * weighted mean of rule outputs)"]
    rules = []
    _collect_rules(tree, tree.subtree_end(1), rules)
    for k, (conds, out) in enumerate(rules, 1):
        premise = " AND ".join(f"{f} is N({c:.4g}, {w:.4g})" for f, c, w in conds)
        lines.append(f"R{k}: IF {premise} THEN {out:.4g}")
    return "\n".join(lines)


def _collect_rules(tree, i, out):
    node = tree.nodes[i]
    if node.name == "join":
        j = tree.subtree_end(i + 1)
        _collect_rules(tree, i + 1, out)
        _collect_rules(tree, j, out)
    elif node.name == "rule":
        conds = []
        j = tree.subtree_end(i + 1)
        _collect_mems(tree, i + 1, conds)
        out.append((conds, tree.nodes[j].value))


def _collect_mems(tree, i, conds):
    node = tree.nodes[i]
    if node.name == "and":
        j = tree.subtree_end(i + 1)
        _collect_mems(tree, i + 1, conds)
        _collect_mems(tree, j, conds)
    else:
        f, c, w = tree.nodes[i + 1: i + 4]
        conds.append((f.name, c.value, max(abs(w.value), WIDTH_FLOOR)))


# parsing ----------------------------------------------------------------
_TOKEN = re.compile(r"\s*(?:(?P<num>\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|inf|nan)"
                    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/(),]))")


def tokenize(text):
    tokens, pos = [], 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        start = m.start(m.lastgroup)
        tokens.append((m.lastgroup, m.group(m.lastgroup), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    """Recursive-descent parser producing untyped ASTs ``(name, args)``."""

    def __init__(self, text):
        self.toks = tokenize(text)
        self.k = 0

    def peek(self):
        return self.toks[self.k]

    def take(self, value=None):
        tok = self.toks[self.k]
        if value is not None and tok[1] != value:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise ParseError(f"expected {value!r}, found {what}", tok[2])
        self.k += 1
        return tok

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok[0] != "end":
            raise ParseError(f"unexpected {tok[1]!r}", tok[2])
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-"):
            op = self.take()[1]
            node = ("add" if op == "+" else "sub", [node, self.term()])
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/"):
            op = self.take()[1]
            node = ("mul" if op == "*" else "div", [node, self.unary()])
        return node

    def unary(self):
        tok = self.peek()
        if tok[1] == "+":
            self.take()
            return self.unary()
        if tok[1] == "-":
            self.take()
            inner = self.unary()
            if inner[0] == "num":
                return ("num", -inner[1])
            return ("mul", [("num", -1.0), inner])
        return self.atom()

    def atom(self):
        kind, val, pos = self.take()
        if kind == "num":
            return ("num", float(val))
        if kind == "name":
            if self.peek()[1] == "(":
                self.take("(")
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.take(",")
                    args.append(self.expr())
                self.take(")")
                return (val, args)
            return ("var", val, pos)
        if val == "(":
            node = self.expr()
            self.take(")")
            return node
        what = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {what}", pos)


def parse_tree(text: str, fset: FunctionSet | str | None = None) -> ExprTree:
    """Parse infix / call syntax back into an :class:`ExprTree`.

    The function set is inferred from the root when not given.
    """
    ast = _Parser(text).parse()
    if isinstance(fset, str):
        fset = FUNCTION_SETS[fset]
    if fset is None:
        fset = FUZZY if ast[0] == "defuzz" else ALGEBRAIC
    nodes = []
    _emit(ast, fset.root, fset, nodes)
    return ExprTree(nodes, fset)


def _emit(ast, expected, fset, out):
    tag = ast[0]
    if tag == "num":
        kind = expected if expected in fset.const_ranges else None
        if kind is None:
            raise ParseError(f"constant not allowed where {expected} is expected", 0)
        out.append(const(ast[1], kind))
        return
    if tag == "var":
        if ast[1] not in STATE_NAMES:
            raise ParseError(f"unknown variable {ast[1]!r}", ast[2])
        out.append(Node(ast[1]))
        return
    if tag not in fset.functions:
        raise ParseError(f"unknown function {tag!r}", 0)
    args = fset.functions[tag][1]
    if len(args) != len(ast[1]):
        raise ParseError(f"{tag} takes {len(args)} arguments, got {len(ast[1])}", 0)
    out.append(Node(tag))
    for sub, t in zip(ast[1], args):
        _emit(sub, t, fset, out)
