"""Typed genetic programming over expression-tree policies.

The engine keeps a generational population with elitism and archives every
evaluated genome in a complexity/penalty Pareto front. GPRL evolves algebraic
equations and FGPRL evolves fuzzy rule bases; both score candidates by their
penalty on the world model.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .dynamics import STATE_NAMES
from .expr import FUNCTION_SETS, ExprTree, FunctionSet, Node, const, feature, to_infix
from .policies import TreePolicy, serialize, to_json
from .surrogate import penalty, population_penalties

log = logging.getLogger(__name__)


@dataclass
class GpConfig:
    population: int = 500
    generations: int = 100
    tournament: int = 5
    p_crossover: float = 0.8
    p_mutation: float = 0.15
    p_reproduction: float = 0.05
    max_depth: int = 8
    init_min_depth: int = 2
    function_set: str = "algebraic"
    p_leaf: float = 0.5
    p_const: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not np.isclose(self.p_crossover + self.p_mutation + self.p_reproduction, 1.0):
            raise ValueError("operator probabilities must sum to 1")
        if self.tournament < 2:
            raise ValueError("tournament size must be >= 2")
        if self.max_depth < 2:
            raise ValueError("max depth must be >= 2")
        if self.function_set not in FUNCTION_SETS:
            raise ValueError(f"unknown function set {self.function_set!r}")
        need = self.fset.min_depths()[self.fset.root]
        if self.max_depth < need:
            raise ValueError(f"the {self.function_set} set needs max depth >= {need}")
        if self.population < self.tournament:
            raise ValueError("population must be at least the tournament size")

    @property
    def fset(self) -> FunctionSet:
        return FUNCTION_SETS[self.function_set]


@dataclass
class Individual:
    genome: ExprTree
    fitness: float | None = None

    @property
    def complexity(self) -> int:
        return self.genome.complexity


# generation -----------------------------------------------------------------
def random_terminal(fset: FunctionSet, t: str, rng, p_const: float = 0.3) -> Node:
    is_feat = t == fset.feature_type
    if t in fset.const_ranges and (not is_feat or rng.random() < p_const):
        lo, hi = fset.const_ranges[t]
        return const(rng.uniform(lo, hi), t)
    if not is_feat:
        raise ValueError(f"type {t!r} has no terminals")
    return feature(STATE_NAMES[rng.integers(len(STATE_NAMES))])


def _grow(fset, t, depth, rng, full, p_leaf, p_const, mind, out):
    funcs = [f for f in fset.functions_returning(t)
             if depth >= 1 + max(mind[a] for a in fset.functions[f][1])]
    leaf_ok = fset.has_terminal(t)
    if not funcs or (leaf_ok and (depth <= 1 or (not full and rng.random() < p_leaf))):
        out.append(random_terminal(fset, t, rng, p_const))
        return
    name = funcs[rng.integers(len(funcs))]
    out.append(Node(name))
    for arg in fset.functions[name][1]:
        _grow(fset, arg, depth - 1, rng, full, p_leaf, p_const, mind, out)


def random_tree(fset: FunctionSet, depth: int, rng, method: str = "grow", t: str | None = None,
                p_leaf: float = 0.5, p_const: float = 0.3) -> ExprTree | list:
    """Random tree of root type ``t`` (default: the set's root) within ``depth``.

    ``method`` is ``"grow"`` (leaves may stop branches early) or ``"full"``
    (branches extend to the depth budget where the types allow). With a
    non-root ``t`` the raw prefix node list is returned.
    """
    if depth < 1:
        raise ValueError("depth budget must be >= 1")
    mind = fset.min_depths()
    t = t or fset.root
    if mind[t] > depth:
        raise ValueError(f"type {t!r} needs depth >= {mind[t]}")
    out = []
    _grow(fset, t, depth, rng, method == "full", p_leaf, p_const, mind, out)
    return ExprTree(out, fset, check=False) if t == fset.root else out


def ramped_half_and_half(fset: FunctionSet, n: int, min_depth: int, max_depth: int, rng, **kw):
    lo = max(min_depth, fset.min_depths()[fset.root])
    depths = range(lo, max_depth + 1)
    trees = []
    for i in range(n):
        d = depths[i % len(depths)]
        trees.append(random_tree(fset, d, rng, "full" if (i // len(depths)) % 2 else "grow", **kw))
    return trees


# selection and variation -----------------------------------------------------
def tournament_select(population, k: int, rng) -> int:
    """Index of the tournament winner among ``k`` members drawn without replacement.

    Lower fitness wins; ties go to lower complexity, then to the earlier index.
    """
    if not population:
        raise ValueError("empty population")
    if not 1 <= k <= len(population):
        raise ValueError("tournament size must lie in [1, population size]")
    idx = rng.choice(len(population), size=k, replace=False)
    return int(min(idx, key=lambda i: (population[i].fitness, population[i].complexity, i)))


def _types(tree: ExprTree):
    return [tree.fset.type_of(n) for n in tree.nodes]


def crossover(a: ExprTree, b: ExprTree, rng, max_depth: int | None = None, cuts=None):
    """Swap type-compatible subtrees of ``a`` and ``b``.

    ``cuts`` fixes the cut positions ``(i, j)``. If either child exceeds
    ``max_depth`` both children are replaced by their parents, which keeps
    the total node count unchanged in every case.
    """
    ta, tb = _types(a), _types(b)
    if cuts is None:
        shared = [i for i, t in enumerate(ta) if t in set(tb)]
        i = shared[rng.integers(len(shared))]
        options = [j for j, t in enumerate(tb) if t == ta[i]]
        j = options[rng.integers(len(options))]
    else:
        i, j = cuts
        if ta[i] != tb[j]:
            raise ValueError(f"cut types differ: {ta[i]} vs {tb[j]}")
    ie, je = a.subtree_end(i), b.subtree_end(j)
    c1 = ExprTree(a.nodes[:i] + b.nodes[j:je] + a.nodes[ie:], a.fset, check=False)
    c2 = ExprTree(b.nodes[:j] + a.nodes[i:ie] + b.nodes[je:], b.fset, check=False)
    if max_depth is not None and (c1.depth() > max_depth or c2.depth() > max_depth):
        return a, b
    return c1, c2


MUTATIONS = ("subtree", "jitter", "leaf")


def mutate(tree: ExprTree, rng, max_depth: int = 8, rate: float = 1.0, kind: str | None = None,
           p_const: float = 0.3, subtree_depth: int = 4) -> ExprTree:
    """Apply one mutation with probability ``rate``.

    ``subtree`` regrows a random subtree of the same type; ``jitter`` adds
    Gaussian noise (sd 10% of the range) to one constant; ``leaf`` replaces one
    terminal by another of the same type.
    """
    if rng.random() >= rate:
        return tree
    fset = tree.fset
    kind = kind or MUTATIONS[rng.integers(len(MUTATIONS))]
    nodes = list(tree.nodes)
    if kind == "jitter":
        consts = [i for i, n in enumerate(nodes) if n.name == "const"]
        if not consts:
            return tree
        i = consts[rng.integers(len(consts))]
        lo, hi = fset.const_ranges[nodes[i].kind]
        v = float(np.clip(nodes[i].value + rng.normal(0.0, 0.1 * (hi - lo)), lo, hi))
        nodes[i] = const(v, nodes[i].kind)
        return ExprTree(nodes, fset, check=False)
    if kind == "leaf":
        leaves = [i for i, n in enumerate(nodes) if fset.arity(n) == 0]
        i = leaves[rng.integers(len(leaves))]
        nodes[i] = random_terminal(fset, fset.type_of(nodes[i]), rng, p_const)
        return ExprTree(nodes, fset, check=False)
    if kind != "subtree":
        raise ValueError(f"unknown mutation {kind!r}")
    mind = fset.min_depths()
    types = _types(tree)
    spots = [i for i, t in enumerate(types) if max_depth - tree.node_depth(i) + 1 >= mind[t]]
    i = spots[rng.integers(len(spots))]
    budget = max(mind[types[i]], min(subtree_depth, max_depth - tree.node_depth(i) + 1))
    sub = random_tree(fset, budget, rng, "grow", t=types[i], p_const=p_const)
    if isinstance(sub, ExprTree):
        sub = list(sub.nodes)
    return ExprTree(nodes[:i] + sub + nodes[tree.subtree_end(i):], fset, check=False)


# Pareto archive -------------------------------------------------------------------
@dataclass(frozen=True)
class FrontEntry:
    complexity: int
    fitness: float
    genome: ExprTree


def dominates(a: FrontEntry, b: FrontEntry) -> bool:
    return (a.complexity <= b.complexity and a.fitness <= b.fitness
            and (a.complexity < b.complexity or a.fitness < b.fitness))


@dataclass
class ParetoFront:
    """Non-dominated (complexity, penalty) archive kept sorted by complexity."""

    entries: list = field(default_factory=list)

    def insert(self, entry: FrontEntry) -> bool:
        if not np.isfinite(entry.fitness):
            return False
        for e in self.entries:
            if dominates(e, entry) or (e.complexity == entry.complexity and e.fitness == entry.fitness):
                return False
        self.entries = [e for e in self.entries if not dominates(entry, e)] + [entry]
        self.entries.sort(key=lambda e: e.complexity)
        return True

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def pareto_insert(front: ParetoFront, entry: FrontEntry) -> ParetoFront:
    out = ParetoFront(list(front.entries))
    out.insert(entry)
    return out


# evolution ------------------------------------------------------------------
@dataclass
class EvolveResult:
    front: ParetoFront
    best: Individual
    history: list  # best fitness per generation (index 0 = initial population)
    evaluations: int


def evolve(fitness: Callable | None, cfg: GpConfig, batch_fitness: Callable | None = None,
           callback: Callable | None = None) -> EvolveResult:
    """Generational GP with elitism of one.

    ``fitness`` maps one tree to a penalty (lower is better); alternatively
    ``batch_fitness`` maps a list of trees to an array of penalties. Results
    are cached per genome, non-finite penalties count as ``inf``, and every
    evaluated genome is offered to the Pareto front.
    """
    if fitness is None and batch_fitness is None:
        raise ValueError("a fitness function is required")
    fset = cfg.fset
    rng = np.random.default_rng(cfg.seed)
    cache: dict = {}
    front = ParetoFront()

    def evaluate(trees):
        todo = []
        for t in trees:
            if t not in cache and t not in todo:
                todo.append(t)
        if todo:
            if batch_fitness is not None:
                vals = np.asarray(batch_fitness(todo), dtype=float)
            else:
                vals = np.array([float(fitness(t)) for t in todo])
            for t, v in zip(todo, vals):
                v = float(v) if np.isfinite(v) else np.inf
                cache[t] = v
                front.insert(FrontEntry(t.complexity, v, t))
        return [Individual(t, cache[t]) for t in trees]

    kw = {"p_leaf": cfg.p_leaf, "p_const": cfg.p_const}
    pop = evaluate(ramped_half_and_half(fset, cfg.population, cfg.init_min_depth, cfg.max_depth, rng, **kw))
    best = min(pop, key=lambda ind: (ind.fitness, ind.complexity))
    history = [best.fitness]
    for gen in range(cfg.generations):
        kids = [best.genome]
        while len(kids) < cfg.population:
            r = rng.random()
            if r < cfg.p_crossover:
                a = pop[tournament_select(pop, cfg.tournament, rng)].genome
                b = pop[tournament_select(pop, cfg.tournament, rng)].genome
                kids.extend(crossover(a, b, rng, cfg.max_depth))
            elif r < cfg.p_crossover + cfg.p_mutation:
                a = pop[tournament_select(pop, cfg.tournament, rng)].genome
                kids.append(mutate(a, rng, cfg.max_depth, p_const=cfg.p_const))
            else:
                kids.append(pop[tournament_select(pop, cfg.tournament, rng)].genome)
        pop = evaluate(kids[:cfg.population])
        gen_best = min(pop, key=lambda ind: (ind.fitness, ind.complexity))
        if (gen_best.fitness, gen_best.complexity) < (best.fitness, best.complexity):
            best = gen_best
        history.append(best.fitness)
        if callback is not None:
            callback(gen + 1, best, front)
    return EvolveResult(front, best, history, len(cache))


# policy search wrappers ---------------------------------------------------------
def tree_actions(trees):
    """``act_many`` for :func:`population_penalties` over a list of trees."""
    policies = [TreePolicy(t) for t in trees]

    def act(obs):
        return np.stack([p.act(o) for p, o in zip(policies, obs)])

    return act


def model_fitness(model, test_states, T: int = 100, gamma: float = 0.97):
    """Batch fitness: model penalty of each tree over the shared test states."""

    def batch(trees):
        return population_penalties(model, tree_actions(trees), len(trees), test_states, T, gamma)

    return batch


def gprl(model, test_states, cfg: GpConfig | None = None, T: int = 100, gamma: float = 0.97, callback=None):
    cfg = cfg or GpConfig()
    return evolve(None, cfg, batch_fitness=model_fitness(model, test_states, T, gamma), callback=callback)


def fgprl(model, test_states, cfg: GpConfig | None = None, T: int = 100, gamma: float = 0.97, callback=None):
    cfg = cfg or GpConfig(function_set="fuzzy")
    if cfg.function_set != "fuzzy":
        raise ValueError("FGPRL needs the fuzzy function set")
    return evolve(None, cfg, batch_fitness=model_fitness(model, test_states, T, gamma), callback=callback)


def export_front(front: ParetoFront, out_dir, test_states, T: int = 100, gamma: float = 0.97, system=True):
    """Write ``front.csv`` and one policy JSON per entry; returns the CSV rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k, e in enumerate(front):
        pol = TreePolicy(e.genome)
        sys_pen = penalty(pol, "system", test_states, T, gamma) if system else float("nan")
        fname = f"front_{k:03d}_c{e.complexity}.json"
        tmp = out / (fname + ".tmp")
        tmp.write_text(json.dumps(to_json(pol), indent=1) + "\n")
        tmp.replace(out / fname)
        rows.append({"complexity": e.complexity, "model_penalty": e.fitness,
                     "system_penalty": sys_pen, "equation": serialize(pol), "file": fname})
    tmp = out / "front.csv.tmp"
    with tmp.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["complexity", "model_penalty", "system_penalty", "equation", "file"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "model_penalty": repr(r["model_penalty"]), "system_penalty": repr(r["system_penalty"])})
    tmp.replace(out / "front.csv")
    return rows


def describe_front(front: ParetoFront) -> str:
    return "\n".join(f"{e.complexity:4d}  {e.fitness:9.4f}  {to_infix(e.genome)}" for e in front)
