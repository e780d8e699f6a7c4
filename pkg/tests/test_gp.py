from math import comb

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpbrl import gp
from cpbrl.expr import ALGEBRAIC, FUZZY, ExprTree, parse_tree
from cpbrl.policies import load_policy


def valid(tree):
    ExprTree(tree.nodes, tree.fset, check=True)
    return True


def test_depth_one_is_a_leaf():
    rng = np.random.default_rng(0)
    for _ in range(50):
        t = gp.random_tree(ALGEBRAIC, 1, rng)
        assert len(t) == 1 and t.depth() == 1


@pytest.mark.parametrize("fset,depth", [(ALGEBRAIC, 6), (FUZZY, 7)])
def test_random_trees_valid(fset, depth):
    rng = np.random.default_rng(1)
    for i in range(1000):
        t = gp.random_tree(fset, depth, rng, "full" if i % 2 else "grow")
        assert t.depth() <= depth and valid(t)


def test_function_set_membership():
    assert "gauss" not in ALGEBRAIC.functions and "gauss" in FUZZY.functions
    rng = np.random.default_rng(2)
    names = {n.name for _ in range(200) for n in gp.random_tree(ALGEBRAIC, 5, rng).nodes}
    assert not names & {"gauss", "rule", "defuzz", "and", "join"}
    names = {n.name for _ in range(200) for n in gp.random_tree(FUZZY, 6, rng).nodes}
    assert {"gauss", "rule", "defuzz"} <= names


def population(fits):
    return [gp.Individual(parse_tree(f"theta + {i}"), f) for i, f in enumerate(fits)]


def test_tournament_examples():
    rng = np.random.default_rng(3)
    pop = population([4.0, 2.0, 9.0, 1.5, 7.0])
    assert all(gp.tournament_select(pop, 5, rng) == 3 for _ in range(20))
    pair = population([1.0, 5.0])
    assert all(gp.tournament_select(pair, 2, rng) == 0 for _ in range(20))


def test_tournament_selection_probabilities():
    rng = np.random.default_rng(4)
    pop = population(np.arange(1.0, 11.0))
    counts = np.bincount([gp.tournament_select(pop, 3, rng) for _ in range(10_000)], minlength=10)
    # rank r (0 = best) wins when it is drawn and the other two come from the 9 - r worse ones
    exact = np.array([comb(9 - r, 2) / comb(10, 3) for r in range(10)])
    assert exact.sum() == pytest.approx(1.0)
    assert np.argmax(counts) == 0
    sd = np.sqrt(10_000 * exact * (1 - exact))
    assert np.all(np.abs(counts - 10_000 * exact) <= 4 * sd + 1)


def test_crossover_identical_parents():
    t = parse_tree("(theta * 2) + tanh(rho)")
    for i in range(len(t)):
        assert gp.crossover(t, t, None, cuts=(i, i)) == (t, t)


def test_crossover_at_roots_swaps():
    a, b = parse_tree("theta + 1"), parse_tree("rho * (theta_dot - 3)")
    c1, c2 = gp.crossover(a, b, None, cuts=(0, 0))
    assert c1 == b and c2 == a


@pytest.mark.parametrize("fset,depth", [(ALGEBRAIC, 6), (FUZZY, 7)])
def test_crossover_conserves_nodes(fset, depth):
    rng = np.random.default_rng(5)
    for _ in range(1000):
        a, b = gp.random_tree(fset, depth, rng), gp.random_tree(fset, depth, rng)
        c1, c2 = gp.crossover(a, b, rng, max_depth=depth)
        assert len(c1) + len(c2) == len(a) + len(b)
        assert c1.depth() <= depth and c2.depth() <= depth
        assert valid(c1) and valid(c2)


def test_crossover_type_mismatch_rejected():
    t = gp.random_tree(FUZZY, 5, np.random.default_rng(0))
    with pytest.raises(ValueError):
        gp.crossover(t, t, None, cuts=(0, 1))


def test_mutation_rate_zero_is_identity():
    rng = np.random.default_rng(6)
    t = gp.random_tree(ALGEBRAIC, 5, rng)
    assert gp.mutate(t, rng, rate=0.0) is t


def test_jitter_without_constants():
    t = parse_tree("theta * (rho + theta_dot)")
    assert gp.mutate(t, np.random.default_rng(0), kind="jitter") == t
    c = parse_tree("theta * 2.5")
    j = gp.mutate(c, np.random.default_rng(0), kind="jitter")
    assert [n.name for n in j.nodes] == [n.name for n in c.nodes] and j != c


@pytest.mark.parametrize("fset,depth", [(ALGEBRAIC, 6), (FUZZY, 7)])
def test_mutations_preserve_validity(fset, depth):
    rng = np.random.default_rng(7)
    t = gp.random_tree(fset, depth, rng)
    for i in range(1000):
        t = gp.mutate(t, rng, max_depth=depth, kind=gp.MUTATIONS[i % 3])
        assert t.depth() <= depth and valid(t)


# Pareto archive -----------------------------------------------------------------
def entry(c, f):
    return gp.FrontEntry(c, f, parse_tree("theta"))


def test_pareto_examples():
    front = gp.pareto_insert(gp.ParetoFront(), entry(5, 2.0))
    assert len(front) == 1
    front = gp.pareto_insert(front, entry(5, 1.0))
    assert [(e.complexity, e.fitness) for e in front] == [(5, 1.0)]
    front = gp.pareto_insert(front, entry(9, 2.0))
    assert [(e.complexity, e.fitness) for e in front] == [(5, 1.0)]
    assert not front.insert(entry(3, float("inf")))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 30), st.floats(0, 10)), min_size=1, max_size=40))
def test_front_is_mutually_nondominated(points):
    front = gp.ParetoFront()
    for c, f in points:
        front.insert(entry(c, f))
    es = list(front)
    assert [e.complexity for e in es] == sorted(e.complexity for e in es)
    for a in es:
        assert not any(gp.dominates(b, a) for b in es)
    # every offered point is dominated by, or equal to, something kept
    for c, f in points:
        assert any(e.complexity <= c and e.fitness <= f for e in es)


# evolution ------------------------------------------------------------------------
def test_complexity_fitness_collapses_front():
    cfg = gp.GpConfig(population=30, generations=3, tournament=3, max_depth=5, seed=1)
    res = gp.evolve(lambda t: float(t.complexity), cfg)
    assert [(e.complexity, e.fitness) for e in res.front] == [(1, 1.0)]


def test_history_monotone_and_cache_used():
    calls = []

    def fit(t):
        calls.append(t)
        return float(np.mean((t.evaluate(X) - y) ** 2))

    X = np.random.default_rng(0).uniform(-1, 1, (50, 4))
    y = X[:, 0] - X[:, 3]
    res = gp.evolve(fit, gp.GpConfig(population=40, generations=8, tournament=3, max_depth=5, seed=2))
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))
    assert len(calls) == res.evaluations == len(set(calls))


def test_symbolic_regression_recovers_target():
    X = np.random.default_rng(0).uniform(-1, 1, (100, 4))
    y = 2 * X[:, 0] + X[:, 2]
    cfg = gp.GpConfig(population=200, generations=50, tournament=5, max_depth=6, seed=0)
    res = gp.evolve(None, cfg, batch_fitness=lambda ts: [np.mean((t.evaluate(X) - y) ** 2) for t in ts])
    assert res.best.fitness <= 1e-6


def test_config_validation():
    with pytest.raises(ValueError):
        gp.GpConfig(p_crossover=0.9)
    with pytest.raises(ValueError):
        gp.GpConfig(function_set="fuzzy", max_depth=3)


def test_gprl_front_export(model, states, tmp_path):
    cfg = gp.GpConfig(population=30, generations=2, tournament=3, max_depth=4, seed=3)
    res = gp.gprl(model, states[:20], cfg)
    rows = gp.export_front(res.front, tmp_path, states[:20])
    assert (tmp_path / "front.csv").exists() and len(rows) == len(res.front)
    for r, e in zip(rows, res.front):
        pol = load_policy(tmp_path / r["file"])
        assert pol.tree == e.genome
