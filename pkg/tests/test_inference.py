import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gluecard.gluetree import build_tree
from gluecard.inference import (Estimator, SubplanCache, distinct_estimate, estimate,
                                estimate_subplans)
from gluecard.oracle import ExactOracle, gen_chain, gen_synthetic, gen_workload, qerror
from gluecard.regions import Intervals, Query, QueryError, RegularRegion, parse_query

from conftest import eq, q, rng_pred

Q1 = q(["T", "S"], eq("T.a", 10), eq("S.b", 100))


def test_fixture_q1_context(singleton_tree):
    rep = estimate(singleton_tree, Q1, "context")
    assert rep.cardinality == pytest.approx(2.0, abs=1e-12)
    assert rep.probability == pytest.approx(1 / 3)
    assert rep.cardinality == pytest.approx(rep.probability * 6)


def test_fixture_q1_independent(singleton_tree):
    # Pr(Q_T) = 1/2, Pr(Q_S) = 1/3, 6 * 1/6 = 1
    assert estimate(singleton_tree, Q1, "independent").cardinality == pytest.approx(1.0)


def test_unconstrained_is_w(singleton_tree):
    for mode in ("context", "independent"):
        assert estimate(singleton_tree, q(["T", "S"]), mode).cardinality == 6


def test_null_rows_match_one_sided_query(singleton_tree):
    # {a=20}: the two null-extended T rows qualify
    assert estimate(singleton_tree, q(["T", "S"], eq("T.a", 20))).cardinality == pytest.approx(2)
    assert estimate(singleton_tree, q(["T", "S"], eq("S.b", 300))).cardinality == pytest.approx(1)


def test_distinct_fixture(singleton_tree):
    assert distinct_estimate(singleton_tree, q(["T", "S"], eq("S.b", 100)), "context") == 1
    # documented overcount: two T parts hold a=10
    assert distinct_estimate(singleton_tree, Q1, "independent") == 2
    with pytest.raises(QueryError):
        distinct_estimate(singleton_tree, q(["T", "S"]))


def test_single_table_distinct_is_leaf(singleton_tree):
    leaf = singleton_tree.root.left.model
    r = RegularRegion({"T.a": Intervals.of([(0, 15)])})
    assert distinct_estimate(singleton_tree, q(["T"], rng_pred("T.a", 0, 15))) == leaf.distinct(r)


def test_query_errors(singleton_tree):
    with pytest.raises(QueryError):
        estimate(singleton_tree, {"tables": ["T", "X"]})
    bad = Query(frozenset({"T", "Z"}), RegularRegion())
    with pytest.raises(QueryError):
        estimate(singleton_tree, bad)
    with pytest.raises(ValueError):
        Estimator(singleton_tree, "bogus")


@pytest.fixture(scope="module")
def chain():
    cat, data = gen_chain(4, 1500, 7)
    return cat, data, build_tree(cat, data)


def test_pass_through(chain):
    cat, data, tree = chain
    node = tree.root
    left_tables = sorted(node.left.tables)
    qd = gen_workload(cat, data, 1, 3, tables=left_tables)[0]
    query = parse_query(qd, cat)
    got = estimate(tree, qd)
    sub = Estimator(tree)
    p = sub.prob(node.left, frozenset(left_tables), query.region)
    assert got.probability == p
    assert got.cardinality == p * node.left.size(frozenset(left_tables))


def test_normalization_every_subplan(chain):
    cat, data, tree = chain
    orc = ExactOracle(cat, data)
    from gluecard.inference import connected_subplans
    for sub in connected_subplans(cat, cat.table_names):
        assert estimate(tree, q(sorted(sub))).cardinality == orc.count(q(sorted(sub)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_partition_additivity(seed):
    cat, data = gen_synthetic({"generator": "correlated", "t_rows": 400, "s_rows": 900,
                               "t_attrs": 2, "s_attrs": 2}, seed % 5)
    tree = build_tree(cat, data, config={"min_rows": 100})
    rng = np.random.default_rng(seed)
    qd = gen_workload(cat, data, 1, seed, tables=["T", "S"])[0]
    base = parse_query(qd, cat)
    attr = ["T.a0", "T.a1", "S.b0", "S.b1"][int(rng.integers(4))]
    cut = float(rng.integers(1, 19))
    parts = [Intervals.of([(-np.inf, cut - 1)]), Intervals.of([(cut, np.inf)], nulls=True)]
    whole = estimate(tree, base).cardinality
    total = sum(estimate(tree, Query(base.tables, base.region.intersect(RegularRegion({attr: c}))))
                .cardinality for c in parts)
    assert total == pytest.approx(whole, rel=1e-6, abs=1e-9)


def test_monotone_in_region(chain):
    cat, data, tree = chain
    for lo in range(0, 9):
        small = q(["R0", "R1"], rng_pred("R0.v", lo, lo + 1), rng_pred("R1.v", 2, 5))
        big = q(["R0", "R1"], rng_pred("R0.v", lo - 1, lo + 3), rng_pred("R1.v", 1, 7))
        for mode in ("context", "independent"):
            assert estimate(tree, small, mode).cardinality <= estimate(tree, big, mode).cardinality + 1e-9


def test_cache_bit_identical_and_cheaper(chain):
    cat, data, tree = chain
    qd = q(cat.table_names, rng_pred("R0.v", 2, 6), eq("R3.v", 1))
    with_cache, c1 = estimate_subplans(tree, qd)
    without, c2 = estimate_subplans(tree, qd, use_cache=False)
    assert set(with_cache) == set(without)
    for k in with_cache:
        assert with_cache[k].cardinality == without[k].cardinality
    assert c1.leaf_calls < c2.leaf_calls


def test_repeated_query_hits_cache(chain):
    cat, data, tree = chain
    cache = SubplanCache()
    qd = q(["R1", "R2"], rng_pred("R1.v", 0, 3))
    first = estimate(tree, qd, cache=cache)
    second = estimate(tree, qd, cache=cache)
    assert first.leaf_calls > 0 and second.leaf_calls == 0
    assert first.cardinality == second.cardinality


def test_single_table_subplan(singleton_tree):
    reps, cache = estimate_subplans(singleton_tree, q(["T"], eq("T.a", 10)))
    assert list(reps) == [("T",)]
    assert reps[("T",)].cardinality == 2.0
    assert len(cache) == 1


def test_three_table_singleton_exact():
    cat, data = gen_chain(3, 120, 4, domain=4)
    tree = build_tree(cat, data, config={"partitioning": "singleton"})
    orc = ExactOracle(cat, data)
    for qd in gen_workload(cat, data, 60, 1, include_keys=True):
        assert estimate(tree, qd).cardinality == pytest.approx(orc.count(qd), rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("leaf", ["histogram", "spn", "sample"])
def test_other_leaves_and_sampled_stats(leaf):
    cat, data = gen_synthetic({"generator": "independent", "t_rows": 1000, "s_rows": 2000,
                               "t_attrs": 2, "s_attrs": 2}, 1)
    tree = build_tree(cat, data, config={"leaf": leaf, "stats_mode": "sampled", "sample_n": 800})
    orc = ExactOracle(cat, data)
    qs = [qerror(estimate(tree, qd).cardinality, orc.count(qd))
          for qd in gen_workload(cat, data, 60, 2, tables=["T", "S"], ops=("range",))]
    assert np.median(qs) < 1.5
    assert estimate(tree, q(["T", "S"])).cardinality == pytest.approx(2000, rel=0.05)
