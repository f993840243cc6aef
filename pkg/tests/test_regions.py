import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gluecard.regions import (FULL, CodeSet, Intervals, Partition, QueryError, RegionError,
                              RegularRegion, parse_query)
from gluecard.leafmodels import split_constraints

from conftest import eq, q, rng_pred

spans = st.lists(st.tuples(st.integers(-20, 20), st.integers(0, 8)).map(lambda t: (t[0], t[0] + t[1])),
                 max_size=4)


@given(spans, spans)
def test_interval_intersection_matches_pointwise(a, b):
    ia, ib = Intervals.of(a), Intervals.of(b)
    both = ia.intersect(ib)
    for v in np.arange(-25, 35, 0.5):
        assert both.contains(v) == (ia.contains(v) and ib.contains(v))


@given(spans, spans)
def test_intersection_commutes(a, b):
    assert Intervals.of(a).intersect(Intervals.of(b)) == Intervals.of(b).intersect(Intervals.of(a))


def test_nulls_only_match_flagged_constraints():
    vals = np.array([1.0, np.nan])
    assert Intervals.of([(0, 2)]).mask(vals).tolist() == [True, False]
    assert Intervals.of([(0, 2)], nulls=True).mask(vals).tolist() == [True, True]
    assert CodeSet.of([1], nulls=True).intersect(CodeSet.of([1])).nulls is False


def test_kind_mismatch():
    with pytest.raises(RegionError):
        Intervals.of([(0, 1)]).intersect(CodeSet.of([0]))


def test_region_is_canonical_and_hashable():
    a = RegularRegion({"T.a": Intervals.point(1), "S.b": CodeSet.of([2])})
    b = RegularRegion({"S.b": CodeSet.of([2]), "T.a": Intervals.point(1)})
    assert a == b and hash(a) == hash(b) and a.key == b.key
    assert RegularRegion.from_doc(a.to_doc()) == a


def test_region_mask_rejects_unknown_attr():
    r = RegularRegion({"T.a": Intervals.point(1)})
    with pytest.raises(RegionError):
        r.mask({"T.b": np.zeros(3)})


def test_empty_region():
    r = RegularRegion({"T.a": Intervals.of([(0, 1)])}).intersect(
        RegularRegion({"T.a": Intervals.of([(3, 4)])}))
    assert r.is_empty()
    assert not FULL.is_empty() and FULL.is_full


def test_infinite_bounds_round_trip():
    r = RegularRegion({"T.a": Intervals.of([(-math.inf, 3)])})
    assert RegularRegion.from_doc(r.to_doc()) == r


def test_parse_query_fixture(fix_a):
    cat, _ = fix_a
    query = parse_query(q(["T", "S"], eq("T.a", 10), rng_pred("S.b", 50, 150)), cat)
    assert query.tables == frozenset({"T", "S"})
    assert query.region.get("S.b").spans == ((50.0, 150.0),)


@pytest.mark.parametrize("doc, msg", [
    ({"tables": ["T"], "predicates": [{"col": "S.b", "op": "eq", "val": 1}]}, "outside"),
    ({"tables": ["X"]}, "unknown table"),
    ({"tables": ["T"], "predicates": [{"col": "T.zz", "op": "eq", "val": 1}]}, "unknown attribute"),
    ({"tables": ["T"], "or": []}, "disjunction"),
    ("{broken", "malformed"),
])
def test_parse_query_errors(fix_a, doc, msg):
    cat, _ = fix_a
    with pytest.raises(QueryError, match=msg):
        parse_query(doc, cat)


def test_range_on_categorical_rejected():
    from gluecard.catalog import load_schema
    cat = load_schema({"tables": [{"name": "T", "columns": [
        {"name": "c", "kind": "categorical", "values": ["x", "y"]}]}]})
    with pytest.raises(QueryError, match="categorical"):
        parse_query({"tables": ["T"], "predicates": [{"col": "T.c", "op": "range", "lo": 0}]}, cat)
    got = parse_query({"tables": ["T"], "predicates": [{"col": "T.c", "op": "in", "vals": ["y"]}]}, cat)
    assert got.region.get("T.c").codes == frozenset({1})


def _random_partition(values, depth, seed):
    from gluecard.catalog import AttributeMeta
    meta = {"x": AttributeMeta("x", "integer", 0, 100), "y": AttributeMeta("y", "integer", 0, 100)}
    rng = np.random.default_rng(seed)
    counter = [0]

    def grow(idx, d):
        if d == 0 or len(idx) < 2:
            counter[0] += 1
            return ("leaf", counter[0] - 1)
        a = "xy"[int(rng.integers(2))]
        sp = split_constraints(meta[a], values[a][idx], rng)
        if sp is None:
            counter[0] += 1
            return ("leaf", counter[0] - 1)
        m = sp[0].mask(values[a][idx])
        return ("split", a, sp[0], sp[1], grow(idx[m], d - 1), grow(idx[~m], d - 1))

    return Partition.from_tree(("x", "y"), grow(np.arange(len(values["x"])), depth))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_partition_assign_is_a_disjoint_cover(seed, depth):
    rng = np.random.default_rng(seed)
    vals = {"x": rng.integers(0, 100, 200).astype(float), "y": rng.integers(0, 100, 200).astype(float)}
    vals["y"][rng.random(200) < 0.1] = np.nan   # null-extended rows still land in one part
    part = _random_partition(vals, depth, seed)
    ids = part.assign(vals)
    assert (ids >= 0).all()
    masks = np.array([p.mask(vals) for p in part.parts])
    assert (masks.sum(axis=0) == 1).all()
    assert (masks.argmax(axis=0) == ids).all()
    for i in range(0, 200, 17):
        assert part.locate({"x": vals["x"][i], "y": None if np.isnan(vals["y"][i]) else vals["y"][i]}) == ids[i]
    again = Partition.from_doc(part.to_doc())
    assert (again.assign(vals) == ids).all()
