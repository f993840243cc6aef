import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gluecard.catalog import load_schema, TableData
from gluecard.correlate import outer_join, partner_counts, rdc_score
from gluecard.oracle import (ExactOracle, OracleError, QErrorSummary, exec_distinct, exec_exact,
                             gen_chain, gen_synthetic, gen_workload, qerror)
from gluecard.regions import parse_query

from conftest import eq, q
from helpers import brute_outer_join, table_rows

Q1 = q(["T", "S"], eq("T.a", 10), eq("S.b", 100))


def test_fixture_counts(fix_a):
    cat, data = fix_a
    assert exec_exact(cat, data, Q1) == 2
    assert exec_exact(cat, data, q(["T", "S"], eq("T.a", 20))) == 2
    assert exec_exact(cat, data, q(["T", "S"])) == 6
    assert exec_exact(cat, data, q(["T"], eq("T.a", 20))) == 2


def test_fixture_distinct(fix_a):
    cat, data = fix_a
    assert exec_distinct(cat, data, q(["T", "S"], eq("S.b", 100))) == 1
    assert exec_distinct(cat, data, q(["T", "S"], {"col": "T.a", "op": "in", "vals": [10, 20]})) == 2
    assert exec_distinct(cat, data, q(["T", "S"], eq("S.b", 999))) == 0
    assert exec_distinct(cat, data, Q1) == 1


def test_qerror():
    assert qerror(2, 2) == 1 and qerror(1, 2) == 2 and qerror(0, 0) == 1 and qerror(8, 2) == 4
    s = QErrorSummary.of([1, 2, 4])
    assert s.median == 2 and s.max == 4


def _small_pair(seed):
    rng = np.random.default_rng(seed)
    nt, ns = int(rng.integers(1, 12)), int(rng.integers(1, 12))
    cat = load_schema({"tables": [
        {"name": "T", "columns": [{"name": "k", "kind": "integer", "min": 0, "max": 9},
                                  {"name": "a", "kind": "integer", "min": 0, "max": 3}]},
        {"name": "S", "columns": [{"name": "k", "kind": "integer", "min": 0, "max": 9},
                                  {"name": "b", "kind": "integer", "min": 0, "max": 3}]}],
        "joins": [{"left": "T.k", "right": "S.k", "kind": "fk_fk"}]})
    data = {}
    for t, n, col in (("T", nt, "a"), ("S", ns, "b")):
        meta = cat.table(t)
        meta.row_count = n
        data[t] = TableData(meta, {"k": rng.integers(0, 6, n), col: rng.integers(0, 4, n)})
    return cat, data


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(0, 3), st.integers(0, 3))
def test_exec_exact_matches_nested_loop(seed, a, b):
    cat, data = _small_pair(seed)
    rows = brute_outer_join(table_rows(data, "T"), table_rows(data, "S"), "T.k", "S.k")
    want = sum(1 for r in rows if r["T.a"] == a and r["S.b"] == b)
    assert exec_exact(cat, data, q(["T", "S"], eq("T.a", a), eq("S.b", b))) == want
    assert exec_exact(cat, data, q(["T", "S"])) == len(rows)
    want_t = sum(1 for r in rows if r["T.a"] == a)
    assert exec_exact(cat, data, q(["T", "S"], eq("T.a", a))) == want_t


def test_join_order_independence():
    cat, data = gen_chain(4, 300, 1)
    orc = ExactOracle(cat, data)
    for qd in gen_workload(cat, data, 20, 4, tables=cat.table_names):
        base = orc.count(qd)
        for order in (["R0", "R1", "R2", "R3"], ["R3", "R2", "R1", "R0"], ["R1", "R2", "R0", "R3"]):
            assert orc.count(qd, order=order) == base


def test_distinct_le_count():
    cat, data = gen_chain(3, 200, 2)
    for qd in gen_workload(cat, data, 30, 5):
        if qd["predicates"]:
            assert exec_distinct(cat, data, qd) <= exec_exact(cat, data, qd)


def test_single_table_is_filtering():
    cat, data = gen_chain(2, 300, 0)
    v = data["R0"].columns["v"]
    assert exec_exact(cat, data, q(["R0"], {"col": "R0.v", "op": "range", "lo": 2, "hi": 5})) == \
        int(((v >= 2) & (v <= 5)).sum())


def test_row_limit(fix_a):
    cat, data = fix_a
    with pytest.raises(OracleError, match="limit"):
        exec_exact(cat, data, q(["T", "S"]), row_limit=5)


def test_generator_guarantees():
    cat, data = gen_synthetic({"generator": "independent", "t_rows": 1000, "s_rows": 2000}, 0)
    w, _, _ = outer_join(data["T"].qualified_columns(), data["S"].qualified_columns(), "T.pk", "S.fk")
    assert rdc_score(w["T.a0"], w["S.b0"]) <= 0.2
    f = partner_counts(data["T"].columns["pk"], data["S"].columns["fk"])
    assert (f == 2).all()
    cat, data = gen_synthetic({"generator": "correlated", "t_rows": 1000, "s_rows": 2000}, 0)
    w, _, _ = outer_join(data["T"].qualified_columns(), data["S"].qualified_columns(), "T.pk", "S.fk")
    ok = ~np.isnan(w["S.b0"]) & ~np.isnan(w["T.a0"])
    assert rdc_score(w["T.a0"][ok], w["S.b0"][ok]) >= 0.9
    cat, data = gen_synthetic({"generator": "fanout_skew", "t_rows": 1000}, 0)
    f = partner_counts(data["T"].columns["pk"], data["S"].columns["fk"])
    assert rdc_score(data["T"].columns["a0"], f) >= 0.9
    with pytest.raises(ValueError):
        gen_synthetic({"generator": "nope"}, 0)
    with pytest.raises(ValueError):
        gen_synthetic({"generator": "independent", "t_rows": 1000, "s_rows": 1500}, 0)


def test_generator_reproducible():
    a = gen_synthetic({"generator": "random", "t_rows": 50, "s_rows": 80}, 3)[1]
    b = gen_synthetic({"generator": "random", "t_rows": 50, "s_rows": 80}, 3)[1]
    for t in a:
        for k in a[t].columns:
            assert (a[t].columns[k] == b[t].columns[k]).all()


def test_workload_properties():
    cat, data = gen_chain(4, 200, 0)
    assert gen_workload(cat, data, 1, 0) == gen_workload(cat, data, 1, 0)
    for qd in gen_workload(cat, data, 50, 1):
        parsed = parse_query(qd, cat)
        assert cat.is_connected(parsed.tables)
        assert 1 <= len(qd["predicates"]) <= 3
        assert not any(p["col"] in cat.key_attributes() for p in qd["predicates"])
    with pytest.raises(ValueError):
        gen_workload(cat, data, 0, 0)
