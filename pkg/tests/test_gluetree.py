import io

import numpy as np
import pytest

from gluecard import fileformat, gluetree
from gluecard.catalog import load_schema
from gluecard.correlate import partner_counts
from gluecard.gluetree import (CostParams, TreeError, build_tree, check_update, check_valid,
                               divide_cross, divide_fanout, optimal_shape,
                               restricted_fanout_matrix, shape_cost)
from gluecard.inference import estimate
from gluecard.oracle import ExactOracle, gen_chain, gen_schema, gen_synthetic, gen_workload
from gluecard.regions import Partition

from helpers import valid_trees


def metas(cat):
    return {f"{t.name}.{a.name}": a for t in cat.tables for a in t.attributes}


def test_divide_fanout_uniform_is_single_part():
    cat, data = gen_synthetic({"generator": "independent", "t_rows": 1000, "s_rows": 1000}, 0)
    cols = data["T"].qualified_columns()
    fan = partner_counts(cols["T.pk"], data["S"].qualified_columns()["S.fk"])
    part, e, null = divide_fanout(cols, fan, ["T.a0"], metas(cat))
    assert len(part) == 1 and e.tolist() == [1.0] and null.tolist() == [0.0]


def test_divide_fanout_scaled_fixture():
    # a in {10, 20}; rows with a = 10 have two partners, the rest one
    n = 1000
    a = np.repeat([10, 20], n // 2)
    pk = np.arange(n)
    fk = np.concatenate([np.repeat(pk[a == 10], 2), pk[a == 20]])
    cat = load_schema({"tables": [
        {"name": "T", "columns": [{"name": "pk", "kind": "integer", "min": 0, "max": n},
                                  {"name": "a", "kind": "integer", "min": 0, "max": 100}]},
        {"name": "S", "columns": [{"name": "fk", "kind": "integer", "min": 0, "max": n}]}],
        "joins": [{"left": "T.pk", "right": "S.fk"}]})
    cols = {"T.pk": pk.astype(float), "T.a": a.astype(float)}
    part, e, null = divide_fanout(cols, partner_counts(pk, fk), ["T.a"], metas(cat))
    assert len(part) == 2
    assert part.tree[1] == "T.a"
    assert e.tolist() == [2.0, 1.0] and null.tolist() == [0.0, 0.0]
    one, e1, _ = divide_fanout(cols, partner_counts(pk, fk), ["T.a"], metas(cat), max_parts=1)
    assert len(one) == 1 and e1[0] == pytest.approx(1.5)
    assert one.meta[0]["capped"] == "max_parts"


def _joined(gen):
    cat, data = gen_synthetic({"generator": gen, "t_rows": 1000, "s_rows": 2000}, 0)
    from gluecard.correlate import outer_join
    w, _, _ = outer_join(data["T"].qualified_columns(), data["S"].qualified_columns(), "T.pk", "S.fk")
    return cat, w


def test_divide_cross_independent_single_part():
    cat, w = _joined("independent")
    part = divide_cross(w, ["S.b0"], ["T.a0"], metas(cat))
    assert len(part) == 1


def test_divide_cross_deterministic_splits_b():
    cat, w = _joined("correlated")
    part = divide_cross(w, ["S.b0"], ["T.a0"], metas(cat))
    assert len(part) >= 2
    assert part.tree[1] == "S.b0"
    assert len(divide_cross(w, ["S.b0"], ["T.a0"], metas(cat), max_parts=1)) == 1


def test_refinement_stops_below_tau_or_capped():
    cat, w = _joined("correlated")
    part = divide_cross(w, ["S.b0"], ["T.a0"], metas(cat), tau=0.3)
    for m in part.meta:
        assert m["score"] <= 0.3 or m["capped"] in ("max_parts", "min_rows", "unsplittable")


def test_restricted_fanout_matrix_fixture(fix_a, singleton_tree):
    st = singleton_tree.root.full
    _, data = fix_a
    T, S = data["T"].qualified_columns(), data["S"].qualified_columns()
    k1 = st.t_part.locate({"T.pk": 1, "T.a": 10})
    k3 = st.t_part.locate({"T.pk": 3, "T.a": 20})
    i1 = st.contexts.locate({"S.fk": 1, "S.b": 100})
    assert st.M[k1, i1] == 2
    assert st.M[k3].sum() == 0 and st.null_mass[k3] == 1
    single = Partition.single(["S.fk", "S.b"])
    M, null = restricted_fanout_matrix(T, S, "T.pk", "S.fk", st.t_part, single)
    f = partner_counts(T["T.pk"], S["S.fk"])
    for k in range(4):
        assert M[st.t_part.locate({"T.pk": T["T.pk"][k], "T.a": T["T.a"][k]}), 0] == f[k]


def test_node_statistics_invariants():
    cat, data = gen_synthetic({"generator": "fanout_skew", "t_rows": 800, "s_rows": 0}, 2)
    tree = build_tree(cat, data)
    orc = ExactOracle(cat, data)
    for node in tree.inner_nodes():
        for (el, er), st in node.variants.items():
            assert (st.e_T >= 1).all() and (st.e_S >= 1).all()
            np.testing.assert_allclose(st.M.sum(axis=1) + st.null_mass, st.e_T)
            assert st.w_size == orc.count({"tables": list(el + er)})
            assert st.w_size == pytest.approx(st.t_size * (st.t_frac @ st.e_T)
                                              + st.s_size * st.dang_S.sum())


def test_every_variant_size_matches_oracle_on_chain():
    cat, data = gen_chain(4, 600, 3)
    tree = build_tree(cat, data)
    orc = ExactOracle(cat, data)
    for node in tree.inner_nodes():
        for (el, er), st in node.variants.items():
            assert st.w_size == orc.count({"tables": list(el + er)})


def test_two_table_cost():
    cat, data = gen_synthetic({"generator": "correlated", "t_rows": 300, "s_rows": 600}, 1)
    cost = CostParams(alpha=1, beta=1, gamma=1)
    total, shape = optimal_shape(cat, ["T", "S"], lambda l, r: 0.4, cost)
    # g is linear in the attribute count (2 per table, exact leaves)
    assert total == pytest.approx(1 + 0.4 + 0.4 + 2 + 2)
    assert set(shape) == {"T", "S"}


def _chain3():
    return load_schema({"tables": [
        {"name": n, "columns": [{"name": "id", "kind": "integer", "min": 0, "max": 9},
                                {"name": "r", "kind": "integer", "min": 0, "max": 9}]}
        for n in "ABC"],
        "joins": [{"left": "A.id", "right": "B.r"}, {"left": "B.id", "right": "C.r"}]})


def _scores(ab, bc):
    def s(left, right):
        pair = frozenset(left) | frozenset(right)
        edge_ab = ("A" in left and "B" in right) or ("B" in left and "A" in right)
        return ab if edge_ab else bc
    return s


def test_three_chain_tie_and_strict_case():
    cat = _chain3()
    cost = CostParams(alpha=0, beta=1, gamma=1, g_table={"histogram": "linear"})
    kind = lambda t: "histogram"
    s = _scores(0.9, 0.1)
    c_c = shape_cost(cat, (("A", "B"), "C"), s, cost, kind)
    c_a = shape_cost(cat, ("A", ("B", "C")), s, cost, kind)
    # the hand evaluation is an exact tie; the smallest left bitmask ({A}) wins it
    assert c_c == pytest.approx(c_a) and c_c == pytest.approx(1.91 + 6)
    total, shape = optimal_shape(cat, "ABC", s, cost, kind)
    assert total == pytest.approx(c_a) and shape[0] == "A"
    s = _scores(0.9, 0.2)
    total, shape = optimal_shape(cat, "ABC", s, cost, kind)
    assert shape[1] == "C"
    assert total == pytest.approx(2.04 + 6)
    assert shape_cost(cat, ("A", ("B", "C")), s, cost, kind) == pytest.approx(2.11 + 6)


@pytest.mark.parametrize("n_tables, seed", [(4, 0), (4, 1), (5, 2), (5, 3)])
def test_dp_matches_exhaustive(n_tables, seed):
    cat, data = gen_schema(n_tables, 200, seed)
    rng = np.random.default_rng(seed)
    table = {}

    def s(left, right):
        key = frozenset([frozenset(left), frozenset(right)])
        if key not in table:
            table[key] = float(rng.random())
        return table[key]

    cost = CostParams(alpha=0.5, beta=1, gamma=2)
    total, _ = optimal_shape(cat, cat.table_names, s, cost)
    best = min(shape_cost(cat, t, s, cost) for t in valid_trees(cat, cat.table_names))
    assert total == pytest.approx(best, rel=0, abs=1e-12)


def test_build_rejects_disconnected_and_cyclic():
    cat, data = gen_chain(3, 100, 0)
    with pytest.raises(TreeError, match="disconnected"):
        build_tree(cat, data, join_set=["R0", "R2"])
    from gluecard.catalog import JoinEdge
    cat.edges.append(JoinEdge(("R0", "id"), ("R2", "id"), "fk_fk"))
    with pytest.raises(TreeError, match="cyclic"):
        build_tree(cat, data)


def test_tree_validity(singleton_tree):
    assert check_valid(singleton_tree)
    singleton_tree.root.left, singleton_tree.root.right = singleton_tree.root.left, singleton_tree.root.left
    with pytest.raises(TreeError):
        check_valid(singleton_tree)


def test_cost_params_validation():
    with pytest.raises(ValueError):
        CostParams(alpha=0, beta=0, gamma=0)
    with pytest.raises(ValueError):
        CostParams(alpha=-1)


def test_check_update():
    cat, data = gen_synthetic({"generator": "independent", "t_rows": 1000, "s_rows": 2000}, 0)
    tree = build_tree(cat, data)
    assert check_update(tree, data) == []
    _, fresh = gen_synthetic({"generator": "correlated", "t_rows": 1000, "s_rows": 2000}, 0)
    stale = check_update(tree, fresh)
    st = tree.root.full
    flagged = {(s.partition, s.part) for s in stale}
    assert {("contexts", i) for i in range(len(st.contexts))} <= flagged
    assert {("t_part", k) for k in range(len(st.t_part))} <= flagged
    assert check_update(tree, fresh, tau=1.0) == []
    stale2, fixed = check_update(tree, fresh, resplit=True)
    assert len(fixed.root.full.contexts) > len(st.contexts)
    assert fixed.root.full.w_size == ExactOracle(cat, fresh).count({"tables": ["T", "S"]})


def test_save_load_round_trip(singleton_tree, fix_a):
    cat, data = fix_a
    buf = io.BytesIO()
    blob = gluetree.save(singleton_tree, buf)
    again = gluetree.load(buf.getvalue())
    for qd in gen_workload(cat, data, 50, 0, include_keys=True):
        assert estimate(again, qd).cardinality == estimate(singleton_tree, qd).cardinality
    with pytest.raises(fileformat.ChecksumError):
        gluetree.load(blob[:-7])
    bumped = bytearray(blob)
    bumped[len(fileformat.MAGIC) + 1] += 1
    with pytest.raises(fileformat.VersionError):
        gluetree.load(bytes(bumped))
    with pytest.raises(fileformat.FormatError):
        gluetree.load(b"not a model file at all, no magic here" * 2)


def test_inspect_dump_is_json(singleton_tree):
    import json
    doc = json.loads(gluetree.dump_text(singleton_tree))
    assert doc["root"]["w_size"] == 6
    assert doc["root"]["left"]["table"] == "T"
