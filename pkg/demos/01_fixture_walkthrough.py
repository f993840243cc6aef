"""Walk through the two-table fixture: fanouts, |W|, and a few estimates."""

from gluecard.correlate import compute_fanout
from gluecard.gluetree import build_tree, dump_text
from gluecard.inference import distinct_estimate, estimate
from gluecard.oracle import ExactOracle, fixture_a

cat, data = fixture_a()
edge = cat.edges[0]
print("fanout T->S raw    ", compute_fanout(data["T"], data["S"], edge).raw.tolist())
print("fanout T->S clamped", compute_fanout(data["T"], data["S"], edge).clamped.tolist())

tree = build_tree(cat, data, config={"partitioning": "singleton"})
print(dump_text(tree))
print("|W| =", tree.root.full.w_size)

orc = ExactOracle(cat, data)
queries = [
    {"tables": ["T", "S"], "predicates": [{"col": "T.a", "op": "eq", "val": 10},
                                          {"col": "S.b", "op": "eq", "val": 100}]},
    {"tables": ["T", "S"], "predicates": [{"col": "S.b", "op": "range", "lo": 100, "hi": 200}]},
    {"tables": ["T"], "predicates": [{"col": "T.a", "op": "eq", "val": 20}]},
]
for qd in queries:
    ctx = estimate(tree, qd, "context").cardinality
    ind = estimate(tree, qd, "independent").cardinality
    print(f"context {ctx:6.3f}  independent {ind:6.3f}  true {orc.count(qd)}")

qd = queries[0]
print("distinct: context", distinct_estimate(tree, qd, "context"),
      "independent", distinct_estimate(tree, qd, "independent"), "true", orc.distinct(qd))
