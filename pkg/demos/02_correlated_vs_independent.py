"""Context mode vs the independence assumption on cross-correlated data."""

import numpy as np

from gluecard.gluetree import build_tree
from gluecard.inference import Estimator
from gluecard.oracle import ExactOracle, QErrorSummary, gen_synthetic, qerror

cat, data = gen_synthetic({"generator": "correlated", "t_rows": 1000, "s_rows": 2000}, 0)
orc = ExactOracle(cat, data)

rng = np.random.default_rng(1)
queries = []
for _ in range(200):
    lo1, lo2 = rng.integers(0, 20, 2)
    w1, w2 = rng.integers(0, 6, 2)
    queries.append({"tables": ["T", "S"], "predicates": [
        {"col": "T.a0", "op": "range", "lo": int(lo1), "hi": int(lo1 + w1)},
        {"col": "S.b0", "op": "range", "lo": int(lo2), "hi": int(lo2 + w2)}]})
truths = [orc.count(q) for q in queries]

for mode in ("context", "independent"):
    est = Estimator(build_tree(cat, data, config={"mode": mode}))
    errs = [qerror(est.estimate(q).cardinality, t) for q, t in zip(queries, truths)]
    s = QErrorSummary.of(errs).to_doc()
    print(f"{mode:12s} median {s['median']:.3f}  p90 {s['p90']:.3f}  max {s['max']:.3f}")
