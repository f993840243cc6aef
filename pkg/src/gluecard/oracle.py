"""Ground truth: exact outer-join counting, distinct counts, q-error, generators.

The exact executor is written against pandas and shares no join code with the
estimator, only the query representation.
"""

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np
import pandas as pd

from .catalog import TableData, ingest_table, load_schema
from .regions import Query, parse_query

ROW_LIMIT = 10 ** 7


class OracleError(RuntimeError):
    pass


def _frame(data, table):
    return pd.DataFrame(data[table].qualified_columns())


def _outer(left, right, lk, rk, row_limit):
    """Full outer equi-join; null keys never match anything."""
    lnull, rnull = left[lk].isna(), right[rk].isna()
    lc = left.loc[~lnull, lk].value_counts()
    rc = right.loc[~rnull, rk].value_counts()
    both = lc.index.intersection(rc.index)
    size = int((lc[both] * rc[both]).sum()) + int(lc.drop(both).sum()) \
        + int(rc.drop(both).sum()) + int(lnull.sum()) + int(rnull.sum())
    if size > row_limit:
        raise OracleError(f"intermediate join of {size} rows exceeds the limit {row_limit}")
    joined = left[~lnull].merge(right[~rnull], left_on=lk, right_on=rk, how="outer")
    return pd.concat([joined, left[lnull], right[rnull]], ignore_index=True)


def join_frame(catalog, data, tables, order=None, row_limit=ROW_LIMIT):
    """Materialize the full outer join of a connected table set."""
    tables = list(order or sorted(tables))
    if not catalog.is_connected(tables):
        raise OracleError(f"tables {sorted(tables)} are not connected")
    done = [tables[0]]
    df = _frame(data, tables[0])
    pending = tables[1:]
    while pending:
        for t in pending:
            edges = catalog.edge_between(done, [t])
            if edges:
                break
        else:
            raise OracleError("join order leaves a table unreachable")
        e = edges[0]
        own, other, other_attr = e.side(t)
        df = _outer(df, _frame(data, t), f"{other}.{other_attr}", f"{t}.{own}", row_limit)
        done.append(t)
        pending.remove(t)
    return df


def _query(catalog, query):
    return query if isinstance(query, Query) else parse_query(query, catalog)


class ExactOracle:
    """Exact executor that keeps each materialized join for reuse across queries."""

    def __init__(self, catalog, data, row_limit=ROW_LIMIT):
        self.catalog = catalog
        self.data = data
        self.row_limit = row_limit
        self._joins = {}

    def _matching(self, query, order=None):
        q = _query(self.catalog, query)
        key = (frozenset(q.tables), tuple(order) if order else None)
        if key not in self._joins:
            df = join_frame(self.catalog, self.data, q.tables, order, self.row_limit)
            self._joins[key] = (df, {c: df[c].to_numpy(dtype=float) for c in df.columns})
        df, cols = self._joins[key]
        return q, df, q.region.mask(cols, len(df))

    def count(self, query, order=None):
        return int(self._matching(query, order)[2].sum())

    def distinct(self, query, order=None):
        q, df, m = self._matching(query, order)
        attrs = list(q.region.attrs)
        if not attrs:
            raise OracleError("distinct count needs a constrained attribute")
        return int(len(df.loc[m, attrs].drop_duplicates()))


def exec_exact(catalog, data, query, order=None, row_limit=ROW_LIMIT):
    """Exact cardinality of a query under full-outer-join semantics."""
    return ExactOracle(catalog, data, row_limit).count(query, order)


def exec_distinct(catalog, data, query, order=None, row_limit=ROW_LIMIT):
    """Number of distinct constrained-attribute tuples among the matching rows."""
    return ExactOracle(catalog, data, row_limit).distinct(query, order)


def qerror(estimate, truth):
    e, t = max(float(estimate), 1.0), max(float(truth), 1.0)
    return max(e / t, t / e)


@dataclass
class QErrorSummary:
    qerrors: list
    median: float
    p90: float
    p99: float
    max: float

    @classmethod
    def of(cls, qerrors):
        q = np.asarray(qerrors, dtype=float)
        if q.size == 0:
            return cls([], float("nan"), float("nan"), float("nan"), float("nan"))
        return cls(q.tolist(), float(np.median(q)), float(np.percentile(q, 90)),
                   float(np.percentile(q, 99)), float(q.max()))

    def to_doc(self):
        return {"n": len(self.qerrors), "median": self.median, "p90": self.p90,
                "p99": self.p99, "max": self.max}


# --- fixtures ----------------------------------------------------------------

def _fixture_file(name):
    return resources.files("gluecard").joinpath("fixtures", name)


def fixture_a():
    """The 4+4 row two-table fixture used throughout the tests and examples."""
    catalog = load_schema(_fixture_file("schema.json").read_text(encoding="utf-8"))
    data = {t: ingest_table(catalog, t, _fixture_file(f"{t}.csv").read_text(encoding="utf-8"))
            for t in catalog.table_names}
    return catalog, data


def fixture_paths():
    return {n: str(_fixture_file(n)) for n in ("schema.json", "T.csv", "S.csv")}


# --- synthetic data ----------------------------------------------------------

def _pair_schema(t_rows, s_rows, t_attrs, s_attrs, domain, key_hi):
    return {
        "tables": [
            {"name": "T", "columns": [{"name": "pk", "kind": "integer", "min": 0, "max": key_hi}]
             + [{"name": f"a{i}", "kind": "integer", "min": 0, "max": domain - 1}
                for i in range(t_attrs)]},
            {"name": "S", "columns": [{"name": "fk", "kind": "integer", "min": 0, "max": key_hi}]
             + [{"name": f"b{i}", "kind": "integer", "min": 0, "max": domain - 1}
                for i in range(s_attrs)]},
        ],
        "joins": [{"left": "T.pk", "right": "S.fk", "kind": "pk_fk"}],
    }


def _wrap(schema, cols):
    catalog = load_schema(schema)
    data = {}
    for t in catalog.tables:
        c = {a.name: np.asarray(cols[t.name][a.name], dtype=np.int64) for a in t.attributes}
        t.row_count = len(next(iter(c.values())))
        data[t.name] = TableData(t, c)
    return catalog, data


GENERATORS = ("independent", "correlated", "fanout_skew", "random")


def gen_synthetic(spec, seed):
    """Reproducible two-table dataset T(pk, a*) -> S(fk, b*).

    ``independent``: T's attribute tuples come in equal-size groups and every
    group's S rows receive a permutation of one shared multiset of S tuples,
    so in the join the T and S attributes are exactly independent; every T
    row has exactly |S|/|T| partners.
    ``correlated``: S.b0 = domain - 1 - (T.a0 of the partner), others random.
    ``fanout_skew``: the number of S rows of a T row grows in steps with T.a0,
    from 1 up to ``max_fanout``.
    ``random``: arbitrary attributes, skewed foreign keys, some dangling
    rows on both sides (used for the exactness checks).
    """
    spec = dict(spec)
    gen = spec.get("generator")
    if gen not in GENERATORS:
        raise ValueError(f"unknown generator {gen!r}")
    nt = int(spec.get("t_rows", 1000))
    ns = int(spec.get("s_rows", 2000))
    ta = int(spec.get("t_attrs", 1))
    sa = int(spec.get("s_attrs", 1))
    dom = int(spec.get("domain", 20))
    if nt < 1 or ns < 0 or ta < 1 or sa < 1 or dom < 2:
        raise ValueError("invalid generator spec")
    rng = np.random.default_rng(seed)
    pk = np.arange(nt)
    T = {"pk": pk}
    S = {}

    if gen == "independent":
        if ns % nt:
            raise ValueError("independent generator needs |S| to be a multiple of |T|")
        m = ns // nt
        groups = int(spec.get("groups", 10))
        if nt % groups:
            raise ValueError("|T| must be a multiple of the number of groups")
        tuples = set()
        while len(tuples) < groups:
            tuples.add(tuple(rng.integers(0, dom, size=ta)))
        tuples = np.array(sorted(tuples))
        gid = rng.permutation(np.repeat(np.arange(groups), nt // groups))
        for i in range(ta):
            T[f"a{i}"] = tuples[gid, i]
        per_group = (nt // groups) * m
        base = rng.integers(0, dom, size=(per_group, sa))
        fk = np.repeat(pk, m)
        b = np.empty((ns, sa), dtype=np.int64)
        for g in range(groups):
            rows = np.flatnonzero(gid[fk] == g)
            b[rows] = base[rng.permutation(per_group)]
        order = rng.permutation(ns)
        S["fk"] = fk[order]
        for i in range(sa):
            S[f"b{i}"] = b[order, i]
    elif gen == "correlated":
        for i in range(ta):
            T[f"a{i}"] = rng.integers(0, dom, size=nt)
        fk = rng.integers(0, nt, size=ns)
        S["fk"] = fk
        S["b0"] = dom - 1 - T["a0"][fk]
        for i in range(1, sa):
            S[f"b{i}"] = rng.integers(0, dom, size=ns)
    elif gen == "fanout_skew":
        mf = int(spec.get("max_fanout", 5))
        for i in range(ta):
            T[f"a{i}"] = rng.integers(0, dom, size=nt)
        fan = 1 + (T["a0"] * mf) // dom
        fk = np.repeat(pk, fan)
        S["fk"] = rng.permutation(fk)
        for i in range(sa):
            S[f"b{i}"] = rng.integers(0, dom, size=len(fk))
    else:
        for i in range(ta):
            T[f"a{i}"] = rng.integers(0, rng.integers(2, dom + 1), size=nt)
        weights = rng.pareto(1.0, size=nt + max(nt // 5, 1)) + 0.05
        fk = rng.choice(nt + max(nt // 5, 1), size=ns, p=weights / weights.sum())
        S["fk"] = fk
        for i in range(sa):
            b = rng.integers(0, rng.integers(2, dom + 1), size=ns)
            if i == 0 and rng.random() < 0.5:
                b = np.where(fk < nt, (T["a0"][np.minimum(fk, nt - 1)] + b) % dom, b)
            S[f"b{i}"] = b
    key_hi = int(max(nt, S["fk"].max() if len(S["fk"]) else 0) + 1)
    return _wrap(_pair_schema(nt, len(S["fk"]), ta, sa, dom, key_hi), {"T": T, "S": S})


def gen_chain(n_tables, rows, seed, domain=10, fanout=2):
    """Chain R0 - R1 - ... with one attribute per table and a foreign key to the next."""
    rng = np.random.default_rng(seed)
    tables, joins, cols = [], [], {}
    sizes = [max(int(rows // fanout ** i), 2) for i in range(n_tables)]
    for i in range(n_tables):
        name = f"R{i}"
        c = [{"name": "id", "kind": "integer", "min": 0, "max": sizes[i]},
             {"name": "v", "kind": "integer", "min": 0, "max": domain - 1}]
        cols[name] = {"id": np.arange(sizes[i]), "v": rng.integers(0, domain, size=sizes[i])}
        if i + 1 < n_tables:
            c.append({"name": "nxt", "kind": "integer", "min": 0, "max": sizes[i + 1]})
            nxt = rng.integers(0, sizes[i + 1] + 1, size=sizes[i])   # value sizes[i+1] dangles
            cols[name]["nxt"] = nxt
            cols[name]["v"] = (cols[name]["v"] + (nxt % domain) * (i % 2)) % domain
            joins.append({"left": f"R{i + 1}.id", "right": f"{name}.nxt", "kind": "pk_fk"})
        tables.append({"name": name, "columns": c})
    return _wrap({"tables": tables, "joins": joins}, cols)


def gen_schema(n_tables, rows, seed, domain=8):
    """Random tree-shaped schema (each new table hangs off a random earlier one)."""
    rng = np.random.default_rng(seed)
    tables, joins, cols = [], [], {}
    sizes = [int(rng.integers(rows // 2, rows + 1)) for _ in range(n_tables)]
    for i in range(n_tables):
        name = f"R{i}"
        c = [{"name": "id", "kind": "integer", "min": 0, "max": max(sizes) + 1},
             {"name": "v", "kind": "integer", "min": 0, "max": domain - 1}]
        cols[name] = {"id": np.arange(sizes[i]), "v": rng.integers(0, domain, size=sizes[i])}
        if i:
            p = int(rng.integers(0, i))
            c.append({"name": "ref", "kind": "integer", "min": 0, "max": max(sizes) + 1})
            ref = rng.integers(0, sizes[p] + 1, size=sizes[i])
            cols[name]["ref"] = ref
            if rng.random() < 0.5:
                cols[name]["v"] = (cols[name]["v"] * (rng.random() < 0.5) + ref) % domain
            joins.append({"left": f"R{p}.id", "right": f"{name}.ref", "kind": "pk_fk"})
        tables.append({"name": name, "columns": c})
    return _wrap({"tables": tables, "joins": joins}, cols)


# --- workloads ---------------------------------------------------------------

def _random_tables(catalog, rng, max_tables):
    names = catalog.table_names
    size = int(rng.integers(1, min(max_tables, len(names)) + 1))
    chosen = [names[int(rng.integers(len(names)))]]
    while len(chosen) < size:
        frontier = sorted({n for t in chosen for n in catalog.neighbours(t)} - set(chosen))
        if not frontier:
            break
        chosen.append(frontier[int(rng.integers(len(frontier)))])
    return sorted(chosen)


def _predicate(attr, col, values, rng, ops):
    v = values[int(rng.integers(len(values)))]
    op = ops[int(rng.integers(len(ops)))]
    if attr.kind == "categorical":
        if op == "range":
            op = "in"
        if op == "eq":
            return {"col": col, "op": "eq", "val": attr.values[int(v)]}
        k = int(rng.integers(1, 4))
        picks = values[rng.integers(len(values), size=k)]
        return {"col": col, "op": "in", "vals": sorted({attr.values[int(p)] for p in picks})}
    cast = int if attr.kind == "integer" else float
    if op == "eq":
        return {"col": col, "op": "eq", "val": cast(v)}
    if op == "range":
        w = values[int(rng.integers(len(values)))]
        lo, hi = sorted((cast(v), cast(w)))
        return {"col": col, "op": "range", "lo": lo, "hi": hi}
    k = int(rng.integers(1, 4))
    picks = values[rng.integers(len(values), size=k)]
    return {"col": col, "op": "in", "vals": sorted({cast(p) for p in picks})}


def gen_workload(catalog, data, n, seed, max_tables=None, max_preds=3, ops=("eq", "range", "in"),
                 include_keys=False, tables=None):
    """``n`` random conjunctive queries (as documents) drawn from the data values."""
    if n < 1:
        raise ValueError("n >= 1 required")
    rng = np.random.default_rng(seed)
    keys = catalog.key_attributes()
    out = []
    for _ in range(n):
        tabs = sorted(tables) if tables else _random_tables(catalog, rng,
                                                           max_tables or len(catalog.table_names))
        cand = [c for t in tabs for c in catalog.table(t).qualified()
                if include_keys or c not in keys]
        preds = []
        if cand:
            k = int(rng.integers(1, min(max_preds, len(cand)) + 1))
            for c in rng.choice(len(cand), size=k, replace=False):
                col = cand[int(c)]
                t, a = col.split(".", 1)
                values = np.asarray(data[t].columns[a])
                if len(values) == 0:
                    continue
                preds.append(_predicate(catalog.attr(col), col, values, rng, list(ops)))
        out.append({"tables": tabs, "predicates": preds})
    return out


def save_workload(queries, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(queries, fh, indent=1, sort_keys=True)


def load_workload(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return doc if isinstance(doc, list) else doc["queries"]
