"""Regular regions: per-attribute constraints combined as a cross product.

A region maps qualified attribute names to constraints; an attribute that is
absent is unconstrained.  Numeric constraints are sorted lists of disjoint
closed intervals, categorical constraints are sets of dictionary codes.
Null values (NaN) never satisfy a query constraint; the parts of a partition
over a joined relation may accept them so every row lands in exactly one part.
"""

import json
import math
from dataclasses import dataclass

import numpy as np


class RegionError(ValueError):
    pass


class QueryError(ValueError):
    pass


@dataclass(frozen=True)
class Intervals:
    spans: tuple
    nulls: bool = False   # null values satisfy the constraint (partition parts only)

    @classmethod
    def of(cls, spans, nulls=False):
        spans = sorted((float(lo), float(hi)) for lo, hi in spans if lo <= hi)
        merged = []
        for lo, hi in spans:
            if merged and lo <= merged[-1][1]:
                merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
            else:
                merged.append((lo, hi))
        return cls(tuple(merged), nulls)

    @classmethod
    def point(cls, v):
        return cls(((float(v), float(v)),))

    @property
    def empty(self):
        return not self.spans and not self.nulls

    def intersect(self, other):
        if not isinstance(other, Intervals):
            raise RegionError("attribute kind mismatch: interval vs value set")
        out = []
        i = j = 0
        a, b = self.spans, other.spans
        while i < len(a) and j < len(b):
            lo = max(a[i][0], b[j][0])
            hi = min(a[i][1], b[j][1])
            if lo <= hi:
                out.append((lo, hi))
            if a[i][1] < b[j][1]:
                i += 1
            else:
                j += 1
        return Intervals(tuple(out), self.nulls and other.nulls)

    def contains(self, v):
        if v != v:
            return self.nulls
        return any(lo <= v <= hi for lo, hi in self.spans)

    def mask(self, values):
        values = np.asarray(values, dtype=float)
        if len(self.spans) == 1:
            lo, hi = self.spans[0]
            m = (values >= lo) & (values <= hi)
        else:
            m = np.zeros(values.shape, dtype=bool)
            for lo, hi in self.spans:
                m |= (values >= lo) & (values <= hi)
        if self.nulls:
            m |= np.isnan(values)
        return m

    def as_spans(self):
        return self.spans

    def to_doc(self):
        d = {"intervals": [[_enc(lo), _enc(hi)] for lo, hi in self.spans]}
        if self.nulls:
            d["nulls"] = True
        return d


@dataclass(frozen=True)
class CodeSet:
    codes: frozenset
    nulls: bool = False

    @classmethod
    def of(cls, codes, nulls=False):
        return cls(frozenset(int(c) for c in codes), nulls)

    @property
    def empty(self):
        return not self.codes and not self.nulls

    def intersect(self, other):
        if not isinstance(other, CodeSet):
            raise RegionError("attribute kind mismatch: value set vs interval")
        return CodeSet(self.codes & other.codes, self.nulls and other.nulls)

    def contains(self, v):
        if v != v:
            return self.nulls
        return int(v) in self.codes

    def mask(self, values):
        values = np.asarray(values, dtype=float)
        if self.codes:
            m = np.isin(values, np.fromiter(self.codes, dtype=float, count=len(self.codes)))
        else:
            m = np.zeros(values.shape, dtype=bool)
        if self.nulls:
            m |= np.isnan(values)
        return m

    def as_spans(self):
        return tuple((float(c), float(c)) for c in sorted(self.codes))

    def to_doc(self):
        d = {"codes": sorted(self.codes)}
        if self.nulls:
            d["nulls"] = True
        return d


def _enc(x):
    # JSON has no infinities; keep them as strings
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _dec(x):
    return float(x)


def constraint_from_doc(doc):
    nulls = bool(doc.get("nulls", False))
    if "codes" in doc:
        return CodeSet.of(doc["codes"], nulls)
    return Intervals(tuple((_dec(lo), _dec(hi)) for lo, hi in doc["intervals"]), nulls)


def _sort_key(item):
    return item[0]


class RegularRegion:
    """Immutable map attr -> constraint; hashable via its canonical key."""

    __slots__ = ("_items", "_map", "_hash")

    def __init__(self, constraints=None):
        constraints = dict(constraints or {})
        self._items = tuple(sorted(constraints.items(), key=_sort_key))
        self._map = dict(self._items)
        self._hash = hash(self._items)

    @property
    def key(self):
        return self._items

    @property
    def constraints(self):
        return dict(self._map)

    @property
    def attrs(self):
        return tuple(a for a, _ in self._items)

    def tables(self):
        return {a.split(".", 1)[0] for a in self._map}

    def get(self, attr):
        return self._map.get(attr)

    def __contains__(self, attr):
        return attr in self._map

    def __len__(self):
        return len(self._items)

    def __eq__(self, other):
        return isinstance(other, RegularRegion) and self._items == other._items

    def __hash__(self):
        return self._hash

    def __repr__(self):
        inner = ", ".join(f"{a}: {c.spans if isinstance(c, Intervals) else sorted(c.codes)}"
                          for a, c in self._items)
        return f"RegularRegion({{{inner}}})"

    @property
    def is_full(self):
        return not self._items

    def is_empty(self):
        return any(c.empty for _, c in self._items)

    def null_ok(self):
        """True when a row whose constrained attributes are all null satisfies the region."""
        return all(c.nulls for _, c in self._items)

    def intersect(self, other):
        if other.is_full:
            return self
        if self.is_full:
            return other
        merged = dict(self._map)
        for a, c in other._items:
            merged[a] = merged[a].intersect(c) if a in merged else c
        return RegularRegion(merged)

    def project(self, attrs):
        attrs = set(attrs)
        return RegularRegion({a: c for a, c in self._items if a in attrs})

    def project_tables(self, tables):
        tables = set(tables)
        return RegularRegion({a: c for a, c in self._items if a.split(".", 1)[0] in tables})

    def mask(self, columns, n=None):
        """Boolean row mask over a dict of qualified columns."""
        if n is None:
            n = len(next(iter(columns.values()))) if columns else 0
        m = np.ones(n, dtype=bool)
        for a, c in self._items:
            if a not in columns:
                raise RegionError(f"attribute {a} outside the scope of the data")
            m &= c.mask(columns[a])
        return m

    def contains_point(self, point):
        for a, c in self._items:
            v = point.get(a)
            if not c.contains(float("nan") if v is None else float(v)):
                return False
        return True

    def to_doc(self):
        return {a: c.to_doc() for a, c in self._items}

    @classmethod
    def from_doc(cls, doc):
        return cls({a: constraint_from_doc(c) for a, c in doc.items()})


FULL = RegularRegion()


def intersect(a, b):
    return a.intersect(b)


def project(r, scope):
    return r.project(scope)


def is_empty(r):
    return r.is_empty()


def empty_like(attr, categorical=False):
    return RegularRegion({attr: CodeSet(frozenset()) if categorical else Intervals(())})


@dataclass
class Partition:
    """Disjoint cover of a scope's domain, stored as its binary split tree.

    ``tree`` is either ``("leaf", index)`` or
    ``("split", attr, left_constraint, right_constraint, left, right)`` where
    the two constraints split the attribute's whole domain.
    """

    scope: tuple
    tree: tuple
    parts: list
    uid: str = ""
    meta: list = None      # per-part build info (score, capped, origin)

    @classmethod
    def single(cls, scope, uid=""):
        return cls(tuple(scope), ("leaf", 0), [FULL], uid, [{}])

    @classmethod
    def from_tree(cls, scope, tree, uid="", meta=None):
        parts = {}

        def walk(node, region):
            if node[0] == "leaf":
                parts[node[1]] = region
                return
            _, attr, lc, rc, left, right = node
            walk(left, region.intersect(RegularRegion({attr: lc})))
            walk(right, region.intersect(RegularRegion({attr: rc})))

        walk(tree, FULL)
        ordered = [parts[i] for i in range(len(parts))]
        return cls(tuple(scope), tree, ordered, uid, meta or [{} for _ in ordered])

    def __len__(self):
        return len(self.parts)

    def assign(self, columns, n=None):
        """Part index per row (-1 if a row falls outside every part)."""
        if n is None:
            n = len(next(iter(columns.values()))) if columns else 0
        out = np.full(n, -1, dtype=np.int64)

        def walk(node, idx):
            if idx.size == 0:
                return
            if node[0] == "leaf":
                out[idx] = node[1]
                return
            _, attr, lc, rc, left, right = node
            vals = np.asarray(columns[attr], dtype=float)[idx]
            lm = lc.mask(vals)
            rm = rc.mask(vals)
            walk(left, idx[lm])
            walk(right, idx[rm & ~lm])

        walk(self.tree, np.arange(n))
        return out

    def locate(self, point):
        node = self.tree
        while node[0] != "leaf":
            _, attr, lc, rc, left, right = node
            v = point.get(attr)
            v = float("nan") if v is None else float(v)
            node = left if lc.contains(v) else right if rc.contains(v) else None
            if node is None:
                return -1
        return node[1]

    def to_doc(self):
        def enc(node):
            if node[0] == "leaf":
                return {"leaf": node[1]}
            _, attr, lc, rc, left, right = node
            return {"attr": attr, "lc": lc.to_doc(), "rc": rc.to_doc(),
                    "l": enc(left), "r": enc(right)}
        return {"scope": list(self.scope), "uid": self.uid, "tree": enc(self.tree),
                "meta": self.meta}

    @classmethod
    def from_doc(cls, doc):
        def dec(d):
            if "leaf" in d:
                return ("leaf", int(d["leaf"]))
            return ("split", d["attr"], constraint_from_doc(d["lc"]),
                    constraint_from_doc(d["rc"]), dec(d["l"]), dec(d["r"]))
        return cls.from_tree(tuple(doc["scope"]), dec(doc["tree"]), doc.get("uid", ""),
                             doc.get("meta"))


@dataclass
class Query:
    tables: frozenset
    region: RegularRegion
    distinct: bool = False

    def to_doc(self, catalog=None):
        return {"tables": sorted(self.tables), "region": self.region.to_doc(),
                "distinct": self.distinct}


def query_to_doc(tables, predicates, distinct=False):
    return json.dumps({"tables": sorted(tables), "predicates": predicates, "distinct": distinct})


def _numeric_value(attr, v, col):
    try:
        return float(v)
    except (TypeError, ValueError):
        raise QueryError(f"non-numeric value {v!r} for numeric column {col}") from None


def _constraint_for(pred, attr, col):
    op = pred.get("op")
    if op in ("or", "not"):
        raise QueryError("disjunction across attributes is unsupported")
    if attr.kind == "categorical":
        if op == "eq":
            vals = [pred["val"]]
        elif op == "in":
            vals = list(pred["vals"] if "vals" in pred else pred["val"])
        elif op == "range":
            raise QueryError(f"range predicate on categorical column {col}")
        else:
            raise QueryError(f"unknown predicate op {op!r}")
        codes = [attr.encode(v) for v in vals]
        return CodeSet.of(c for c in codes if c is not None)
    if op == "eq":
        return Intervals.point(_numeric_value(attr, pred["val"], col))
    if op == "range":
        lo = _numeric_value(attr, pred.get("lo", -math.inf), col)
        hi = _numeric_value(attr, pred.get("hi", math.inf), col)
        return Intervals.of([(lo, hi)]) if lo <= hi else Intervals(())
    if op == "in":
        vals = pred["vals"] if "vals" in pred else pred["val"]
        return Intervals.of((_numeric_value(attr, v, col),) * 2 for v in vals)
    raise QueryError(f"unknown predicate op {op!r}")


def parse_query(query_doc, catalog):
    """Canonicalize a JSON query document into a Query."""
    if isinstance(query_doc, (str, bytes)):
        try:
            doc = json.loads(query_doc)
        except json.JSONDecodeError as exc:
            raise QueryError(f"malformed query document: {exc}") from None
    else:
        doc = query_doc
    if "or" in doc:
        raise QueryError("disjunction across attributes is unsupported")
    tables = doc.get("tables")
    if not tables:
        raise QueryError("query needs a non-empty 'tables' list")
    for t in tables:
        try:
            catalog.table(t)
        except KeyError:
            raise QueryError(f"unknown table {t!r}") from None
    tables = frozenset(tables)
    if not catalog.is_connected(tables):
        raise QueryError(f"touched tables {sorted(tables)} are not connected")
    region = FULL
    for pred in doc.get("predicates", []):
        col = pred.get("col", "")
        table = col.split(".", 1)[0]
        if table not in tables:
            raise QueryError(f"predicate on {col} references a table outside 'tables'")
        try:
            attr = catalog.attr(col)
        except KeyError:
            raise QueryError(f"unknown attribute {col!r}") from None
        region = region.intersect(RegularRegion({col: _constraint_for(pred, attr, col)}))
    return Query(tables, region, bool(doc.get("distinct", False)))
