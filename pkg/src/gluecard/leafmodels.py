"""Single-table estimators that answer Pr_T(region) and Dis_T(region).

Every model speaks qualified attribute names and accepts any RegularRegion
whose constrained attributes belong to its table.  Distinct counts are taken
over the projection onto the requested attributes (by default the region's
constrained attributes).
"""

import math

import numpy as np

from .correlate import CorrelationParams, rdc_score
from .regions import CodeSet, Intervals, RegionError, RegularRegion

KINDS = ("exact", "histogram", "sample", "spn")

DEFAULT_PARAMS = {
    "histogram": {"buckets": 32},
    "sample": {"n": 1000},
    "spn": {"tau_ind": 0.3, "min_rows": 100, "buckets": 32, "rdc_rows": 2000},
    "exact": {},
}


def _check_scope(model, region):
    extra = [a for a in region.attrs if a not in model.attr_set]
    if extra:
        raise RegionError(f"scope violation: {extra} not attributes of table {model.table}")


def _distinct_attrs(region, attrs):
    attrs = list(region.attrs) if attrs is None else list(attrs)
    if not attrs:
        raise ValueError("distinct requires at least one constrained attribute")
    return attrs


class LeafEstimator:
    kind = None

    def __init__(self, table, attrs, row_count):
        self.table = table
        self.attrs = list(attrs)
        self.attr_set = set(attrs)
        self.row_count = int(row_count)
        self._assign_memo = {}

    def prob(self, region):
        raise NotImplementedError

    def distinct(self, region, attrs=None):
        raise NotImplementedError

    def prob_parts(self, region, partition):
        """prob(region ∩ part) for every part of a partition over this table."""
        return np.array([self.prob(region.intersect(p)) for p in partition.parts], dtype=float)

    def to_doc(self):
        raise NotImplementedError


class _RowModel(LeafEstimator):
    """Shared code for models that keep actual rows (exact and sample)."""

    def __init__(self, table, attrs, row_count, columns):
        super().__init__(table, attrs, row_count)
        self.columns = {a: np.asarray(columns[a], dtype=float) for a in self.attrs}
        self.n = len(next(iter(self.columns.values()))) if self.columns else 0

    def _mask(self, region):
        _check_scope(self, region)
        return region.mask(self.columns, self.n)

    def prob(self, region):
        if region.is_full:
            return 1.0
        if self.n == 0:
            return 0.0
        return int(self._mask(region).sum()) / self.n

    def prob_parts(self, region, partition):
        k = len(partition.parts)
        if self.n == 0:
            return np.array([1.0 if region.intersect(p).is_full else 0.0
                             for p in partition.parts])
        ids = self._assign_memo.get(partition.uid) if partition.uid else None
        if ids is None:
            ids = partition.assign(self.columns, self.n)
            if partition.uid:
                self._assign_memo[partition.uid] = ids
        m = self._mask(region) & (ids >= 0)
        return np.bincount(ids[m], minlength=k)[:k] / self.n

    def distinct(self, region, attrs=None):
        attrs = _distinct_attrs(region, attrs)
        if self.n == 0:
            return 0.0
        m = self._mask(region)
        if not m.any():
            return 0.0
        block = np.column_stack([self.columns[a][m] for a in attrs])
        return float(np.unique(block, axis=0).shape[0])

    def _doc_columns(self):
        return {a: self.columns[a].tolist() for a in self.attrs}


class ExactModel(_RowModel):
    kind = "exact"

    def to_doc(self):
        return {"kind": self.kind, "table": self.table, "attrs": self.attrs,
                "row_count": self.row_count, "columns": self._doc_columns()}


class SampleModel(_RowModel):
    kind = "sample"

    def __init__(self, table, attrs, row_count, columns, seed=None):
        super().__init__(table, attrs, row_count, columns)
        self.seed = seed

    def to_doc(self):
        return {"kind": self.kind, "table": self.table, "attrs": self.attrs,
                "row_count": self.row_count, "seed": self.seed, "columns": self._doc_columns()}


class Histogram1D:
    """Equi-depth buckets; one bucket per value when the column has few values."""

    def __init__(self, lo, hi, frac, distinct, discrete):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.frac = np.asarray(frac, dtype=float)
        self.dist = np.asarray(distinct, dtype=float)
        self.discrete = bool(discrete)

    @classmethod
    def build(cls, values, discrete, buckets):
        values = np.asarray(values, dtype=float)
        n = len(values)
        if n == 0:
            return cls([], [], [], [], discrete)
        uniq, counts = np.unique(values, return_counts=True)
        if len(uniq) <= buckets:
            return cls(uniq, uniq, counts / n, np.ones(len(uniq)), discrete)
        before = np.cumsum(counts) - counts
        bid = np.minimum((before * buckets) // n, buckets - 1).astype(int)
        _, first = np.unique(bid, return_index=True)
        last = np.append(first[1:], len(uniq)) - 1
        frac = np.add.reduceat(counts, first) / n
        return cls(uniq[first], uniq[last], frac, last - first + 1, discrete)

    def coverage(self, constraint):
        """Fraction of each bucket covered, under a uniform spread inside the bucket."""
        cov = np.zeros(len(self.lo))
        if len(self.lo) == 0:
            return cov
        point = self.lo == self.hi
        width = np.where(point, 1.0, (self.hi - self.lo + 1.0) if self.discrete else (self.hi - self.lo))
        for a, b in constraint.as_spans():
            lo = np.maximum(self.lo, a)
            hi = np.minimum(self.hi, b)
            inside = lo <= hi
            if self.discrete:
                part = np.where(inside, (np.floor(hi) - np.ceil(lo) + 1.0), 0.0)
                part = np.maximum(part, 0.0) / width
            elif a == b:
                part = np.where(inside, 1.0 / self.dist, 0.0)
            else:
                part = np.where(inside, (hi - lo) / width, 0.0)
            cov += np.where(point, inside.astype(float), part)
        return np.minimum(cov, 1.0)

    def prob(self, constraint):
        if constraint is None:
            return float(self.frac.sum())
        return float(np.dot(self.frac, self.coverage(constraint)))

    def distinct(self, constraint):
        if constraint is None:
            return float(self.dist.sum())
        return float(np.dot(self.dist, self.coverage(constraint)))

    def to_doc(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "frac": self.frac.tolist(),
                "distinct": self.dist.tolist(), "discrete": self.discrete}

    @classmethod
    def from_doc(cls, d):
        return cls(d["lo"], d["hi"], d["frac"], d["distinct"], d["discrete"])


class HistogramModel(LeafEstimator):
    """Per-attribute histograms combined under attribute-value independence."""

    kind = "histogram"

    def __init__(self, table, attrs, row_count, hists):
        super().__init__(table, attrs, row_count)
        self.hists = hists

    def prob(self, region):
        _check_scope(self, region)
        if region.is_full:
            return 1.0
        if self.row_count == 0:
            return 0.0
        p = 1.0
        for a, c in region.key:
            p *= self.hists[a].prob(c)
        return min(max(p, 0.0), 1.0)

    def distinct(self, region, attrs=None):
        attrs = _distinct_attrs(region, attrs)
        _check_scope(self, region)
        if self.row_count == 0:
            return 0.0
        d = 1.0
        for a in attrs:
            d *= self.hists[a].distinct(region.get(a))
        for a, c in region.key:
            if a not in attrs and self.hists[a].prob(c) <= 0:
                return 0.0
        return d

    def to_doc(self):
        return {"kind": self.kind, "table": self.table, "attrs": self.attrs,
                "row_count": self.row_count,
                "hists": {a: h.to_doc() for a, h in self.hists.items()}}


# --- sum-product network -------------------------------------------------

class SpnLeaf:
    def __init__(self, attr, hist):
        self.attr = attr
        self.hist = hist
        self.scope = (attr,)

    def prob(self, region):
        return self.hist.prob(region.get(self.attr))

    def distinct(self, region, proj):
        c = region.get(self.attr)
        if self.attr in proj:
            return self.hist.distinct(c)
        if c is not None:
            return 1.0 if self.hist.prob(c) > 0 else 0.0
        return 1.0

    def to_doc(self):
        return {"type": "leaf", "attr": self.attr, "hist": self.hist.to_doc()}


class SpnProduct:
    def __init__(self, children):
        self.children = children
        self.groups = [tuple(c.scope) for c in children]
        self.scope = tuple(a for g in self.groups for a in g)
        seen = [a for g in self.groups for a in g]
        assert len(seen) == len(set(seen)), "product groups must be disjoint"

    def prob(self, region):
        p = 1.0
        for child, group in zip(self.children, self.groups):
            sub = region.project(group)
            if not sub.is_full:
                p *= child.prob(sub)
        return p

    def distinct(self, region, proj):
        d = 1.0
        for child, group in zip(self.children, self.groups):
            sub = region.project(group)
            if any(a in proj for a in group):
                d *= child.distinct(sub, proj)
            elif not sub.is_full and child.prob(sub) <= 0:
                return 0.0
        return d

    def to_doc(self):
        return {"type": "product", "children": [c.to_doc() for c in self.children]}


class SpnSum:
    def __init__(self, attr, constraints, weights, children):
        self.attr = attr
        self.constraints = list(constraints)
        self.weights = np.asarray(weights, dtype=float)
        self.children = children
        self.scope = tuple(children[0].scope)
        assert abs(self.weights.sum() - 1.0) <= 1e-9 and (self.weights > 0).all()
        lc, rc = self.constraints
        assert lc.intersect(rc).empty, "sum-node split regions must be disjoint"

    def _split(self, region, c):
        return region.intersect(RegularRegion({self.attr: c}))

    def prob(self, region):
        total = 0.0
        for w, c, child in zip(self.weights, self.constraints, self.children):
            sub = self._split(region, c)
            if not sub.is_empty():
                total += w * child.prob(sub)
        return total

    def distinct(self, region, proj):
        total = 0.0
        for c, child in zip(self.constraints, self.children):
            sub = self._split(region, c)
            if not sub.is_empty():
                total += child.distinct(sub, proj)
        return total

    def to_doc(self):
        return {"type": "sum", "attr": self.attr,
                "constraints": [c.to_doc() for c in self.constraints],
                "weights": self.weights.tolist(),
                "children": [c.to_doc() for c in self.children]}


def _spn_from_doc(d):
    from .regions import constraint_from_doc
    if d["type"] == "leaf":
        return SpnLeaf(d["attr"], Histogram1D.from_doc(d["hist"]))
    if d["type"] == "product":
        return SpnProduct([_spn_from_doc(c) for c in d["children"]])
    return SpnSum(d["attr"], [constraint_from_doc(c) for c in d["constraints"]],
                  d["weights"], [_spn_from_doc(c) for c in d["children"]])


def split_constraints(meta, values, rng):
    """Binary split of an attribute's whole domain driven by the values present.

    Numeric: at the median, the split value going right.  Categorical: a
    seeded random half of the present codes versus the rest of the domain.
    Nulls follow the right branch.  Returns None when the values cannot be split.
    """
    uniq = np.unique(values[~np.isnan(values)])
    if len(uniq) < 2:
        return None
    if meta.kind == "categorical":
        perm = rng.permutation(uniq)
        left = perm[: len(perm) // 2]
        domain = np.arange(len(meta.values))
        right = np.setdiff1d(domain, left)
        return CodeSet.of(left.astype(int)), CodeSet.of(right.astype(int), nulls=True)
    v = float(np.median(values[~np.isnan(values)]))
    if meta.discrete:
        v = float(math.ceil(v))
    if v <= uniq[0]:
        v = float(uniq[1])
    below = v - 1.0 if meta.discrete else float(np.nextafter(v, -np.inf))
    lo, hi = -math.inf, math.inf
    return Intervals(((lo, below),)), Intervals(((v, hi),), nulls=True)


class SpnModel(LeafEstimator):
    kind = "spn"

    def __init__(self, table, attrs, row_count, root, params=None):
        super().__init__(table, attrs, row_count)
        self.root = root
        self.params = params or {}

    def prob(self, region):
        _check_scope(self, region)
        if region.is_full:
            return 1.0
        if self.root is None:
            return 0.0
        return min(max(self.root.prob(region), 0.0), 1.0)

    def distinct(self, region, attrs=None):
        attrs = _distinct_attrs(region, attrs)
        _check_scope(self, region)
        if self.root is None:
            return 0.0
        return float(self.root.distinct(region, set(attrs)))

    def to_doc(self):
        return {"kind": self.kind, "table": self.table, "attrs": self.attrs,
                "row_count": self.row_count, "params": self.params,
                "root": self.root.to_doc() if self.root is not None else None}


def _learn_spn(cols, metas, idx, attrs, p, rng, rdc_params):
    def leaf(a):
        return SpnLeaf(a, Histogram1D.build(cols[a][idx], metas[a].discrete, p["buckets"]))

    if len(attrs) == 1:
        return leaf(attrs[0])
    if len(idx) < max(p["min_rows"], 3):
        return SpnProduct([leaf(a) for a in attrs])
    rows = idx
    if len(rows) > p["rdc_rows"]:
        rows = np.sort(rng.choice(idx, size=p["rdc_rows"], replace=False))
    k = len(attrs)
    corr = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            corr[i, j] = corr[j, i] = rdc_score(cols[attrs[i]][rows], cols[attrs[j]][rows],
                                                rdc_params) if len(rows) >= 3 else 0.0
    # connected components of the correlation graph (edges with rdc >= tau)
    comp = list(range(k))

    def find(x):
        while comp[x] != x:
            comp[x] = comp[comp[x]]
            x = comp[x]
        return x

    for i in range(k):
        for j in range(i + 1, k):
            if corr[i, j] >= p["tau_ind"]:
                comp[find(i)] = find(j)
    groups = {}
    for i in range(k):
        groups.setdefault(find(i), []).append(attrs[i])
    if len(groups) > 1:
        ordered = sorted(groups.values(), key=lambda g: attrs.index(g[0]))
        return SpnProduct([_learn_spn(cols, metas, idx, g, p, rng, rdc_params) for g in ordered])
    order = sorted(range(k), key=lambda i: (-corr[i].sum(), i))
    for i in order:
        a = attrs[i]
        split = split_constraints(metas[a], cols[a][idx], rng)
        if split is None:
            continue
        lc, rc = split
        lm = lc.mask(cols[a][idx])
        left, right = idx[lm], idx[~lm]
        if len(left) == 0 or len(right) == 0:
            continue
        w = np.array([len(left), len(right)], dtype=float) / len(idx)
        children = [_learn_spn(cols, metas, left, attrs, p, rng, rdc_params),
                    _learn_spn(cols, metas, right, attrs, p, rng, rdc_params)]
        return SpnSum(a, [lc, rc], w, children)
    return SpnProduct([leaf(a) for a in attrs])


def build(table, kind="exact", params=None, seed=0):
    """Build a leaf estimator for a TableData."""
    if kind not in KINDS:
        raise ValueError(f"unknown leaf model kind {kind!r}")
    p = dict(DEFAULT_PARAMS[kind])
    p.update(params or {})
    cols = table.qualified_columns()
    attrs = list(cols)
    n = len(table)
    metas = {f"{table.name}.{a.name}": a for a in table.meta.attributes}
    if kind == "exact":
        return ExactModel(table.name, attrs, n, cols)
    if kind == "histogram":
        if p["buckets"] < 1:
            raise ValueError("bucket count must be >= 1")
        hists = {a: Histogram1D.build(cols[a], metas[a].discrete, p["buckets"]) for a in attrs}
        return HistogramModel(table.name, attrs, n, hists)
    if kind == "sample":
        if p["n"] < 1:
            raise ValueError("sample n must be >= 1")
        rng = np.random.default_rng(seed)
        idx = np.arange(n) if p["n"] >= n else np.sort(rng.choice(n, size=p["n"], replace=False))
        return SampleModel(table.name, attrs, n, {a: cols[a][idx] for a in attrs}, seed)
    if not 0 < p["tau_ind"] < 1:
        raise ValueError("tau_ind must lie in (0, 1)")
    if n == 0:
        return SpnModel(table.name, attrs, 0, None, p)
    rng = np.random.default_rng(seed)
    rdc_params = CorrelationParams(seed=seed)
    root = _learn_spn(cols, metas, np.arange(n), attrs, p, rng, rdc_params)
    return SpnModel(table.name, attrs, n, root, p)


def prob(model, region):
    return model.prob(region)


def distinct(model, region, attrs=None):
    return model.distinct(region, attrs)


def from_doc(d):
    kind = d["kind"]
    if kind == "exact":
        return ExactModel(d["table"], d["attrs"], d["row_count"], d["columns"])
    if kind == "sample":
        return SampleModel(d["table"], d["attrs"], d["row_count"], d["columns"], d.get("seed"))
    if kind == "histogram":
        return HistogramModel(d["table"], d["attrs"], d["row_count"],
                              {a: Histogram1D.from_doc(h) for a, h in d["hists"].items()})
    if kind == "spn":
        root = _spn_from_doc(d["root"]) if d["root"] is not None else None
        return SpnModel(d["table"], d["attrs"], d["row_count"], root, d.get("params"))
    raise ValueError(f"unknown leaf model kind {kind!r}")


def iter_spn(node):
    """Depth-first walk over SPN nodes."""
    yield node
    for c in getattr(node, "children", []):
        yield from iter_spn(c)
