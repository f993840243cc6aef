"""Recursive estimation over a decomposition tree.

Children always return unconditional probabilities Pr_X(Q ∩ region) over
their own (joined) relation.  At an inner node with sides T and S meeting in
the outer join W:

* T side:  Pr_W(Q_T) = |T|/|W| * sum_k Pr_T(Q_T ∩ T_k) * e_T[k]
* S side, per context L_i:
           Pr_W(Q_S ∩ L_i) = |S|/|W| * sum_{j in i} Pr_S(Q_S ∩ S_j) * e_S[j]

``independent`` mode multiplies the two sides; ``context`` mode weights each
context by the share of its W rows whose T side satisfies Q_T, read off the
restricted fanout matrix M.  Null-extended rows (T rows without partner,
dangling S rows) are accounted for explicitly, so a predicate never matches a
null while a partition part that accepts nulls does.
"""

import itertools
import time
from dataclasses import dataclass, field

import numpy as np

from .regions import FULL, Query, QueryError, parse_query

MODES = ("independent", "context")


class SubplanCache:
    """Per-node memo of (region -> probability) plus leaf call counters."""

    def __init__(self, enabled=True):
        self.enabled = enabled
        self.store = {}
        self.leaf_calls = 0
        self.cache_hits = 0

    def get(self, key):
        if not self.enabled:
            return None
        hit = self.store.get(key)
        if hit is not None:
            self.cache_hits += 1
        return hit

    def put(self, key, value):
        if self.enabled:
            self.store[key] = value

    def __len__(self):
        return len(self.store)

    def stats(self):
        return {"entries": len(self.store), "leaf_calls": self.leaf_calls,
                "cache_hits": self.cache_hits}


@dataclass
class EstimateReport:
    cardinality: float
    probability: float
    tables: tuple
    leaf_calls: int
    elapsed_ms: float
    trace: list = field(default_factory=list)

    def to_doc(self):
        return {"cardinality": self.cardinality, "probability": self.probability,
                "tables": list(self.tables), "leaf_calls": self.leaf_calls,
                "elapsed_ms": self.elapsed_ms}


def _clip(p):
    return float(min(max(p, 0.0), 1.0))


class Estimator:
    def __init__(self, tree, mode=None, cache=None, trace=False):
        self.tree = tree
        self.mode = mode or tree.config.get("mode", "context")
        if self.mode not in MODES:
            raise ValueError(f"unknown estimation mode {self.mode!r}")
        self.cache = cache if cache is not None else SubplanCache(enabled=False)
        self.trace = [] if trace else None

    # -- helpers ------------------------------------------------------
    def query(self, query):
        if not isinstance(query, Query):
            query = parse_query(query, self.tree.catalog)
        missing = set(query.tables) - set(self.tree.tables)
        if missing:
            raise QueryError(f"tables {sorted(missing)} are not covered by the tree")
        if not self.tree.catalog.is_connected(query.tables):
            raise QueryError(f"touched tables {sorted(query.tables)} are not connected")
        return query

    def _leaf_prob(self, node, region):
        key = (node.label, "p", region.key)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        self.cache.leaf_calls += 1
        p = _clip(node.model.prob(region))
        self.cache.put(key, p)
        return p

    def part_probs(self, child, tables, region, partition):
        """Vector of Pr_child(region ∩ part) over the parts of ``partition``."""
        node = child.route(tables)
        if node.is_leaf:
            key = (node.label, "parts", partition.uid, region.key)
            hit = self.cache.get(key)
            if hit is not None:
                return hit
            self.cache.leaf_calls += len(partition)
            vec = np.clip(np.asarray(node.model.prob_parts(region, partition), dtype=float), 0, 1)
            self.cache.put(key, vec)
            return vec
        return np.array([self.prob(node, tables, region.intersect(part))
                         for part in partition.parts])

    # -- probability --------------------------------------------------
    def prob(self, node, tables, region):
        """Pr over the join of ``tables`` (routed below ``node``) of ``region``."""
        tables = frozenset(tables)
        node = node.route(tables)
        if node.is_leaf:
            return self._leaf_prob(node, region)
        if region.is_full:
            return 1.0
        if region.is_empty():
            return 0.0
        key = (node.label, tuple(sorted(tables)), region.key)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        st = node.stats_for(tables)
        EL, ER = tables & node.left.tables, tables & node.right.tables
        q_t, q_s = region.project_tables(EL), region.project_tables(ER)
        p = self._combine(node, st, EL, ER, q_t, q_s)
        p = _clip(p)
        if self.trace is not None:
            self.trace.append({"node": node.label, "tables": sorted(tables), "prob": p})
        self.cache.put(key, p)
        return p

    def _combine(self, node, st, EL, ER, q_t, q_s):
        if st.w_size <= 0:
            return 0.0
        tw = st.t_size / st.w_size
        sw = st.s_size / st.w_size
        p_t = st.t_frac if q_t.is_full else self.part_probs(node.left, EL, q_t, st.t_part)
        p_s = st.s_frac if q_s.is_full else self.part_probs(node.right, ER, q_s, st.s_part)
        n_ctx = len(st.contexts)
        ctx = sw * np.bincount(st.s_context, weights=p_s * st.e_S, minlength=n_ctx)[:n_ctx]
        t_null = q_t.null_ok()
        s_null = q_s.null_ok()
        t_dangling = tw * float(p_t @ st.null_mass)
        if self.mode == "context":
            if q_t.is_full:
                ratio = np.ones(n_ctx)
            else:
                numer = st.t_size * (p_t @ st.M) + (st.s_size * st.dang_S if t_null else 0.0)
                denom = st.t_size * (st.t_frac @ st.M) + st.s_size * st.dang_S
                ratio = np.divide(numer, denom, out=np.zeros(n_ctx), where=denom > 0)
            return float(ctx @ ratio) + (t_dangling if s_null else 0.0)
        # independent: global T-side probability times normalized S-side mass
        if q_t.is_full:
            pr_t = 1.0
        else:
            pr_t = tw * float(p_t @ st.e_T) + (sw * float(st.dang_S.sum()) if t_null else 0.0)
        if q_s.is_full:
            pr_s = 1.0
        else:
            full_ctx = sw * float(st.s_frac @ st.e_S)
            null_full = tw * float(st.t_frac @ st.null_mass)
            denom = full_ctx + null_full
            numer = float(ctx.sum()) + (null_full if s_null else 0.0)
            pr_s = numer / denom if denom > 0 else 0.0
        return _clip(pr_t) * _clip(pr_s)

    # -- distinct -----------------------------------------------------
    def part_distinct(self, child, tables, region, partition, proj):
        node = child.route(tables)
        out = []
        for part in partition.parts:
            r = region.intersect(part)
            if node.is_leaf:
                self.cache.leaf_calls += 1
                out.append(float(node.model.distinct(r, list(proj))))
            else:
                out.append(self.distinct(node, tables, r, proj))
        return np.asarray(out)

    def distinct(self, node, tables, region, proj):
        tables = frozenset(tables)
        node = node.route(tables)
        if node.is_leaf:
            self.cache.leaf_calls += 1
            return float(node.model.distinct(region, list(proj)))
        if region.is_empty():
            return 0.0
        st = node.stats_for(tables)
        EL, ER = tables & node.left.tables, tables & node.right.tables
        q_t, q_s = region.project_tables(EL), region.project_tables(ER)
        proj_t = [a for a in proj if a.split(".", 1)[0] in EL]
        proj_s = [a for a in proj if a.split(".", 1)[0] in ER]
        d_t = self.part_distinct(node.left, EL, q_t, st.t_part, proj_t) if proj_t else None
        if not proj_s:
            if d_t is None:
                return 1.0
            return float(((st.e_T > 0) * d_t).sum())
        d_s = self.part_distinct(node.right, ER, q_s, st.s_part, proj_s)
        n_ctx = len(st.contexts)
        per_ctx = np.bincount(st.s_context, weights=(st.e_S > 0) * d_s, minlength=n_ctx)[:n_ctx]
        if d_t is None:
            return float(per_ctx.sum())
        if self.mode == "context":
            t_fac = ((st.M > 0) * d_t[:, None]).sum(axis=0)
        else:
            t_fac = np.full(n_ctx, float(((st.e_T > 0) * d_t).sum()))
        return float((t_fac * per_ctx)[per_ctx > 0].sum())

    # -- entry points -------------------------------------------------
    def estimate(self, query):
        query = self.query(query)
        t0 = time.perf_counter()
        calls0 = self.cache.leaf_calls
        tables = frozenset(query.tables)
        region = query.region.project_tables(tables)
        p = self.prob(self.tree.root, tables, region)
        size = self.tree.root.size(tables)
        card = max(p * size, 0.0)
        return EstimateReport(card, p, tuple(sorted(tables)), self.cache.leaf_calls - calls0,
                              (time.perf_counter() - t0) * 1e3, list(self.trace or []))

    def distinct_estimate(self, query):
        query = self.query(query)
        proj = list(query.region.attrs)
        if not proj:
            raise QueryError("distinct estimation needs at least one constrained attribute")
        return max(self.distinct(self.tree.root, frozenset(query.tables), query.region, proj), 0.0)


def estimate(tree, query, mode=None, cache=None):
    return Estimator(tree, mode, cache).estimate(query)


def distinct_estimate(tree, query, mode=None):
    return Estimator(tree, mode).distinct_estimate(query)


def connected_subplans(catalog, tables):
    tables = sorted(tables)
    out = []
    for r in range(1, len(tables) + 1):
        for combo in itertools.combinations(tables, r):
            if catalog.is_connected(combo):
                out.append(frozenset(combo))
    return out


def estimate_subplans(tree, query, mode=None, use_cache=True, cache=None):
    """Estimate every connected sub-plan of the query, largest first.

    Returns ``(reports, cache)`` where ``reports`` maps a sorted table tuple to
    its EstimateReport.  The first traversal (the query itself) fills the
    cache; smaller sub-plans then reuse the cached region probabilities.
    """
    cache = cache if cache is not None else SubplanCache(enabled=use_cache)
    est = Estimator(tree, mode, cache)
    query = est.query(query)
    plans = sorted(connected_subplans(tree.catalog, query.tables), key=lambda s: (-len(s), sorted(s)))
    reports = {}
    for sub in plans:
        q = Query(sub, query.region.project_tables(sub))
        reports[tuple(sorted(sub))] = est.estimate(q)
    return reports, cache
