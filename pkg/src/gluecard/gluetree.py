"""Join decomposition tree construction.

Each inner node splits its tables into a left side T and a right side S that
meet through exactly one join edge, and stores:

* ``t_part``   parts T_k over T's attributes, with e_T[k] = mean F*_{T->S}
* ``contexts`` cross-table contexts L_i over S's attributes
* ``s_part``   parts S_j over S's attributes, each nested inside one context
  (``s_context[j]``), with e_S[j] = mean F*_{S->T}
* ``M[k][i]``  mean number of S partners in context L_i of a row of T_k
* ``null_mass[k]`` share of T_k rows without any partner, ``dang_S[i]``
  share of S rows that sit in L_i and have no partner.

Statistics are kept per *variant*: a pair (E_L, E_R) of connected table
subsets containing the edge endpoints, so sub-plans that only cover part of
a subtree are estimated against their own join sizes and fanouts.
"""

import itertools
import json
import math
import zlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import fileformat, leafmodels
from .catalog import load_schema
from .correlate import (CorrelationParams, outer_join, outer_join_index, partner_counts,
                        rdc_score, take)
from .leafmodels import split_constraints
from .regions import Partition

DEFAULT_CONFIG = {
    "mode": "context",
    "tau": 0.3,
    "max_parts": 64,
    "min_rows": 300,         # below ~300 rows the k=20 rdc noise floor exceeds tau=0.3
    "sample_n": 10000,
    "stats_mode": "exact",
    "partitioning": "rdc",     # or "singleton": one part per distinct value combination
    "seed": 0,
    "variants": "all",         # or "full": only the full join of both sides
    "leaf": "exact",           # kind, or {"table": kind, "*": default}
    "leaf_params": {},
    "rdc_rows": 5000,
}

G_FUNCS = {
    "linear": lambda k: float(k),
    "quadratic": lambda k: float(k) ** 2,
    "exponential": lambda k: 2.0 ** k,
}


class TreeError(ValueError):
    pass


@dataclass
class CostParams:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    g_table: dict = field(default_factory=lambda: {
        "histogram": "linear", "exact": "linear", "sample": "linear", "spn": "quadratic"})

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("cost weights must be non-negative")
        if max(self.alpha, self.beta, self.gamma) <= 0:
            raise ValueError("at least one of alpha, beta, gamma must be positive")

    def g(self, kind, n_attrs):
        return G_FUNCS[self.g_table.get(kind, "linear")](n_attrs)

    def combine(self, n_left, n_right, score):
        return (self.alpha * min(n_left, n_right) + self.beta * score
                + self.gamma * score ** max(n_left, n_right))


def _seed_for(seed, label):
    return np.random.default_rng([int(seed), zlib.crc32(label.encode("utf-8"))])


def leaf_kind(config, table):
    leaf = config["leaf"]
    if isinstance(leaf, dict):
        return leaf.get(table, leaf.get("*", "exact"))
    return leaf


# --- relations ---------------------------------------------------------------

class Relations:
    """Memoized full outer joins of connected table subsets."""

    def __init__(self, catalog, data):
        self.catalog = catalog
        self.data = data
        self._cache = {}

    def get(self, tables):
        tables = frozenset(tables)
        if tables in self._cache:
            return self._cache[tables]
        if len(tables) == 1:
            (t,) = tables
            rel = self.data[t].qualified_columns()
        else:
            # peel off a leaf table of the (acyclic) join subgraph
            for t in sorted(tables):
                rest = tables - {t}
                if self.catalog.is_connected(rest):
                    break
            (edge,) = self.catalog.edge_between({t}, rest)
            t_attr, other, o_attr = edge.side(t)
            rel, _, _ = outer_join(self.get(rest), self.get({t}), f"{other}.{o_attr}",
                                   f"{t}.{t_attr}")
        self._cache[tables] = rel
        return rel


def attrs_of(catalog, tables):
    out = []
    for t in catalog.tables:
        if t.name in tables:
            out.extend(t.qualified())
    return out


# --- partition refinement ----------------------------------------------------

class _Part:
    __slots__ = ("idx", "score", "cands", "capped", "origin")

    def __init__(self, idx, origin):
        self.idx = idx
        self.origin = origin
        self.score = None
        self.cands = ()
        self.capped = None


def _rdc_rows(x, y, idx, params, limit, rng):
    x, y = x[idx], y[idx]
    ok = ~(np.isnan(x) | np.isnan(y))
    x, y = x[ok], y[ok]
    if len(x) < 3:
        return 0.0
    if len(x) > limit:
        pick = rng.choice(len(x), size=limit, replace=False)
        x, y = x[pick], y[pick]
    return rdc_score(x, y, params)


def fanout_scorer(cols, attrs, fan, params=None, limit=5000, seed=0):
    """Part score = max over attributes of rdc(attribute, fanout)."""
    params = params or CorrelationParams()

    def score(idx):
        rng = np.random.default_rng(seed)
        res = [(_rdc_rows(cols[a], fan, idx, params, limit, rng), a) for a in attrs]
        res.sort(key=lambda t: -t[0])
        return (res[0][0] if res else 0.0), res
    return score


def cross_scorer(cols, split_attrs, other_attrs, params=None, limit=5000, seed=0):
    """Part score = max over (split attr, other attr) pairs of rdc."""
    params = params or CorrelationParams()

    def score(idx):
        rng = np.random.default_rng(seed)
        res = []
        for a in split_attrs:
            best = 0.0
            for b in other_attrs:
                best = max(best, _rdc_rows(cols[a], cols[b], idx, params, limit, rng))
            res.append((best, a))
        res.sort(key=lambda t: -t[0])
        return (res[0][0] if res else 0.0), res
    return score


def singleton_scorer(cols, attrs):
    """Score 1 while a part still holds more than one distinct value combination."""
    def score(idx):
        res = []
        for a in attrs:
            v = cols[a][idx]
            res.append((float(len(np.unique(v[~np.isnan(v)]))), a))
        res.sort(key=lambda t: -t[0])
        combos = 0
        if len(idx):
            block = np.column_stack([cols[a][idx] for a in attrs]) if attrs else np.zeros((len(idx), 0))
            combos = np.unique(np.nan_to_num(block, nan=-np.inf), axis=0).shape[0]
        return (1.0 if combos > 1 else 0.0), [(1.0, a) for s, a in res if s > 1]
    return score


def refine(cols, rows, scope, metas, scorer, tau, max_parts, min_rows, rng, base=None, uid=""):
    """Iteratively split parts whose score exceeds ``tau``.

    ``rows`` are the indices of ``cols`` that drive the splits (rows with a
    null on a split attribute follow the right branch).  Returns a Partition
    whose ``meta`` records, per part, the final score, the reason it stopped
    above the threshold (if any) and the base part it descends from.
    """
    rows = np.asarray(rows, dtype=np.int64)
    base = base or Partition.single(scope)
    sub = {a: cols[a][rows] for a in cols}
    base_ids = base.assign(sub, len(rows)) if len(rows) else np.zeros(0, dtype=np.int64)

    def lift(node):
        if node[0] == "leaf":
            p = _Part(rows[base_ids == node[1]], node[1])
            return ["leaf", p]
        _, attr, lc, rc, left, right = node
        return ["split", attr, lc, rc, lift(left), lift(right)]

    tree = lift(base.tree)
    leaves = []

    def collect(node):
        if node[0] == "leaf":
            leaves.append(node)
        else:
            collect(node[4])
            collect(node[5])
    collect(tree)
    for node in leaves:
        p = node[1]
        p.score, p.cands = scorer(p.idx)

    while True:
        open_ = [n for n in leaves if n[1].score > tau and n[1].capped is None]
        if not open_:
            break
        if len(leaves) >= max_parts:
            for n in open_:
                n[1].capped = "max_parts"
            break
        node = max(open_, key=lambda n: n[1].score)
        p = node[1]
        if len(p.idx) < min_rows:
            p.capped = "min_rows"
            continue
        done = False
        for s, a in p.cands:
            if s <= tau:
                break
            vals = cols[a][p.idx]
            split = split_constraints(metas[a], vals, rng)
            if split is None:
                continue
            lc, rc = split
            lm = lc.mask(vals)
            if lm.all() or not lm.any():
                continue
            lp, rp = _Part(p.idx[lm], p.origin), _Part(p.idx[~lm], p.origin)
            lp.score, lp.cands = scorer(lp.idx)
            rp.score, rp.cands = scorer(rp.idx)
            lnode, rnode = ["leaf", lp], ["leaf", rp]
            node[:] = ["split", a, lc, rc, lnode, rnode]
            leaves.remove(node)
            leaves.extend([lnode, rnode])
            done = True
            break
        if not done:
            p.capped = "unsplittable"

    order = []

    def freeze(node):
        if node[0] == "leaf":
            order.append(node[1])
            return ("leaf", len(order) - 1)
        _, attr, lc, rc, left, right = node
        return ("split", attr, lc, rc, freeze(left), freeze(right))
    frozen = freeze(tree)
    meta = [{"score": float(p.score), "capped": p.capped if p.score > tau else None,
             "origin": int(p.origin), "rows": int(len(p.idx))} for p in order]
    return Partition.from_tree(tuple(scope), frozen, uid, meta)


def divide_fanout(sample_cols, fanout, attrs, metas, tau=0.3, max_parts=64, min_rows=300,
                  seed=0, base=None, stats_cols=None, stats_fanout=None, uid=""):
    """Split until no attribute is correlated with the fanout column above ``tau``.

    Returns ``(partition, e_star, null_mass)`` with per-part means of the
    clamped fanout and the share of zero-fanout rows, computed over
    ``stats_cols``/``stats_fanout`` when given (exact mode) else over the sample.
    """
    fanout = np.asarray(fanout, dtype=float)
    rng = _seed_for(seed, uid + "/fanout")
    n = len(fanout)
    part = refine(sample_cols, np.arange(n), attrs, metas,
                  fanout_scorer(sample_cols, attrs, fanout, seed=seed),
                  tau, max_parts, min_rows, rng, base, uid)
    cols = stats_cols if stats_cols is not None else sample_cols
    fan = np.asarray(stats_fanout if stats_fanout is not None else fanout, dtype=float)
    e, null = part_means(part, cols, fan)
    return part, e, null


def divide_cross(join_cols, split_attrs, other_attrs, metas, tau=0.3, max_parts=64,
                 min_rows=300, seed=0, base=None, rows=None, uid=""):
    """Split ``split_attrs`` until no cross pair in a part scores above ``tau``.

    Rows whose split side is null (null-extended rows) are excluded; they form
    the dedicated null context handled by the caller.
    """
    n = len(next(iter(join_cols.values())))
    if rows is None:
        nonnull = np.ones(n, dtype=bool)
        for a in split_attrs:
            nonnull &= ~np.isnan(join_cols[a])
        rows = np.flatnonzero(nonnull)
    rng = _seed_for(seed, uid + "/cross")
    return refine(join_cols, rows, split_attrs, metas,
                  cross_scorer(join_cols, split_attrs, other_attrs, seed=seed),
                  tau, max_parts, min_rows, rng, base, uid)


def part_means(part, cols, fanout):
    ids = part.assign(cols, len(fanout))
    k = len(part.parts)
    ok = ids >= 0
    cnt = np.bincount(ids[ok], minlength=k)[:k].astype(float)
    fstar = np.maximum(fanout, 1)
    tot = np.bincount(ids[ok], weights=fstar[ok], minlength=k)[:k]
    zero = np.bincount(ids[ok], weights=(fanout[ok] == 0).astype(float), minlength=k)[:k]
    e = np.where(cnt > 0, tot / np.maximum(cnt, 1), 1.0)
    null = np.where(cnt > 0, zero / np.maximum(cnt, 1), 0.0)
    return e, null


def restricted_fanout_matrix(t_cols, s_cols, t_key, s_key, t_part, contexts, s_context_of_rows=None):
    """M[k][i] and null_context_mass[k] over the rows of ``t_cols``.

    M[k][i] is the mean (unclamped) number of S partners inside context i of a
    row of T_k.  ``s_context_of_rows`` may supply the context of every S row.
    """
    t_ids = t_part.assign(t_cols)
    ctx = s_context_of_rows if s_context_of_rows is not None else contexts.assign(s_cols)
    k, i = len(t_part.parts), len(contexts.parts)
    li, ri = outer_join_index(t_cols[t_key], s_cols[s_key])
    m = (li >= 0) & (ri >= 0)
    kk, ii = t_ids[li[m]], ctx[ri[m]]
    ok = (kk >= 0) & (ii >= 0)
    M = np.zeros((k, i))
    np.add.at(M, (kk[ok], ii[ok]), 1.0)
    cnt = np.bincount(t_ids[t_ids >= 0], minlength=k)[:k].astype(float)
    M = np.where(cnt[:, None] > 0, M / np.maximum(cnt, 1)[:, None], 0.0)
    fan = partner_counts(t_cols[t_key], s_cols[s_key])
    zero = np.bincount(t_ids[t_ids >= 0], weights=(fan[t_ids >= 0] == 0).astype(float),
                       minlength=k)[:k]
    null = np.where(cnt > 0, zero / np.maximum(cnt, 1), 0.0)
    return M, null


# --- tree structure --------------------------------------------------------

@dataclass
class NodeStats:
    left_tables: tuple
    right_tables: tuple
    t_key: str
    s_key: str
    t_size: float
    s_size: float
    w_size: float
    t_part: Partition
    contexts: Partition
    s_part: Partition
    s_context: np.ndarray
    e_T: np.ndarray
    e_S: np.ndarray
    M: np.ndarray
    null_mass: np.ndarray
    dang_S: np.ndarray
    t_frac: np.ndarray
    s_frac: np.ndarray
    cross_score: float = 0.0

    @property
    def key(self):
        return (self.left_tables, self.right_tables)

    def to_doc(self):
        return {
            "left_tables": list(self.left_tables), "right_tables": list(self.right_tables),
            "t_key": self.t_key, "s_key": self.s_key,
            "t_size": self.t_size, "s_size": self.s_size, "w_size": self.w_size,
            "t_part": self.t_part.to_doc(), "contexts": self.contexts.to_doc(),
            "s_part": self.s_part.to_doc(), "s_context": self.s_context.tolist(),
            "e_T": self.e_T.tolist(), "e_S": self.e_S.tolist(), "M": self.M.tolist(),
            "null_mass": self.null_mass.tolist(), "dang_S": self.dang_S.tolist(),
            "t_frac": self.t_frac.tolist(), "s_frac": self.s_frac.tolist(),
            "cross_score": self.cross_score,
        }

    @classmethod
    def from_doc(cls, d):
        k, i = len(d["e_T"]), len(d["dang_S"])
        return cls(tuple(d["left_tables"]), tuple(d["right_tables"]), d["t_key"], d["s_key"],
                   d["t_size"], d["s_size"], d["w_size"], Partition.from_doc(d["t_part"]),
                   Partition.from_doc(d["contexts"]), Partition.from_doc(d["s_part"]),
                   np.asarray(d["s_context"], dtype=np.int64), np.asarray(d["e_T"], dtype=float),
                   np.asarray(d["e_S"], dtype=float),
                   np.asarray(d["M"], dtype=float).reshape(k, i),
                   np.asarray(d["null_mass"], dtype=float), np.asarray(d["dang_S"], dtype=float),
                   np.asarray(d["t_frac"], dtype=float), np.asarray(d["s_frac"], dtype=float),
                   d.get("cross_score", 0.0))


class DecompNode:
    def __init__(self, tables, label, model=None, left=None, right=None, edge=None, variants=None):
        self.tables = frozenset(tables)
        self.label = label
        self.model = model
        self.left = left
        self.right = right
        self.edge = edge
        self.variants = variants or {}

    @property
    def is_leaf(self):
        return self.model is not None

    @property
    def full(self):
        """Statistics of the node's own join (both sides complete)."""
        return self.variants[(tuple(sorted(self.left.tables)), tuple(sorted(self.right.tables)))]

    def route(self, tables):
        """Descend through pass-through nodes to the one that joins ``tables``."""
        node = self
        tables = frozenset(tables)
        while not node.is_leaf:
            if tables <= node.left.tables:
                node = node.left
            elif tables <= node.right.tables:
                node = node.right
            else:
                break
        return node

    def stats_for(self, tables):
        key = (tuple(sorted(tables & self.left.tables)), tuple(sorted(tables & self.right.tables)))
        try:
            return self.variants[key]
        except KeyError:
            raise TreeError(f"no statistics for sub-plan {sorted(tables)} at node "
                            f"{self.label}; build with variants='all'") from None

    def size(self, tables):
        node = self.route(tables)
        if node.is_leaf:
            return float(node.model.row_count)
        return float(node.stats_for(frozenset(tables)).w_size)

    def walk(self):
        yield self
        if not self.is_leaf:
            yield from self.left.walk()
            yield from self.right.walk()

    def shape(self):
        if self.is_leaf:
            (t,) = self.tables
            return t
        return (self.left.shape(), self.right.shape())

    def to_doc(self):
        if self.is_leaf:
            return {"label": self.label, "tables": sorted(self.tables), "model": self.model.to_doc()}
        return {"label": self.label, "tables": sorted(self.tables),
                "edge": {"left": list(self.edge.left), "right": list(self.edge.right),
                         "kind": self.edge.kind},
                "left": self.left.to_doc(), "right": self.right.to_doc(),
                "variants": [v.to_doc() for _, v in sorted(self.variants.items())]}

    @classmethod
    def from_doc(cls, d):
        from .catalog import JoinEdge
        if "model" in d:
            return cls(d["tables"], d["label"], model=leafmodels.from_doc(d["model"]))
        variants = {}
        for v in d["variants"]:
            st = NodeStats.from_doc(v)
            variants[st.key] = st
        e = d["edge"]
        return cls(d["tables"], d["label"], left=cls.from_doc(d["left"]),
                   right=cls.from_doc(d["right"]),
                   edge=JoinEdge(tuple(e["left"]), tuple(e["right"]), e["kind"]),
                   variants=variants)


class DecompositionTree:
    def __init__(self, root, catalog, config, cost, cost_value=None):
        self.root = root
        self.catalog = catalog
        self.config = dict(config)
        self.cost = cost
        self.cost_value = cost_value

    @property
    def tables(self):
        return self.root.tables

    def inner_nodes(self):
        return [n for n in self.root.walk() if not n.is_leaf]

    def leaves(self):
        return [n for n in self.root.walk() if n.is_leaf]

    def shape(self):
        return self.root.shape()

    def to_doc(self):
        return {"catalog": self.catalog.to_doc(), "config": self.config,
                "cost": asdict(self.cost), "cost_value": self.cost_value,
                "root": self.root.to_doc()}

    @classmethod
    def from_doc(cls, d):
        return cls(DecompNode.from_doc(d["root"]), load_schema(d["catalog"]), d["config"],
                   CostParams(**d["cost"]), d.get("cost_value"))

    def inspect(self):
        """Compact structured summary of the tree (no raw leaf data)."""
        def node(n):
            if n.is_leaf:
                return {"table": next(iter(n.tables)), "leaf": n.model.kind,
                        "rows": n.model.row_count}
            st = n.full
            return {"join": str(n.edge), "w_size": st.w_size,
                    "t_parts": len(st.t_part), "contexts": len(st.contexts),
                    "s_parts": len(st.s_part), "cross_score": st.cross_score,
                    "e_T": st.e_T.tolist(), "e_S": st.e_S.tolist(),
                    "variants": [[list(k[0]), list(k[1])] for k in sorted(n.variants)],
                    "left": node(n.left), "right": node(n.right)}
        return {"config": self.config, "cost": self.cost_value, "shape": self.shape(),
                "root": node(self.root)}


# --- tree search -----------------------------------------------------------

def connected_subsets(catalog, tables, containing=None):
    tables = sorted(tables)
    out = []
    for r in range(1, len(tables) + 1):
        for combo in itertools.combinations(tables, r):
            if containing is not None and containing not in combo:
                continue
            if catalog.is_connected(combo):
                out.append(frozenset(combo))
    return out


def optimal_shape(catalog, tables, score_fn, cost, leaf_kind_of=None):
    """Dynamic program over connected splits minimizing the Eq.-7 style cost.

    ``score_fn(left_tables, right_tables)`` gives s(T, S).  Subsets are
    bitmasks over ``tables`` in catalog order; among equal costs the split
    with the smallest left bitmask wins.  Returns ``(cost, shape)`` where a
    shape is a table name or a ``(left, right)`` pair.
    """
    order = [t for t in catalog.table_names if t in set(tables)]
    idx = {t: i for i, t in enumerate(order)}
    leaf_kind_of = leaf_kind_of or (lambda t: "exact")

    def members(mask):
        return frozenset(t for t in order if mask >> idx[t] & 1)

    connected = {}

    def is_conn(mask):
        if mask not in connected:
            connected[mask] = catalog.is_connected(members(mask))
        return connected[mask]

    memo = {}

    def best(mask):
        if mask in memo:
            return memo[mask]
        tabs = members(mask)
        if len(tabs) == 1:
            (t,) = tabs
            res = (cost.g(leaf_kind_of(t), len(catalog.table(t).attributes)), t)
            memo[mask] = res
            return res
        found = None
        sub = (mask - 1) & mask
        subs = []
        while sub:
            subs.append(sub)
            sub = (sub - 1) & mask
        for left in sorted(subs):
            right = mask ^ left
            if not is_conn(left) or not is_conn(right):
                continue
            lc, ls = best(left)
            rc, rs = best(right)
            s = score_fn(members(left), members(right))
            c = cost.combine(bin(left).count("1"), bin(right).count("1"), s) + lc + rc
            if found is None or c < found[0]:
                found = (c, (ls, rs))
        memo[mask] = found
        return found

    full = 0
    for t in order:
        full |= 1 << idx[t]
    return best(full)


def shape_cost(catalog, shape, score_fn, cost, leaf_kind_of=None):
    """Cost of a given shape under the same model (for reporting)."""
    leaf_kind_of = leaf_kind_of or (lambda t: "exact")

    def tabs(s):
        return frozenset([s]) if isinstance(s, str) else tabs(s[0]) | tabs(s[1])

    def rec(s):
        if isinstance(s, str):
            return cost.g(leaf_kind_of(s), len(catalog.table(s).attributes))
        l, r = tabs(s[0]), tabs(s[1])
        return cost.combine(len(l), len(r), score_fn(l, r)) + rec(s[0]) + rec(s[1])
    return rec(shape)


def check_valid(tree):
    """The three structural validity conditions; raises TreeError on violation."""
    if tree.root.tables != frozenset(tree.config.get("join_set", tree.root.tables)):
        raise TreeError("root does not cover the join set")
    for n in tree.root.walk():
        if n.is_leaf:
            if len(n.tables) != 1:
                raise TreeError("leaf with several tables")
            continue
        if n.left.tables & n.right.tables or (n.left.tables | n.right.tables) != n.tables:
            raise TreeError(f"node {n.label} does not split its tables")
        for side in (n.left.tables, n.right.tables):
            if not tree.catalog.is_connected(side):
                raise TreeError(f"node {n.label} has a disconnected side")
        if not tree.catalog.edge_between(n.left.tables, n.right.tables):
            raise TreeError(f"node {n.label} sides share no join edge")
    return True


# --- builder ---------------------------------------------------------------

class _Builder:
    def __init__(self, catalog, data, config):
        self.catalog = catalog
        self.data = data
        self.config = config
        self.rel = Relations(catalog, data)
        self.keys = catalog.key_attributes()
        self.metas = {f"{t.name}.{a.name}": a for t in catalog.tables for a in t.attributes}
        self._scores = {}

    def rng(self, label):
        return _seed_for(self.config["seed"], label)

    def split_score(self, left, right):
        """s(T, S): largest cross rdc between non-key attributes over a join sample."""
        key = frozenset([frozenset(left), frozenset(right)])
        if key in self._scores:
            return self._scores[key]
        (edge,) = self.catalog.edge_between(left, right)
        lt = edge.tables[0] if edge.tables[0] in left else edge.tables[1]
        l_attr, rt, r_attr = edge.side(lt)
        L, R = self.rel.get(left), self.rel.get(right)
        li, ri = outer_join_index(L[f"{lt}.{l_attr}"], R[f"{rt}.{r_attr}"])
        rng = self.rng("score/" + ",".join(sorted(left)) + "|" + ",".join(sorted(right)))
        n = self.config["sample_n"]
        if len(li) > n:
            pick = np.sort(rng.choice(len(li), size=n, replace=False))
            li, ri = li[pick], ri[pick]
        cols = take(L, li)
        cols.update(take(R, ri))
        la = [a for a in attrs_of(self.catalog, left) if a not in self.keys]
        ra = [a for a in attrs_of(self.catalog, right) if a not in self.keys]
        params = CorrelationParams(seed=self.config["seed"])
        best = 0.0
        allrows = np.arange(len(li))
        for a in la:
            for b in ra:
                best = max(best, _rdc_rows(cols[a], cols[b], allrows, params,
                                           self.config["rdc_rows"], rng))
        self._scores[key] = best
        return best

    def sample_rows(self, n_rows, label):
        n = self.config["sample_n"]
        if self.config["partitioning"] == "singleton" or n >= n_rows:
            return np.arange(n_rows)
        return np.sort(self.rng(label).choice(n_rows, size=n, replace=False))

    def variant_stats(self, node, EL, ER, base=None):
        cfg = self.config
        singleton = cfg["partitioning"] == "singleton"
        exact = cfg["stats_mode"] == "exact"
        edge = node.edge
        a_tab = edge.tables[0] if edge.tables[0] in EL else edge.tables[1]
        a_attr, b_tab, b_attr = edge.side(a_tab)
        t_key, s_key = f"{a_tab}.{a_attr}", f"{b_tab}.{b_attr}"
        T, S = self.rel.get(EL), self.rel.get(ER)
        nT, nS = len(T[t_key]), len(S[s_key])
        f_ts = partner_counts(T[t_key], S[s_key])
        f_st = partner_counts(S[s_key], T[t_key])
        t_attrs, s_attrs = attrs_of(self.catalog, EL), attrs_of(self.catalog, ER)
        vlabel = f"{node.label}/{','.join(sorted(EL))}|{','.join(sorted(ER))}"

        t_rows = self.sample_rows(nT, vlabel + "/smpT")
        s_rows = self.sample_rows(nS, vlabel + "/smpS")
        li, ri = outer_join_index(T[t_key], S[s_key])
        w_rows = self.sample_rows(len(li), vlabel + "/smpW")
        li, ri = li[w_rows], ri[w_rows]
        W = take(T, li)
        W.update(take(S, ri))
        t_smp = {a: T[a][t_rows] for a in t_attrs}
        s_smp = {a: S[a][s_rows] for a in s_attrs}

        tau, mp, mr, seed = cfg["tau"], cfg["max_parts"], cfg["min_rows"], cfg["seed"]
        base = base or {}
        if singleton:
            rng = self.rng(vlabel + "/single")
            t_part = refine(T, np.arange(nT), t_attrs, self.metas, singleton_scorer(T, t_attrs),
                            0.5, math.inf, 1, rng, None, vlabel + "/T")
            contexts = refine(S, np.arange(nS), s_attrs, self.metas,
                              singleton_scorer(S, s_attrs), 0.5, math.inf, 1, rng, None,
                              vlabel + "/L")
            s_part = Partition.from_tree(contexts.scope, contexts.tree, vlabel + "/S",
                                         [dict(m, origin=i) for i, m in enumerate(contexts.meta)])
        else:
            t_split = [a for a in t_attrs if a not in self.keys]
            s_split = [a for a in s_attrs if a not in self.keys]
            t_rows_w = np.flatnonzero(li >= 0)
            s_rows_w = np.flatnonzero(ri >= 0)
            if t_split and s_split:
                t_cross = divide_cross(W, t_split, s_split, self.metas, tau, mp, mr, seed,
                                       base.get("t"), t_rows_w, vlabel + "/T")
                contexts = divide_cross(W, s_split, t_split, self.metas, tau, mp, mr, seed,
                                        base.get("L"), s_rows_w, vlabel + "/L")
            else:
                t_cross = base.get("t") or Partition.single(t_attrs, vlabel + "/T")
                contexts = base.get("L") or Partition.single(s_attrs, vlabel + "/L")
            t_part, _, _ = divide_fanout(t_smp, f_ts[t_rows], t_split, self.metas, tau, mp, mr,
                                         seed, t_cross, uid=vlabel + "/T")
            s_part, _, _ = divide_fanout(s_smp, f_st[s_rows], s_split, self.metas, tau, mp, mr,
                                         seed, contexts, uid=vlabel + "/S")
        t_part.uid, contexts.uid, s_part.uid = vlabel + "/T", vlabel + "/L", vlabel + "/S"
        s_context = np.array([m["origin"] for m in s_part.meta], dtype=np.int64)

        if exact:
            t_cols, t_fan = T, f_ts
            s_cols, s_fan = S, f_st
        else:
            t_cols, t_fan = {a: T[a][t_rows] for a in T}, f_ts[t_rows]
            s_cols, s_fan = {a: S[a][s_rows] for a in S}, f_st[s_rows]
        e_T, _ = part_means(t_part, t_cols, t_fan)
        e_S, _ = part_means(s_part, s_cols, s_fan)
        s_ids_all = s_part.assign(S)
        ctx_all = np.where(s_ids_all >= 0, s_context[np.maximum(s_ids_all, 0)], -1)
        M, null_mass = restricted_fanout_matrix(t_cols, S, t_key, s_key, t_part, contexts, ctx_all)
        s_ids = s_part.assign(s_cols)
        ok = s_ids >= 0
        n_s_stat = max(len(s_fan), 1)
        dang_S = np.bincount(s_context[s_ids[ok]], weights=(s_fan[ok] == 0).astype(float),
                             minlength=len(contexts))[:len(contexts)] / n_s_stat
        s_frac = np.bincount(s_ids[ok], minlength=len(s_part))[:len(s_part)] / n_s_stat
        t_ids = t_part.assign(t_cols)
        t_frac = (np.bincount(t_ids[t_ids >= 0], minlength=len(t_part))[:len(t_part)]
                  / max(len(t_fan), 1))

        t_size = float(self.size_of(node.left, EL, nT))
        s_size = float(self.size_of(node.right, ER, nS))
        if exact:
            w_size = float(np.maximum(f_ts, 1).sum() + (f_st == 0).sum())
        else:
            w_size = float(t_size * np.maximum(t_fan, 1).mean() if len(t_fan) else 0.0) \
                + float(s_size * (s_fan == 0).mean() if len(s_fan) else 0.0)
        cross = self.split_score(EL, ER)
        st = NodeStats(tuple(sorted(EL)), tuple(sorted(ER)), t_key, s_key, t_size, s_size,
                       w_size, t_part, contexts, s_part, s_context, e_T, e_S, M, null_mass,
                       dang_S, t_frac, s_frac, cross)
        self.annotate_checks(node, st)
        return st

    def size_of(self, child, tables, exact_rows):
        if self.config["stats_mode"] == "exact":
            return exact_rows
        return child.size(tables)

    # staleness scores --------------------------------------------------
    def part_scores(self, node, st):
        """Fresh per-part scores for (t_part, contexts, s_part) of a variant."""
        EL, ER = frozenset(st.left_tables), frozenset(st.right_tables)
        T, S = self.rel.get(EL), self.rel.get(ER)
        f_ts = partner_counts(T[st.t_key], S[st.s_key])
        f_st = partner_counts(S[st.s_key], T[st.t_key])
        t_attrs = [a for a in attrs_of(self.catalog, EL) if a not in self.keys]
        s_attrs = [a for a in attrs_of(self.catalog, ER) if a not in self.keys]
        vlabel = f"{node.label}/{','.join(st.left_tables)}|{','.join(st.right_tables)}/check"
        li, ri = outer_join_index(T[st.t_key], S[st.s_key])
        w_rows = self.sample_rows(len(li), vlabel + "/W")
        li, ri = li[w_rows], ri[w_rows]
        W = take(T, li)
        W.update(take(S, ri))
        t_rows = self.sample_rows(len(f_ts), vlabel + "/T")
        s_rows = self.sample_rows(len(f_st), vlabel + "/S")
        seed = self.config["seed"]

        def per_part(part, cols, rows, scorers):
            ids = part.assign({a: cols[a][rows] for a in part.scope} if part.scope else {},
                              len(rows)) if len(part) > 1 else np.zeros(len(rows), dtype=np.int64)
            out = []
            for k in range(len(part)):
                idx = rows[ids == k]
                out.append(max([f(idx)[0] for f in scorers] or [0.0]))
            return out

        t_sc, l_sc, s_sc = [], [], []
        cross_t = cross_scorer(W, t_attrs, s_attrs, seed=seed) if t_attrs and s_attrs else None
        cross_s = cross_scorer(W, s_attrs, t_attrs, seed=seed) if t_attrs and s_attrs else None
        fan_t = fanout_scorer(T, t_attrs, f_ts.astype(float), seed=seed) if t_attrs else None
        fan_s = fanout_scorer(S, s_attrs, f_st.astype(float), seed=seed) if s_attrs else None
        t_w = np.flatnonzero(li >= 0)
        s_w = np.flatnonzero(ri >= 0)
        t_sc = [max(a, b) for a, b in zip(
            per_part(st.t_part, W, t_w, [cross_t] if cross_t else []),
            per_part(st.t_part, T, t_rows, [fan_t] if fan_t else []))]
        l_sc = per_part(st.contexts, W, s_w, [cross_s] if cross_s else [])
        s_sc = per_part(st.s_part, S, s_rows, [fan_s] if fan_s else [])
        return {"t_part": t_sc, "contexts": l_sc, "s_part": s_sc}

    def annotate_checks(self, node, st):
        if self.config["partitioning"] == "singleton":
            return
        scores = self.part_scores(node, st)
        for name, vals in scores.items():
            part = getattr(st, name)
            for m, v in zip(part.meta, vals):
                m["check"] = float(v)

    def build_node(self, shape, label):
        if isinstance(shape, str):
            kind = leaf_kind(self.config, shape)
            params = self.config["leaf_params"].get(kind, {}) if self.config["leaf_params"] else {}
            model = leafmodels.build(self.data[shape], kind, params,
                                     int(self.rng(label + "/leaf").integers(2 ** 31)))
            return DecompNode([shape], label, model=model)
        left = self.build_node(shape[0], label + "0")
        right = self.build_node(shape[1], label + "1")
        (edge,) = self.catalog.edge_between(left.tables, right.tables)
        node = DecompNode(left.tables | right.tables, label, left=left, right=right, edge=edge)
        self.fill_variants(node)
        return node

    def fill_variants(self, node, bases=None):
        a_tab = node.edge.tables[0] if node.edge.tables[0] in node.left.tables else node.edge.tables[1]
        b_tab = node.edge.tables[1] if a_tab == node.edge.tables[0] else node.edge.tables[0]
        if self.config["variants"] == "all":
            lefts = connected_subsets(self.catalog, node.left.tables, a_tab)
            rights = connected_subsets(self.catalog, node.right.tables, b_tab)
        else:
            lefts, rights = [node.left.tables], [node.right.tables]
        node.variants = {}
        for EL in lefts:
            for ER in rights:
                key = (tuple(sorted(EL)), tuple(sorted(ER)))
                base = (bases or {}).get(key)
                node.variants[key] = self.variant_stats(node, EL, ER, base)


def _config(config):
    cfg = dict(DEFAULT_CONFIG)
    cfg.update(config or {})
    if cfg["mode"] not in ("context", "independent"):
        raise ValueError(f"unknown mode {cfg['mode']!r}")
    if cfg["stats_mode"] not in ("exact", "sampled"):
        raise ValueError(f"unknown stats mode {cfg['stats_mode']!r}")
    if cfg["partitioning"] not in ("rdc", "singleton"):
        raise ValueError(f"unknown partitioning {cfg['partitioning']!r}")
    if not 0 < cfg["tau"] <= 1:
        raise ValueError("tau must lie in (0, 1]")
    return cfg


def split_scorer(catalog, data, config=None):
    """The s(T, S) function build_tree uses by default (memoized)."""
    return _Builder(catalog, data, _config(config)).split_score


def build_tree(catalog, data, join_set=None, cost=None, config=None, score_fn=None):
    """Search the cheapest valid decomposition tree and fill in its statistics."""
    cfg = _config(config)
    cost = cost or CostParams()
    join_set = sorted(join_set or catalog.table_names)
    if not catalog.is_connected(join_set):
        raise TreeError(f"join set {join_set} is disconnected")
    if len(catalog.edges_within(join_set)) != len(join_set) - 1:
        raise TreeError("cyclic join schemas are not supported")
    for t in join_set:
        if t not in data:
            raise TreeError(f"missing data for table {t}")
    cfg["join_set"] = join_set
    b = _Builder(catalog, data, cfg)
    score_fn = score_fn or b.split_score
    total, shape = optimal_shape(catalog, join_set, score_fn, cost,
                                 lambda t: leaf_kind(cfg, t))
    root = b.build_node(shape, "n")
    tree = DecompositionTree(root, catalog, cfg, cost, total)
    check_valid(tree)
    return tree


# --- maintenance -----------------------------------------------------------

@dataclass
class StalePart:
    node: str
    variant: tuple
    partition: str
    part: int
    score: float
    build_score: float


def check_update(tree, data, tau=None, resplit=False):
    """Report parts whose local independence no longer holds on ``data``.

    A part is stale when its fresh score exceeds ``tau`` and it either met the
    threshold at build time or got worse by more than 0.05 since (parts that
    stopped above the threshold because of a cap are only reported when the
    dependence grew).  With ``resplit`` a refreshed tree is returned as well:
    stale parts are split further, statistics and leaf models are rebuilt.
    """
    tau = tree.config["tau"] if tau is None else tau
    b = _Builder(tree.catalog, data, tree.config)
    stale = []
    for node in tree.inner_nodes():
        for key, st in sorted(node.variants.items()):
            fresh = b.part_scores(node, st)
            for name, vals in fresh.items():
                part = getattr(st, name)
                for k, v in enumerate(vals):
                    built = part.meta[k].get("check", 0.0) if part.meta else 0.0
                    if v > tau and (built <= tau or v > built + 0.05):
                        stale.append(StalePart(node.label, key, name, k, float(v), float(built)))
    if not resplit:
        return stale
    cfg = dict(tree.config)
    cfg["tau"] = tau
    b = _Builder(tree.catalog, data, cfg)

    def rebuild(n):
        if n.is_leaf:
            fresh = b.build_node(next(iter(n.tables)), n.label)
            return fresh
        left, right = rebuild(n.left), rebuild(n.right)
        new = DecompNode(n.tables, n.label, left=left, right=right, edge=n.edge)
        bases = {k: {"t": _strip(v.t_part), "L": _strip(v.contexts)} for k, v in n.variants.items()}
        b.fill_variants(new, bases)
        return new

    root = rebuild(tree.root)
    return stale, DecompositionTree(root, tree.catalog, cfg, tree.cost, tree.cost_value)


def _strip(part):
    return Partition.from_tree(part.scope, part.tree, part.uid)


# --- persistence -----------------------------------------------------------

def save(tree, sink):
    blob = fileformat.dumps(tree.to_doc(), fileformat.KIND_TREE)
    if hasattr(sink, "write"):
        sink.write(blob)
    else:
        with open(sink, "wb") as fh:
            fh.write(blob)
    return blob


def load(source):
    if isinstance(source, (bytes, bytearray)):
        blob = bytes(source)
    elif hasattr(source, "read"):
        blob = source.read()
    else:
        with open(source, "rb") as fh:
            blob = fh.read()
    return DecompositionTree.from_doc(fileformat.loads(blob, fileformat.KIND_TREE))


def dump_text(tree):
    return json.dumps(tree.inspect(), sort_keys=True, indent=1)
