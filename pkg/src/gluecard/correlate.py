"""Dependence scores, table/join samples and fanout columns.

A *relation* here is a plain dict of qualified column name -> float array
(NaN marks a null-extended value).  Single tables and materialized joins use
the same representation so the partitioning code does not care which it gets.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class CorrelationParams:
    k: int = 20
    s: float = 1.0 / 6.0
    seed: int = 42

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.s > 0:
            raise ValueError("s must be > 0")


DEFAULT_PARAMS = CorrelationParams()


@dataclass
class SampleSet:
    columns: dict
    fanout: dict = field(default_factory=dict)
    provenance: tuple = ("single_table",)
    seed: int = None
    rows: np.ndarray = None   # source row ids (single table) or (left, right) id pairs

    @property
    def scope(self):
        return list(self.columns)

    def __len__(self):
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())))

    def matrix(self, attrs=None):
        attrs = attrs or self.scope
        return np.column_stack([self.columns[a] for a in attrs]) if attrs else np.empty((len(self), 0))


@dataclass
class FanoutColumn:
    raw: np.ndarray

    @property
    def clamped(self):
        return np.maximum(self.raw, 1)


def _rdc_features(x, k, s, rng):
    n = len(x)
    X = np.column_stack([rankdata(x, method="max") / n, np.ones(n)])
    W = rng.normal(size=(X.shape[1], k))
    return np.sin((s / X.shape[1]) * (X @ W))


def _basis(f, tol=1e-10):
    f = f - f.mean(axis=0)
    u, sv, _ = np.linalg.svd(f, full_matrices=False)
    if sv.size == 0 or sv[0] <= 0:
        return u[:, :0]
    return u[:, : int((sv > tol * sv[0]).sum())]


def rdc_score(x, y, params=DEFAULT_PARAMS):
    """Randomized dependence coefficient of two equal-length vectors, in [0, 1]."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("length mismatch")
    if x.size < 3:
        raise ValueError("rdc needs at least 3 observations")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    rng = np.random.default_rng(params.seed)
    qx = _basis(_rdc_features(x, params.k, params.s, rng))
    qy = _basis(_rdc_features(y, params.k, params.s, rng))
    if qx.shape[1] == 0 or qy.shape[1] == 0:
        return 0.0
    top = np.linalg.svd(qx.T @ qy, compute_uv=False)[0]
    return float(min(max(top, 0.0), 1.0))


def pair_rdc(columns, a, b, params=DEFAULT_PARAMS, rows=None):
    """rdc over rows where both columns are non-null; 0 when fewer than 3 remain."""
    x = np.asarray(columns[a], dtype=float)
    y = np.asarray(columns[b], dtype=float)
    if rows is not None:
        x, y = x[rows], y[rows]
    ok = ~(np.isnan(x) | np.isnan(y))
    if ok.sum() < 3:
        return 0.0
    return rdc_score(x[ok], y[ok], params)


def max_pair_score(a, b, params=DEFAULT_PARAMS, a_attrs=None, b_attrs=None):
    """Largest rdc over attribute pairs (x in a, y in b).

    When both samples are the same aligned join sample, pass it twice and
    select the two sides with ``a_attrs`` / ``b_attrs``.
    Returns ``(score, (x_attr, y_attr))``.
    """
    a_attrs = list(a_attrs if a_attrs is not None else a.scope)
    b_attrs = list(b_attrs if b_attrs is not None else b.scope)
    if not a_attrs or not b_attrs:
        raise ValueError("empty scopes")
    if len(a) != len(b):
        raise ValueError("samples are not row aligned")
    cols = dict(a.columns)
    cols.update({("__b__", k): v for k, v in b.columns.items()})
    best, arg = -1.0, None
    for x in a_attrs:
        for y in b_attrs:
            s = pair_rdc(cols, x, ("__b__", y), params)
            if s > best:
                best, arg = s, (x, y)
    return best, arg


def draw_sample(table, n, seed):
    """Uniform without-replacement sample of a TableData or relation dict."""
    if n < 1:
        raise ValueError("n >= 1 required")
    cols = table.qualified_columns() if hasattr(table, "qualified_columns") else dict(table)
    size = len(next(iter(cols.values()))) if cols else 0
    if n >= size:
        idx = np.arange(size)
    else:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(size, size=n, replace=False))
    return SampleSet({k: v[idx] for k, v in cols.items()}, {}, ("single_table",), seed, idx)


def key_groups(keys):
    """Sorted unique non-null keys with their multiplicities."""
    keys = np.asarray(keys, dtype=float)
    keys = keys[~np.isnan(keys)]
    return np.unique(keys, return_counts=True)


def partner_counts(keys, other_keys):
    """For each key, the number of rows of ``other_keys`` carrying the same value."""
    keys = np.asarray(keys, dtype=float)
    uniq, counts = key_groups(other_keys)
    out = np.zeros(len(keys), dtype=np.int64)
    if uniq.size == 0:
        return out
    pos = np.searchsorted(uniq, keys)
    pos = np.clip(pos, 0, uniq.size - 1)
    hit = (uniq[pos] == keys) & ~np.isnan(keys)
    out[hit] = counts[pos[hit]]
    return out


def compute_fanout(a, b, edge):
    """F_{a->b}: per row of ``a``, how many rows of ``b`` join with it."""
    a_attr, _, b_attr = edge.side(a.name)
    return FanoutColumn(partner_counts(a.columns[a_attr], b.columns[b_attr]))


def outer_join_index(left_keys, right_keys):
    """Full outer equi-join as aligned (left_id, right_id) arrays, -1 for null side.

    Rows are ordered: matched pairs and null-extended left rows in left-row
    order, then the dangling right rows.
    """
    lk = np.asarray(left_keys, dtype=float)
    rk = np.asarray(right_keys, dtype=float)
    r_ok = np.flatnonzero(~np.isnan(rk))
    order = r_ok[np.argsort(rk[r_ok], kind="stable")]
    sorted_r = rk[order]
    lo = np.searchsorted(sorted_r, lk, side="left")
    hi = np.searchsorted(sorted_r, lk, side="right")
    cnt = np.where(np.isnan(lk), 0, hi - lo)
    reps = np.maximum(cnt, 1)
    left_ids = np.repeat(np.arange(len(lk)), reps)
    starts = np.repeat(lo, reps)
    offs = np.arange(len(left_ids)) - np.repeat(np.cumsum(reps) - reps, reps)
    matched = np.repeat(cnt > 0, reps)
    right_ids = np.full(len(left_ids), -1, dtype=np.int64)
    right_ids[matched] = order[starts[matched] + offs[matched]]
    r_hit = np.zeros(len(rk), dtype=bool)
    r_hit[right_ids[matched]] = True
    dangling = np.flatnonzero(~r_hit)
    left_ids = np.concatenate([left_ids, np.full(len(dangling), -1, dtype=np.int64)])
    right_ids = np.concatenate([right_ids, dangling])
    return left_ids, right_ids


def take(cols, ids):
    """Gather rows, producing NaN where the id is -1."""
    out = {}
    null = ids < 0
    safe = np.where(null, 0, ids)
    for k, v in cols.items():
        v = np.asarray(v, dtype=float)
        col = v[safe] if len(v) else np.full(len(ids), np.nan)
        col = np.array(col, dtype=float)
        col[null] = np.nan
        out[k] = col
    return out


def outer_join(left_cols, right_cols, left_key, right_key):
    """Materialize the full outer join of two relations."""
    li, ri = outer_join_index(left_cols[left_key], right_cols[right_key])
    out = take(left_cols, li)
    out.update(take(right_cols, ri))
    return out, li, ri


def join_sample(left, right, edge, n, method="materialize", seed=0):
    """Uniform sample of rows of the full outer join ``left`` ⟗ ``right``.

    ``left``/``right`` are TableData.  The result carries both fanout columns
    (``F_left`` is F_{left->right} of the row's left part, 0 when null).
    """
    if n < 1:
        raise ValueError("n >= 1 required")
    if method not in ("materialize", "olken_chain"):
        raise ValueError(f"unknown join sampling method {method!r}")
    l_attr, _, r_attr = edge.side(left.name)
    lcols, rcols = left.qualified_columns(), right.qualified_columns()
    lkey, rkey = f"{left.name}.{l_attr}", f"{right.name}.{r_attr}"
    f_lr = partner_counts(lcols[lkey], rcols[rkey])
    f_rl = partner_counts(rcols[rkey], lcols[lkey])
    rng = np.random.default_rng(seed)
    if method == "materialize":
        li, ri = outer_join_index(lcols[lkey], rcols[rkey])
        size = len(li)
        if n < size:
            pick = np.sort(rng.choice(size, size=n, replace=False))
            li, ri = li[pick], ri[pick]
    else:
        if edge.kind != "pk_fk":
            raise ValueError("olken_chain sampling requires a pk_fk edge")
        li, ri = _olken(f_lr, f_rl, lcols[lkey], rcols[rkey], n, rng)
    cols = take(lcols, li)
    cols.update(take(rcols, ri))
    fan = {
        "F_left": np.where(li >= 0, f_lr[np.maximum(li, 0)], 0),
        "F_right": np.where(ri >= 0, f_rl[np.maximum(ri, 0)], 0),
    }
    return SampleSet(cols, fan, ("join", left.name, right.name, method), seed,
                     np.column_stack([li, ri]))


def _olken(f_lr, f_rl, lkeys, rkeys, n, rng):
    """Chained accept/reject sampling over the full outer join.

    A right row is drawn uniformly and accepted with probability
    F*(row)/max F*; its partner is then drawn uniformly.  Null-extended left
    rows (no partner) form a separate stratum drawn with its exact mass.
    """
    lkeys = np.asarray(lkeys, dtype=float)
    rkeys = np.asarray(rkeys, dtype=float)
    fstar = np.maximum(f_rl, 1)
    right_mass = float(fstar.sum())
    dangling_left = np.flatnonzero(f_lr == 0)
    total = right_mass + len(dangling_left)
    fmax = fstar.max() if len(fstar) else 1
    l_order = np.argsort(lkeys, kind="stable")
    l_sorted = lkeys[l_order]
    li, ri = [], []
    while len(li) < n:
        if total == 0:
            break
        if rng.random() * total < len(dangling_left):
            li.append(int(dangling_left[rng.integers(len(dangling_left))]))
            ri.append(-1)
            continue
        r = int(rng.integers(len(rkeys)))
        if rng.random() * fmax >= fstar[r]:
            continue
        ri.append(r)
        if f_rl[r] == 0:
            li.append(-1)
        else:
            lo = np.searchsorted(l_sorted, rkeys[r], side="left")
            li.append(int(l_order[lo + rng.integers(f_rl[r])]))
    return np.asarray(li, dtype=np.int64), np.asarray(ri, dtype=np.int64)
