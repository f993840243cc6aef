"""Small brute-force references shared by several test modules."""

import itertools

import numpy as np


def brute_outer_join(t_rows, s_rows, t_key, s_key):
    """Nested-loop full outer join of two lists of dicts (None = null)."""
    out = []
    matched_s = set()
    for t in t_rows:
        hit = False
        for j, s in enumerate(s_rows):
            if t[t_key] is not None and t[t_key] == s[s_key]:
                out.append({**t, **s})
                matched_s.add(j)
                hit = True
        if not hit:
            out.append({**t, **{k: None for k in s_rows[0]}} if s_rows else dict(t))
    for j, s in enumerate(s_rows):
        if j not in matched_s:
            out.append({**{k: None for k in t_rows[0]}, **s} if t_rows else dict(s))
    return out


def valid_trees(catalog, tables):
    """Every valid binary decomposition tree over a connected table set."""
    tables = frozenset(tables)
    if len(tables) == 1:
        yield next(iter(tables))
        return
    names = sorted(tables)
    first = names[0]
    for r in range(1, len(names)):
        for left in itertools.combinations(names, r):
            if first not in left:
                continue
            left = frozenset(left)
            right = tables - left
            if not (catalog.is_connected(left) and catalog.is_connected(right)):
                continue
            for lt in valid_trees(catalog, left):
                for rt in valid_trees(catalog, right):
                    yield (lt, rt)
                    yield (rt, lt)


def table_rows(data, table):
    cols = data[table].qualified_columns()
    n = len(next(iter(cols.values())))
    return [{k: float(v[i]) for k, v in cols.items()} for i in range(n)]


def close(a, b, rel=1e-9):
    return abs(a - b) <= rel * max(abs(a), abs(b), 1.0)


def as_float(x):
    return np.asarray(x, dtype=float)
