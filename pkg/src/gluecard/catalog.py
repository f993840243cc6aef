"""Schema metadata, CSV ingestion into columnar storage and join-graph checks.

Attributes are addressed everywhere by their qualified name ``"table.attr"``.
Categorical values are dictionary encoded per attribute in first-seen order,
so every column is a numeric numpy array.
"""

import csv
import io
import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

KINDS = ("integer", "real", "categorical")
EDGE_KINDS = ("pk_fk", "fk_fk")


class SchemaError(ValueError):
    pass


class IngestError(ValueError):
    pass


@dataclass
class AttributeMeta:
    name: str
    kind: str
    lo: float = None
    hi: float = None
    values: list = None       # categorical dictionary, code = position
    fixed: bool = False       # dictionary declared in the schema, no growth

    @property
    def numeric(self):
        return self.kind != "categorical"

    @property
    def discrete(self):
        return self.kind != "real"

    def domain_bounds(self):
        if self.numeric:
            return float(self.lo), float(self.hi)
        return 0.0, float(max(len(self.values) - 1, 0))

    def encode(self, value):
        """Dictionary code of a categorical value, or None if unseen."""
        try:
            return self.values.index(value)
        except ValueError:
            return None


@dataclass
class TableMeta:
    name: str
    attributes: list
    row_count: int = 0

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate attribute name in table {self.name}")

    def attr(self, name):
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(f"{self.name}.{name}")

    def qualified(self):
        return [f"{self.name}.{a.name}" for a in self.attributes]


@dataclass(frozen=True)
class JoinEdge:
    left: tuple
    right: tuple
    kind: str = "pk_fk"

    @property
    def tables(self):
        return (self.left[0], self.right[0])

    def side(self, table):
        """(own attribute, other table, other attribute) as seen from `table`."""
        if table == self.left[0]:
            return self.left[1], self.right[0], self.right[1]
        if table == self.right[0]:
            return self.right[1], self.left[0], self.left[1]
        raise KeyError(table)

    def __str__(self):
        return f"{self.left[0]}.{self.left[1]}={self.right[0]}.{self.right[1]}"


@dataclass
class Catalog:
    tables: list
    edges: list = field(default_factory=list)

    def table(self, name):
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(f"unknown table {name!r}")

    @property
    def table_names(self):
        return [t.name for t in self.tables]

    def attr(self, qualified):
        table, _, name = qualified.partition(".")
        return self.table(table).attr(name)

    def has_attr(self, qualified):
        try:
            self.attr(qualified)
            return True
        except KeyError:
            return False

    def key_attributes(self):
        """Qualified names of every attribute that takes part in a join edge."""
        keys = set()
        for e in self.edges:
            keys.add(f"{e.left[0]}.{e.left[1]}")
            keys.add(f"{e.right[0]}.{e.right[1]}")
        return keys

    def neighbours(self, table, within=None):
        out = []
        for e in self.edges:
            if table in e.tables:
                other = e.tables[1] if e.tables[0] == table else e.tables[0]
                if within is None or other in within:
                    out.append(other)
        return out

    def edges_within(self, tables):
        tables = set(tables)
        return [e for e in self.edges if set(e.tables) <= tables]

    def is_connected(self, tables):
        tables = set(tables)
        if not tables:
            return False
        start = min(tables)
        seen = {start}
        todo = deque([start])
        while todo:
            t = todo.popleft()
            for n in self.neighbours(t, tables):
                if n not in seen:
                    seen.add(n)
                    todo.append(n)
        return seen == tables

    def edge_between(self, left_tables, right_tables):
        left_tables, right_tables = set(left_tables), set(right_tables)
        found = [e for e in self.edges
                 if (e.tables[0] in left_tables and e.tables[1] in right_tables)
                 or (e.tables[1] in left_tables and e.tables[0] in right_tables)]
        return found

    def to_doc(self):
        tables = []
        for t in self.tables:
            cols = []
            for a in t.attributes:
                c = {"name": a.name, "kind": a.kind}
                if a.numeric:
                    c["min"], c["max"] = a.lo, a.hi
                else:
                    c["values"] = list(a.values)
                    c["fixed"] = a.fixed
                cols.append(c)
            tables.append({"name": t.name, "columns": cols, "rows": t.row_count})
        joins = [{"left": f"{e.left[0]}.{e.left[1]}", "right": f"{e.right[0]}.{e.right[1]}",
                  "kind": e.kind} for e in self.edges]
        return {"tables": tables, "joins": joins}


@dataclass
class TableData:
    meta: TableMeta
    columns: dict

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise IngestError(f"columns of {self.meta.name} differ in length")

    @property
    def name(self):
        return self.meta.name

    def __len__(self):
        return self.meta.row_count

    def qualified_columns(self):
        """Columns keyed by qualified name, as float arrays."""
        return {f"{self.name}.{k}": np.asarray(v, dtype=float) for k, v in self.columns.items()}


def _split_ref(ref):
    table, dot, attr = ref.partition(".")
    if not dot or not table or not attr:
        raise SchemaError(f"malformed column reference {ref!r}")
    return table, attr


def load_schema(schema_doc):
    """Parse a JSON schema document (text, bytes or already-decoded dict)."""
    if isinstance(schema_doc, (str, bytes)):
        try:
            doc = json.loads(schema_doc)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed document: {exc}") from None
    else:
        doc = schema_doc
    if not isinstance(doc, dict) or not isinstance(doc.get("tables"), list):
        raise SchemaError("malformed document: missing 'tables' list")

    tables = []
    for t in doc["tables"]:
        try:
            name = t["name"]
            cols = t["columns"]
        except (KeyError, TypeError):
            raise SchemaError("malformed document: table needs 'name' and 'columns'") from None
        attrs = []
        for c in cols:
            kind = c.get("kind")
            if kind not in KINDS:
                raise SchemaError(f"unknown attribute kind {kind!r} for {name}.{c.get('name')}")
            if kind == "categorical":
                values = c.get("values")
                fixed = bool(c.get("fixed", values is not None))
                values = list(values or [])
                if len(set(values)) != len(values):
                    raise SchemaError(f"duplicate dictionary values for {name}.{c['name']}")
                attrs.append(AttributeMeta(c["name"], kind, values=values, fixed=fixed))
            else:
                if "min" not in c or "max" not in c:
                    raise SchemaError(f"numeric column {name}.{c['name']} needs min and max")
                lo, hi = c["min"], c["max"]
                if kind == "integer":
                    lo, hi = int(lo), int(hi)
                else:
                    lo, hi = float(lo), float(hi)
                if lo > hi:
                    raise SchemaError(f"domain min > max for {name}.{c['name']}")
                attrs.append(AttributeMeta(c["name"], kind, lo=lo, hi=hi))
        tables.append(TableMeta(name, attrs, int(t.get("rows", 0))))
    names = [t.name for t in tables]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate table name")

    catalog = Catalog(tables, [])
    for j in doc.get("joins", []):
        try:
            left, right = _split_ref(j["left"]), _split_ref(j["right"])
        except (KeyError, TypeError):
            raise SchemaError("malformed document: join needs 'left' and 'right'") from None
        kind = j.get("kind", "pk_fk")
        if kind not in EDGE_KINDS:
            raise SchemaError(f"unknown join kind {kind!r}")
        for ref in (left, right):
            if not catalog.has_attr(f"{ref[0]}.{ref[1]}"):
                raise SchemaError(f"dangling edge reference {ref[0]}.{ref[1]}")
        if catalog.attr("%s.%s" % left).kind != catalog.attr("%s.%s" % right).kind:
            raise SchemaError(f"join attributes of different kinds: {j['left']} / {j['right']}")
        if left[0] == right[0]:
            raise SchemaError("self-joins are not supported")
        catalog.edges.append(JoinEdge(left, right, kind))
    if tables and not catalog.is_connected(names):
        raise SchemaError("disconnected join graph")
    return catalog


def _parse_cell(attr, cell, table, lineno):
    if attr.kind == "categorical":
        code = attr.encode(cell)
        if code is None:
            if attr.fixed:
                raise IngestError(f"{table}.{attr.name} line {lineno}: value {cell!r} "
                                  "outside categorical domain")
            attr.values.append(cell)
            code = len(attr.values) - 1
        return code
    try:
        v = int(cell) if attr.kind == "integer" else float(cell)
    except ValueError:
        raise IngestError(f"{table}.{attr.name} line {lineno}: unparsable numeric cell "
                          f"{cell!r}") from None
    if not attr.lo <= v <= attr.hi:
        raise IngestError(f"{table}.{attr.name} line {lineno}: value {v} outside "
                          f"domain [{attr.lo}, {attr.hi}]")
    return v


def ingest_table(catalog, table, csv_source):
    """Read CSV text/bytes/file object into a TableData and record its row count."""
    meta = catalog.table(table)
    if isinstance(csv_source, bytes):
        csv_source = csv_source.decode("utf-8")
    if isinstance(csv_source, str):
        csv_source = io.StringIO(csv_source)
    reader = csv.reader(csv_source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestError(f"header mismatch for {table}: empty input") from None
    expected = [a.name for a in meta.attributes]
    if sorted(header) != sorted(expected) or len(header) != len(expected):
        raise IngestError(f"header mismatch for {table}: got {header}, expected {expected}")
    attrs = [meta.attr(h) for h in header]
    raw = {a.name: [] for a in attrs}
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(attrs):
            raise IngestError(f"{table} line {lineno}: row width mismatch "
                              f"({len(row)} cells, {len(attrs)} columns)")
        for a, cell in zip(attrs, row):
            raw[a.name].append(_parse_cell(a, cell.strip(), table, lineno))
    columns = {}
    for a in meta.attributes:
        dtype = float if a.kind == "real" else np.int64
        columns[a.name] = np.asarray(raw[a.name], dtype=dtype)
    meta.row_count = len(columns[expected[0]]) if expected else 0
    return TableData(meta, columns)


def to_csv(data):
    """Serialize a TableData back to CSV text (categoricals decoded)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    attrs = data.meta.attributes
    w.writerow([a.name for a in attrs])
    cols = [data.columns[a.name] for a in attrs]
    for i in range(len(data)):
        row = []
        for a, col in zip(attrs, cols):
            v = col[i]
            if a.kind == "categorical":
                row.append(a.values[int(v)])
            elif a.kind == "integer":
                row.append(str(int(v)))
            else:
                row.append(repr(float(v)))
        w.writerow(row)
    return buf.getvalue()


def validate(catalog, data, tables=None):
    """Per-edge key match statistics over the given tables; read-only."""
    tables = list(tables) if tables is not None else catalog.table_names
    for t in tables:
        if t not in data:
            raise IngestError(f"missing table data for {t}")
    report = []
    for e in catalog.edges_within(tables):
        lk = np.asarray(data[e.left[0]].columns[e.left[1]])
        rk = np.asarray(data[e.right[0]].columns[e.right[1]])
        l_dangling = ~np.isin(lk, rk)
        r_dangling = ~np.isin(rk, lk)
        entry = {
            "edge": str(e),
            "kind": e.kind,
            "left_dangling": int(l_dangling.sum()),
            "right_dangling": int(r_dangling.sum()),
            "left_dangling_values": sorted(set(lk[l_dangling].tolist())),
            "right_dangling_values": sorted(set(rk[r_dangling].tolist())),
        }
        if e.kind == "pk_fk":
            entry["pk_duplicates"] = int(len(lk) - len(np.unique(lk)))
        report.append(entry)
    return report


def load_database(schema_path, data_dir):
    """Convenience loader: schema file plus ``<table>.csv`` files in a directory."""
    from pathlib import Path
    catalog = load_schema(Path(schema_path).read_text(encoding="utf-8"))
    data = {}
    for t in catalog.table_names:
        with open(Path(data_dir) / f"{t}.csv", encoding="utf-8", newline="") as fh:
            data[t] = ingest_table(catalog, t, fh)
    return catalog, data
