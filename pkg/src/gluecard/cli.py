"""Command line entry point: ``gluecard <subcommand> ...``.

Every result is printed as one line of JSON on stdout; traces go to stderr.
Exit codes: 0 success, 1 usage error, 2 data or model error.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import fileformat, gluetree, inference, oracle
from .catalog import IngestError, SchemaError, TableData, ingest_table, load_schema
from .regions import QueryError, RegionError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


# --- database files ----------------------------------------------------------

def save_database(catalog, data, path):
    doc = {"catalog": catalog.to_doc(),
           "data": {t: {k: np.asarray(v).tolist() for k, v in d.columns.items()}
                    for t, d in data.items()}}
    Path(path).write_bytes(fileformat.dumps(doc, fileformat.KIND_DATABASE))


def load_database_file(path):
    doc = fileformat.loads(Path(path).read_bytes(), fileformat.KIND_DATABASE)
    catalog = load_schema(doc["catalog"])
    data = {}
    for t in catalog.tables:
        cols = {}
        for a in t.attributes:
            dtype = float if a.kind == "real" else np.int64
            cols[a.name] = np.asarray(doc["data"][t.name][a.name], dtype=dtype)
        data[t.name] = TableData(t, cols)
    return catalog, data


def _ingest_dir(catalog, data_dir):
    data = {}
    for t in catalog.table_names:
        path = Path(data_dir) / f"{t}.csv"
        with open(path, encoding="utf-8", newline="") as fh:
            data[t] = ingest_table(catalog, t, fh)
    return data


def _read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _emit(doc):
    print(json.dumps(doc, sort_keys=True, allow_nan=False))


# --- subcommands -------------------------------------------------------------

def cmd_ingest(args):
    catalog = load_schema(Path(args.schema).read_text(encoding="utf-8"))
    data = _ingest_dir(catalog, args.data)
    save_database(catalog, data, args.out)
    _emit({"tables": {t: len(d) for t, d in data.items()}, "out": args.out})


def _leaf_arg(text):
    if "=" not in text:
        return text
    out = {}
    for item in text.split(","):
        k, _, v = item.partition("=")
        out[k.strip()] = v.strip()
    return out


def cmd_build(args):
    catalog, data = load_database_file(args.catalog)
    config = {"mode": args.mode, "tau": args.tau, "max_parts": args.max_parts,
              "sample_n": args.sample, "stats_mode": args.stats, "seed": args.seed,
              "leaf": _leaf_arg(args.leaf), "partitioning": args.partitioning,
              "variants": args.variants}
    cost = gluetree.CostParams(args.alpha, args.beta, args.gamma)
    tree = gluetree.build_tree(catalog, data, cost=cost, config=config)
    gluetree.save(tree, args.out)
    _emit({"out": args.out, "shape": tree.shape(), "cost": tree.cost_value})


def cmd_estimate(args):
    tree = gluetree.load(args.model)
    query = _read_json(args.query)
    est = inference.Estimator(tree, args.mode, trace=args.explain)
    if args.distinct:
        _emit({"distinct": est.distinct_estimate(query), "leaf_calls": est.cache.leaf_calls})
        return
    rep = est.estimate(query)
    if args.explain:
        for step in rep.trace:
            print(json.dumps(step, sort_keys=True), file=sys.stderr)
    _emit({"cardinality": rep.cardinality, "probability": rep.probability,
           "leaf_calls": rep.leaf_calls, "elapsed_ms": rep.elapsed_ms})


def _threads():
    try:
        return max(int(os.environ.get("GLUE_THREADS", "0")), 0)
    except ValueError:
        return 0


def cmd_bench(args):
    tree = gluetree.load(args.model)
    queries = oracle.load_workload(args.workload)

    def one(q):
        return inference.Estimator(tree, args.mode).estimate(q).cardinality

    n = _threads()
    if n:
        with ThreadPoolExecutor(max_workers=n) as pool:
            estimates = list(pool.map(one, queries))
    else:
        estimates = [one(q) for q in queries]
    doc = {"n": len(queries), "estimates": estimates}
    if args.oracle:
        if not args.catalog:
            raise UsageError("bench --oracle needs --catalog with the database file")
        catalog, data = load_database_file(args.catalog)
        exact = oracle.ExactOracle(catalog, data)
        truths = [exact.count(q) for q in queries]
        summary = oracle.QErrorSummary.of([oracle.qerror(e, t) for e, t in zip(estimates, truths)])
        doc.update(summary.to_doc())
        doc["truths"] = truths
    if args.out:
        Path(args.out).write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")
    _emit({k: v for k, v in doc.items() if k not in ("estimates", "truths")})


def cmd_subplans(args):
    tree = gluetree.load(args.model)
    reports, cache = inference.estimate_subplans(tree, _read_json(args.query), args.mode)
    _emit({"subplans": {",".join(k): r.cardinality for k, r in reports.items()},
           "cache": cache.stats()})


def cmd_inspect(args):
    tree = gluetree.load(args.model)
    _emit(tree.inspect())


def cmd_check_update(args):
    tree = gluetree.load(args.model)
    doc = tree.catalog.to_doc()
    for t in doc["tables"]:
        for c in t["columns"]:
            c["fixed"] = False
    catalog = load_schema(doc)
    data = _ingest_dir(catalog, args.data)
    tree.catalog = catalog
    res = gluetree.check_update(tree, data, args.tau, resplit=bool(args.out))
    stale, fresh = (res if args.out else (res, None))
    if fresh is not None:
        gluetree.save(fresh, args.out)
    _emit({"stale": [{"node": s.node, "variant": [list(s.variant[0]), list(s.variant[1])],
                      "partition": s.partition, "part": s.part, "score": s.score,
                      "build_score": s.build_score} for s in stale]})


def make_parser():
    p = _Parser(prog="gluecard", description="join cardinality estimation")
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser)

    s = sub.add_parser("ingest", help="schema + CSV directory -> database file")
    s.add_argument("--schema", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_ingest)

    cfg = gluetree.DEFAULT_CONFIG
    s = sub.add_parser("build", help="build a decomposition tree")
    s.add_argument("--catalog", required=True, help="database file written by ingest")
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=["context", "independent"], default=cfg["mode"])
    s.add_argument("--tau", type=float, default=cfg["tau"])
    s.add_argument("--max-parts", type=int, default=cfg["max_parts"])
    s.add_argument("--sample", type=int, default=cfg["sample_n"])
    s.add_argument("--stats", choices=["exact", "sampled"], default=cfg["stats_mode"])
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--gamma", type=float, default=1.0)
    s.add_argument("--leaf", default=cfg["leaf"], help="KIND or TABLE=KIND,...")
    s.add_argument("--seed", type=int, default=cfg["seed"])
    s.add_argument("--partitioning", choices=["rdc", "singleton"], default=cfg["partitioning"])
    s.add_argument("--variants", choices=["all", "full"], default=cfg["variants"])
    s.set_defaults(fn=cmd_build)

    s = sub.add_parser("estimate", help="estimate one query")
    s.add_argument("--model", required=True)
    s.add_argument("--query", required=True)
    s.add_argument("--mode", choices=["context", "independent"])
    s.add_argument("--distinct", action="store_true")
    s.add_argument("--explain", action="store_true")
    s.set_defaults(fn=cmd_estimate)

    s = sub.add_parser("bench", help="estimate a workload, optionally against the oracle")
    s.add_argument("--model", required=True)
    s.add_argument("--workload", required=True)
    s.add_argument("--oracle", action="store_true")
    s.add_argument("--catalog", help="database file for the oracle")
    s.add_argument("--mode", choices=["context", "independent"])
    s.add_argument("--out")
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("subplans", help="estimate every connected sub-plan with the cache")
    s.add_argument("--model", required=True)
    s.add_argument("--query", required=True)
    s.add_argument("--mode", choices=["context", "independent"])
    s.set_defaults(fn=cmd_subplans)

    s = sub.add_parser("inspect", help="dump the tree")
    s.add_argument("--model", required=True)
    s.set_defaults(fn=cmd_inspect)

    s = sub.add_parser("check-update", help="list partitions made stale by fresh data")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--tau", type=float)
    s.add_argument("--out", help="write a re-split model here")
    s.set_defaults(fn=cmd_check_update)
    return p


DATA_ERRORS = (SchemaError, IngestError, QueryError, RegionError, fileformat.FormatError,
               gluetree.TreeError, oracle.OracleError, OSError, KeyError, ValueError)


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "fn", None):
            raise UsageError(parser.format_usage())
        args.fn(args)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


run = main
