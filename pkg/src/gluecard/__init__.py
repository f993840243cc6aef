"""Join cardinality estimation by gluing single-table estimators."""

from .catalog import Catalog, TableData, ingest_table, load_database, load_schema
from .gluetree import CostParams, DecompositionTree, build_tree, check_update, load, save
from .inference import Estimator, SubplanCache, distinct_estimate, estimate, estimate_subplans
from .oracle import exec_distinct, exec_exact, fixture_a, qerror
from .regions import Partition, Query, RegularRegion, parse_query

__version__ = "0.1.0"
