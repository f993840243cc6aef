import sys

import pytest

from gluecard.gluetree import build_tree
from gluecard.oracle import fixture_a


@pytest.fixture
def fix_a():
    return fixture_a()


@pytest.fixture
def singleton_tree(fix_a):
    cat, data = fix_a
    return build_tree(cat, data, config={"partitioning": "singleton"})


def q(tables, *preds):
    return {"tables": list(tables), "predicates": list(preds)}


def eq(col, v):
    return {"col": col, "op": "eq", "val": v}


def rng_pred(col, lo, hi):
    return {"col": col, "op": "range", "lo": lo, "hi": hi}


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report_lines():
        terminalreporter.write_line(line)
