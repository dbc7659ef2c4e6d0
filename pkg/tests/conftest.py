import datetime as dt

import numpy as np
import pytest
from hypothesis import settings

from demandlstm.core_types import ItemMeta, SalesSeries
from demandlstm.ingestion import SeriesSet, holiday_calendar

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

START = dt.date(2018, 1, 1)


def make_set(rows, subcats=None, start=START, masks=None):
    """SeriesSet from a list of value vectors (items named it0, it1, ...)."""
    rows = [np.asarray(r, dtype=float) for r in rows]
    n_days = len(rows[0])
    items = []
    for k, r in enumerate(rows):
        iid = f"it{k}"
        sub = subcats[k] if subcats else "sc00"
        mask = None if masks is None else masks[k]
        items.append((SalesSeries(iid, start, r, mask), ItemMeta(iid, sub, "cat00", "dep00", "sup00")))
    return SeriesSet(tuple(items), holiday_calendar(start, n_days))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
