import numpy as np
import pandas as pd
import pytest

from superspill.panel import PANEL_COLUMNS, build_panel, coerce_panel_frame

DEFAULTS = {
    "sector3": "100", "sector2": "10", "province": "P01", "island": "I1",
    "output": 100.0, "value_added": 40.0, "capital": 50.0, "materials": 30.0, "energy": 5.0,
    "workers_production": 7, "workers_nonproduction": 3, "wage_bill": 20.0,
    "foreign_share": 0.0, "export_flag": False, "imported_materials": 1.0,
}


def make_frame(records) -> pd.DataFrame:
    """Typed panel frame from dicts holding at least firm_id and year; other fields default."""
    rows = [{**DEFAULTS, **r} for r in records]
    raw = pd.DataFrame(rows)[PANEL_COLUMNS + [c for c in rows[0] if c not in PANEL_COLUMNS]]
    return coerce_panel_frame(raw)


def make_panel(records):
    return build_panel(make_frame(records))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
