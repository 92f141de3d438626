import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from superspill.errors import ConfigError, MissingKeyError
from superspill.panel import IOTable
from superspill.simulate import SimPanelConfig, simulate_panel
from superspill.spillovers import (SpilloverSeries, SuperstarRule, bspill, classify_superstars, controls, fspill,
                                   flags_to_frame, hspill, in_top_mask, spillover_frame)

from conftest import make_panel


def _cell_panel():
    # cell (100, P01, 2001): outputs 50 (superstar), 30, 20; cell (101, P01, 2001): one non-superstar
    return make_panel([
        {"firm_id": "S", "year": 2001, "output": 50.0},
        {"firm_id": "A", "year": 2001, "output": 30.0},
        {"firm_id": "B", "year": 2001, "output": 20.0},
        {"firm_id": "C", "year": 2001, "output": 10.0, "sector3": "101"},
        {"firm_id": "D", "year": 2001, "output": 10.0, "sector3": "102"},
        {"firm_id": "T", "year": 2001, "output": 40.0, "sector3": "102", "province": "P02"},
    ])


FLAGS = {"S": True, "T": True}


def test_hspill_hand_values():
    h = hspill(_cell_panel(), FLAGS)
    assert h[("100", "P01", 2001)] == 50.0
    assert h[("101", "P01", 2001)] == 0.0
    assert h[("102", "P02", 2001)] == 100.0
    assert h.kind == "H"


def test_fully_flagged_cell_is_exactly_full():
    panel = make_panel([{"firm_id": "A", "year": 2001, "output": 1 / 3, "imported_materials": 0.0}])
    assert hspill(panel, {"A": True})[("100", "P01", 2001)] == 100.0


def test_hspill_zero_output_cell_missing():
    panel = make_panel([{"firm_id": "A", "year": 2001, "output": 0.0, "imported_materials": 0.0}])
    h = hspill(panel, {})
    assert np.isnan(h[("100", "P01", 2001)])
    assert h.diagnostics["zero_output_cells"] == 1


def _h_series(values: dict) -> SpilloverSeries:
    idx = pd.MultiIndex.from_tuples([(s, "P01", 2001) for s in values], names=["sector3", "province", "year"])
    return SpilloverSeries(pd.Series(list(values.values()), index=idx, dtype=float), "H")


def test_bspill_single_linkage():
    # downstream 100 buys 0.3 per unit from upstream 101
    io = IOTable(["100", "101"], np.array([[0.0, 0.3], [0.0, 0.0]]))
    b = bspill(_h_series({"100": 50.0, "101": 0.0}), io)
    assert b[("101", "P01", 2001)] == 15.0
    assert b[("100", "P01", 2001)] == 0.0


def test_fspill_single_seller():
    # downstream 100 buys 0.2 per unit from upstream 101, which hosts the superstars
    io = IOTable(["100", "101"], np.array([[0.0, 0.2], [0.0, 0.0]]))
    f = fspill(_h_series({"100": 0.0, "101": 40.0}), io)
    assert f[("100", "P01", 2001)] == 8.0
    assert f[("101", "P01", 2001)] == 0.0


def test_own_sector_coefficient_excluded():
    io = IOTable(["100", "101"], np.array([[0.9, 0.0], [0.0, 0.9]]))
    h = _h_series({"100": 50.0, "101": 20.0})
    assert (bspill(h, io).values == 0).all()
    assert (fspill(h, io).values == 0).all()


def test_symmetric_table_gives_equal_vertical_series():
    rng = np.random.default_rng(0)
    a = rng.uniform(0, 0.3, (4, 4))
    io = IOTable(["100", "101", "102", "110"], a + a.T)
    h = _h_series({"100": 10.0, "101": 35.0, "102": 0.0, "110": 80.0})
    pd.testing.assert_series_equal(bspill(h, io).values, fspill(h, io).values, check_names=False)


def test_zero_table_gives_zero():
    io = IOTable(["100", "101"], np.zeros((2, 2)))
    h = _h_series({"100": 10.0, "101": 35.0})
    assert (bspill(h, io).values == 0).all() and (fspill(h, io).values == 0).all()


def test_unknown_sector_dropped_or_keyed_error():
    io = IOTable(["100", "101"], np.array([[0.0, 0.3], [0.1, 0.0]]))
    h = _h_series({"100": 50.0, "101": 10.0, "999": 70.0})
    b = bspill(h, io)
    assert "999" not in b.values.index.get_level_values("sector3")
    assert b.diagnostics["dropped_sectors"] == ["999"]
    with pytest.raises(MissingKeyError, match="999"):
        bspill(h, io, strict=True)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=3, max_size=3), st.lists(st.floats(0, 100), min_size=3, max_size=3),
       st.floats(0, 10))
def test_vertical_measures_linear(h1, h2, c):
    io = IOTable(["100", "101", "102"], np.array([[0, 0.2, 0.1], [0.05, 0, 0.3], [0.15, 0.1, 0]]))
    s1 = _h_series(dict(zip(["100", "101", "102"], h1)))
    s2 = _h_series(dict(zip(["100", "101", "102"], h2)))
    both = _h_series(dict(zip(["100", "101", "102"], np.add(h1, h2))))
    scaled = _h_series(dict(zip(["100", "101", "102"], np.multiply(h1, c))))
    for op in (bspill, fspill):
        np.testing.assert_allclose(op(both, io).values, op(s1, io).values + op(s2, io).values, atol=1e-9)
        np.testing.assert_allclose(op(scaled, io).values, c * op(s1, io).values, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.01, 1e6), st.booleans()), min_size=1, max_size=8))
def test_hspill_bounded_and_full_iff_all_flagged(rows):
    panel = make_panel([{"firm_id": f"F{i}", "year": 2001, "output": o, "imported_materials": 0.0}
                        for i, (o, _) in enumerate(rows)])
    flags = {f"F{i}": s for i, (_, s) in enumerate(rows)}
    v = hspill(panel, flags)[("100", "P01", 2001)]
    assert 0.0 <= v <= 100.0
    assert (v == 100.0) == all(s for _, s in rows)


def test_simulator_exposure_reproduced_exactly():
    panel, truth = simulate_panel(SimPanelConfig(n_firms_initial=400, n_years=5, n_sectors=4, n_provinces=3, seed=9))
    h = hspill(panel, truth.flags).values
    internal = truth.exposures["hspill"]
    pd.testing.assert_series_equal(h.sort_index(), internal.reindex(h.sort_index().index), check_names=False,
                                   rtol=0, atol=0)


# -- classification --

def _classification_panel(n_years_top=10, tenure=11):
    records = []
    for t in range(tenure):
        year = 2001 + t
        for i in range(19):
            records.append({"firm_id": f"X{i:02d}", "year": year, "output": 10.0 + i})
        top = t < n_years_top
        records.append({"firm_id": "A", "year": year, "output": 1000.0 if top else 1.0})
    return make_panel(records)


def test_frequency_rule_hand_case():
    flags = classify_superstars(_classification_panel(10, 11), SuperstarRule())
    assert flags.loc["A", "superstar"]
    assert flags.loc["A", "top_frequency"] == pytest.approx(10 / 11)
    assert not flags.loc["X18", "superstar"]


def test_tenure_rule():
    flags = classify_superstars(_classification_panel(9, 9), SuperstarRule())
    assert not flags.loc["A", "superstar"]
    assert flags.loc["A", "top_frequency"] == 1.0


def test_ties_at_boundary_are_in_top():
    frame = pd.DataFrame({"sector3": "100", "year": 2001, "output": [5.0, 5.0, 1.0, 1.0]})
    assert in_top_mask(frame, 0.05).tolist() == [True, True, False, False]


def test_single_firm_cell_reported():
    panel = make_panel([{"firm_id": "A", "year": y} for y in range(2001, 2013)])
    flags = classify_superstars(panel, SuperstarRule())
    assert flags.loc["A", "superstar"]
    assert flags.attrs["single_firm_cells"] == 12


def test_classification_invariant_to_order_and_scale():
    panel = _classification_panel(10, 11)
    base = classify_superstars(panel, SuperstarRule())
    f = panel.frame.sample(frac=1.0, random_state=3).copy()
    f["output"] = f["output"] * np.where(f["year"] % 2 == 0, 7.0, 0.5)
    shuffled = classify_superstars(panel.replace(frame=f.reset_index(drop=True)), SuperstarRule())
    pd.testing.assert_frame_equal(base, shuffled)


def test_ownership_split_and_median_variant():
    records = []
    for t in range(11):
        for i in range(19):
            records.append({"firm_id": f"X{i:02d}", "year": 2001 + t, "output": 10.0 + i})
        records.append({"firm_id": "A", "year": 2001 + t, "output": 1000.0, "foreign_share": 0.5})
    panel = make_panel(records)
    flags = classify_superstars(panel, SuperstarRule())
    assert flags.loc["A", "superstar_foreign"] and not flags.loc["A", "superstar_domestic"]
    median = classify_superstars(panel, SuperstarRule(method="median"))
    assert median.loc["A", "superstar"]
    out = flags_to_frame(flags)
    assert list(out.columns) == ["firm_id", "superstar", "superstar_foreign", "superstar_domestic"]


def test_rule_validation():
    with pytest.raises(ConfigError):
        SuperstarRule(top_share_cutoff=1.5)
    with pytest.raises(ConfigError):
        SuperstarRule(top_frequency=0.0)


def test_simulated_superstar_share_small():
    panel, _ = simulate_panel(SimPanelConfig(n_firms_initial=1500, n_years=15, seed=4))
    flags = classify_superstars(panel, SuperstarRule())
    assert 0.0 < flags["superstar"].mean() < 0.06


# -- controls --

def test_controls_hand_values():
    panel = make_panel([
        {"firm_id": "M", "year": 2001, "sector3": "101", "output": 80.0},
        {"firm_id": "A", "year": 2001, "output": 50.0, "materials": 40.0, "imported_materials": 10.0,
         "wage_bill": 10 * np.e, "workers_production": 6, "workers_nonproduction": 4, "foreign_share": 0.2,
         "export_flag": True},
        {"firm_id": "B", "year": 2001, "output": 50.0, "materials": 0.0, "imported_materials": 0.0,
         "foreign_share": 0.10},
    ])
    c = controls(panel, {"A": True})
    c.index = panel.frame["firm_id"]
    assert c.loc["M", "hhi"] == 1.0
    assert c.loc["A", "hhi"] == 0.5
    assert c.loc["A", "import_intensity"] == 0.25
    assert np.isnan(c.loc["B", "import_intensity"])
    assert c.loc["A", "absorptive"] == pytest.approx(1.0)
    assert c.loc["A", "foreign"] == 1.0 and c.loc["B", "foreign"] == 0.0
    assert c.loc["A", "exporter"] == 1.0 and c.loc["A", "superstar"] == 1.0


def test_spillover_frame_columns():
    panel = _cell_panel()
    io = IOTable(["100", "101", "102"], np.zeros((3, 3)))
    h = hspill(panel, FLAGS)
    table = spillover_frame(h, bspill(h, io), fspill(h, io))
    assert list(table.columns) == ["sector3", "province", "year", "hspill", "bspill", "fspill"]
