import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from superspill.bartik import (TariffTable, base_labor_share, instruments_frame, lab_bartik_iv, loo_growth_table,
                               loo_output_growth, road_density, tariff_bartik_iv)
from superspill.errors import DomainError, IntegrityError, MissingKeyError
from superspill.model import ModelParams
from superspill.simulate import SimPanelConfig, simulate_endogenous_panel
from superspill.spillovers import hspill

from conftest import make_panel


def _panel():
    # sector 100 in provinces P01, P02, P03; sector 101 only in P01
    rows = []
    for year, outs in [(2001, (40.0, 60.0, 40.0)), (2002, (50.0, 66.0, 44.0))]:
        for p, o in zip(("P01", "P02", "P03"), outs):
            rows.append({"firm_id": f"N{p}", "year": year, "province": p, "output": o,
                         "workers_production": 140, "workers_nonproduction": 10})
        rows.append({"firm_id": "S", "year": year, "province": "P01", "output": 40.0,
                     "workers_production": 60, "workers_nonproduction": 40})
        rows.append({"firm_id": "Q", "year": year, "sector3": "101", "output": 5.0})
    return make_panel(rows)


def test_base_share_hand_values():
    share = base_labor_share(_panel(), {"S": True}, 2001)
    assert share[("100", "P01")] == pytest.approx(60 / 200)
    assert share[("100", "P02")] == 0.0
    total = base_labor_share(_panel(), {"S": True}, 2001, skill="all")
    assert total[("100", "P01")] == pytest.approx(100 / 250)


def test_base_share_full_and_zero_worker_cells():
    panel = make_panel([
        {"firm_id": "S", "year": 2001},
        {"firm_id": "Z", "year": 2001, "sector3": "101", "workers_production": 0, "workers_nonproduction": 0},
    ])
    share = base_labor_share(panel, {"S": True}, 2001)
    assert share[("100", "P01")] == 1.0
    assert np.isnan(share[("101", "P01")])
    assert share.attrs["zero_worker_cells"] == 1
    with pytest.raises(MissingKeyError):
        base_labor_share(panel, {}, 1999)
    with pytest.raises(DomainError):
        base_labor_share(panel, {}, 2001, skill="skilled")


def test_leave_out_growth_hand_values():
    panel = _panel()
    # leaving out P01: 60 + 40 = 100 -> 66 + 44 = 110
    assert loo_output_growth(panel, "100", "P01", 2002) == pytest.approx(0.10)
    assert np.isnan(loo_output_growth(panel, "101", "P01", 2002))
    table = loo_growth_table(panel)
    assert table[("100", "P01", 2002)] == pytest.approx(0.10)
    assert np.isnan(table[("101", "P01", 2002)])
    for p in ("P02", "P03"):
        assert table[("100", p, 2002)] == pytest.approx(loo_output_growth(panel, "100", p, 2002))


def test_constant_output_gives_zero_growth():
    panel = make_panel([{"firm_id": f"F{p}{y}", "year": y, "province": p}
                        for p in ("P01", "P02") for y in (2001, 2002)])
    assert loo_growth_table(panel)[("100", "P01", 2002)] == 0.0


def test_leave_out_excludes_own_province():
    base = _panel()
    extra = make_panel(base.frame.to_dict("records") + [
        {"firm_id": "NEW", "year": 2001, "province": "P09", "output": 10.0},
        {"firm_id": "NEW", "year": 2002, "province": "P09", "output": 90.0},
    ])
    before, after = loo_growth_table(base), loo_growth_table(extra)
    assert after[("100", "P01", 2002)] != before[("100", "P01", 2002)]
    # own-province growth ignores the newcomer's own output
    assert after[("100", "P09", 2002)] == pytest.approx(loo_output_growth(base, "100", "P09", 2002))


def test_lab_bartik_hand_values():
    idx2 = pd.MultiIndex.from_tuples([("100", "P01"), ("100", "P02")], names=["sector3", "province"])
    shares = pd.Series([0.3, 0.0], index=idx2)
    idx3 = pd.MultiIndex.from_tuples([("100", "P01", 2002), ("100", "P02", 2002), ("100", "P01", 2003),
                                      ("100", "P03", 2002)], names=["sector3", "province", "year"])
    growth = pd.Series([0.10, 0.5, -0.2, 0.1], index=idx3)
    iv = lab_bartik_iv(shares, growth).values
    assert iv[("100", "P01", 2002)] == pytest.approx(0.03)
    assert iv[("100", "P02", 2002)] == 0.0
    assert iv[("100", "P01", 2003)] / -0.2 == pytest.approx(0.3)
    assert np.isnan(iv[("100", "P03", 2002)])


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 5.0))
def test_shift_share_scales_with_shares(c):
    panel = _panel()
    shares = base_labor_share(panel, {"S": True}, 2001)
    growth = loo_growth_table(panel)
    a = lab_bartik_iv(shares, growth).values
    b = lab_bartik_iv(shares * c, growth).values
    np.testing.assert_allclose(b.to_numpy(), c * a.to_numpy(), equal_nan=True)


def test_tariff_bartik_hand_values():
    panel = make_panel([
        {"firm_id": "S", "year": 2001, "output": 50.0}, {"firm_id": "A", "year": 2001, "output": 50.0},
        {"firm_id": "S", "year": 2002, "output": 80.0}, {"firm_id": "A", "year": 2002, "output": 20.0},
        {"firm_id": "B", "year": 2002, "output": 20.0, "sector3": "101"},
    ])
    tariffs = TariffTable({("100", 2000): 12.0, ("100", 2001): 10.0, ("100", 2002): 8.0,
                           ("101", 2001): 5.0, ("101", 2002): 5.0})
    iv = tariff_bartik_iv(panel, {"S": True}, tariffs, 2001).values
    assert iv[("100", "P01", 2002)] == pytest.approx(-1.0)
    assert iv[("100", "P01", 2001)] == pytest.approx(-1.0)
    # base year lacks sector 101, so its share is missing
    assert np.isnan(iv[("101", "P01", 2002)])


def test_unchanged_tariff_gives_zero():
    panel = make_panel([{"firm_id": "S", "year": y} for y in (2001, 2002)])
    tariffs = TariffTable({("100", 2001): 7.0, ("100", 2002): 7.0})
    iv = tariff_bartik_iv(panel, {"S": True}, tariffs, 2001).values
    assert iv[("100", "P01", 2002)] == 0.0
    assert np.isnan(iv[("100", "P01", 2001)])


def test_tariff_table_validation(tmp_path):
    with pytest.raises(IntegrityError):
        TariffTable({("100", 2001): -1.0})
    path = tmp_path / "t.csv"
    path.write_text("sector3,year,mfn\n100,2001,5.5\n")
    assert TariffTable.from_csv(path).entries == {("100", 2001): 5.5}


def test_road_density(tmp_path):
    path = tmp_path / "regions.csv"
    path.write_text("province,year,road_km,area_km2\n"
                    "P01,2005,,1000\nP01,2008,500,1000\nP01,2009,600,1000\n")
    rd = road_density(path).values
    assert rd[("P01", 2008)] == 0.5
    assert rd[("P01", 2005)] == rd[("P01", 2008)]
    assert rd[("P01", 2009)] == 0.6
    filled = road_density(path, years=[2001, 2002]).values
    assert filled[("P01", 2001)] == 0.5
    path.write_text("province,year,road_km,area_km2\nP01,2008,500,0\n")
    with pytest.raises(DomainError):
        road_density(path)


def test_instruments_frame_columns():
    panel = _panel()
    shares = base_labor_share(panel, {"S": True}, 2001)
    lab = lab_bartik_iv(shares, loo_growth_table(panel))
    tariffs = TariffTable({("100", 2001): 10.0, ("100", 2002): 9.0, ("101", 2001): 5.0, ("101", 2002): 5.0})
    tarr = tariff_bartik_iv(panel, {"S": True}, tariffs, 2001)
    table = instruments_frame(lab, tarr)
    assert list(table.columns) == ["sector3", "province", "year", "lab_bartik", "tarr_bartik", "road_density"]


def test_lab_instrument_relevant_and_exogenous_on_endogenous_design():
    corr_err, first_stage_t = [], []
    for rep in range(5):
        cfg = SimPanelConfig(n_firms_initial=800, n_years=8, n_sectors=20, n_provinces=10, seed=300 + rep)
        panel, truth = simulate_endogenous_panel(cfg, ModelParams(alpha=0.01))
        shares = base_labor_share(panel, truth.flags, 2001)
        iv = lab_bartik_iv(shares, loo_growth_table(panel)).values
        h = hspill(panel, truth.flags).values
        f = panel.frame.merge(truth.tfp[["firm_id", "year", "structural_error"]], on=["firm_id", "year"])
        key = pd.MultiIndex.from_frame(f[["sector3", "province", "year"]])
        f["z"] = iv.reindex(key).to_numpy()
        f["h"] = h.reindex(key).to_numpy()
        ns = f[~f["firm_id"].map(truth.flags) & f["z"].notna()]
        corr_err.append(np.corrcoef(ns["z"], ns["structural_error"])[0, 1])
        # first stage on cell means, net of sector and year means
        cells = ns.groupby(["sector3", "province", "year"])[["z", "h"]].first().reset_index()
        for col in ("z", "h"):
            for dim in ("sector3", "year"):
                cells[col] -= cells.groupby(dim)[col].transform("mean")
        slope = (cells["z"] @ cells["h"]) / (cells["z"] @ cells["z"])
        resid = cells["h"] - slope * cells["z"]
        se = np.sqrt(resid @ resid / (len(cells) - 2) / (cells["z"] @ cells["z"]))
        first_stage_t.append(slope / se)
    assert abs(np.mean(corr_err)) < 0.05
    assert min(t ** 2 for t in first_stage_t) > 10
