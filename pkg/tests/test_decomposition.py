from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from superspill.decomposition import (ENTRANT, EXITER, MP_TERMS, OTHER, SURVIVOR, WindowSpec, classify_transitions,
                                      decomposition_table, mp_dynamic, op_static, report_components,
                                      static_change_table)
from superspill.errors import ConfigError, DomainError, InsufficientDataError
from superspill.simulate import SimPanelConfig, simulate_panel

from oracles import random_panel, share_weighted

DATA = Path(__file__).parent / "data"
ROUNDING = 5e-4


def _frame(rows):
    return pd.DataFrame(rows, columns=["firm_id", "year", "phi", "output"])


# -- static split --

def test_equal_shares_have_no_covariance():
    out = op_static(_frame([("A", 2001, 1.0, 5.0), ("B", 2001, 3.0, 5.0)])).set_index("group")
    assert out.at["all", "aggregate"] == 2.0
    assert out.at["all", "mean"] == 2.0 and out.at["all", "cov"] == 0.0


def test_unequal_shares_hand_values():
    out = op_static(_frame([("A", 2001, 3.0, 75.0), ("B", 2001, 1.0, 25.0)])).set_index("group")
    assert out.at["all", "mean"] == pytest.approx(2.0, abs=1e-15)
    assert out.at["all", "cov"] == pytest.approx(0.5, abs=1e-15)
    assert out.at["all", "aggregate"] == pytest.approx(2.5, abs=1e-15)


def test_grouped_static_renormalizes_within_groups():
    f = _frame([("A", 2001, 3.0, 60.0), ("B", 2001, 1.0, 20.0), ("C", 2001, 2.0, 20.0)])
    out = op_static(f, groups={"A": "g", "B": "g", "C": "h"}).set_index("group")
    assert out.at["g", "share"] == pytest.approx(0.8)
    assert out.at["g", "aggregate"] == pytest.approx(0.75 * 3 + 0.25 * 1)
    assert out.attrs["grouped_aggregate"] == pytest.approx(out.at["all", "aggregate"], abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 60))
def test_grouped_static_aggregates_to_whole(seed, n):
    rng = np.random.default_rng(seed)
    f = _frame([(f"F{i}", 2001, rng.normal(), rng.lognormal(2, 1.5)) for i in range(n)])
    groups = {f"F{i}": str(rng.integers(0, 4)) for i in range(n)}
    out = op_static(f, groups=groups)
    whole = out.set_index("group").at["all", "aggregate"]
    assert abs(out.attrs["grouped_aggregate"] - whole) < 1e-12
    assert abs(out.attrs["share_weighted"] - whole) < 1e-12


def test_static_missing_rows_counted():
    f = _frame([("A", 2001, 1.0, 5.0), ("B", 2001, np.nan, 5.0), ("C", 2001, 2.0, 5.0)])
    out = op_static(f)
    assert out.attrs["missing_rows"] == 1
    assert out.set_index("group").at["all", "n"] == 2


def test_simulated_covariance_positive():
    panel, truth = simulate_panel(SimPanelConfig(n_firms_initial=800, n_years=3, n_sectors=1, seed=2))
    f = panel.frame.merge(truth.tfp, on=["firm_id", "year"])
    out = op_static(f[f["year"] == 2001], phi="true_tfp").set_index("group")
    assert out.at["all", "cov"] > 0


# -- transitions --

def test_transition_labels():
    f = _frame([
        ("S", y, 1.0, 1.0) for y in (2001, 2002, 2003)
    ] + [("G", 2001, 1.0, 1.0), ("G", 2003, 1.0, 1.0), ("X", 2001, 1.0, 1.0), ("E", 2002, 1.0, 1.0),
         ("E", 2003, 1.0, 1.0), ("O", 2002, 1.0, 1.0)])
    labels = classify_transitions(f, WindowSpec(2001, 2003))
    assert labels.to_dict() == {"E": ENTRANT, "G": EXITER, "O": OTHER, "S": SURVIVOR, "X": EXITER}
    loose = classify_transitions(f, WindowSpec(2001, 2003, continuity_required=False))
    assert loose["G"] == SURVIVOR
    assert classify_transitions(f, WindowSpec(2001, 2002))["E"] == ENTRANT


def test_gap_firm_is_exiter_then_entrant():
    f = _frame([("S", y, 1.0, 2.0) for y in (2001, 2002, 2003)] +
               [("G", 2001, 0.5, 1.0), ("G", 2003, 2.0, 1.0)])
    rec = mp_dynamic(f, WindowSpec(2001, 2003)).records.iloc[0]
    assert rec["n_exiters"] == 1 and rec["n_entrants"] == 1 and rec["n_survivors"] == 1
    assert rec["share_exiter_t1"] == pytest.approx(1 / 3)


def test_window_validation():
    with pytest.raises(ConfigError):
        WindowSpec(2005, 2005)


# -- dynamic split --

def _four_firms():
    return _frame([
        ("A", 2001, 1.0, 2.0), ("B", 2001, 2.0, 1.0), ("X", 2001, 0.5, 1.0),
        ("A", 2002, 1.5, 2.0), ("B", 2002, 2.0, 2.0), ("E", 2002, 1.0, 1.0),
    ])


def test_four_firm_hand_decomposition():
    res = mp_dynamic(_four_firms(), WindowSpec(2001, 2002))
    rec = res.records.iloc[0]
    expected = {"plant_improvement": 0.25, "within_reallocation": 1 / 6, "entrant_mean": -0.15,
                "entrant_cov": 0.0, "exiter_mean": 0.25, "exiter_cov": -1 / 24}
    for k, v in expected.items():
        assert rec[k] == pytest.approx(v, abs=1e-12), k
    f = _four_firms()
    assert res.aggregate_change == pytest.approx(share_weighted(f, 2002) - share_weighted(f, 2001), abs=1e-12)
    assert res.aggregate_change == pytest.approx(0.475, abs=1e-12)


def test_no_entry_or_exit():
    f = _frame([(i, y, v, o) for i, v, o in [("A", 1.0, 3.0), ("B", 2.0, 1.0)] for y in (2001, 2002)])
    f.loc[f["year"] == 2002, "phi"] += [0.3, -0.1]
    rec = mp_dynamic(f, WindowSpec(2001, 2002)).records.iloc[0]
    for k in ("entrant_mean", "entrant_cov", "exiter_mean", "exiter_cov"):
        assert rec[k] == 0.0
    assert rec["plant_improvement"] + rec["within_reallocation"] == pytest.approx(rec["aggregate_change"], abs=1e-14)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(2, 80), st.integers(2, 8))
def test_mp_terms_sum_to_direct_change(seed, n_firms, n_years):
    rng = np.random.default_rng(seed)
    f = random_panel(rng, n_firms, n_years)
    t1, t2 = 2001, 2000 + n_years
    if f[f["year"] == t1].empty or f[f["year"] == t2].empty:
        return
    groups = {fid: rng.choice(["a", "b"]) for fid in f["firm_id"].unique()}
    res = mp_dynamic(f, WindowSpec(t1, t2), groups=groups)
    direct = share_weighted(f, t2) - share_weighted(f, t1)
    all_row = res.records.set_index("group").loc["all"]
    assert abs(all_row[MP_TERMS].sum() - direct) < 1e-10
    assert res.residual_check < 1e-10
    for _, r in res.records.iterrows():
        assert abs(r["share_survivor_t1"] + r["share_exiter_t1"] - 1) < 1e-12
        assert abs(r["share_survivor_t2"] + r["share_entrant_t2"] - 1) < 1e-12


def test_group_universes_match_direct_group_change():
    rng = np.random.default_rng(5)
    f = random_panel(rng, 200, 6)
    groups = {fid: ("star" if i % 7 == 0 else "rest") for i, fid in enumerate(f["firm_id"].unique())}
    res = mp_dynamic(f, WindowSpec(2001, 2006), groups=groups).records.set_index("group")
    sub = f[f["firm_id"].map(groups) == "star"]
    assert res.at["star", "aggregate_change"] == pytest.approx(share_weighted(sub, 2006) - share_weighted(sub, 2001),
                                                               abs=1e-12)
    assert res.at["star", "share_t1"] + res.at["rest", "share_t1"] == pytest.approx(1.0)


def test_missing_endpoint_rows_are_absent():
    f = _four_firms()
    f.loc[(f["firm_id"] == "B") & (f["year"] == 2002), "phi"] = np.nan
    res = mp_dynamic(f, WindowSpec(2001, 2002))
    assert res.diagnostics["excluded_missing"] == 1
    ok = f.dropna()
    assert res.aggregate_change == pytest.approx(share_weighted(ok, 2002) - share_weighted(ok, 2001), abs=1e-12)
    assert res.records.iloc[0]["n_exiters"] == 2


def test_empty_group_omitted_and_endpoint_errors():
    f = _four_firms()
    res = mp_dynamic(f, WindowSpec(2001, 2002), groups={"X": "gone"})
    assert res.diagnostics["omitted_groups"] == ["gone"]
    with pytest.raises(InsufficientDataError):
        mp_dynamic(f, WindowSpec(2001, 2004))
    zero = f.assign(output=np.where(f["year"] == 2002, 0.0, f["output"]))
    with pytest.raises(DomainError):
        mp_dynamic(zero, WindowSpec(2001, 2002))


def test_dynamic_and_static_tables_agree_on_aggregate():
    rng = np.random.default_rng(9)
    f = random_panel(rng, 150, 5)
    windows = [WindowSpec(2001, 2005), WindowSpec(2002, 2004)]
    dyn = decomposition_table([mp_dynamic(f, w) for w in windows])
    stat = static_change_table(f, windows)
    np.testing.assert_allclose(dyn["aggregate_change"], stat["aggregate_change"], atol=1e-12)
    np.testing.assert_allclose(dyn["aggregate_change"], dyn["direct_change"], atol=1e-12)
    assert list(dyn.columns[:6]) == ["window", "group", "aggregate_change", "plant_improvement",
                                     "within_reallocation", "exiter_entrant_reallocation"]


# -- reporting convention against published component tables --

def _share_interval(component, aggregate):
    corners = [(component + dc) / (aggregate + da) for dc in (-ROUNDING, ROUNDING) for da in (-ROUNDING, ROUNDING)]
    return min(corners), max(corners)


@pytest.mark.parametrize("name,parts", [
    ("dynamic_op_published.csv", ("plant_improvement", "within_reallocation", "exiter_entrant_reallocation")),
    ("static_op_published.csv", ("plant_improvement", "reallocation")),
])
def test_report_components_reproduce_published_tables(name, parts):
    table = pd.read_csv(DATA / name)
    out = report_components(table.drop(columns=["aggregate_change"]), parts=parts)
    assert (out["aggregate_change"] - table["aggregate_change"]).abs().max() <= 1e-3 + 1e-12
    for p in parts:
        for comp, agg, published in zip(table[p], table["aggregate_change"], table[f"share_{p}"]):
            lo, hi = _share_interval(comp, agg)
            assert lo - ROUNDING <= published <= hi + ROUNDING


def test_headline_rows():
    dyn = report_components(pd.DataFrame({"plant_improvement": [1.096], "within_reallocation": [-0.446],
                                          "exiter_entrant_reallocation": [0.409]}))
    assert dyn["aggregate_change"].iloc[0] == pytest.approx(1.059, abs=1e-12)
    stat = report_components(pd.DataFrame({"plant_improvement": [1.294], "reallocation": [-0.235]}),
                             parts=("plant_improvement", "reallocation"))
    assert stat["aggregate_change"].iloc[0] == pytest.approx(1.059, abs=1e-12)


def test_shares_blow_up_near_zero_aggregate():
    out = report_components(pd.DataFrame({"plant_improvement": [0.756], "within_reallocation": [-0.875],
                                          "exiter_entrant_reallocation": [0.188]}))
    assert out["share_plant_improvement"].iloc[0] > 10
    assert out["share_within_reallocation"].iloc[0] < -12
