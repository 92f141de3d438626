"""Shift-share instruments for spillover exposure and the road-density instrument."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import DomainError, IntegrityError, MissingKeyError, SchemaError
from .panel import Panel
from .spillovers import CELL, _flag_series, hspill

logger = logging.getLogger(__name__)


@dataclass
class InstrumentSeries:
    """Instrument values keyed by (sector3, province, year) or, for road density, (province, year)."""

    values: pd.Series
    kind: str
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TariffTable:
    """MFN simple-average tariff (percent) by (sector3, year)."""

    entries: Mapping

    def __post_init__(self):
        bad = [k for k, v in self.entries.items() if not (np.isfinite(v) and v >= 0)]
        if bad:
            raise IntegrityError(f"tariffs must be finite and non-negative: {bad[:5]}", bad)

    @classmethod
    def from_csv(cls, path) -> "TariffTable":
        df = pd.read_csv(path, dtype={"sector3": str})
        missing = {"sector3", "year", "mfn"} - set(df.columns)
        if missing:
            raise SchemaError(f"tariff file lacks columns {sorted(missing)}")
        return cls({(s, int(y)): float(v) for s, y, v in zip(df["sector3"], df["year"], df["mfn"])})

    def series(self) -> pd.Series:
        idx = pd.MultiIndex.from_tuples(sorted(self.entries), names=["sector3", "year"])
        return pd.Series([self.entries[k] for k in idx], index=idx, name="mfn")

    def to_frame(self) -> pd.DataFrame:
        return self.series().reset_index()


def _frame(panel) -> pd.DataFrame:
    return panel.frame if isinstance(panel, Panel) else panel


def base_labor_share(panel, flags, base_year: int, skill: str = "unskilled") -> pd.Series:
    """Superstar share of (production or total) workers per (sector3, province) in the base year."""
    frame = _frame(panel)
    if skill not in ("unskilled", "all"):
        raise DomainError(f"skill must be 'unskilled' or 'all', got {skill!r}")
    base = frame[frame["year"] == base_year]
    if base.empty:
        raise MissingKeyError(f"base year {base_year} not in panel", base_year)
    workers = base["workers_production"].astype("Float64").astype(float)
    if skill == "all":
        workers = workers + base["workers_nonproduction"].astype("Float64").astype(float)
    flagged = _flag_series(flags, base["firm_id"])
    df = pd.DataFrame({"sector3": base["sector3"], "province": base["province"],
                       "all": workers.fillna(0.0), "star": workers.fillna(0.0) * flagged})
    sums = df.groupby(["sector3", "province"])[["all", "star"]].sum()
    share = (sums["star"] / sums["all"]).where(sums["all"] > 0).rename("share")
    n_zero = int((sums["all"] <= 0).sum())
    if n_zero:
        logger.info("%d base-year cells without workers", n_zero)
    share.attrs["zero_worker_cells"] = n_zero
    return share


def _province_output(frame: pd.DataFrame) -> pd.DataFrame:
    """Sector output by province (rows: sector3, province) and year (columns)."""
    return frame.pivot_table(index=["sector3", "province"], columns="year", values="output",
                             aggfunc="sum", fill_value=0.0).sort_index()


def loo_growth_table(panel) -> pd.Series:
    """Leave-own-province-out national output growth for every (sector3, province, year)."""
    frame = _frame(panel)
    wide = _province_output(frame[frame["output"].notna()])
    years = list(wide.columns)
    parts = []
    for sector, block in wide.groupby(level="sector3", sort=True):
        arr = block.to_numpy(dtype=float)
        for row, province in enumerate(block.index.get_level_values("province")):
            if arr.shape[0] == 1:
                leave_out = np.zeros(len(years))
            else:
                leave_out = np.delete(arr, row, axis=0).sum(axis=0)
            for t in range(1, len(years)):
                if years[t] - 1 != years[t - 1]:
                    continue
                prev = leave_out[t - 1]
                g = (leave_out[t] - prev) / prev if prev > 0 else np.nan
                parts.append((sector, province, years[t], g))
    idx = pd.MultiIndex.from_tuples([p[:3] for p in parts], names=CELL)
    out = pd.Series([p[3] for p in parts], index=idx, name="growth", dtype=float)
    out.attrs["missing_cells"] = int(out.isna().sum())
    return out


def loo_output_growth(panel, sector3: str, province: str, year: int) -> float:
    """Growth of sector output summed over every province except ``province``."""
    frame = _frame(panel)
    sub = frame[(frame["sector3"] == sector3) & (frame["province"] != province) & frame["output"].notna()]
    if (frame["year"] == year - 1).sum() == 0:
        raise MissingKeyError(f"year {year - 1} not in panel", year - 1)
    now = sub.loc[sub["year"] == year, "output"].sum()
    before = sub.loc[sub["year"] == year - 1, "output"].sum()
    if not before > 0:
        return float("nan")
    return float((now - before) / before)


def lab_bartik_iv(shares: pd.Series, growth: pd.Series) -> InstrumentSeries:
    """``share(k, j) * growth(k, -j, t)`` on every cell of ``growth``."""
    key = pd.MultiIndex.from_arrays([growth.index.get_level_values("sector3"),
                                     growth.index.get_level_values("province")])
    s = shares.reindex(key).to_numpy(dtype=float)
    values = pd.Series(s * growth.to_numpy(dtype=float), index=growth.index, name="lab_bartik")
    return InstrumentSeries(values, "LabBartik", {"missing_cells": int(values.isna().sum())})


def tariff_bartik_iv(panel, flags, tariffs: TariffTable, base_year: int) -> InstrumentSeries:
    """Base-year superstar output share of the cell times the sector's tariff change."""
    frame = _frame(panel)
    base = frame[frame["year"] == base_year]
    if base.empty:
        raise MissingKeyError(f"base year {base_year} not in panel", base_year)
    share = hspill(base, flags).values.droplevel("year") / 100.0
    cells = frame[CELL].drop_duplicates().sort_values(CELL, kind="mergesort")
    tariff = tariffs.entries
    shift = np.array([tariff[(k, t)] - tariff[(k, t - 1)]
                      if (k, t) in tariff and (k, t - 1) in tariff else np.nan
                      for k, t in zip(cells["sector3"], cells["year"])])
    s = share.reindex(pd.MultiIndex.from_frame(cells[["sector3", "province"]])).to_numpy(dtype=float)
    values = pd.Series(s * shift, index=pd.MultiIndex.from_frame(cells), name="tarr_bartik")
    return InstrumentSeries(values, "TarrBartik", {"missing_cells": int(values.isna().sum())})


def road_density(regions, years: Optional[Sequence[int]] = None) -> InstrumentSeries:
    """Road length over area per (province, year).

    Years before a province's first observed road length reuse that length;
    pass ``years`` to create rows the region file omits.
    """
    df = pd.read_csv(regions, dtype={"province": str}) if not isinstance(regions, pd.DataFrame) else regions.copy()
    missing = {"province", "year", "road_km", "area_km2"} - set(df.columns)
    if missing:
        raise SchemaError(f"region file lacks columns {sorted(missing)}")
    df["year"] = df["year"].astype(int)
    if (df["area_km2"] <= 0).any():
        bad = df.loc[df["area_km2"] <= 0, "province"].unique().tolist()
        raise DomainError(f"non-positive area for provinces {bad}")
    parts = []
    for province, g in df.sort_values("year").groupby("province", sort=True):
        g = g.set_index("year")
        if years is not None:
            g = g.reindex(sorted(set(g.index) | set(years)))
            g["area_km2"] = g["area_km2"].bfill().ffill()
        observed = g["road_km"].dropna()
        if observed.empty:
            continue
        first = observed.index[0]
        road = g["road_km"].copy()
        road[road.index < first] = observed.iloc[0]
        dens = road / g["area_km2"]
        parts.append(pd.DataFrame({"province": province, "year": g.index, "road_density": dens.to_numpy()}))
    out = pd.concat(parts).set_index(["province", "year"])["road_density"].sort_index()
    return InstrumentSeries(out, "RoadDensity", {"missing_cells": int(out.isna().sum())})


def instruments_frame(lab: InstrumentSeries, tarr: InstrumentSeries,
                      road: Optional[InstrumentSeries] = None) -> pd.DataFrame:
    df = pd.concat([lab.values.rename("lab_bartik"), tarr.values.rename("tarr_bartik")], axis=1).sort_index()
    df = df.reset_index()
    if road is not None:
        rd = road.values.rename("road_density").reset_index()
        df = df.merge(rd, on=["province", "year"], how="left")
    else:
        df["road_density"] = np.nan
    return df[["sector3", "province", "year", "lab_bartik", "tarr_bartik", "road_density"]]
