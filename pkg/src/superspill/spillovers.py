"""Superstar classification, spillover exposure series and firm-level controls."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Mapping, Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, MissingKeyError
from .panel import IOTable, Panel, workers_total

logger = logging.getLogger(__name__)

CELL = ["sector3", "province", "year"]


@dataclass(frozen=True)
class SuperstarRule:
    top_share_cutoff: float = 0.05
    min_tenure_years: int = 10
    top_frequency: float = 0.90
    foreign_threshold: Optional[float] = 0.10
    method: Literal["frequency", "median"] = "frequency"

    def __post_init__(self):
        if not 0 < self.top_share_cutoff < 1:
            raise ConfigError("top_share_cutoff must lie in (0, 1)", "top_share_cutoff")
        if self.min_tenure_years < 0:
            raise ConfigError("min_tenure_years must be non-negative", "min_tenure_years")
        if not 0 < self.top_frequency <= 1:
            raise ConfigError("top_frequency must lie in (0, 1]", "top_frequency")
        if self.foreign_threshold is not None and not 0 < self.foreign_threshold < 1:
            raise ConfigError("foreign_threshold must lie in (0, 1)", "foreign_threshold")
        if self.method not in ("frequency", "median"):
            raise ConfigError(f"unknown superstar method {self.method!r}", "method")


@dataclass
class SpilloverSeries:
    """Values keyed by (sector3, province, year); ``kind`` is H, B or F, in percent."""

    values: pd.Series
    kind: str
    diagnostics: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=np.nan):
        return self.values.get(key, default)


def cell_codes(frame: pd.DataFrame, columns=CELL) -> tuple:
    """Integer cell code per row plus the sorted cell keys."""
    codes, uniques = pd.MultiIndex.from_frame(frame[list(columns)]).factorize(sort=True)
    return codes, uniques


def _flag_series(flags, firm_ids: pd.Series) -> np.ndarray:
    if isinstance(flags, pd.DataFrame):
        flags = flags["superstar"]
    mapping = flags if isinstance(flags, Mapping) else dict(flags.items())
    return np.array([bool(mapping.get(f, False)) for f in firm_ids], dtype=bool)


# -- classification --------------------------------------------------------------

def in_top_mask(frame: pd.DataFrame, cutoff: float, by=("sector3", "year")) -> np.ndarray:
    """Rows whose output is at or above the (1 - cutoff) quantile of their cell.

    The linear-interpolation quantile of n sorted values sits at position
    ``h = (n-1)(1-cutoff)``; a value is at or above it exactly when it is at
    least the order statistic at ``ceil(h)``, so the comparison is made
    against that order statistic and stays rank-based.
    """
    out = frame["output"].to_numpy(dtype=float)
    codes, _ = cell_codes(frame, by)
    order = np.lexsort((out, codes))
    mask = np.zeros(len(frame), dtype=bool)
    bounds = np.flatnonzero(np.diff(np.r_[-1, codes[order], -2]))
    for start, stop in zip(bounds[:-1], bounds[1:]):
        idx = order[start:stop]
        n = len(idx)
        k = math.ceil((n - 1) * (1 - cutoff) - 1e-9)
        threshold = out[idx[k]]
        mask[idx] = out[idx] >= threshold
    return mask


def classify_superstars(panel: Panel, rule: SuperstarRule = SuperstarRule()) -> pd.DataFrame:
    """Firm-level superstar flags.

    Returns a frame indexed by ``firm_id`` with ``superstar``,
    ``superstar_foreign``, ``superstar_domestic``, ``tenure`` and
    ``top_frequency``.  Single-firm cells are counted in the
    ``single_firm_cells`` attribute of the returned frame.
    """
    frame = panel.frame[panel.frame["output"].notna()][["firm_id", "year", "sector3", "output", "foreign_share"]]
    frame = frame.reset_index(drop=True)
    cell_sizes = frame.groupby(["sector3", "year"])["firm_id"].transform("size")
    years = frame.groupby("firm_id")["year"].agg(["min", "max", "size"])
    tenure = years["max"] - years["min"] + 1

    if rule.method == "frequency":
        frame["in_top"] = in_top_mask(frame, rule.top_share_cutoff)
        freq = frame.groupby("firm_id")["in_top"].mean()
        top_ok = freq > rule.top_frequency
    else:
        total = frame.groupby(["sector3", "year"])["output"].transform("sum")
        frame["share"] = frame["output"] / total
        med = frame.groupby(["firm_id", "sector3"])["share"].median().rename("output").reset_index()
        med["year"] = 0
        med["in_top"] = in_top_mask(med, rule.top_share_cutoff)
        freq = med.groupby("firm_id")["in_top"].mean()
        top_ok = freq > 0

    result = pd.DataFrame({"tenure": tenure, "top_frequency": freq})
    result["superstar"] = (result["tenure"] > rule.min_tenure_years) & top_ok.reindex(result.index, fill_value=False)
    if rule.foreign_threshold is not None:
        med_foreign = frame.groupby("firm_id")["foreign_share"].median()
        foreign = (med_foreign > rule.foreign_threshold).reindex(result.index, fill_value=False)
        result["superstar_foreign"] = result["superstar"] & foreign
        result["superstar_domestic"] = result["superstar"] & ~foreign
    else:
        result["superstar_foreign"] = False
        result["superstar_domestic"] = result["superstar"]
    result.index.name = "firm_id"
    result = result.sort_index()
    result.attrs["single_firm_cells"] = int(frame.loc[cell_sizes == 1, ["sector3", "year"]].drop_duplicates().shape[0])
    return result


def flags_to_frame(flags: pd.DataFrame) -> pd.DataFrame:
    out = flags[["superstar", "superstar_foreign", "superstar_domestic"]].astype(int).reset_index()
    return out


# -- exposure series ---------------------------------------------------------------

def hspill(panel: Panel | pd.DataFrame, flags) -> SpilloverSeries:
    """Superstar share (percent) of output in each (sector3, province, year) cell."""
    frame = panel.frame if isinstance(panel, Panel) else panel
    missing = frame["output"].isna()
    frame = frame[~missing]
    out = frame["output"].to_numpy(dtype=float)
    flagged = _flag_series(flags, frame["firm_id"])
    codes, keys = cell_codes(frame)
    total = np.bincount(codes, weights=out, minlength=len(keys))
    star = np.bincount(codes, weights=out * flagged, minlength=len(keys))
    with np.errstate(divide="ignore", invalid="ignore"):
        values = np.where(total > 0, 100.0 * (star / total), np.nan)
    series = pd.Series(values, index=pd.MultiIndex.from_tuples(list(keys), names=CELL), name="hspill")
    diag = {"zero_output_cells": int((total <= 0).sum()), "missing_output_rows": int(missing.sum())}
    if diag["zero_output_cells"]:
        logger.info("%d cells with zero total output", diag["zero_output_cells"])
    return SpilloverSeries(series, "H", diag)


def _vertical(hs: SpilloverSeries, io: IOTable, direction: str, strict: bool) -> SpilloverSeries:
    values = hs.values
    sectors = values.index.get_level_values("sector3")
    unknown = sorted(set(sectors) - set(io.sectors))
    if unknown and strict:
        raise MissingKeyError(f"sectors absent from the IO table: {unknown}", unknown)
    known = values[~sectors.isin(unknown)] if unknown else values
    coeffs = io.coeffs.copy()
    np.fill_diagonal(coeffs, 0.0)
    # backward: sum over buyers k of b[k, l] * H_k; forward: sum over sellers k of b[m, k] * H_k
    weights = coeffs.T if direction == "B" else coeffs
    pos = io.position
    wide = known.unstack("sector3")
    cols = [pos[s] for s in wide.columns]
    arr = wide.to_numpy(dtype=float)
    # rows are (province, year); absent or missing H cells contribute zero
    h_full = np.zeros((len(wide), len(io.sectors)))
    present = np.zeros_like(h_full, dtype=bool)
    h_full[:, cols] = np.nan_to_num(arr, nan=0.0)
    present[:, cols] = ~np.isnan(arr)
    n_missing = int((~present).sum())
    result = h_full @ weights.T
    out_parts = []
    for j, s in enumerate(wide.columns):
        col = pd.Series(result[:, pos[s]], index=wide.index)
        col = col[~np.isnan(arr[:, j])]
        out_parts.append(col.to_frame("v").assign(sector3=s))
    stacked = pd.concat(out_parts).reset_index().set_index(CELL)["v"].sort_index()
    stacked.name = {"B": "bspill", "F": "fspill"}[direction]
    diag = {"dropped_sectors": unknown, "missing_h_cells": n_missing}
    if unknown:
        logger.warning("sectors dropped from %s series (not in IO table): %s", direction, unknown)
    return SpilloverSeries(stacked, direction, diag)


def bspill(hs: SpilloverSeries, io: IOTable, strict: bool = False) -> SpilloverSeries:
    """Backward exposure of upstream sector l: ``sum_{k != l} b[k, l] * H[k]`` within province-year."""
    return _vertical(hs, io, "B", strict)


def fspill(hs: SpilloverSeries, io: IOTable, strict: bool = False) -> SpilloverSeries:
    """Forward exposure of downstream sector m: ``sum_{k != m} b[m, k] * H[k]`` within province-year."""
    return _vertical(hs, io, "F", strict)


def spillover_frame(h: SpilloverSeries, b: SpilloverSeries, f: SpilloverSeries) -> pd.DataFrame:
    df = pd.concat([h.values.rename("hspill"), b.values.rename("bspill"), f.values.rename("fspill")], axis=1)
    return df.sort_index().reset_index()


# -- controls -----------------------------------------------------------------------

def controls(panel: Panel, flags, foreign_threshold: float = 0.10) -> pd.DataFrame:
    """Per-row covariates aligned with ``panel.frame``: hhi, import_intensity, absorptive, foreign, exporter, superstar."""
    frame = panel.frame
    out = pd.DataFrame(index=frame.index)
    output = frame["output"]
    total = frame.groupby(["sector3", "year"])["output"].transform("sum")
    share_sq = (output / total) ** 2
    out["hhi"] = share_sq.groupby([frame["sector3"], frame["year"]]).transform("sum")
    with np.errstate(divide="ignore", invalid="ignore"):
        mats = frame["materials"]
        out["import_intensity"] = (frame["imported_materials"] / mats).where(mats > 0)
        workers = workers_total(frame)
        ratio = frame["wage_bill"] / workers
        out["absorptive"] = np.log(ratio.where((workers >= 1) & (frame["wage_bill"] > 0)))
    out["foreign"] = (frame["foreign_share"] > foreign_threshold).astype(float).where(frame["foreign_share"].notna())
    out["exporter"] = frame["export_flag"].astype("Float64").astype(float)
    out["superstar"] = _flag_series(flags, frame["firm_id"]).astype(float)
    return out
