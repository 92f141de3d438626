"""Firm-year panel: data model, CSV ingestion, deflation and imputation."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from .errors import InsufficientDataError, IntegrityError, MissingKeyError, SchemaError

logger = logging.getLogger(__name__)

ID_COLUMNS = ["firm_id", "sector3", "sector2", "province", "island"]
FLOAT_COLUMNS = [
    "output", "value_added", "capital", "materials", "energy",
    "wage_bill", "foreign_share", "imported_materials",
]
INT_COLUMNS = ["workers_production", "workers_nonproduction"]
BOOL_COLUMNS = ["export_flag"]
PANEL_COLUMNS = [
    "firm_id", "year", "sector3", "sector2", "province", "island",
    "output", "value_added", "capital", "materials", "energy",
    "workers_production", "workers_nonproduction", "wage_bill",
    "foreign_share", "export_flag", "imported_materials",
]
MONETARY_COLUMNS = ["output", "value_added", "capital", "materials", "energy", "imported_materials"]
NONNEGATIVE_COLUMNS = ["output", "capital", "materials", "energy", "wage_bill", "imported_materials"]

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}


@dataclass(frozen=True)
class FirmYear:
    """One firm-year observation. Missing numeric values are ``None``."""

    firm_id: str
    year: int
    sector3: str
    sector2: str
    province: str
    island: str
    output: Optional[float] = None
    value_added: Optional[float] = None
    capital: Optional[float] = None
    materials: Optional[float] = None
    energy: Optional[float] = None
    workers_production: Optional[int] = None
    workers_nonproduction: Optional[int] = None
    wage_bill: Optional[float] = None
    foreign_share: Optional[float] = None
    export_flag: Optional[bool] = None
    imported_materials: Optional[float] = None

    @property
    def workers(self) -> Optional[int]:
        if self.workers_production is None or self.workers_nonproduction is None:
            return None
        return self.workers_production + self.workers_nonproduction


def _absent(value) -> bool:
    return value is None or value is pd.NA or (isinstance(value, float) and np.isnan(value))


@dataclass(frozen=True)
class Panel:
    """An immutable, (firm_id, year)-indexed collection of firm-year rows.

    ``frame`` holds one row per firm-year with at least the columns in
    :data:`PANEL_COLUMNS`; later stages append derived columns (``phi``,
    ``dphi``, ``lp``, imputation flags).  Missing values are pandas NA.
    """

    frame: pd.DataFrame
    deflated: bool = False
    rejections: pd.DataFrame = field(default_factory=pd.DataFrame)
    diagnostics: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        keys = self.frame[["firm_id", "year"]]
        dup = keys.duplicated(keep=False)
        if dup.any():
            offenders = sorted(set(map(tuple, keys[dup].itertuples(index=False, name=None))))
            listing = ", ".join(f"{f}/{y}" for f, y in offenders[:20])
            raise IntegrityError(f"duplicate (firm_id, year) keys: {listing}", offenders)

    def __len__(self) -> int:
        return len(self.frame)

    def replace(self, **changes) -> "Panel":
        return dataclasses.replace(self, **changes)

    def with_diagnostic(self, key: str, value) -> "Panel":
        diagnostics = dict(self.diagnostics)
        diagnostics[key] = value
        return self.replace(diagnostics=diagnostics)

    @cached_property
    def _key_index(self) -> dict:
        return {k: i for i, k in enumerate(zip(self.frame["firm_id"], self.frame["year"]))}

    @cached_property
    def _cell_index(self) -> dict:
        grouped = self.frame.groupby(["sector3", "province", "year"], sort=True).indices
        return {k: v for k, v in grouped.items()}

    def get(self, firm_id: str, year: int) -> FirmYear:
        try:
            pos = self._key_index[(firm_id, int(year))]
        except KeyError:
            raise MissingKeyError(f"no row for ({firm_id}, {year})", (firm_id, year)) from None
        return _row_to_firmyear(self.frame.iloc[pos])

    def cell(self, sector3: str, province: str, year: int) -> pd.DataFrame:
        pos = self._cell_index.get((sector3, province, int(year)))
        if pos is None:
            return self.frame.iloc[0:0]
        return self.frame.iloc[pos]

    def rows(self) -> Iterator[FirmYear]:
        for _, row in self.frame.iterrows():
            yield _row_to_firmyear(row)

    @property
    def years(self) -> list:
        return sorted(self.frame["year"].unique().tolist())


def _row_to_firmyear(row: pd.Series) -> FirmYear:
    values = {}
    for f in dataclasses.fields(FirmYear):
        v = row.get(f.name)
        if _absent(v):
            values[f.name] = None
        elif f.name == "year" or f.name in INT_COLUMNS:
            values[f.name] = int(v)
        elif f.name in BOOL_COLUMNS:
            values[f.name] = bool(v)
        elif f.name in FLOAT_COLUMNS:
            values[f.name] = float(v)
        else:
            values[f.name] = str(v)
    return FirmYear(**values)


def workers_total(frame: pd.DataFrame) -> pd.Series:
    return (frame["workers_production"] + frame["workers_nonproduction"]).astype("Float64").astype(float)


# -- ingestion ---------------------------------------------------------------

def _parse_bool(series: pd.Series, name: str) -> pd.Series:
    out = []
    for i, v in enumerate(series):
        if v is None or v is pd.NA or (isinstance(v, float) and np.isnan(v)) or v == "":
            out.append(pd.NA)
            continue
        s = str(v).strip().lower()
        if s in _TRUE:
            out.append(True)
        elif s in _FALSE:
            out.append(False)
        else:
            raise SchemaError(f"column {name!r} row {i}: cannot parse {v!r} as boolean")
    return pd.array(out, dtype="boolean")


def _parse_numeric(series: pd.Series, name: str, integer: bool) -> pd.Series:
    parsed = pd.to_numeric(series, errors="coerce")
    bad = parsed.isna() & series.notna() & (series.astype("string").str.strip() != "")
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise SchemaError(f"column {name!r} row {i}: cannot parse {series.iloc[i]!r} as a number")
    if integer:
        if ((parsed.dropna() % 1) != 0).any():
            raise SchemaError(f"column {name!r} has non-integer values")
        return parsed.astype("Int64")
    return parsed.astype(float)


def coerce_panel_frame(raw: pd.DataFrame) -> pd.DataFrame:
    """Cast a string-typed frame with canonical column names to panel dtypes."""
    frame = pd.DataFrame(index=raw.index)
    for col in PANEL_COLUMNS:
        s = raw[col]
        if col in ID_COLUMNS:
            frame[col] = s.astype("string").str.strip().astype(object)
        elif col == "year":
            year = _parse_numeric(s, col, integer=True)
            if year.isna().any():
                raise SchemaError("column 'year' has missing values")
            frame[col] = year.astype(np.int64)
        elif col in INT_COLUMNS:
            frame[col] = _parse_numeric(s, col, integer=True)
        elif col in BOOL_COLUMNS:
            frame[col] = _parse_bool(s, col)
        else:
            frame[col] = _parse_numeric(s, col, integer=False)
    for col in ID_COLUMNS:
        if frame[col].isna().any() or (frame[col] == "").any():
            raise SchemaError(f"column {col!r} has missing identifiers")
    extra = [c for c in raw.columns if c not in PANEL_COLUMNS]
    for col in extra:
        frame[col] = raw[col]
    return frame


def _row_violations(frame: pd.DataFrame) -> pd.Series:
    reasons = pd.Series([""] * len(frame), index=frame.index, dtype=object)

    def flag(mask, text):
        mask = mask.fillna(False).to_numpy(dtype=bool) if hasattr(mask, "fillna") else mask
        reasons[mask] = reasons[mask] + (text + ";")

    flag(frame["imported_materials"] > frame["materials"], "imported_materials>materials")
    prefix_ok = np.array([s3.startswith(s2) and len(s2) == 2 for s3, s2 in zip(frame["sector3"], frame["sector2"])])
    flag(pd.Series(~prefix_ok, index=frame.index), "sector2_not_prefix")
    for col in NONNEGATIVE_COLUMNS:
        flag(frame[col] < 0, f"{col}<0")
    for col in INT_COLUMNS:
        flag(frame[col] < 0, f"{col}<0")
    flag((frame["foreign_share"] < 0) | (frame["foreign_share"] > 1), "foreign_share_out_of_range")
    return reasons


def build_panel(frame: pd.DataFrame, **kwargs) -> Panel:
    """Validate a typed frame and construct a Panel, moving invalid rows to the rejection report."""
    frame = frame.sort_values(["firm_id", "year"], kind="mergesort").reset_index(drop=True)
    reasons = _row_violations(frame)
    bad = reasons != ""
    rejections = frame[bad].assign(reason=reasons[bad].str.rstrip(";")).reset_index(drop=True)
    good = frame[~bad].reset_index(drop=True)
    if len(rejections):
        logger.warning("%d rows rejected on ingestion", len(rejections))
    return Panel(good, rejections=rejections, **kwargs)


def load_panel(path, schema: Optional[Mapping[str, str]] = None) -> Panel:
    """Read a panel CSV.

    Parameters
    ----------
    path : path-like
        CSV file. Empty cells are missing values.
    schema : mapping, optional
        Canonical column name -> header name in the file, for files whose
        headers differ from :data:`PANEL_COLUMNS`.

    Raises
    ------
    SchemaError
        A declared column is absent or a numeric field fails to parse.
    IntegrityError
        A (firm_id, year) key appears more than once.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""])
    rename = {}
    schema = dict(schema or {})
    for col in PANEL_COLUMNS:
        src = schema.get(col, col)
        if src not in raw.columns:
            raise SchemaError(f"missing column {src!r} (for {col!r}) in {path}")
        rename[src] = col
    raw = raw.rename(columns=rename)
    return build_panel(coerce_panel_frame(raw))


def write_panel(panel: Panel | pd.DataFrame, path) -> None:
    frame = panel.frame if isinstance(panel, Panel) else panel
    out = frame.copy()
    for col in out.columns:
        if str(out[col].dtype) == "boolean":
            out[col] = out[col].map({True: "1", False: "0"}).astype(object)
    out.to_csv(path, index=False, na_rep="", float_format=None, lineterminator="\n")


# -- lookup tables -------------------------------------------------------------

@dataclass(frozen=True)
class DeflatorTable:
    """Wholesale price index by (sector2, year); ``base_year`` rows equal 100."""

    entries: Mapping[tuple, float]
    base_year: int = 2000

    def __post_init__(self):
        sectors = {s for s, _ in self.entries}
        for s in sorted(sectors):
            base = self.entries.get((s, self.base_year))
            if base is None:
                raise IntegrityError(f"deflator table lacks base year {self.base_year} for sector {s}", [(s, self.base_year)])
            if not np.isclose(base, 100.0, rtol=0, atol=1e-9):
                raise IntegrityError(f"deflator index for sector {s} at base year is {base}, not 100", [(s, self.base_year)])
        for key, v in self.entries.items():
            if not (np.isfinite(v) and v > 0):
                raise IntegrityError(f"deflator index {key} must be positive, got {v}", [key])

    @classmethod
    def from_csv(cls, path, base_year: int = 2000) -> "DeflatorTable":
        df = pd.read_csv(path, dtype={"sector2": str})
        for col in ("sector2", "year", "wpi"):
            if col not in df.columns:
                raise SchemaError(f"deflator CSV missing column {col!r}")
        entries = {(str(s), int(y)): float(v) for s, y, v in zip(df["sector2"], df["year"], df["wpi"])}
        return cls(entries, base_year)

    def to_frame(self) -> pd.DataFrame:
        rows = sorted(self.entries.items())
        return pd.DataFrame([(s, y, v) for (s, y), v in rows], columns=["sector2", "year", "wpi"])


@dataclass(frozen=True)
class IOTable:
    """Intermediate-use coefficients; ``coeffs[k, l]`` is the input from upstream ``l`` per unit of downstream ``k``."""

    sectors: Sequence[str]
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        n = len(self.sectors)
        if c.shape != (n, n):
            raise IntegrityError(f"IO table must be {n}x{n}, got {c.shape}")
        if len(set(self.sectors)) != n:
            raise IntegrityError("IO table has duplicate sector labels")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise IntegrityError("IO coefficients must be finite and non-negative")
        object.__setattr__(self, "sectors", list(self.sectors))
        object.__setattr__(self, "coeffs", c)

    @cached_property
    def position(self) -> dict:
        return {s: i for i, s in enumerate(self.sectors)}

    @classmethod
    def from_csv(cls, path) -> "IOTable":
        """Read long-format ``row_sector, col_sector, coeff``; the row sector is the buyer."""
        df = pd.read_csv(path, dtype={"row_sector": str, "col_sector": str})
        for col in ("row_sector", "col_sector", "coeff"):
            if col not in df.columns:
                raise SchemaError(f"IO-table CSV missing column {col!r}")
        sectors = sorted(set(df["row_sector"]) | set(df["col_sector"]))
        pos = {s: i for i, s in enumerate(sectors)}
        coeffs = np.zeros((len(sectors), len(sectors)))
        for r, c, v in zip(df["row_sector"], df["col_sector"], df["coeff"]):
            coeffs[pos[r], pos[c]] = float(v)
        return cls(sectors, coeffs)

    def to_frame(self) -> pd.DataFrame:
        rows = [(a, b, self.coeffs[i, j]) for i, a in enumerate(self.sectors)
                for j, b in enumerate(self.sectors) if self.coeffs[i, j] != 0]
        return pd.DataFrame(rows, columns=["row_sector", "col_sector", "coeff"])


def load_province_islands(path) -> dict:
    df = pd.read_csv(path, dtype=str)
    for col in ("province", "island"):
        if col not in df.columns:
            raise SchemaError(f"province-island CSV missing column {col!r}")
    return dict(zip(df["province"], df["island"]))


def assign_islands(panel: Panel, mapping: Mapping[str, str]) -> Panel:
    missing = sorted(set(panel.frame["province"]) - set(mapping))
    if missing:
        raise MissingKeyError(f"provinces without an island mapping: {missing}", missing)
    frame = panel.frame.copy()
    frame["island"] = frame["province"].map(mapping)
    return panel.replace(frame=frame)


# -- transformations -------------------------------------------------------------

def apply_deflators(panel: Panel, deflators: DeflatorTable) -> Panel:
    """Divide monetary fields by ``wpi / 100`` of the row's (sector2, year)."""
    frame = panel.frame
    keys = list(zip(frame["sector2"], frame["year"]))
    idx = np.empty(len(keys))
    for i, key in enumerate(keys):
        try:
            idx[i] = deflators.entries[(key[0], int(key[1]))]
        except KeyError:
            raise MissingKeyError(f"no deflator for (sector2={key[0]}, year={key[1]})", key) from None
    if panel.deflated:
        logger.warning("panel is already flagged as deflated; deflating again")
    out = frame.copy()
    # value * 100 / index keeps hand-checkable ratios exact; index-100 rows are left as-is
    at_base = idx == 100.0
    for col in MONETARY_COLUMNS:
        v = out[col].to_numpy(dtype=float)
        out[col] = np.where(at_base, v, v * 100.0 / idx)
    return panel.replace(frame=out, deflated=True)


def impute_gap_average(panel: Panel, variables: Sequence[str], year: int) -> Panel:
    """Fill a missing value at ``year`` with the mean of the firm's t-1 and t+1 values.

    Firms lacking either neighbour stay missing and are listed under
    ``diagnostics['gap_average_unfilled']``.  Filled cells are flagged in
    ``imputed_<variable>`` columns.
    """
    frame = panel.frame.copy()
    year = int(year)
    lookup = frame.set_index(["firm_id", "year"])
    unfilled = []
    for var in variables:
        flag_col = f"imputed_{var}"
        if flag_col not in frame.columns:
            frame[flag_col] = False
        target = frame.index[(frame["year"] == year) & frame[var].isna()]
        for i in target:
            fid = frame.at[i, "firm_id"]
            prev = lookup[var].get((fid, year - 1), np.nan)
            nxt = lookup[var].get((fid, year + 1), np.nan)
            if _absent(prev) or _absent(nxt):
                unfilled.append((fid, year, var))
                continue
            value = (prev + nxt) / 2
            if var in INT_COLUMNS:
                value = int(round(value))
            frame.at[i, var] = value
            frame.at[i, flag_col] = True
    diag = list(panel.diagnostics.get("gap_average_unfilled", [])) + unfilled
    return panel.replace(frame=frame).with_diagnostic("gap_average_unfilled", diag)


CAPITAL_REGRESSORS = ["output", "labour", "materials", "energy"]


def _capital_design(frame: pd.DataFrame) -> pd.DataFrame:
    """Log capital and log lagged regressors, aligned by firm and consecutive year."""
    work = frame[["firm_id", "year", "sector2", "capital", "output", "materials", "energy"]].copy()
    work["labour"] = workers_total(frame)
    lag = work[["firm_id", "year"] + CAPITAL_REGRESSORS].copy()
    lag["year"] = lag["year"] + 1
    merged = work.merge(lag, on=["firm_id", "year"], how="left", suffixes=("", "_lag"), sort=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        merged["log_k"] = np.log(merged["capital"].where(merged["capital"] > 0))
        for col in CAPITAL_REGRESSORS:
            v = merged[f"{col}_lag"]
            merged[f"log_{col}_lag"] = np.log(v.where(v > 0))
    return merged


def impute_capital_regression(panel: Panel, target_year: int, by_sector: bool = False) -> Panel:
    """Predict missing capital at ``target_year`` from lagged output, labour, materials and energy.

    The log-linear regression is fit by least squares on every firm-year
    with observed capital and a complete lagged row.  The prediction adds the
    firm's most recent residual from an earlier year (zero if none).  With
    ``by_sector`` the regression is fit per 2-digit sector.
    """
    target_year = int(target_year)
    design = _capital_design(panel.frame)
    xcols = [f"log_{c}_lag" for c in CAPITAL_REGRESSORS]
    design["usable_x"] = design[xcols].notna().all(axis=1)
    train_mask = design["usable_x"] & design["log_k"].notna() & (design["year"] != target_year)
    groups = sorted(design["sector2"].unique()) if by_sector else [None]

    frame = panel.frame.copy()
    frame["capital_imputed"] = frame.get("capital_imputed", pd.Series(False, index=frame.index)).astype(bool)
    coefs = {}
    for g in groups:
        sel = train_mask if g is None else train_mask & (design["sector2"] == g)
        n_params = len(xcols) + 1
        n_train = int(sel.sum())
        if n_train < 5 * n_params:
            raise InsufficientDataError(
                f"capital regression{'' if g is None else f' for sector {g}'} has {n_train} usable rows; "
                f"needs at least {5 * n_params}")
        X = np.column_stack([np.ones(n_train), design.loc[sel, xcols].to_numpy()])
        y = design.loc[sel, "log_k"].to_numpy()
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        coefs[g] = beta
        resid = y - X @ beta
        design.loc[sel, "resid"] = resid

    design["resid"] = design.get("resid", pd.Series(np.nan, index=design.index))
    prior = design[design["resid"].notna() & (design["year"] < target_year)]
    last_resid = prior.sort_values(["firm_id", "year"]).groupby("firm_id")["resid"].last()

    pred_mask = (design["year"] == target_year) & design["capital"].isna() & design["usable_x"]
    # design was built by a left merge on frame order, so positions line up with frame
    positions = np.flatnonzero(pred_mask.to_numpy())
    for pos in positions:
        g = None if not by_sector else design.at[pos, "sector2"]
        beta = coefs[g]
        x = np.concatenate([[1.0], design.loc[pos, xcols].to_numpy(dtype=float)])
        log_k = float(x @ beta) + float(last_resid.get(design.at[pos, "firm_id"], 0.0))
        row = frame.index[pos]
        frame.at[row, "capital"] = float(np.exp(log_k))
        frame.at[row, "capital_imputed"] = True
    skipped = int(((design["year"] == target_year) & design["capital"].isna() & ~design["usable_x"]).sum())
    diag = {"coefficients": {str(k): v.tolist() for k, v in coefs.items()}, "imputed": len(positions),
            "skipped_no_lag": skipped}
    return panel.replace(frame=frame).with_diagnostic("capital_regression", diag)
