"""Proxy-variable production-function estimation and firm-level TFP."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np
import pandas as pd

from .errors import ConfigError, InsufficientDataError
from .panel import Panel, workers_total

logger = logging.getLogger(__name__)

MIN_SECTOR_ROWS = 50
DEPRECIATION = 0.05
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ProxySpec:
    proxy_field: Literal["materials", "investment"] = "materials"
    first_stage_poly_degree: int = 3
    markov_poly_degree: int = 1

    def __post_init__(self):
        if self.proxy_field not in ("materials", "investment"):
            raise ConfigError(f"unknown proxy {self.proxy_field!r}", "proxy_field")
        if not 2 <= self.first_stage_poly_degree <= 4:
            raise ConfigError("first_stage_poly_degree must lie in [2, 4]", "first_stage_poly_degree")
        if not 1 <= self.markov_poly_degree <= 4:
            raise ConfigError("markov_poly_degree must lie in [1, 4]", "markov_poly_degree")


@dataclass
class ProductionEstimate:
    sector3: str
    beta_l: float
    beta_k: float
    n_obs: int
    converged: bool
    iterations: int
    objective: float
    level: str = "sector3"

    def to_record(self) -> dict:
        return {"sector3": self.sector3, "beta_l": self.beta_l, "beta_k": self.beta_k,
                "n_obs": self.n_obs, "converged": self.converged}


def golden_section(fn: Callable[[float], float], lo: float, hi: float, tol: float = 1e-6,
                   max_iter: int = 200) -> tuple:
    """Minimize a unimodal ``fn`` on ``[lo, hi]``; returns (x, f(x), iterations)."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    it = 0
    while b - a > tol and it < max_iter:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fn(d)
        it += 1
    x = 0.5 * (a + b)
    return x, fn(x), it


def poly_terms(x: np.ndarray, z: np.ndarray, degree: int) -> np.ndarray:
    """All monomials ``x**i * z**j`` with ``1 <= i + j <= degree``."""
    cols = [x ** i * z ** (d - i) for d in range(1, degree + 1) for i in range(d + 1)]
    return np.column_stack(cols)


def production_inputs(frame: pd.DataFrame, spec: ProxySpec = ProxySpec()) -> pd.DataFrame:
    """Log value added, labour, capital and proxy for each usable row, plus the previous-year link."""
    workers = workers_total(frame)
    if spec.proxy_field == "materials":
        proxy = frame["materials"]
    elif "investment" in frame:
        proxy = frame["investment"]
    else:
        nxt = frame.groupby("firm_id")["capital"].shift(-1)
        gap = frame.groupby("firm_id")["year"].shift(-1) - frame["year"]
        proxy = (nxt - (1 - DEPRECIATION) * frame["capital"]).where(gap == 1)
    data = pd.DataFrame({
        "firm_id": frame["firm_id"], "year": frame["year"],
        "va": frame["value_added"], "workers": workers, "capital": frame["capital"], "proxy": proxy,
    })
    ok = (data["va"] > 0) & (data["workers"] >= 1) & (data["capital"] > 0) & (data["proxy"] > 0)
    data = data[ok.fillna(False).astype(bool)]
    out = pd.DataFrame({
        "firm_id": data["firm_id"], "year": data["year"].astype(np.int64),
        "y": np.log(data["va"].astype(float)), "l": np.log(data["workers"].astype(float)),
        "k": np.log(data["capital"].astype(float)), "m": np.log(data["proxy"].astype(float)),
    })
    return out.sort_values(["firm_id", "year"], kind="mergesort")


def _lag_positions(inputs: pd.DataFrame) -> tuple:
    """Row positions (current, previous) for consecutive-year pairs of the same firm."""
    fid = inputs["firm_id"].to_numpy()
    yr = inputs["year"].to_numpy()
    same = (fid[1:] == fid[:-1]) & (yr[1:] == yr[:-1] + 1)
    cur = np.flatnonzero(same) + 1
    return cur, cur - 1


def stage_one(inputs: pd.DataFrame, degree: int) -> tuple:
    """OLS of y on l and a polynomial in (proxy, k); returns (beta_l, composite Phi-hat)."""
    y = inputs["y"].to_numpy()
    l = inputs["l"].to_numpy()
    X = np.column_stack([np.ones(len(y)), l, poly_terms(inputs["m"].to_numpy(), inputs["k"].to_numpy(), degree)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    fitted = X @ coef
    return float(coef[1]), fitted - coef[1] * l


def markov_objective(beta_k: float, phi_hat: np.ndarray, k: np.ndarray, cur: np.ndarray, prev: np.ndarray,
                     degree: int) -> float:
    """Sum of squared innovations of omega = Phi-hat - beta_k*k around a polynomial in its lag."""
    omega = phi_hat - beta_k * k
    lag = omega[prev]
    Z = np.column_stack([lag ** p for p in range(degree + 1)])
    coef, *_ = np.linalg.lstsq(Z, omega[cur], rcond=None)
    resid = omega[cur] - Z @ coef
    return float(resid @ resid)


def estimate_from_inputs(inputs: pd.DataFrame, label: str, spec: ProxySpec = ProxySpec(),
                         min_obs: int = MIN_SECTOR_ROWS, level: str = "sector3") -> ProductionEstimate:
    if len(inputs) < min_obs:
        raise InsufficientDataError(f"{label}: {len(inputs)} usable rows, need {min_obs}")
    beta_l, phi_hat = stage_one(inputs, spec.first_stage_poly_degree)
    cur, prev = _lag_positions(inputs)
    if len(cur) <= spec.markov_poly_degree + 1:
        raise InsufficientDataError(f"{label}: {len(cur)} consecutive-year pairs")
    k = inputs["k"].to_numpy()
    beta_k, obj, it = golden_section(
        lambda b: markov_objective(b, phi_hat, k, cur, prev, spec.markov_poly_degree), 0.0, 1.0)
    at_edge = beta_k < 1e-4 or beta_k > 1 - 1e-4
    converged = bool(np.isfinite(beta_l) and np.isfinite(beta_k) and not at_edge)
    if not converged:
        logger.warning("%s: capital elasticity %.6f at the search bracket edge", label, beta_k)
    return ProductionEstimate(label, beta_l, float(beta_k), len(inputs), converged, it, obj, level)


def estimate_production(panel: Panel, sector3: str, spec: ProxySpec = ProxySpec(),
                        min_obs: int = MIN_SECTOR_ROWS) -> ProductionEstimate:
    """Two-stage proxy estimate of (beta_l, beta_k) for one 3-digit sector."""
    frame = panel.frame[panel.frame["sector3"] == sector3]
    return estimate_from_inputs(production_inputs(frame, spec), sector3, spec, min_obs)


def estimate_all(panel: Panel, spec: ProxySpec = ProxySpec(), min_obs: int = MIN_SECTOR_ROWS,
                 threads: int = 1) -> tuple:
    """Estimates for every 3-digit sector, sorted by sector.

    Sectors below ``min_obs`` usable rows borrow the pooled 2-digit estimate
    (``level='sector2'``); sectors that cannot be estimated either way are
    listed in the returned skip report.
    """
    frame = panel.frame
    inputs = production_inputs(frame, spec)
    inputs["sector3"] = frame.loc[inputs.index, "sector3"]
    inputs["sector2"] = frame.loc[inputs.index, "sector2"]
    sectors = sorted(frame["sector3"].unique())

    def work(s):
        sub = inputs[inputs["sector3"] == s]
        try:
            if len(sub) >= min_obs:
                return estimate_from_inputs(sub, s, spec, min_obs), None
            s2 = s[:2]
            pooled = inputs[inputs["sector2"] == s2]
            est = estimate_from_inputs(pooled, s, spec, min_obs, level="sector2")
            est.n_obs = len(sub)
            return est, None
        except InsufficientDataError as exc:
            return None, (s, str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, sectors))
    else:
        results = [work(s) for s in sectors]
    estimates = [r for r, _ in results if r is not None]
    skipped = [s for _, s in results if s is not None]
    return estimates, skipped


def estimates_frame(estimates: list) -> pd.DataFrame:
    cols = ["sector3", "beta_l", "beta_k", "n_obs", "converged"]
    return pd.DataFrame([e.to_record() for e in estimates], columns=cols)


def compute_tfp(panel: Panel, estimates: list) -> Panel:
    """Attach log TFP ``phi = y - beta_l*l - beta_k*k`` using each row's sector estimate."""
    frame = panel.frame.copy()
    table = {e.sector3: e for e in estimates if e.converged}
    bl = frame["sector3"].map({s: e.beta_l for s, e in table.items()}).astype(float)
    bk = frame["sector3"].map({s: e.beta_k for s, e in table.items()}).astype(float)
    workers = workers_total(frame).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(frame["value_added"].astype(float).where(frame["value_added"] > 0))
        l = np.log(workers.where(workers >= 1))
        k = np.log(frame["capital"].astype(float).where(frame["capital"] > 0))
    frame["phi"] = y - bl * l - bk * k
    missing = int(frame["phi"].isna().sum())
    if missing:
        logger.info("%d rows without TFP", missing)
    return panel.replace(frame=frame).with_diagnostic("phi_missing", missing)


def tfp_growth(panel: Panel) -> Panel:
    """``dphi`` relative to the firm's first observed year; ``dphi_base`` marks that first row."""
    frame = panel.frame.copy()
    first_year = frame.groupby("firm_id")["year"].transform("min")
    base = frame["phi"].where(frame["year"] == first_year).groupby(frame["firm_id"]).transform("first")
    frame["dphi"] = frame["phi"] - base
    frame["dphi_base"] = frame["year"] == first_year
    frame.loc[frame["dphi_base"] & frame["phi"].notna(), "dphi"] = 0.0
    return panel.replace(frame=frame)


def labour_productivity(panel: Panel) -> Panel:
    frame = panel.frame.copy()
    workers = workers_total(frame).astype(float)
    va = frame["value_added"].astype(float)
    ok = (va > 0) & (workers >= 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        frame["lp"] = np.log((va / workers).where(ok))
    missing = int((~ok.fillna(False).astype(bool)).sum())
    return panel.replace(frame=frame).with_diagnostic("lp_missing", missing)
