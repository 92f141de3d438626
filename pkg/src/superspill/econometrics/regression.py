"""OLS and 2SLS on fixed-effect-absorbed data with firm-clustered covariance."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import linalg

from ..errors import ConfigError, DegenerateInstrumentError, InsufficientDataError, RankDeficiencyError
from . import kernels
from .fixed_effects import DEFAULT_TOL, absorb_fixed_effects

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10


@dataclass
class RegressionSpec:
    dependent: str
    endogenous: list = field(default_factory=list)
    instruments: list = field(default_factory=list)
    exogenous: list = field(default_factory=list)
    fe_dims: list = field(default_factory=lambda: ["sector3", "province", "island", "year"])
    cluster: str = "firm_id"
    weights: Optional[str] = None
    sample_filter: Optional[str | Callable] = None
    interacted_fe: bool = False
    name: str = ""

    def __post_init__(self):
        for attr in ("endogenous", "instruments", "exogenous", "fe_dims"):
            setattr(self, attr, list(getattr(self, attr)))
        if len(self.instruments) < len(self.endogenous):
            raise ConfigError(f"{len(self.endogenous)} endogenous columns but {len(self.instruments)} instruments",
                              "instruments")
        roles = [self.dependent] + self.endogenous + self.instruments + self.exogenous
        dup = sorted({c for c in roles if roles.count(c) > 1})
        if dup:
            raise ConfigError(f"columns used in more than one role: {dup}", dup[0])

    @classmethod
    def from_dict(cls, data: dict) -> "RegressionSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown regression fields {sorted(unknown)}", sorted(unknown)[0])
        return cls(**data)

    @property
    def used_columns(self) -> list:
        cols = [self.dependent] + self.endogenous + self.instruments + self.exogenous + self.fe_dims + [self.cluster]
        if self.weights:
            cols.append(self.weights)
        return list(dict.fromkeys(cols))


@dataclass
class RegressionResult:
    coefficients: dict
    std_errors: dict
    n_obs: int
    n_clusters: int
    covariance: np.ndarray
    first_stage: Optional[dict] = None
    kp_wald_f: Optional[float] = None
    cd_wald_f: Optional[float] = None
    demeaning_iterations: int = 0
    diagnostics: dict = field(default_factory=dict)
    name: str = ""

    def t_stats(self) -> dict:
        return {k: self.coefficients[k] / self.std_errors[k] for k in self.coefficients}

    def to_frame(self) -> pd.DataFrame:
        t = self.t_stats()
        rows = [{"term": k, "coefficient": v, "std_error": self.std_errors[k], "t_stat": t[k]}
                for k, v in self.coefficients.items()]
        return pd.DataFrame(rows, columns=["term", "coefficient", "std_error", "t_stat"])

    def metadata(self, spec: Optional[RegressionSpec] = None) -> dict:
        return {
            "n_obs": self.n_obs,
            "kp_wald_f": self.kp_wald_f,
            "cd_wald_f": self.cd_wald_f,
            "fe_dims": "|".join(spec.fe_dims) if spec else "",
            "cluster_var": spec.cluster if spec else "",
            "demeaning_iterations": self.demeaning_iterations,
        }


# -- linear algebra ---------------------------------------------------------------

def check_rank(X: np.ndarray, names: Sequence[str], tol: float = RANK_TOL) -> None:
    """Raise RankDeficiencyError naming columns dropped by a pivoted QR."""
    if X.shape[1] == 0:
        return
    if X.shape[0] < X.shape[1]:
        raise RankDeficiencyError(f"{X.shape[0]} rows for {X.shape[1]} columns", list(names))
    scale = np.sqrt((X ** 2).sum(axis=0))
    if (scale == 0).any():
        bad = [names[i] for i in np.flatnonzero(scale == 0)]
        raise RankDeficiencyError(f"columns without variation after absorption: {bad}", bad)
    _, R, piv = linalg.qr(X / scale, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int((diag > tol * diag[0]).sum())
    if rank < X.shape[1]:
        bad = [names[i] for i in piv[rank:]]
        raise RankDeficiencyError(f"collinear columns: {bad}", bad)


def cluster_codes(cluster) -> tuple:
    codes, uniq = pd.factorize(np.asarray(cluster), sort=True)
    return codes.astype(np.int64), len(uniq)


def sandwich(bread: np.ndarray, regressors: np.ndarray, resid: np.ndarray, w: np.ndarray,
             codes: np.ndarray, n_clusters: int, n_params: int) -> np.ndarray:
    """CR1 cluster-robust covariance ``c * B M B`` with ``c = G/(G-1) * (N-1)/(N-K)``."""
    n = len(resid)
    scores = np.ascontiguousarray(regressors * (w * resid)[:, None])
    summed = kernels.cluster_sums(scores, codes, n_clusters)
    meat = summed.T @ summed
    G = n_clusters
    if G < 2 or n <= n_params:
        raise InsufficientDataError(f"{G} clusters and {n} rows for {n_params} parameters")
    factor = G / (G - 1) * (n - 1) / (n - n_params)
    V = factor * bread @ meat @ bread
    return (V + V.T) / 2.0


def _wls(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> tuple:
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    bread = np.linalg.inv((X * w[:, None]).T @ X)
    return coef, bread


def ols_arrays(y, X, names, cluster, weights=None) -> RegressionResult:
    """Weighted least squares with CR1 clustered covariance on already-absorbed arrays."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    check_rank(X * np.sqrt(w)[:, None], names)
    coef, bread = _wls(X, y, w)
    resid = y - X @ coef
    codes, G = cluster_codes(cluster)
    V = sandwich(bread, X, resid, w, codes, G, X.shape[1])
    se = np.sqrt(np.diag(V))
    res = RegressionResult(dict(zip(names, coef)), dict(zip(names, se)), len(y), G, V)
    res.diagnostics["residuals"] = resid
    return res


def wald_f(coef: np.ndarray, V: np.ndarray, idx: Sequence[int]) -> float:
    r = coef[list(idx)]
    sub = V[np.ix_(list(idx), list(idx))]
    return float(r @ np.linalg.solve(sub, r) / len(idx))


def check_instrument_variance(Zx: np.ndarray) -> None:
    spread = np.sqrt(Zx.var(axis=0))
    scale = np.maximum(1.0, np.abs(Zx).max(axis=0, initial=0.0))
    if (spread <= 1e-12 * scale).any():
        raise DegenerateInstrumentError("an excluded instrument has zero variance")


def weak_iv_stats(endog, instruments, exog, cluster, weights=None) -> dict:
    """Single-endogenous first-stage F statistics on the excluded instruments.

    ``cd_wald_f`` uses the homoskedastic covariance ``s^2 (Z'WZ)^-1``;
    ``kp_wald_f`` uses the CR1 clustered covariance.
    """
    d = np.asarray(endog, dtype=float)
    Zx = np.atleast_2d(np.asarray(instruments, dtype=float).T).T
    W = np.zeros((len(d), 0)) if exog is None else np.atleast_2d(np.asarray(exog, dtype=float).T).T
    check_instrument_variance(Zx)
    Z = np.column_stack([Zx, W])
    w = np.ones(len(d)) if weights is None else np.asarray(weights, dtype=float)
    coef, bread = _wls(Z, d, w)
    resid = d - Z @ coef
    n, L = Z.shape
    s2 = float((w * resid) @ resid / (n - L))
    V_h = s2 * bread
    codes, G = cluster_codes(cluster)
    V_c = sandwich(bread, Z, resid, w, codes, G, L)
    q = Zx.shape[1]
    idx = range(q)
    return {"cd_wald_f": wald_f(coef, V_h, idx), "kp_wald_f": wald_f(coef, V_c, idx),
            "coefficients": coef[:q], "std_errors": np.sqrt(np.diag(V_c))[:q], "covariance": V_c[:q, :q]}


def tsls_arrays(y, endog, instruments, exog, names_endog, names_exog, cluster, weights=None) -> RegressionResult:
    """Two-stage least squares; the covariance uses residuals at the observed endogenous values."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    D = np.asarray(endog, dtype=float).reshape(n, -1)
    Zx = np.asarray(instruments, dtype=float).reshape(n, -1)
    W = np.asarray(exog, dtype=float).reshape(n, -1)
    if D.shape[1] == 0:
        return ols_arrays(y, W, list(names_exog), cluster, weights)
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    Z = np.column_stack([Zx, W])
    X = np.column_stack([D, W])
    names = list(names_endog) + list(names_exog)
    check_instrument_variance(Zx)
    zn = [f"instrument_{i}" for i in range(Zx.shape[1])] + list(names_exog)
    check_rank(Z * np.sqrt(w)[:, None], zn)

    first = {}
    sw = np.sqrt(w)
    pi, *_ = np.linalg.lstsq(Z * sw[:, None], D * sw[:, None], rcond=None)
    D_hat = Z @ pi
    for j, name in enumerate(names_endog):
        stats = weak_iv_stats(D[:, j], Zx, W, cluster, w)
        if stats["kp_wald_f"] < 1e-6 or stats["cd_wald_f"] < 1e-6:
            raise DegenerateInstrumentError(f"first stage for {name} has F = {stats['cd_wald_f']:.3g}")
        first[name] = {"coefficients": stats["coefficients"], "std_errors": stats["std_errors"],
                       "F_excluded": stats["kp_wald_f"], "cd_wald_f": stats["cd_wald_f"]}
    X_hat = np.column_stack([D_hat, W])
    check_rank(X_hat * sw[:, None], names)
    coef, bread = _wls(X_hat, y, w)
    resid = y - X @ coef
    codes, G = cluster_codes(cluster)
    V = sandwich(bread, X_hat, resid, w, codes, G, X.shape[1])
    se = np.sqrt(np.diag(V))
    res = RegressionResult(dict(zip(names, coef)), dict(zip(names, se)), n, G, V, first_stage=first)
    if D.shape[1] == 1:
        only = first[names_endog[0]]
        res.kp_wald_f = only["F_excluded"]
        res.cd_wald_f = only["cd_wald_f"]
    res.diagnostics["residuals"] = resid
    return res


# -- data-frame entry points -----------------------------------------------------------

def prepare(frame: pd.DataFrame, spec: RegressionSpec) -> tuple:
    """Filter, drop incomplete rows and absorb fixed effects; returns (arrays, kept frame, diagnostics)."""
    missing_cols = [c for c in spec.used_columns if c not in frame.columns]
    if missing_cols:
        raise ConfigError(f"columns not in data: {missing_cols}", missing_cols[0])
    data = frame
    if spec.sample_filter is not None:
        mask = data.eval(spec.sample_filter) if isinstance(spec.sample_filter, str) else spec.sample_filter(data)
        data = data[np.asarray(mask, dtype=bool)]
    value_cols = [spec.dependent] + spec.endogenous + spec.instruments + spec.exogenous
    complete = data[spec.used_columns].notna().all(axis=1)
    diag = {"dropped_missing": int((~complete).sum())}
    data = data[complete]
    if diag["dropped_missing"]:
        logger.info("%s: %d rows dropped for missing values", spec.name or spec.dependent, diag["dropped_missing"])
    values = data[value_cols].to_numpy(dtype=float)
    weights = data[spec.weights].to_numpy(dtype=float) if spec.weights else None
    if spec.fe_dims:
        absorbed = absorb_fixed_effects(values, data[spec.fe_dims], DEFAULT_TOL, weights,
                                        interacted=spec.interacted_fe)
        values = absorbed.values
        data = data[absorbed.keep]
        weights = weights[absorbed.keep] if weights is not None else None
        diag["dropped_singletons"] = absorbed.n_singletons
        diag["demeaning_iterations"] = absorbed.iterations
    else:
        diag["dropped_singletons"] = 0
        diag["demeaning_iterations"] = 0
    if len(data) == 0:
        raise InsufficientDataError("no rows left after filtering")
    return values, data, weights, diag


def _split(values: np.ndarray, spec: RegressionSpec) -> tuple:
    i = 1
    y = values[:, 0]
    D = values[:, i:i + len(spec.endogenous)]
    i += len(spec.endogenous)
    Z = values[:, i:i + len(spec.instruments)]
    i += len(spec.instruments)
    W = values[:, i:]
    names_exog = list(spec.exogenous)
    if not spec.fe_dims:
        W = np.column_stack([W, np.ones(len(y))])
        names_exog.append("const")
    return y, D, Z, W, names_exog


def ols(frame: pd.DataFrame, spec: RegressionSpec) -> RegressionResult:
    """OLS of the dependent on endogenous and exogenous columns (endogeneity ignored)."""
    values, data, weights, diag = prepare(frame, spec)
    y, D, _, W, names_exog = _split(values, spec)
    X = np.column_stack([D, W])
    res = ols_arrays(y, X, list(spec.endogenous) + names_exog, data[spec.cluster], weights)
    res.demeaning_iterations = diag["demeaning_iterations"]
    res.diagnostics.update(diag)
    res.name = spec.name
    return res


def tsls(frame: pd.DataFrame, spec: RegressionSpec) -> RegressionResult:
    """2SLS with fixed effects absorbed from every column; reduces to OLS without endogenous columns."""
    values, data, weights, diag = prepare(frame, spec)
    y, D, Z, W, names_exog = _split(values, spec)
    res = tsls_arrays(y, D, Z, W, spec.endogenous, names_exog, data[spec.cluster], weights)
    res.demeaning_iterations = diag["demeaning_iterations"]
    res.diagnostics.update(diag)
    res.name = spec.name
    return res


def add_interactions(frame: pd.DataFrame, columns: Sequence[str], dummies: Sequence[str]) -> tuple:
    """Append ``<col>_x_<dummy>`` products; returns (frame, new column names)."""
    out = frame.copy()
    names = []
    for c in columns:
        for d in dummies:
            name = f"{c}_x_{d}"
            out[name] = out[c] * out[d]
            names.append(name)
    return out, names
