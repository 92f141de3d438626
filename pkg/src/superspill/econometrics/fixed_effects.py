"""Absorption of additive fixed effects by alternating projections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from ..errors import ConvergenceError, DomainError
from . import kernels

DEFAULT_TOL = 1e-8
MAX_SWEEPS = 10_000


@dataclass
class Absorbed:
    """Demeaned columns (n_kept x p), the kept-row mask and sweep diagnostics."""

    values: np.ndarray
    keep: np.ndarray
    iterations: int
    last_change: float
    n_singletons: int


def encode_groups(groups: pd.DataFrame | np.ndarray, interacted: bool = False) -> np.ndarray:
    """Integer codes, one row per FE dimension; ``interacted`` collapses them into one cell id."""
    if isinstance(groups, pd.DataFrame):
        if interacted:
            codes, _ = pd.MultiIndex.from_frame(groups).factorize(sort=True)
            return codes.astype(np.int64)[None, :]
        return np.vstack([pd.factorize(groups[c], sort=True)[0] for c in groups.columns]).astype(np.int64)
    arr = np.atleast_2d(np.asarray(groups))
    out = np.vstack([pd.factorize(row, sort=True)[0] for row in arr]).astype(np.int64)
    if interacted and out.shape[0] > 1:
        codes, _ = pd.MultiIndex.from_arrays(list(out)).factorize(sort=True)
        return codes.astype(np.int64)[None, :]
    return out


def singleton_mask(codes: np.ndarray) -> np.ndarray:
    """Rows kept after iteratively dropping observations alone in any FE group."""
    keep = np.ones(codes.shape[1], dtype=bool)
    while True:
        changed = False
        for row in codes:
            counts = np.bincount(row[keep], minlength=row.max() + 1 if row.size else 0)
            single = keep & (counts[row] == 1)
            if single.any():
                keep &= ~single
                changed = True
        if not changed:
            return keep


def _recode(codes: np.ndarray) -> tuple:
    out = np.empty_like(codes)
    sizes = np.zeros(codes.shape[0], dtype=np.int64)
    for d, row in enumerate(codes):
        out[d], uniq = pd.factorize(row, sort=True)
        sizes[d] = len(uniq)
    return out, sizes


def absorb_fixed_effects(columns, fe, tol: float = DEFAULT_TOL, weights: Optional[Sequence[float]] = None,
                         drop_singletons: bool = True, interacted: bool = False,
                         max_sweeps: int = MAX_SWEEPS) -> Absorbed:
    """Demean ``columns`` within the groups of every FE dimension until a sweep moves nothing.

    Parameters
    ----------
    columns : array (n, p) or DataFrame
    fe : DataFrame of grouping columns or integer array (D, n)
    tol : stop once the largest absolute group mean removed in a sweep is below ``tol``
    weights : optional positive row weights
    drop_singletons : drop rows that sit alone in some group, repeatedly
    interacted : use one FE dimension formed by the intersection of all groups

    Raises
    ------
    ConvergenceError
        After ``max_sweeps`` sweeps without meeting ``tol``.
    """
    X = np.asarray(columns, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    codes = encode_groups(fe, interacted)
    if codes.shape[1] != n:
        raise DomainError("fixed-effect groups and columns differ in length")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if (w <= 0).any() or not np.isfinite(w).all():
        raise DomainError("weights must be positive and finite")
    keep = singleton_mask(codes) if drop_singletons else np.ones(n, dtype=bool)
    codes, sizes = _recode(codes[:, keep])
    work = np.ascontiguousarray(X[keep].T)
    if work.shape[1] == 0:
        return Absorbed(work.T.copy(), keep, 0, 0.0, int((~keep).sum()))
    it, change = kernels.demean_inplace(work, np.ascontiguousarray(codes), sizes,
                                        np.ascontiguousarray(w[keep]), tol, max_sweeps)
    if codes.shape[0] > 1 and change >= tol:
        raise ConvergenceError(f"fixed-effect absorption did not converge in {it} sweeps",
                               {"sweeps": it, "last_change": change, "tol": tol})
    return Absorbed(np.ascontiguousarray(work.T), keep, int(it), float(change), int((~keep).sum()))
