"""Inverse-probability weights for the non-superstar estimation sample."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from ..errors import ConvergenceError, DomainError, SeparationError

IRLS_TOL = 1e-8
IRLS_MAX_ITER = 100
SEPARATION_EPS = 1e-10


def fit_logit(X: np.ndarray, y: np.ndarray, tol: float = IRLS_TOL, max_iter: int = IRLS_MAX_ITER) -> tuple:
    """Logistic maximum likelihood by iteratively reweighted least squares.

    Returns (coefficients, fitted probabilities, iterations).  Stops when the
    largest coefficient update falls below ``tol``.

    Raises
    ------
    SeparationError
        Fitted probabilities reach 0 or 1, so the likelihood has no interior maximum.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise DomainError("outcome must be binary")
    beta = np.zeros(X.shape[1])
    mean = y.mean()
    if 0 < mean < 1 and X.shape[1] and np.allclose(X[:, 0], 1.0):
        beta[0] = np.log(mean / (1 - mean))
    for it in range(1, max_iter + 1):
        eta = X @ beta
        p = expit(eta)
        if (p < SEPARATION_EPS).any() or (p > 1 - SEPARATION_EPS).any():
            raise SeparationError("fitted probabilities hit 0 or 1; reduce the selection controls")
        w = p * (1 - p)
        z = eta + (y - p) / w
        sw = np.sqrt(w)
        new, *_ = np.linalg.lstsq(X * sw[:, None], z * sw, rcond=None)
        step = np.max(np.abs(new - beta)) if len(beta) else 0.0
        beta = new
        if step < tol:
            p = expit(X @ beta)
            if (p < SEPARATION_EPS).any() or (p > 1 - SEPARATION_EPS).any():
                raise SeparationError("fitted probabilities hit 0 or 1; reduce the selection controls")
            return beta, p, it
    raise ConvergenceError("logistic fit did not converge", {"iterations": max_iter})


def ipw_weights(frame: pd.DataFrame, flags, selection_controls: Sequence[str],
                trim_quantile: float = 0.99) -> pd.Series:
    """``1 / p(non-superstar | controls)`` for non-superstar rows, capped at the ``trim_quantile`` weight.

    Superstar rows and rows with missing controls get a missing weight.
    The fitted coefficients are stored in ``attrs['coefficients']``.
    """
    if isinstance(flags, pd.DataFrame):
        flags = flags["superstar"]
    star = frame["firm_id"].map(flags).astype("boolean").fillna(False).to_numpy(dtype=bool)
    controls = list(selection_controls)
    complete = frame[controls].notna().all(axis=1).to_numpy() if controls else np.ones(len(frame), bool)
    X = np.column_stack([np.ones(complete.sum())] + [frame.loc[complete, c].to_numpy(dtype=float) for c in controls])
    y = (~star[complete]).astype(float)
    beta, p, it = fit_logit(X, y)
    raw = 1.0 / p
    nonstar = y == 1
    cap = np.percentile(raw[nonstar], 100 * trim_quantile) if nonstar.any() else np.inf
    weights = np.full(len(frame), np.nan)
    sel = np.flatnonzero(complete)[nonstar]
    weights[sel] = np.minimum(raw[nonstar], cap)
    out = pd.Series(weights, index=frame.index, name="ipw")
    out.attrs["coefficients"] = dict(zip(["const"] + controls, beta))
    out.attrs["iterations"] = it
    return out
