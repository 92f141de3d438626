"""Independent reference computations used as test oracles."""

import numpy as np
import pandas as pd


def fe_fixture(n, seed, n_a=6, n_b=5, n_clusters=None, weights=False):
    """Random frame with two grouping columns, two regressors, a cluster column and optional weights."""
    rng = np.random.default_rng(seed)
    a = rng.integers(0, n_a, n)
    b = rng.integers(0, n_b, n)
    x1 = rng.normal(size=n) + 0.5 * a
    x2 = rng.normal(size=n) - 0.3 * b
    y = 0.7 * x1 - 1.2 * x2 + 0.4 * a - 0.2 * b + rng.normal(size=n)
    g = n_clusters or max(2, n // 4)
    frame = pd.DataFrame({"y": y, "x1": x1, "x2": x2, "a": a.astype(str), "b": b.astype(str),
                          "cl": rng.integers(0, g, n)})
    if weights:
        frame["w"] = rng.uniform(0.5, 2.0, n)
    return frame


def dense_dummy_ols(frame, y, xs, fe, weights=None):
    """Slope coefficients from least squares on an explicit dummy matrix (intercept plus k-1 dummies per dim)."""
    parts = [frame[xs].to_numpy(float), np.ones((len(frame), 1))]
    for dim in fe:
        dummies = pd.get_dummies(frame[dim], drop_first=True, dtype=float).to_numpy()
        parts.append(dummies)
    X = np.hstack(parts)
    w = np.ones(len(frame)) if weights is None else frame[weights].to_numpy(float)
    sw = np.sqrt(w)
    coef, *_ = np.linalg.lstsq(X * sw[:, None], frame[y].to_numpy(float) * sw, rcond=None)
    return coef[:len(xs)]


def hand_sandwich(X, y, cluster):
    """CR1 clustered covariance assembled term by term."""
    n, k = X.shape
    XtX_inv = np.linalg.inv(X.T @ X)
    beta = XtX_inv @ X.T @ y
    e = y - X @ beta
    meat = np.zeros((k, k))
    groups = sorted(set(cluster))
    for g in groups:
        rows = [i for i in range(n) if cluster[i] == g]
        s = X[rows].T @ e[rows]
        meat += np.outer(s, s)
    G = len(groups)
    c = G / (G - 1) * (n - 1) / (n - k)
    return beta, c * XtX_inv @ meat @ XtX_inv


def newton_logit(X, y, tol=1e-12, max_iter=200):
    """Plain Newton-Raphson on the logistic log-likelihood."""
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-X @ beta))
        grad = X.T @ (y - p)
        hess = -(X * (p * (1 - p))[:, None]).T @ X
        step = np.linalg.solve(hess, grad)
        beta = beta - step
        if np.abs(step).max() < tol:
            break
    return beta


def random_panel(rng, n_firms, n_years, start=2001):
    """Firm-year frame with random entry, exit and gaps; positive output and normal productivity."""
    rows = []
    for i in range(n_firms):
        first = int(rng.integers(0, n_years))
        last = int(rng.integers(first, n_years))
        for t in range(first, last + 1):
            if t not in (first, last) and rng.uniform() < 0.1:
                continue
            rows.append((f"F{i:04d}", start + t, rng.normal(1.0, 0.8), rng.lognormal(3.0, 1.2)))
    return pd.DataFrame(rows, columns=["firm_id", "year", "phi", "output"])


def share_weighted(frame, year):
    """Output-share-weighted mean productivity in one year, from raw shares."""
    f = frame[frame["year"] == year]
    return float((f["output"] / f["output"].sum()) @ f["phi"])
