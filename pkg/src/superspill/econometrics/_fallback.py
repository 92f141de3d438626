"""Pure-numpy versions of the compiled kernels, with identical summation order."""

import numpy as np


def demean_inplace(X, codes, n_groups, w, tol, max_iter):
    D = codes.shape[0]
    wsum = [np.bincount(codes[d], weights=w, minlength=n_groups[d]) for d in range(D)]
    it = 0
    change = 0.0
    while it < max_iter:
        it += 1
        change = 0.0
        for d in range(D):
            for j in range(X.shape[0]):
                sums = np.bincount(codes[d], weights=w * X[j], minlength=n_groups[d])
                means = sums / wsum[d]
                if means.size:
                    change = max(change, float(np.abs(means).max()))
                X[j] -= means[codes[d]]
        if D == 1 or change < tol:
            break
    return it, change


def cluster_sums(scores, codes, n_clusters):
    out = np.zeros((n_clusters, scores.shape[1]))
    for k in range(scores.shape[1]):
        out[:, k] = np.bincount(codes, weights=scores[:, k], minlength=n_clusters)
    return out
