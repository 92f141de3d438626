"""Fixed-effect regression kernel: absorption, OLS/2SLS, weak-instrument statistics and IPW."""

from .fixed_effects import Absorbed, absorb_fixed_effects, encode_groups, singleton_mask
from .ipw import fit_logit, ipw_weights
from .kernels import IMPLEMENTATION
from .regression import (RegressionResult, RegressionSpec, add_interactions, ols, ols_arrays, sandwich,
                         tsls, tsls_arrays, weak_iv_stats)

__all__ = [
    "Absorbed", "absorb_fixed_effects", "encode_groups", "singleton_mask",
    "fit_logit", "ipw_weights", "IMPLEMENTATION",
    "RegressionResult", "RegressionSpec", "add_interactions", "ols", "ols_arrays", "sandwich",
    "tsls", "tsls_arrays", "weak_iv_stats",
]
