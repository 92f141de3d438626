"""Heterogeneous-firm model with superstar spillovers.

Productivity is ``phi = lambda * exp(alpha*H + tau*B + psi*F) * c`` for a
capability draw ``lambda ~ g``.  Under CES demand ``q = Theta * p**(1/(rho-1))``
and cost ``f + w*q/phi`` the firm prices at ``w/(rho*phi)`` and earns

    pi* = (1-rho) * w**(rho/(rho-1)) * rho**(rho/(1-rho)) * phi**(rho/(1-rho)) * Theta - f.

Integrals over the capability distribution are evaluated in log-capability
``u = ln(lambda)`` with adaptive quadrature, truncated at the 1e-12 and
1 - 1e-12 quantiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np
from scipy import integrate, stats

from .errors import ConfigError, DivergenceError, DomainError, EmptyMarketError

QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-12
TAIL_MASS = 1e-12


@dataclass(frozen=True)
class CapabilityDist:
    """Capability density ``g`` on (0, inf).

    ``kind`` is one of ``lognormal`` (``mu``, ``sigma`` of ln lambda),
    ``pareto`` (``shape``, ``scale``), ``uniform`` (``low``, ``high``) or
    ``point`` (``value``; a point mass, used for degenerate checks).
    """

    kind: str = "lognormal"
    mu: float = 0.0
    sigma: float = 1.0
    shape: float = 3.0
    scale: float = 1.0
    low: float = 0.0
    high: float = 1.0
    value: float = 1.0

    def __post_init__(self):
        if self.kind == "lognormal":
            if not self.sigma > 0:
                raise ConfigError("lognormal sigma must be positive", "capability_dist.sigma")
        elif self.kind == "pareto":
            if not (self.shape > 0 and self.scale > 0):
                raise ConfigError("pareto shape and scale must be positive", "capability_dist.shape")
        elif self.kind == "uniform":
            if not (0 <= self.low < self.high):
                raise ConfigError("uniform bounds must satisfy 0 <= low < high", "capability_dist.low")
        elif self.kind == "point":
            if not self.value > 0:
                raise ConfigError("point mass must sit at a positive value", "capability_dist.value")
        else:
            raise ConfigError(f"unknown capability distribution {self.kind!r}", "capability_dist.kind")

    @property
    def frozen(self):
        if self.kind == "lognormal":
            return stats.lognorm(s=self.sigma, scale=math.exp(self.mu))
        if self.kind == "pareto":
            return stats.pareto(b=self.shape, scale=self.scale)
        if self.kind == "uniform":
            return stats.uniform(loc=self.low, scale=self.high - self.low)
        raise DomainError("a point mass has no density")

    def pdf(self, x):
        return self.frozen.pdf(x)

    def cdf(self, x):
        if self.kind == "point":
            return np.where(np.asarray(x) >= self.value, 1.0, 0.0)
        return self.frozen.cdf(x)

    def log_density(self, u: float) -> float:
        """Density of ``u = ln(lambda)``."""
        if self.kind == "lognormal":
            return stats.norm.pdf(u, loc=self.mu, scale=self.sigma)
        x = math.exp(u)
        return float(self.frozen.pdf(x)) * x

    def log_bounds(self) -> tuple:
        """Integration range in ``u`` after tail truncation."""
        if self.kind == "lognormal":
            z = stats.norm.isf(TAIL_MASS)
            return self.mu - self.sigma * z, self.mu + self.sigma * z
        if self.kind == "pareto":
            return math.log(self.scale), math.log(self.frozen.isf(TAIL_MASS))
        if self.kind == "uniform":
            lo = self.low if self.low > 0 else self.high * TAIL_MASS
            return math.log(lo), math.log(self.high)
        return math.log(self.value), math.log(self.value)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "lognormal":
            return np.exp(rng.normal(self.mu, self.sigma, size))
        if self.kind == "pareto":
            return self.scale * (1.0 - rng.random(size)) ** (-1.0 / self.shape)
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size)
        return np.full(size, self.value, dtype=float)


@dataclass(frozen=True)
class ModelParams:
    rho: float = 0.75
    theta: float = 1.0
    w: float = 1.0
    f: float = 0.5
    f_e: float = 1.0
    delta: float = 0.08
    alpha: float = 0.01
    tau: float = 0.005
    psi: float = 0.005
    c: float = 1.0
    capability_dist: CapabilityDist = field(default_factory=CapabilityDist)

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ConfigError(f"rho must lie in (0, 1), got {self.rho}", "rho")
        for name in ("theta", "w", "c"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}", name)
        for name in ("f", "f_e"):
            if not getattr(self, name) >= 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}", name)
        # delta = 0 is admitted for simulation (no exit); entry_value requires delta > 0
        if not 0 <= self.delta <= 1:
            raise ConfigError(f"delta must lie in [0, 1], got {self.delta}", "delta")
        for name in ("alpha", "tau", "psi"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite", name)

    @property
    def markup_exponent(self) -> float:
        return self.rho / (1.0 - self.rho)


@dataclass(frozen=True)
class SpillExposure:
    hspill: float = 0.0
    bspill: float = 0.0
    fspill: float = 0.0

    def __post_init__(self):
        for name in ("hspill", "bspill", "fspill"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(f"{name} must be finite and non-negative, got {v}", name)
        if self.hspill > 100:
            raise ConfigError(f"hspill is a percentage, got {self.hspill}", "hspill")

    def shifted(self, channel: str, step: float) -> "SpillExposure":
        name = _CHANNEL_FIELD[channel]
        values = {"hspill": self.hspill, "bspill": self.bspill, "fspill": self.fspill}
        values[name] += step
        return SpillExposure(**values)


_CHANNEL_FIELD = {"H": "hspill", "B": "bspill", "F": "fspill"}
_CHANNEL_ELASTICITY = {"H": "alpha", "B": "tau", "F": "psi"}


def spill_index(exposure: SpillExposure, params: ModelParams) -> float:
    """``alpha*H + tau*B + psi*F``."""
    return params.alpha * exposure.hspill + params.tau * exposure.bspill + params.psi * exposure.fspill


def productivity_phi(lam: float, exposure: SpillExposure, params: ModelParams) -> float:
    if not lam > 0:
        raise DomainError(f"capability must be positive, got {lam}")
    return lam * math.exp(spill_index(exposure, params)) * params.c


def optimal_price(phi: float, params: ModelParams) -> float:
    if not phi > 0:
        raise DomainError(f"productivity must be positive, got {phi}")
    return params.w / (params.rho * phi)


def _profit_scale(params: ModelParams) -> float:
    rho = params.rho
    return (1.0 - rho) * params.w ** (rho / (rho - 1.0)) * rho ** (rho / (1.0 - rho)) * params.theta


def profit_at_productivity(phi: float, params: ModelParams) -> float:
    """Per-period optimal profit of a firm with productivity ``phi``."""
    if not phi > 0:
        raise DomainError(f"productivity must be positive, got {phi}")
    return _profit_scale(params) * phi ** params.markup_exponent - params.f


def optimal_profit(lam: float, exposure: SpillExposure, params: ModelParams) -> float:
    if not lam > 0:
        raise DomainError(f"capability must be positive, got {lam}")
    e = params.markup_exponent
    return (_profit_scale(params) * lam ** e * math.exp(spill_index(exposure, params) * e)
            * params.c ** e - params.f)


def profit_at_quantity(q: float, phi: float, params: ModelParams) -> float:
    """Revenue minus total cost at output ``q`` on the CES demand curve."""
    price = (q / params.theta) ** (params.rho - 1.0)
    return price * q - (params.f + params.w * q / phi)


class Cutoff(float):
    """Cutoff capability; ``degenerate`` is set when the fixed cost is zero."""

    degenerate: bool

    def __new__(cls, value, degenerate=False):
        obj = super().__new__(cls, value)
        obj.degenerate = degenerate
        return obj


def cutoff_capability(exposure: SpillExposure, params: ModelParams) -> Cutoff:
    """Capability at which optimal profit is exactly zero.

    Solving ``pi*(lambda) = 0`` gives
    ``lambda* = (w / (rho*c)) * exp(-(alpha*H + tau*B + psi*F)) * (f / ((1-rho)*Theta))**((1-rho)/rho)``.
    """
    if params.f == 0:
        return Cutoff(0.0, degenerate=True)
    rho = params.rho
    value = (params.w / (rho * params.c) * math.exp(-spill_index(exposure, params))
             * (params.f / ((1.0 - rho) * params.theta)) ** ((1.0 - rho) / rho))
    return Cutoff(value)


def _truncated_moments(dist: CapabilityDist, lam_star: float) -> tuple:
    """Return (survival mass, integral of ln(lambda)*g, effective lower log-bound) above ``lam_star``."""
    lo, hi = dist.log_bounds()
    if dist.kind == "point":
        if lam_star > dist.value:
            raise EmptyMarketError("cutoff lies above the point mass")
        return 1.0, math.log(dist.value), lo
    a = lo if lam_star <= 0 else max(lo, math.log(lam_star))
    if a >= hi:
        raise EmptyMarketError(f"cutoff {lam_star} exceeds the support")
    mass, _ = integrate.quad(dist.log_density, a, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
    if mass < 1e-12:
        raise EmptyMarketError(f"surviving mass {mass:.3e} above cutoff {lam_star}")
    first, _ = integrate.quad(lambda u: u * dist.log_density(u), a, hi,
                              epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
    return mass, first, a


def expected_log_productivity(exposure: SpillExposure, params: ModelParams) -> float:
    """E[ln phi | lambda > lambda*] with the conditional mean of ln(lambda) above the cutoff."""
    lam_star = cutoff_capability(exposure, params)
    mass, first, _ = _truncated_moments(params.capability_dist, lam_star)
    return spill_index(exposure, params) + math.log(params.c) + first / mass


def spillover_marginal_effect(exposure: SpillExposure, params: ModelParams, channel: str) -> tuple:
    """Direct, indirect and total derivative of expected log productivity in one spillover channel.

    The indirect term differentiates the truncated conditional mean through
    the cutoff: ``g(l*) * dl*/dS * (E[ln l | l > l*] - ln l*) / (1 - G(l*))``.
    """
    if channel not in _CHANNEL_FIELD:
        raise DomainError(f"channel must be one of H, B, F; got {channel!r}")
    dist = params.capability_dist
    elasticity = getattr(params, _CHANNEL_ELASTICITY[channel])
    lam_star = cutoff_capability(exposure, params)
    mass, first, a = _truncated_moments(dist, lam_star)
    direct = elasticity
    indirect = 0.0
    # below the lower tail bound the integration range does not move with the cutoff
    if not lam_star.degenerate and dist.kind != "point" and math.log(lam_star) >= a:
        dlam = -elasticity * lam_star
        density = float(dist.pdf(lam_star))
        indirect = density * dlam * (first / mass - math.log(lam_star)) / mass
    return direct, indirect, direct + indirect


def entry_value(phi: float, exposure: SpillExposure, params: ModelParams) -> float:
    """``max(0, pi/delta)`` for an entrant whose draw is ``phi``; spillovers shift the draw as in the productivity map."""
    if not phi > 0:
        raise DomainError(f"productivity draw must be positive, got {phi}")
    if not params.delta > 0:
        raise DomainError("entry value needs a positive exit probability")
    return max(0.0, optimal_profit(phi, exposure, params) / params.delta)


@dataclass(frozen=True)
class TruncatedDistribution:
    """Equilibrium productivity density ``g / (1 - G(phi*))`` above the cutoff."""

    base: CapabilityDist
    phi_star: float
    normalizer: float
    lower: float
    upper: float

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.lower) & (x <= self.upper) & (x >= self.phi_star)
        return np.where(inside, self.base.pdf(x) / self.normalizer, 0.0)

    def integrate(self, fn: Callable[[float], float] = lambda x: 1.0) -> float:
        """Integral of ``fn(phi) * mu(phi)`` over the support."""
        if self.base.kind == "point":
            return fn(self.base.value)
        lo, hi = math.log(self.lower), math.log(self.upper)
        val, _ = integrate.quad(lambda u: fn(math.exp(u)) * self.base.log_density(u) / self.normalizer,
                                lo, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
        return val


def equilibrium_distribution(params: ModelParams, phi_star: float) -> TruncatedDistribution:
    dist = params.capability_dist
    if float(dist.cdf(phi_star)) >= 1 - 1e-12:
        raise EmptyMarketError(f"G({phi_star}) is numerically one")
    if dist.kind == "point":
        return TruncatedDistribution(dist, phi_star, 1.0, dist.value, dist.value)
    lo, hi = dist.log_bounds()
    a = lo if phi_star <= 0 else max(lo, math.log(phi_star))
    mass, _ = integrate.quad(dist.log_density, a, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=200)
    if mass < 1e-12:
        raise EmptyMarketError(f"surviving mass {mass:.3e}")
    return TruncatedDistribution(dist, phi_star, mass, math.exp(a), math.exp(hi))


def aggregate_productivity_tilde(params: ModelParams, phi_star: float, sigma: float,
                                 exponent: Literal["standard", "printed"] = "standard") -> float:
    """Power mean of survivor productivity, ``(E[phi**(sigma-1) | phi >= phi*])**(1/(sigma-1))``.

    ``exponent="printed"`` integrates ``phi**(1-sigma)`` instead, the form
    with the inverted exponent inside the integral.
    """
    if not sigma > 1:
        raise DomainError(f"sigma must exceed 1, got {sigma}")
    power = sigma - 1.0 if exponent == "standard" else 1.0 - sigma
    dist = params.capability_dist
    if dist.kind == "point":
        if phi_star > dist.value:
            raise EmptyMarketError("cutoff lies above the point mass")
        return float((dist.value ** power) ** (1.0 / (sigma - 1.0)))
    if dist.kind == "pareto" and power >= dist.shape:
        raise DivergenceError(f"E[phi^{power}] diverges for a Pareto tail with shape {dist.shape}")
    mu = equilibrium_distribution(params, phi_star)
    lo, hi = math.log(mu.lower), math.log(mu.upper)
    moment, _ = integrate.quad(lambda u: math.exp(power * u) * dist.log_density(u) / mu.normalizer,
                               lo, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, limit=400)
    if not math.isfinite(moment) or moment <= 0:
        raise DivergenceError(f"power moment evaluated to {moment}")
    return moment ** (1.0 / (sigma - 1.0))
