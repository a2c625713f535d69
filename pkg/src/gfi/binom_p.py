"""Fiducial distribution for a binomial proportion with known n.

Inverting y = sum 1{U_j <= p} gives the random interval
(U_(y), U_(y+1)] of adjacent uniform order statistics.  Its endpoints are
Beta(y, n-y+1) and Beta(y+1, n-y); two single-density summaries are the
average of the two endpoint densities ("arithmetic") and their normalized
geometric mean, which is Beta(y+1/2, n-y+1/2) ("geometric").
"""

from dataclasses import dataclass

import numpy as np
from scipy import special

from .numerics import DomainError

__all__ = [
    "BinPModel",
    "gfd_interval_p",
    "gfd_density_p",
    "gfd_sample_p",
    "endpoint_params",
]

CONVENTIONS = ("arithmetic", "geometric")


@dataclass
class BinPModel:
    n: int
    m: int
    total: int

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise DomainError("n and m must be positive")
        if not 0 <= self.total <= self.n * self.m:
            raise DomainError("total must lie in [0, n*m]")

    @classmethod
    def from_counts(cls, y, n):
        y = np.asarray(y, dtype=int)
        if np.any(y < 0) or np.any(y > n):
            raise DomainError("counts must lie in [0, n]")
        return cls(n=int(n), m=int(y.size), total=int(y.sum()))

    @property
    def trials(self):
        return self.n * self.m


def _check(y, n):
    if n < 1 or not 0 <= y <= n:
        raise DomainError(f"need 0 <= y <= n and n >= 1, got y={y}, n={n}")


def gfd_interval_p(y, n, rng, size=None):
    """Draw the random interval (U_(y), U_(y+1)] from n iid uniforms.

    Uses exponential spacings: with G_a ~ Gamma(a), U_(y) = G_y / T and
    U_(y+1) = (G_y + E) / T where T = G_y + E + G_{n-y}.
    """
    _check(y, n)
    shape = () if size is None else (size,)
    g_lo = rng.standard_gamma(y, size=shape) if y > 0 else np.zeros(shape)
    e = rng.standard_exponential(size=shape)
    g_hi = rng.standard_gamma(n - y, size=shape) if y < n else np.zeros(shape)
    total = g_lo + e + g_hi
    lower = g_lo / total
    upper = np.where(y == n, 1.0, (g_lo + e) / total)
    if size is None:
        return float(lower), float(upper)
    return lower, upper


def endpoint_params(y, n):
    """Beta parameters of the lower and upper interval endpoints."""
    return (y, n - y + 1), (y + 1, n - y)


def _beta_pdf(a, b, p):
    return np.exp(special.xlogy(a - 1, p) + special.xlog1py(b - 1, -p) - special.betaln(a, b))


def gfd_density_p(y, n, p, convention="geometric"):
    """Fiducial density at p under the chosen single-density convention."""
    _check(y, n)
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise DomainError("p must lie in (0, 1)")
    if convention == "geometric":
        return _beta_pdf(y + 0.5, n - y + 0.5, p)
    if convention == "arithmetic":
        if y == 0:
            return _beta_pdf(1, n, p)
        if y == n:
            return _beta_pdf(n, 1, p)
        return 0.5 * (_beta_pdf(y, n - y + 1, p) + _beta_pdf(y + 1, n - y, p))
    raise DomainError(f"unknown convention {convention!r}")


def gfd_sample_p(model, convention, count, rng):
    """Draws of p from the pooled Bin(nm, p) fiducial distribution."""
    y, n = model.total, model.trials
    if convention == "geometric":
        return rng.beta(y + 0.5, n - y + 0.5, size=count)
    if convention == "arithmetic":
        if y == 0:
            return rng.beta(1, n, size=count)
        if y == n:
            return rng.beta(n, 1, size=count)
        lower = rng.random(count) < 0.5
        a = np.where(lower, y, y + 1)
        b = np.where(lower, n - y + 1, n - y)
        return rng.beta(a, b)
    raise DomainError(f"unknown convention {convention!r}")
