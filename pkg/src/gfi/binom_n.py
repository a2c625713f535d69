"""Set-valued fiducial distribution for binomial n with p known.

For each observation the inversion of y_i = F^{-1}_{n,p}(U_i) gives the n
with F_{n,p}(y_i - 1) < U_i <= F_{n,p}(y_i); these form an interval of
integers.  The commonality of an integer interval s is the probability that
every n in s is consistent with the data, and Dempster-Shafer masses follow
from commonalities by inclusion-exclusion over the interval lattice.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .numerics import DomainError, binom_cdf_vec, binom_sf_vec

__all__ = [
    "IntegerInterval",
    "MassAssignment",
    "commonality",
    "commonality_table",
    "candidate_range",
    "ds_masses",
    "sample_n",
    "bayes_posterior_n",
    "mass_to_pmf",
    "upper_interval",
]

DEFAULT_EPS1 = 1e-8
DEFAULT_CAP = 1_000_000


@dataclass(frozen=True)
class IntegerInterval:
    lo: int
    hi: int

    def __post_init__(self):
        if self.hi < self.lo:
            raise DomainError(f"empty interval [{self.lo}, {self.hi}]")

    def __len__(self):
        return self.hi - self.lo + 1

    def __contains__(self, n):
        return self.lo <= n <= self.hi

    def values(self):
        return np.arange(self.lo, self.hi + 1)


@dataclass
class MassAssignment:
    """Masses of sub-intervals; ``lo``, ``hi``, ``mass`` are parallel arrays."""

    lo: np.ndarray
    hi: np.ndarray
    mass: np.ndarray
    empty_mass: float

    @property
    def intervals(self):
        return [(IntegerInterval(int(a), int(b)), float(m)) for a, b, m in zip(self.lo, self.hi, self.mass)]

    def records(self):
        return np.column_stack([self.lo, self.hi, self.mass])


def _check_p(p):
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p}")


def _grouped(y):
    y = np.asarray(y, dtype=int).ravel()
    if y.size == 0:
        raise DomainError("need at least one observation")
    if np.any(y < 0):
        raise DomainError("counts must be nonnegative")
    vals, counts = np.unique(y, return_counts=True)
    return vals, counts


def _log_commonality(lo, hi, vals, counts, p):
    """Log commonality for arrays of interval bounds (any broadcastable shape)."""
    lo = np.asarray(lo)[..., None]
    hi = np.asarray(hi)[..., None]
    top = binom_cdf_vec(hi, p, vals)
    bottom = binom_cdf_vec(lo, p, vals - 1)
    # near the top of the CDF use survival functions to avoid cancellation
    upper = bottom > 0.5
    diff = np.where(upper, binom_sf_vec(lo, p, vals - 1) - binom_sf_vec(hi, p, vals), top - bottom)
    with np.errstate(divide="ignore"):
        return np.sum(counts * np.log(np.maximum(diff, 0.0)), axis=-1)


def commonality(s, y, p):
    """prod_i [F_{max s, p}(y_i) - F_{min s, p}(y_i - 1)]^+."""
    _check_p(p)
    vals, counts = _grouped(y)
    if s.lo < vals.max():
        raise DomainError("interval must start at or above max(y)")
    return float(np.exp(_log_commonality(s.lo, s.hi, vals, counts, p)))


def _log_likelihood(ns, vals, counts, p):
    ns = np.asarray(ns)[..., None]
    return np.sum(counts * (special.gammaln(ns + 1) - special.gammaln(vals + 1) - special.gammaln(ns - vals + 1)
                            + vals * math.log(p) + (ns - vals) * math.log1p(-p)), axis=-1)


def candidate_range(y, p, eps1=DEFAULT_EPS1, cap=DEFAULT_CAP):
    """{max(y), ..., n_stop}: extend while the singleton commonality ratio to the running max exceeds eps1."""
    _check_p(p)
    if not 0.0 < eps1 < 1.0:
        raise DomainError("eps1 must lie in (0, 1)")
    vals, counts = _grouped(y)
    start = int(vals.max())
    best = -math.inf
    log_eps = math.log(eps1)
    n = start
    block = 64
    while True:
        ns = np.arange(n, n + block)
        ll = _log_likelihood(ns, vals, counts, p)
        running = np.maximum.accumulate(np.maximum(ll, best))
        fail = np.nonzero(ll - running <= log_eps)[0]
        if fail.size:
            stop = n + int(fail[0]) - 1
            return IntegerInterval(start, max(stop, start))
        best = float(running[-1])
        n += block
        if n - start > cap:
            raise DomainError(f"candidate range exceeded the cap of {cap} values")
        block = min(block * 2, 65536)


def commonality_table(rng_n, y, p):
    """Matrix C[i, j] = commonality of {N_i, ..., N_j} (zero below the diagonal), scaled by its max.

    Returns (C, log_scale) with true commonality C * exp(log_scale).
    """
    vals, counts = _grouped(y)
    ns = rng_n.values()
    K = ns.size
    i, j = np.triu_indices(K)
    logc = _log_commonality(ns[i], ns[j], vals, counts, p)
    scale = float(np.max(logc))
    C = np.zeros((K, K))
    C[i, j] = np.exp(logc - scale)
    return C, scale


def ds_masses(rng_n, y, p):
    """Renormalized Dempster-Shafer masses of all sub-intervals of ``rng_n``.

    With Q(i, j) the total mass of intervals containing [i, j], commonality
    gives Q directly and inclusion-exclusion gives
    m(i, j) = [Q(i, j) - Q(i-1, j) - Q(i, j+1) + Q(i-1, j+1)]^+,
    evaluated from the longest intervals down.
    """
    _check_p(p)
    C, log_scale = commonality_table(rng_n, y, p)
    K = C.shape[0]
    # padded Q: row 0 and column K+1 are the out-of-range neighbours
    Q = np.zeros((K + 2, K + 2))
    mass = np.zeros((K, K))
    for length in range(K, 0, -1):
        i = np.arange(0, K - length + 1)
        j = i + length - 1
        sup = Q[i, j + 1] + Q[i + 1, j + 2] - Q[i, j + 2]
        m = np.maximum(C[i, j] - sup, 0.0)
        mass[i, j] = m
        Q[i + 1, j + 1] = m + sup
    i, j = np.nonzero(mass > 0)
    m = mass[i, j]
    total = m.sum()
    empty = 1.0 - total * math.exp(log_scale)
    ns = rng_n.values()
    return MassAssignment(lo=ns[i], hi=ns[j], mass=m / total, empty_mass=float(empty))


def sample_n(masses, count, rng):
    """Pick an interval with probability equal to its mass, then its lower or upper end with probability 1/2."""
    if masses.mass.size == 0:
        raise DomainError("mass assignment is empty")
    cdf = np.cumsum(masses.mass)
    idx = np.searchsorted(cdf, rng.random(count) * cdf[-1], side="right")
    idx = np.minimum(idx, cdf.size - 1)
    take_lo = rng.random(count) < 0.5
    return np.where(take_lo, masses.lo[idx], masses.hi[idx])


def mass_to_pmf(masses, rng_n):
    """pmf over ``rng_n`` implied by the endpoint rule of :func:`sample_n`."""
    ns = rng_n.values()
    pmf = np.zeros(ns.size)
    np.add.at(pmf, masses.lo - rng_n.lo, 0.5 * masses.mass)
    np.add.at(pmf, masses.hi - rng_n.lo, 0.5 * masses.mass)
    return pmf


def bayes_posterior_n(y, p, rng_n):
    """Flat-prior posterior pmf over ``rng_n``."""
    _check_p(p)
    vals, counts = _grouped(y)
    ll = _log_likelihood(rng_n.values(), vals, counts, p)
    w = np.exp(ll - ll.max())
    return w / w.sum()


def upper_interval(level, pmf=None, support=None, draws=None):
    """One-sided set {min, ..., q} with at least ``level`` probability.

    Pass either a pmf with its support or raw integer draws.
    """
    if not 0.0 < level < 1.0:
        raise DomainError("level must lie in (0, 1)")
    if draws is not None:
        support, counts = np.unique(np.asarray(draws, dtype=int), return_counts=True)
        pmf = counts / counts.sum()
    if pmf is None or support is None:
        raise DomainError("need a pmf with its support, or draws")
    support = np.asarray(support)
    cdf = np.cumsum(pmf) / np.sum(pmf)
    k = int(np.searchsorted(cdf, level - 1e-12))
    return IntegerInterval(int(support[0]), int(support[min(k, support.size - 1)]))
