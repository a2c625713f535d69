"""Special functions, random streams and small structured linear algebra.

The scalar special functions (incomplete beta, incomplete gamma and their
inverses) are written out in full so results do not depend on the installed
SciPy version.  The ``*_vec`` variants are array versions backed by
``scipy.special`` and are what the samplers call in their inner loops; the
test-suite checks the two routes against each other.
"""

import math
from statistics import NormalDist

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "make_rng",
    "chain_rng",
    "reg_inc_beta",
    "inv_reg_inc_beta",
    "reg_inc_gamma",
    "gamma_quantile",
    "binom_cdf",
    "binom_cdf_vec",
    "binom_sf_vec",
    "beta_quantile_vec",
    "gamma_quantile_vec",
    "beta_upper_quantile_vec",
    "sample_gamma",
    "sample_normal",
    "sample_uniform",
    "pseudo_det",
    "log_pseudo_det",
    "re_cov_logdet_solve",
]

_EPS = 1e-16
_FPMIN = 1e-300
_MAXIT = 20000


class DomainError(ValueError):
    """Raised when an argument lies outside a function's domain."""


# ---------------------------------------------------------------------------
# random streams


def make_rng(seed):
    """Counter-based (Philox) generator; equal seeds give equal streams."""
    return np.random.Generator(np.random.Philox(int(seed)))


def chain_rng(base_seed, k):
    """Generator for chain (or replicate) ``k``: seed ``base_seed + k``."""
    return make_rng(int(base_seed) + int(k))


def sample_gamma(shape, rate, rng, size=None):
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise DomainError("gamma shape and rate must be positive")
    return rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float), size=size)


def sample_normal(mean, sd, rng, size=None):
    if np.any(np.asarray(sd) < 0):
        raise DomainError("normal sd must be nonnegative")
    return rng.normal(mean, sd, size=size)


def sample_uniform(lo, hi, rng, size=None):
    """Uniform on the half-open interval (lo, hi]."""
    if np.any(np.asarray(hi) < np.asarray(lo)):
        raise DomainError("uniform requires lo <= hi")
    if size is None and np.ndim(lo) == 0 and np.ndim(hi) == 0:
        return float(hi - (hi - lo) * rng.random())
    shape = size if size is not None else np.broadcast(np.asarray(lo), np.asarray(hi)).shape
    return hi - (np.asarray(hi) - lo) * rng.random(shape)


# ---------------------------------------------------------------------------
# incomplete beta


def _check_beta_args(a, b):
    if not (a > 0 and b > 0):
        raise DomainError(f"beta parameters must be positive, got a={a}, b={b}")


def _betacf(a, b, x):
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _FPMIN:
        d = _FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = 1.0 + aa / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def _log_beta_front(a, b, x):
    return (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )


def reg_inc_beta(a, b, x):
    """Regularized incomplete beta function I_x(a, b), the Beta(a, b) CDF."""
    _check_beta_args(a, b)
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(_log_beta_front(a, b, x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def _beta_logpdf(a, b, x):
    return (
        (a - 1.0) * math.log(x) + (b - 1.0) * math.log1p(-x)
        + math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
    )


def inv_reg_inc_beta(a, b, u):
    """Inverse of :func:`reg_inc_beta` in x.

    Newton iterations kept inside a shrinking bracket; any step that leaves
    the bracket is replaced by bisection.
    """
    _check_beta_args(a, b)
    if not 0.0 <= u <= 1.0:
        raise DomainError(f"u must lie in [0, 1], got {u}")
    if u == 0.0:
        return 0.0
    if u == 1.0:
        return 1.0
    lo, hi = 0.0, 1.0
    # start from the quantile of a normal approximation, clipped to (0, 1)
    mean = a / (a + b)
    sd = math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1.0)))
    x = min(max(mean + sd * NormalDist().inv_cdf(u), 1e-8), 1.0 - 1e-8)
    for _ in range(400):
        g = reg_inc_beta(a, b, x) - u
        if g == 0.0:
            return x
        if g > 0.0:
            hi = x
        else:
            lo = x
        try:
            dens = math.exp(_beta_logpdf(a, b, x))
            step = g / dens if dens > 0.0 else 0.0
        except OverflowError:
            step = 0.0
        x_new = x - step
        if not (lo < x_new < hi) or step == 0.0:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 4e-16 * max(x_new, 1e-300) or hi - lo <= 4e-16 * hi:
            return x_new
        x = x_new
    return x


# ---------------------------------------------------------------------------
# incomplete gamma


def _gser(a, x):
    ap = a
    total = 1.0 / a
    term = total
    for _ in range(_MAXIT):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise ArithmeticError("incomplete gamma series did not converge")


def _gcf(a, x):
    b = x + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    for i in range(1, _MAXIT + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
    raise ArithmeticError("incomplete gamma continued fraction did not converge")


def reg_inc_gamma(a, x):
    """Regularized lower incomplete gamma P(a, x), the Gamma(a, 1) CDF."""
    if not a > 0:
        raise DomainError(f"gamma shape must be positive, got {a}")
    if x < 0:
        raise DomainError(f"x must be nonnegative, got {x}")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _gser(a, x)
    return 1.0 - _gcf(a, x)


def gamma_quantile(shape, rate, u):
    """Quantile of Gamma(shape, rate) (rate parameterization)."""
    if not (shape > 0 and rate > 0):
        raise DomainError("gamma shape and rate must be positive")
    if not 0.0 < u < 1.0:
        raise DomainError(f"u must lie in (0, 1), got {u}")
    a = float(shape)
    z = NormalDist().inv_cdf(u)
    # Wilson-Hilferty start
    c = 1.0 / (9.0 * a)
    x = a * (1.0 - c + z * math.sqrt(c)) ** 3
    if not x > 0.0:
        x = math.exp((math.log(u) + math.lgamma(a + 1.0)) / a)
    lo, hi = 0.0, math.inf
    for _ in range(400):
        g = reg_inc_gamma(a, x) - u
        if g == 0.0:
            break
        if g > 0.0:
            hi = x
        else:
            lo = x
        logpdf = (a - 1.0) * math.log(x) - x - math.lgamma(a)
        step = g / math.exp(logpdf) if logpdf > -700 else 0.0
        x_new = x - step
        if not (lo < x_new < hi) or step == 0.0:
            x_new = 0.5 * (lo + hi) if math.isfinite(hi) else 2.0 * x
        if abs(x_new - x) <= 4e-16 * x_new:
            x = x_new
            break
        x = x_new
    return x / rate


# ---------------------------------------------------------------------------
# binomial CDF


def binom_cdf(n, p, y):
    """P(Bin(n, p) <= y) through F_{n,p}(y) = I_{1-p}(n - y, y + 1)."""
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"p must lie in [0, 1], got {p}")
    if n < 0:
        raise DomainError(f"n must be nonnegative, got {n}")
    if y < 0:
        return 0.0
    if y >= n:
        return 1.0
    if p == 0.0:
        return 1.0
    if p == 1.0:
        return 0.0
    return reg_inc_beta(n - y, y + 1, 1.0 - p)


def binom_cdf_vec(n, p, y):
    """Array form of :func:`binom_cdf` (broadcasts over all arguments)."""
    n, p, y = np.broadcast_arrays(
        np.asarray(n, dtype=float), np.asarray(p, dtype=float), np.asarray(y, dtype=float)
    )
    out = np.empty(n.shape)
    below = y < 0
    above = y >= n
    mid = ~(below | above)
    out[below] = 0.0
    out[above] = 1.0
    if mid.any():
        pm = np.clip(p[mid], 0.0, 1.0)
        out[mid] = special.betainc(n[mid] - y[mid], y[mid] + 1.0, 1.0 - pm)
    return out


def binom_sf_vec(n, p, y):
    """P(Bin(n, p) > y) without forming 1 - F (keeps accuracy in the upper tail)."""
    n, p, y = np.broadcast_arrays(
        np.asarray(n, dtype=float), np.asarray(p, dtype=float), np.asarray(y, dtype=float)
    )
    out = np.empty(n.shape)
    below = y < 0
    above = y >= n
    mid = ~(below | above)
    out[below] = 1.0
    out[above] = 0.0
    if mid.any():
        pm = np.clip(p[mid], 0.0, 1.0)
        out[mid] = special.betaincc(n[mid] - y[mid], y[mid] + 1.0, 1.0 - pm)
    return out


def beta_quantile_vec(a, b, q):
    """Beta(a, b) quantiles; a == 0 is a point mass at 0 and b == 0 at 1."""
    a, b, q = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(q, dtype=float)
    )
    out = np.empty(a.shape)
    at0 = a <= 0
    at1 = (b <= 0) & ~at0
    mid = ~(at0 | at1)
    out[at0] = 0.0
    out[at1] = 1.0
    if mid.any():
        out[mid] = special.betaincinv(a[mid], b[mid], q[mid])
    return out


def beta_upper_quantile_vec(a, b, q):
    """x with P(Beta(a, b) > x) = q, same degenerate conventions as :func:`beta_quantile_vec`.

    Avoids forming 1 - q, which loses precision for q near 1.
    """
    a, b, q = np.broadcast_arrays(
        np.asarray(a, dtype=float), np.asarray(b, dtype=float), np.asarray(q, dtype=float)
    )
    out = np.empty(a.shape)
    at0 = a <= 0
    at1 = (b <= 0) & ~at0
    mid = ~(at0 | at1)
    out[at0] = 0.0
    out[at1] = 1.0
    if mid.any():
        out[mid] = special.betainccinv(a[mid], b[mid], q[mid])
    return out


def gamma_quantile_vec(shape, q):
    """Gamma(shape, 1) quantiles; shape == 0 is a point mass at 0."""
    shape, q = np.broadcast_arrays(np.asarray(shape, dtype=float), np.asarray(q, dtype=float))
    out = np.zeros(shape.shape)
    mid = shape > 0
    if mid.any():
        out[mid] = special.gammaincinv(shape[mid], q[mid])
    return out


# ---------------------------------------------------------------------------
# linear algebra


def log_pseudo_det(M):
    """log sqrt(det(M^T M)) via the R factor of a QR decomposition.

    Returns ``-inf`` when M is numerically rank deficient.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < M.shape[1]:
        raise DomainError(f"pseudo_det needs rows >= cols, got shape {M.shape}")
    if M.shape[1] == 0:
        return 0.0
    r = np.abs(np.diag(np.linalg.qr(M, mode="r")))
    scale = r.max()
    if scale == 0.0 or r.min() <= max(M.shape) * np.finfo(float).eps * scale:
        return -np.inf
    return float(np.sum(np.log(r)))


def pseudo_det(M):
    """D(M) = det(M^T M)^{1/2}; zero for rank-deficient M."""
    return float(np.exp(log_pseudo_det(M)))


def re_cov_logdet_solve(sigma_a2, sigma_e2, group_sizes, v):
    """log det(Sigma) and Sigma^{-1} v for Sigma = sigma_a2 * S_a + sigma_e2 * I.

    ``S_a`` is block diagonal with all-ones blocks of the given sizes, so each
    block has eigenvalues sigma_e2 + n_i sigma_a2 (once) and sigma_e2
    (n_i - 1 times).  ``v`` may be a vector or a matrix with one row per
    observation.
    """
    if not sigma_e2 > 0:
        raise DomainError(f"sigma_e2 must be positive, got {sigma_e2}")
    if sigma_a2 < 0:
        raise DomainError(f"sigma_a2 must be nonnegative, got {sigma_a2}")
    sizes = np.asarray(group_sizes, dtype=int)
    v = np.asarray(v, dtype=float)
    if sizes.sum() != v.shape[0]:
        raise DomainError("group sizes do not add up to the length of v")
    big = sigma_e2 + sizes * sigma_a2
    logdet = float(np.sum((sizes - 1) * math.log(sigma_e2) + np.log(big)))
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
    sums = np.add.reduceat(v, starts, axis=0)
    shrink = sigma_a2 / big
    if v.ndim == 1:
        corr = np.repeat(shrink * sums, sizes)
    else:
        corr = np.repeat(shrink[:, None] * sums, sizes, axis=0)
    return logdet, (v - corr) / sigma_e2
