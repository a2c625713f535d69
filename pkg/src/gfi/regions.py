"""Confidence regions built from fiducial draws.

Matrix distances and scalar functionals for covariance draws, balls and
central intervals, and belief/plausibility boxes for set-valued draws of
(n, mu).  All functions accept stacks of matrices where that makes sense.
"""

import math
from dataclasses import dataclass

import numpy as np

from .numerics import DomainError

__all__ = [
    "fm_distance",
    "stein_loss",
    "spectral_norm",
    "frobenius_norm",
    "logdet",
    "spectral_distance",
    "frobenius_distance",
    "euclidean_distance",
    "METRICS",
    "FUNCTIONALS",
    "Ball",
    "ball_region",
    "central_interval",
    "Box",
    "BoxPair",
    "representatives",
    "belief_plaus_boxes",
]


def _chol(M):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise DomainError("matrix is not symmetric positive definite") from exc


def _sym(M):
    M = np.asarray(M, dtype=float)
    if M.shape[-1] != M.shape[-2]:
        raise DomainError("matrix must be square")
    return M


def fm_distance(M, N):
    """sqrt(sum log^2 lambda_i) over the roots of det(lambda M - N) = 0."""
    M, N = _sym(M), _sym(N)
    L = _chol(M)
    _chol(N)
    Linv = np.linalg.inv(L)
    C = Linv @ N @ np.swapaxes(Linv, -1, -2)
    ev = np.linalg.eigvalsh(0.5 * (C + np.swapaxes(C, -1, -2)))
    return np.sqrt(np.sum(np.log(ev) ** 2, axis=-1))


def stein_loss(M, N):
    """tr(M^{-1} N) - log det(M^{-1} N) - d."""
    M, N = _sym(M), _sym(N)
    _chol(M)
    _chol(N)
    d = M.shape[-1]
    X = np.linalg.solve(M, N)
    tr = np.trace(X, axis1=-2, axis2=-1)
    return tr - (np.linalg.slogdet(N)[1] - np.linalg.slogdet(M)[1]) - d


def spectral_norm(M):
    """Largest absolute eigenvalue of a symmetric matrix."""
    M = _sym(M)
    return np.max(np.abs(np.linalg.eigvalsh(M)), axis=-1)


def frobenius_norm(M):
    M = _sym(M)
    return np.sqrt(np.sum(M * M, axis=(-2, -1)))


def logdet(M):
    sign, val = np.linalg.slogdet(_sym(M))
    if np.any(sign <= 0):
        raise DomainError("logdet needs a positive determinant")
    return val


def spectral_distance(M, N):
    return spectral_norm(np.asarray(N, dtype=float) - np.asarray(M, dtype=float))


def frobenius_distance(M, N):
    return frobenius_norm(np.asarray(N, dtype=float) - np.asarray(M, dtype=float))


def euclidean_distance(x, y):
    diff = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    return np.sqrt(np.sum(diff * diff, axis=-1))


# distances are evaluated as metric(center, draw)
METRICS = {
    "fm": fm_distance,
    "stein": stein_loss,
    "spectral": spectral_distance,
    "frobenius": frobenius_distance,
    "euclidean": euclidean_distance,
}

FUNCTIONALS = {
    "logdet": logdet,
    "spectral_norm": spectral_norm,
    "frobenius_norm": frobenius_norm,
}


def _check_level(level):
    if not 0.0 <= level <= 1.0:
        raise DomainError(f"level must lie in [0, 1], got {level}")


@dataclass
class Ball:
    center: np.ndarray
    radius: float
    metric: str

    def distance(self, x):
        return METRICS[self.metric](self.center, x)

    def contains(self, x):
        return bool(self.distance(x) <= self.radius)


def ball_region(draws, metric, level, center=None):
    """Ball around the elementwise mean whose radius is the level-quantile of distances."""
    _check_level(level)
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < 2:
        raise DomainError("need at least two draws")
    if metric not in METRICS:
        raise DomainError(f"unknown metric {metric!r}")
    if center is None:
        center = draws.mean(axis=0)
    dist = METRICS[metric](center, draws)
    return Ball(center=center, radius=float(np.quantile(dist, level)), metric=metric)


def central_interval(draws, level):
    """Equal-tailed interval between the (1-level)/2 and (1+level)/2 quantiles."""
    _check_level(level)
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < 2:
        raise DomainError("need at least two draws")
    lo, hi = np.quantile(draws, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=0)
    return lo, hi


# ---------------------------------------------------------------------------
# boxes for set-valued (n, mu) draws


@dataclass
class Box:
    n_lo: float
    n_hi: float
    mu_lo: float
    mu_hi: float
    unbounded: bool = False

    def contains(self, n, mu):
        if not self.mu_lo <= mu <= self.mu_hi:
            return False
        if self.unbounded:
            return n >= self.n_lo
        return self.n_lo <= n <= self.n_hi

    @property
    def widths(self):
        return (math.inf if self.unbounded else self.n_hi - self.n_lo), self.mu_hi - self.mu_lo


@dataclass
class BoxPair:
    belief: Box
    plausibility: Box
    center: tuple


def _set_summary(s):
    e = np.asarray(s.entries, dtype=float)
    return e[:, 0], e[:, 1], e[:, 2], bool(s.unbounded_tail)


def representatives(sets, rng):
    """One (n, mu) per draw: the set's smallest or largest value, each with probability 1/2."""
    k = len(sets)
    pick_n = rng.random(k) < 0.5
    pick_mu = rng.random(k) < 0.5
    n_rep = np.empty(k)
    mu_rep = np.empty(k)
    for i, s in enumerate(sets):
        ns, lo, hi, _ = _set_summary(s)
        n_rep[i] = ns[0] if pick_n[i] else ns[-1]
        mu_rep[i] = lo.min() if pick_mu[i] else hi.max()
    return n_rep, mu_rep


def _interval_gap(c, lo, hi):
    return np.maximum(np.maximum(lo - c, c - hi), 0.0)


def belief_plaus_boxes(sets, level, rng, min_n_width=1.0):
    """Belief (fully containing) and plausibility (intersecting) boxes.

    Both are centered at the medians of the endpoint representatives and
    have half-widths t * IQR of those representatives; t is the smallest
    multiplier reaching the target fraction of draws.
    """
    _check_level(level)
    if len(sets) == 0:
        raise DomainError("need at least one draw")
    n_rep, mu_rep = representatives(sets, rng)
    cn, cmu = float(np.median(n_rep)), float(np.median(mu_rep))
    q = np.quantile(n_rep, [0.25, 0.75])
    wn = max(float(q[1] - q[0]), min_n_width)
    q = np.quantile(mu_rep, [0.25, 0.75])
    wmu = max(float(q[1] - q[0]), 1e-9 * max(abs(cmu), 1.0))

    t_bel = np.empty(len(sets))
    t_pl = np.empty(len(sets))
    for i, s in enumerate(sets):
        ns, lo, hi, unbounded = _set_summary(s)
        if unbounded:
            t_bel[i] = math.inf
        else:
            t_bel[i] = max(
                abs(ns[0] - cn) / wn, abs(ns[-1] - cn) / wn,
                abs(lo.min() - cmu) / wmu, abs(hi.max() - cmu) / wmu,
            )
        t_pl[i] = np.min(np.maximum(np.abs(ns - cn) / wn, _interval_gap(cmu, lo, hi) / wmu))

    k = max(int(math.ceil(level * len(sets) - 1e-12)), 1)
    tb = float(np.sort(t_bel)[k - 1])
    tp = float(np.sort(t_pl)[k - 1])
    if math.isinf(tb):
        # width in mu still taken from the bounded draws
        finite = np.sort(t_bel[np.isfinite(t_bel)])
        tmu = max(float(finite[-1]) if finite.size else tp, tp)
        belief = Box(cn - tmu * wn, math.inf, cmu - tmu * wmu, cmu + tmu * wmu, unbounded=True)
    else:
        belief = Box(cn - tb * wn, cn + tb * wn, cmu - tb * wmu, cmu + tb * wmu)
    plaus = Box(cn - tp * wn, cn + tp * wn, cmu - tp * wmu, cmu + tp * wmu)
    return BoxPair(belief=belief, plausibility=plaus, center=(cn, cmu))
