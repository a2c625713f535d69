"""Set-valued fiducial sampler for binomial (n, mu = n p), both unknown.

For a uniform configuration U the data y_i = F^{-1}_{n,p}(U_i) are
reproduced exactly when, for every i,

    p_lo_i(n) = G^{-1}_{y_i, n-y_i+1}(1 - U_i) < p <= G^{-1}_{y_i+1, n-y_i}(1 - U_i) = p_up_i(n).

The solution set collects, for each n, the mu-interval n * (max_i p_lo, min_i p_up].
Only the smallest and largest U within a group of equal y_i matter for
these bounds, which is what keeps the computation cheap.

The n axis is a fixed grid: every integer from max(y) over a dense window,
then geometric steps up to ``n_cap``.  Bounds between grid points are not
evaluated; the feasible n are assumed contiguous.

A Markov chain on U (uniform on the configurations with a nonempty
solution set) is run with a Gibbs scan over groups of equal y plus two
Metropolis-Hastings moves that shift the set in the mu and n directions.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .numerics import (
    DomainError,
    beta_upper_quantile_vec,
    binom_cdf_vec,
    gamma_quantile_vec,
    inv_reg_inc_beta,
    make_rng,
)

__all__ = [
    "NpSamplerConfig",
    "NpSolutionSet",
    "NpState",
    "NpRun",
    "p_bounds",
    "build_grid",
    "solution_set",
    "gamma_stop",
    "init_state",
    "gibbs_scan",
    "mh_step_mu",
    "mh_step_n",
    "log_accept_ratio",
    "run_np_sampler",
]


@dataclass
class NpSamplerConfig:
    eps2: float = 1e-3
    mu_proposal_sd: float | None = None
    iterations: int = 5000
    burn_in: int = 1000
    seed: int = 0
    n_cap: int = 1_000_000
    growth: float = 1.05
    dense_width: int | None = None

    def __post_init__(self):
        if not self.eps2 > 0:
            raise DomainError("eps2 must be positive")
        if self.mu_proposal_sd is not None and not self.mu_proposal_sd > 0:
            raise DomainError("mu_proposal_sd must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise DomainError("need 0 <= burn_in < iterations")
        if not self.growth > 1.0:
            raise DomainError("growth must exceed 1")

    def proposal_sd(self, y):
        if self.mu_proposal_sd is not None:
            return self.mu_proposal_sd
        return 0.5 * math.sqrt(max(float(np.mean(y)), 1e-12))


@dataclass
class NpSolutionSet:
    """entries: rows (n, mu_lo, mu_hi), n increasing; mu in (mu_lo, mu_hi]."""

    entries: np.ndarray
    unbounded_tail: bool
    u: np.ndarray = field(repr=False)

    def __len__(self):
        return self.entries.shape[0]

    @property
    def empty(self):
        return self.entries.shape[0] == 0

    @property
    def n_min(self):
        return int(self.entries[0, 0])

    @property
    def n_max(self):
        return int(self.entries[-1, 0])

    def contains(self, n, mu):
        """Membership of (n, mu); n between grid entries uses the neighbouring entry below."""
        e = self.entries
        if self.empty or n < e[0, 0]:
            return False
        if n > e[-1, 0] and not self.unbounded_tail:
            return False
        k = int(np.searchsorted(e[:, 0], n, side="right")) - 1
        return bool(e[k, 1] < mu <= e[k, 2])


def p_bounds(y_i, n, u_i):
    """(lower, upper] range of p reproducing count y_i from n trials and uniform u_i."""
    if n < y_i or y_i < 0:
        raise DomainError(f"need 0 <= y_i <= n, got y_i={y_i}, n={n}")
    if not 0.0 < u_i < 1.0:
        raise DomainError("u_i must lie in (0, 1)")
    lower = 0.0 if y_i == 0 else inv_reg_inc_beta(y_i, n - y_i + 1, 1.0 - u_i)
    upper = 1.0 if y_i == n else inv_reg_inc_beta(y_i + 1, n - y_i, 1.0 - u_i)
    return lower, upper


def build_grid(n0, n_cap=1_000_000, growth=1.05, dense_width=None):
    """Integers n0..n0+w, then geometric steps (ratio ``growth``) up to n_cap."""
    n0 = max(int(n0), 1)
    w = max(100, 2 * n0) if dense_width is None else int(dense_width)
    top = min(n0 + w, n_cap)
    pts = list(range(n0, top + 1))
    x = top
    while x < n_cap:
        x = min(max(x + 1, int(math.ceil(x * growth))), n_cap)
        pts.append(x)
    return np.array(pts, dtype=np.int64)


def _lo_rows(yv, u, ns):
    """n * p_lo(n) for one count and one uniform over an array of n."""
    if yv == 0:
        return np.zeros(ns.shape)
    return ns * special.betainccinv(yv, ns - yv + 1.0, u)


def _up_rows(yv, u, ns):
    """n * p_up(n); p_up = 1 where n == y."""
    b = ns - yv
    out = ns * special.betainccinv(yv + 1.0, np.maximum(b, 1.0), u)
    return np.where(b <= 0, ns, out)


def _cdf(ns, p, yv):
    """P(Bin(n, p) <= yv) for arrays n, p and a scalar count."""
    if yv < 0:
        return np.zeros(ns.shape)
    out = special.betainc(np.maximum(ns - yv, 1.0), yv + 1.0, 1.0 - p)
    return np.where(ns <= yv, 1.0, out)


def _loglik(y_vals, counts, n, mu):
    """sum_i log pmf(y_i; n, mu/n)."""
    p = mu / n
    if not 0.0 < p <= 1.0:
        return -math.inf
    if p == 1.0:
        return 0.0 if np.all(y_vals == n) else -math.inf
    terms = (special.gammaln(n + 1) - special.gammaln(y_vals + 1) - special.gammaln(n - y_vals + 1)
             + y_vals * math.log(p) + (n - y_vals) * math.log1p(-p))
    return float(np.sum(counts * terms))


class NpState:
    """Uniform configuration plus cached per-group bound rows on the n grid."""

    def __init__(self, y, u, grid, horizon=64):
        self.y = np.asarray(y, dtype=np.int64)
        self.u = np.array(u, dtype=float)
        self.grid = grid
        self.vals, self.g_of_i, self.counts = np.unique(self.y, return_inverse=True, return_counts=True)
        self.members = [np.nonzero(self.g_of_i == g)[0] for g in range(self.vals.size)]
        self.H = min(max(horizon, 2), grid.size)
        self.refresh()

    @property
    def k(self):
        return self.vals.size

    def copy(self):
        other = object.__new__(NpState)
        other.__dict__.update(self.__dict__)
        other.u = self.u.copy()
        other.LO = self.LO.copy()
        other.UP = self.UP.copy()
        other.umin = self.umin.copy()
        other.umax = self.umax.copy()
        return other

    def _extremes(self):
        self.umin = np.array([self.u[m].min() for m in self.members])
        self.umax = np.array([self.u[m].max() for m in self.members])

    def refresh(self):
        self._extremes()
        ns = self.grid[: self.H].astype(float)
        self.LO = np.array([_lo_rows(v, a, ns) for v, a in zip(self.vals, self.umin)])
        self.UP = np.array([_up_rows(v, b, ns) for v, b in zip(self.vals, self.umax)])

    def refresh_group(self, g):
        ns = self.grid[: self.H].astype(float)
        mem_u = self.u[self.members[g]]
        lo, hi = mem_u.min(), mem_u.max()
        if lo != self.umin[g]:
            self.umin[g] = lo
            self.LO[g] = _lo_rows(self.vals[g], lo, ns)
        if hi != self.umax[g]:
            self.umax[g] = hi
            self.UP[g] = _up_rows(self.vals[g], hi, ns)

    def extend(self):
        """Double the computed horizon; returns False when the grid is exhausted."""
        if self.H >= self.grid.size:
            return False
        old = self.H
        self.H = min(2 * self.H, self.grid.size)
        ns = self.grid[old: self.H].astype(float)
        self.LO = np.hstack([self.LO, np.array([_lo_rows(v, a, ns) for v, a in zip(self.vals, self.umin)])])
        self.UP = np.hstack([self.UP, np.array([_up_rows(v, b, ns) for v, b in zip(self.vals, self.umax)])])
        return True

    def feasible(self):
        return self.LO.max(axis=0) < self.UP.min(axis=0)

    def first_run(self):
        """(k0, k1): grid indices of the first contiguous feasible run, or None."""
        while True:
            feas = self.feasible()
            idx = np.nonzero(feas)[0]
            if idx.size == 0:
                if self.extend():
                    continue
                return None
            k0 = int(idx[0])
            gaps = np.nonzero(~feas[k0:])[0]
            if gaps.size:
                return k0, k0 + int(gaps[0]) - 1
            if not self.extend():
                return k0, self.H - 1

    def interval_at(self, k):
        return float(self.LO[:, k].max()), float(self.UP[:, k].min())


def _first_feasible_index(y_vals, umin, umax, grid, upto):
    """First grid index <= upto where bounds built from the given extremes intersect, else None."""
    ns = grid[: upto + 1].astype(float)
    lo = np.max([_lo_rows(v, a, ns) for v, a in zip(y_vals, umin)], axis=0)
    up = np.min([_up_rows(v, b, ns) for v, b in zip(y_vals, umax)], axis=0)
    idx = np.nonzero(lo < up)[0]
    return int(idx[0]) if idx.size else None


def gamma_stop(y, u, eps2, grid):
    """Smallest grid index where every n p bound is within eps2 of its Gamma limit.

    The gap shrinks like C/n, so C is read off at a reference n and the
    resulting guess is verified (and advanced along the grid if needed).
    """
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    lim_up = gamma_quantile_vec(y + 1, 1.0 - u)
    lim_lo = gamma_quantile_vec(y, 1.0 - u)

    def worst(n):
        up = n * beta_upper_quantile_vec(y + 1, n - y, u)
        lo = n * beta_upper_quantile_vec(y, n - y + 1, u)
        return max(np.max(np.abs(up - lim_up)), np.max(np.abs(lo - lim_lo)))

    n_ref = float(max(1000.0, 10.0 * y.max()))
    guess = worst(n_ref) * n_ref / eps2
    k = int(np.searchsorted(grid, guess))
    k = min(max(k, 0), grid.size - 1)
    while k < grid.size - 1 and worst(float(grid[k])) >= eps2:
        k = min(k + max(1, (grid.size - k) // 8), grid.size - 1)
    return k


def _record(state, eps2):
    run = state.first_run()
    if run is None:
        return NpSolutionSet(np.empty((0, 3)), False, state.u.copy())
    k0, k1 = run
    ks = gamma_stop(state.y, state.u, eps2, state.grid)
    tail = False
    if k1 >= ks or k1 == state.grid.size - 1:
        tail = True
        k1 = max(min(k1, ks), k0)
    ks_idx = np.arange(k0, k1 + 1)
    entries = np.column_stack([
        state.grid[ks_idx].astype(float),
        state.LO[:, ks_idx].max(axis=0),
        state.UP[:, ks_idx].min(axis=0),
    ])
    return NpSolutionSet(entries, tail, state.u.copy())


def solution_set(u, y, cfg=None, grid=None):
    """Solution set of a single uniform configuration (possibly empty)."""
    cfg = cfg or NpSamplerConfig()
    y = np.asarray(y, dtype=np.int64)
    u = np.asarray(u, dtype=float)
    if u.shape != y.shape or np.any((u <= 0) | (u >= 1)):
        raise DomainError("u must hold one value in (0, 1) per observation")
    if grid is None:
        grid = build_grid(max(int(y.max()), 1), cfg.n_cap, cfg.growth, cfg.dense_width)
    return _record(NpState(y, u, grid), cfg.eps2)


def _mom_start(y):
    y = np.asarray(y, dtype=float)
    ymax = max(int(y.max()), 1)
    mean = y.mean()
    var = y.var(ddof=1) if y.size > 1 else 0.0
    if var > 0 and mean > var:
        n_hat = int(round(mean * mean / (mean - var)))
        n_hat = min(max(n_hat, ymax), 10 * ymax)
    else:
        n_hat = 2 * ymax
    return n_hat


def init_state(y, cfg, rng=None):
    """Method-of-moments start n = ybar^2 / (ybar - s^2), clamped to [max y, 10 max y].

    Falls back to 2 max(y) when the data are not under-dispersed.  Each u_i
    is the midpoint of its CDF step at (n, ybar / n), so that point lies in
    the solution set.
    """
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or y.size == 0 or np.any(y < 0):
        raise DomainError("y must be a nonempty vector of nonnegative counts")
    if np.all(y == 0):
        raise DomainError("all counts are zero: n is not identifiable from these data")
    grid = build_grid(max(int(y.max()), 1), cfg.n_cap, cfg.growth, cfg.dense_width)
    n_hat = _mom_start(y)
    n_hat = int(grid[np.argmin(np.abs(grid - n_hat))])
    p_hat = float(y.mean()) / n_hat
    lo = binom_cdf_vec(n_hat, p_hat, y - 1)
    hi = binom_cdf_vec(n_hat, p_hat, y)
    u = 0.5 * (lo + hi)
    state = NpState(y, u, grid)
    if state.first_run() is None:
        raise RuntimeError("initial configuration has an empty solution set")
    return state


def _union_sample(lo, hi, rng):
    """Uniform draw from the union of intervals (lo_j, hi_j)."""
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    if lo.size == 0:
        raise RuntimeError("admissible set for u is empty")
    order = np.argsort(lo, kind="stable")
    lo, hi = lo[order], hi[order]
    run_hi = np.maximum.accumulate(hi)
    starts = np.ones(lo.size, dtype=bool)
    starts[1:] = lo[1:] > run_hi[:-1]
    seg = np.cumsum(starts) - 1
    seg_lo = lo[starts]
    seg_hi = np.zeros(seg_lo.size)
    np.maximum.at(seg_hi, seg, hi)
    lengths = seg_hi - seg_lo
    cum = np.cumsum(lengths)
    x = rng.random() * cum[-1]
    j = min(int(np.searchsorted(cum, x, side="right")), cum.size - 1)
    before = cum[j - 1] if j > 0 else 0.0
    val = seg_lo[j] + (x - before)
    # stay strictly inside (0, 1)
    return float(min(max(val, np.nextafter(seg_lo[j], 1.0)), np.nextafter(seg_hi[j], 0.0)))


def _leave_out(arr, g, reduce):
    if arr.shape[0] == 1:
        return None
    return reduce(np.delete(arr, g, axis=0), axis=0)


def gibbs_scan(state, cfg, rng):
    """Refresh every u_i from its full conditional, one group of equal y at a time.

    The conditional of u_i is uniform on the union over n of the u keeping
    the joint set nonempty at n, given the bounds from all other
    observations (other groups' rows plus the extremes of its own group).
    """
    for g in range(state.k):
        mem = state.members[g]
        yv = float(state.vals[g])
        H = -1
        lo_cache, up_cache = {}, {}
        for i in mem:
            while True:
                if state.H != H:
                    H = state.H
                    L_out = _leave_out(state.LO, g, np.max)
                    U_out = _leave_out(state.UP, g, np.min)
                    a_all = np.zeros(H) if L_out is None else L_out
                    b_all = np.full(H, np.inf) if U_out is None else U_out
                    idx = np.nonzero(a_all < b_all)[0]
                    ns = state.grid[idx].astype(float)
                    a_base, b_base = a_all[idx], b_all[idx]
                    at_edge = idx.size > 0 and idx[-1] == H - 1
                    lo_cache = {state.umin[g]: state.LO[g][idx]}
                    up_cache = {state.umax[g]: state.UP[g][idx]}
                a, b = a_base, b_base
                if mem.size > 1:
                    others = state.u[mem[mem != i]]
                    umin, umax = others.min(), others.max()
                    if umin not in lo_cache:
                        lo_cache[umin] = _lo_rows(yv, umin, ns)
                    if umax not in up_cache:
                        up_cache[umax] = _up_rows(yv, umax, ns)
                    a = np.maximum(a, lo_cache[umin])
                    b = np.minimum(b, up_cache[umax])
                ok = a < b
                if at_edge and ok[-1] and state.extend():
                    continue
                break
            if not ok.any():
                raise RuntimeError("no admissible n for a Gibbs update; state was infeasible")
            n_ok = ns[ok]
            p_hi = np.minimum(b[ok] / n_ok, 1.0)
            p_lo = np.minimum(a[ok] / n_ok, 1.0)
            state.u[i] = _union_sample(_cdf(n_ok, p_hi, yv - 1), _cdf(n_ok, p_lo, yv), rng)
        state.refresh_group(g)
    return state


def _box(y, n, mu):
    p = mu / n
    return binom_cdf_vec(n, p, y - 1), binom_cdf_vec(n, p, y)



def _draw_in_box(lo, hi, rng):
    u = hi - (hi - lo) * rng.random(lo.size)
    return np.clip(u, np.nextafter(lo, 1.0), hi)


def log_accept_ratio(width_from, width_to, n_from, mu_from, n_to, mu_to, y_vals, counts):
    """log of |I(U)| W(n', mu') / (|I(U')| W(n, mu)) with W the binomial likelihood."""
    return (math.log(width_from) + _loglik(y_vals, counts, n_to, mu_to)
            - math.log(width_to) - _loglik(y_vals, counts, n_from, mu_from))


def _try_move(state, k_new, mu_new, mu_old, k_old, width_old, rng):
    """Propose U in the box at (grid[k_new], mu_new); accept/reject in place. Returns accepted flag."""
    n_new = float(state.grid[k_new])
    n_old = float(state.grid[k_old])
    if not 0.0 < mu_new <= n_new:
        return False
    lo, hi = _box(state.y, n_new, mu_new)
    if np.any(hi <= lo):
        return False
    u_new = _draw_in_box(lo, hi, rng)
    umin = np.array([u_new[m].min() for m in state.members])
    umax = np.array([u_new[m].max() for m in state.members])
    first = _first_feasible_index(state.vals, umin, umax, state.grid, k_new)
    if first != k_new:
        return False
    ns = np.array([n_new])
    lo_k = max(float(_lo_rows(v, a, ns)[0]) for v, a in zip(state.vals, umin))
    up_k = min(float(_up_rows(v, b, ns)[0]) for v, b in zip(state.vals, umax))
    width_new = up_k - lo_k
    if not width_new > 0:
        return False
    log_a = log_accept_ratio(width_old, width_new, n_old, mu_old, n_new, mu_new, state.vals, state.counts)
    if math.log(rng.random()) < log_a:
        state.u = u_new
        state.refresh()
        return True
    return False


def _pick_mu(state, rng):
    run = state.first_run()
    if run is None:
        raise RuntimeError("state has an empty solution set")
    k0 = run[0]
    lo, hi = state.interval_at(k0)
    return k0, lo, hi, hi - (hi - lo) * rng.random()


def mh_step_mu(state, cfg, rng):
    """Shift the set in the mu direction at its smallest n."""
    k0, lo, hi, mu_star = _pick_mu(state, rng)
    mu_new = mu_star + cfg.proposal_sd(state.y) * rng.standard_normal()
    return _try_move(state, k0, mu_new, mu_star, k0, hi - lo, rng)


def mh_step_n(state, cfg, rng):
    """Move the smallest n one grid step down or up at a fixed mu."""
    k0, lo, hi, mu_star = _pick_mu(state, rng)
    k_new = k0 + (1 if rng.random() < 0.5 else -1)
    if k_new < 0 or k_new >= state.grid.size:
        return False
    return _try_move(state, k_new, mu_star, mu_star, k0, hi - lo, rng)


@dataclass
class NpRun:
    sets: list
    accept_mu: float
    accept_n: float
    iterations: np.ndarray

    def records(self):
        """Rows (iter, n, mu_lo, mu_hi, unbounded_tail), one per (iteration, n)."""
        rows = []
        for it, s in zip(self.iterations, self.sets):
            k = len(s)
            rows.append(np.column_stack([np.full(k, it), s.entries, np.full(k, float(s.unbounded_tail))]))
        return np.vstack(rows) if rows else np.empty((0, 5))


def run_np_sampler(y, cfg=None, rng=None):
    """Gibbs scan plus mu and n Metropolis moves; returns post-burn-in solution sets."""
    cfg = cfg or NpSamplerConfig()
    rng = rng if rng is not None else make_rng(cfg.seed)
    state = init_state(y, cfg, rng)
    sets = []
    iters = []
    acc_mu = acc_n = 0
    for t in range(cfg.iterations):
        gibbs_scan(state, cfg, rng)
        a1 = mh_step_mu(state, cfg, rng)
        a2 = mh_step_n(state, cfg, rng)
        if t >= cfg.burn_in:
            acc_mu += a1
            acc_n += a2
            s = _record(state, cfg.eps2)
            if s.empty:
                raise RuntimeError("recorded an empty solution set")
            sets.append(s)
            iters.append(t)
    kept = max(cfg.iterations - cfg.burn_in, 1)
    return NpRun(sets=sets, accept_mu=acc_mu / kept, accept_n=acc_n / kept, iterations=np.array(iters))
