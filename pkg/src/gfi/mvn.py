"""Fiducial distribution for the mean and covariance of multivariate normal data.

Data are generated as ``Y_i = mu + Z Lambda U_i`` with ``Z`` orthogonal and
``Lambda`` diagonal positive.  ``Z`` is parameterized by the Cayley transform
of a skew-symmetric matrix ``A`` whose strict lower triangle (``veck``) lives
in the box [-1, 1]^K.  Given ``A`` the scales and the mean have closed-form
conditionals, so the sampler only runs Metropolis on ``veck``.

Convention: ``veck`` lists the strict lower triangle column by column,
(1,0), (2,0), ..., (d-1,0), (2,1), ...; ``A[j, k] = a`` and ``A[k, j] = -a``
for ``j > k``.
"""

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import DomainError, chain_rng, log_pseudo_det

__all__ = [
    "MvnData",
    "MvnDraw",
    "MvnChainConfig",
    "MvnSample",
    "veck_index",
    "skew_from_veck",
    "veck_from_skew",
    "cayley",
    "inverse_cayley",
    "dga_forward",
    "jacobian_columns",
    "stacked_jacobian",
    "jstar",
    "log_jstar",
    "log_marginal_A",
    "sample_lambda_given_A",
    "sample_mu_given",
    "initial_veck",
    "run_chains",
    "run_chain_batch",
]


def veck_index(d):
    """(rows, cols) of the strict lower triangle in column order."""
    cols, rows = np.triu_indices(d, 1)
    return rows, cols


def n_skew(d):
    return d * (d - 1) // 2


def skew_from_veck(veck, d):
    veck = np.asarray(veck, dtype=float)
    if veck.shape[-1] != n_skew(d):
        raise DomainError(f"veck for d={d} needs {n_skew(d)} entries, got {veck.shape[-1]}")
    rows, cols = veck_index(d)
    A = np.zeros(veck.shape[:-1] + (d, d))
    A[..., rows, cols] = veck
    A[..., cols, rows] = -veck
    return A


def veck_from_skew(A):
    A = np.asarray(A, dtype=float)
    rows, cols = veck_index(A.shape[-1])
    return A[..., rows, cols]


def _dim_from_veck(veck, d=None):
    if d is not None:
        return d
    k = np.shape(veck)[-1]
    d = int(round((1 + math.sqrt(1 + 8 * k)) / 2))
    if n_skew(d) != k:
        raise DomainError(f"{k} is not a valid veck length")
    return d


def cayley(veck, d=None):
    """Z = (I - A)(I + A)^{-1}; works on stacks of veck vectors."""
    d = _dim_from_veck(veck, d)
    A = skew_from_veck(veck, d)
    eye = np.eye(d)
    # I - A and (I + A)^{-1} commute, so solve (I + A) Z = I - A
    return np.linalg.solve(eye + A, eye - A)


def inverse_cayley(Z):
    """A = (I + Z)^{-1}(I - Z), valid when Z has no eigenvalue -1."""
    Z = np.asarray(Z, dtype=float)
    eye = np.eye(Z.shape[-1])
    A = np.linalg.solve(eye + Z, eye - Z)
    return 0.5 * (A - np.swapaxes(A, -1, -2))


def dga_forward(mu, veck, lam, u):
    """mu + Z Lambda u."""
    mu = np.asarray(mu, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise DomainError("lambda entries must be positive")
    Z = cayley(veck, mu.shape[-1])
    return mu + Z @ (lam * np.asarray(u, dtype=float))


def _derivative_maps(veck, d, lam=None):
    """d x d matrices T_c with dY_i/dtheta_c = T_c (Y_i - mu) for the scale and skew parameters."""
    A = skew_from_veck(veck, d)
    eye = np.eye(d)
    P = np.linalg.inv(eye + A)
    Q = np.linalg.inv(eye - A)
    Z = (eye - A) @ P
    lam = np.ones(d) if lam is None else np.asarray(lam, dtype=float)
    maps = [np.outer(Z[:, j], Z[:, j]) / lam[j] for j in range(d)]
    for j, k in zip(*veck_index(d)):
        E = np.zeros((d, d))
        E[j, k] = -1.0
        E[k, j] = 1.0
        maps.append(2.0 * P @ E @ Q)
    return maps


def jacobian_columns(y_i, mu, veck, lam):
    """Per-observation block of the Jacobian, shape d x d(d+3)/2.

    Columns are ordered mu (d), lambda (d), veck (d(d-1)/2).
    """
    y_i = np.asarray(y_i, dtype=float)
    d = y_i.shape[0]
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise DomainError("lambda entries must be positive")
    r = y_i - np.asarray(mu, dtype=float)
    cols = [T @ r for T in _derivative_maps(veck, d, lam)]
    return np.column_stack([np.eye(d)] + cols)


def stacked_jacobian(Y, mu, veck, lam):
    Y = np.asarray(Y, dtype=float)
    return np.vstack([jacobian_columns(y, mu, veck, lam) for y in Y])


def jstar(Y, veck):
    """D*(J(y, A)): pseudo-determinant of the stacked Jacobian at Lambda = I, mu = Ybar.

    Uses the explicit QR route; :func:`log_jstar` is the scatter-matrix
    shortcut used inside the sampler.
    """
    Y = np.asarray(Y, dtype=float)
    d = Y.shape[1]
    J = stacked_jacobian(Y, Y.mean(axis=0), veck, np.ones(d))
    return float(np.exp(log_pseudo_det(J)))


@dataclass
class MvnData:
    n: int
    d: int
    ybar: np.ndarray
    s2: np.ndarray
    observations: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_observations(cls, Y):
        Y = np.asarray(Y, dtype=float)
        if Y.ndim != 2:
            raise DomainError("observations must be an n x d matrix")
        n, d = Y.shape
        if n <= d:
            raise DomainError(f"need more observations than dimensions (n={n}, d={d})")
        ybar = Y.mean(axis=0)
        R = Y - ybar
        return cls(n=n, d=d, ybar=ybar, s2=R.T @ R / n, observations=Y)

    @property
    def scatter(self):
        """n S^2."""
        return self.n * self.s2

    def scatter_chol(self):
        try:
            return np.linalg.cholesky(self.scatter)
        except np.linalg.LinAlgError:
            return None


def _log_target_batch(L, n, veck, d):
    """Unnormalized log marginal of veck for stacks of (cholesky(nS^2), veck).

    The stacked Jacobian at mu = Ybar, Lambda = I has a zero cross block
    between the mean columns and the rest, and the remaining Gram matrix is
    tr(T_c^T T_c' nS^2) = <T_c L, T_c' L>, so only d x d work is needed.
    """
    B = veck.shape[0]
    A = skew_from_veck(veck, d)
    eye = np.eye(d)
    P = np.linalg.inv(eye + A)
    Z = (eye - A) @ P
    M = np.swapaxes(Z, 1, 2) @ L  # rows z_j^T L
    diag = np.einsum("bij,bij->bi", M, M)  # (Z^T nS^2 Z)_jj
    W = np.swapaxes(P, 1, 2) @ L  # (I - A)^{-1} L, since (I - A)^{-1} = P^T
    V = np.empty((B, d * (d + 1) // 2, d, d))
    V[:, :d] = Z.transpose(0, 2, 1)[:, :, :, None] * M[:, :, None, :]
    for c, (j, k) in enumerate(zip(*veck_index(d)), start=d):
        V[:, c] = 2.0 * (P[:, :, k, None] * W[:, j, None, :] - P[:, :, j, None] * W[:, k, None, :])
    V = V.reshape(B, V.shape[1], d * d)
    G = V @ np.swapaxes(V, 1, 2)
    sign, logdet = np.linalg.slogdet(G)
    log_j = 0.5 * (d * math.log(n) + logdet)
    log_j = np.where(sign > 0, log_j, -np.inf)
    with np.errstate(divide="ignore"):
        out = log_j - 0.5 * (n - 1) * np.sum(np.log(diag), axis=1)
    inside = np.all(np.abs(veck) <= 1.0, axis=1)
    return np.where(inside, out, -np.inf)


def log_jstar(data, veck):
    """log D*(J(y, A)) from the scatter matrix alone."""
    L = data.scatter_chol()
    if L is None:
        return -np.inf
    veck = np.atleast_1d(np.asarray(veck, dtype=float))
    V = np.array([(T @ L).ravel() for T in _derivative_maps(veck, data.d)])
    sign, logdet = np.linalg.slogdet(V @ V.T)
    d = data.d
    return 0.5 * (d * math.log(data.n) + logdet) if sign > 0 else -np.inf


def log_marginal_A(data, veck):
    """Unnormalized log density of veck(A); -inf outside the box or for singular S^2."""
    veck = np.asarray(veck, dtype=float).reshape(-1)
    if veck.shape[0] != n_skew(data.d):
        raise DomainError("veck has the wrong length")
    if np.any(np.abs(veck) > 1.0):
        return -np.inf
    L = data.scatter_chol()
    if L is None:
        return -np.inf
    if data.d == 1:
        return 0.0
    return float(_log_target_batch(L[None], data.n, veck[None], data.d)[0])


def _scale_rates(data, Z):
    M = Z.T @ data.scatter @ Z
    return np.diag(M) / 2.0


def sample_lambda_given_A(data, veck, rng):
    """lambda_i^{-2} ~ Gamma((n-1)/2, rate=(Z^T nS^2 Z)_ii / 2), independently."""
    if data.n < 2:
        raise DomainError("need at least two observations")
    Z = cayley(np.asarray(veck, dtype=float).reshape(-1), data.d)
    x = rng.standard_gamma((data.n - 1) / 2.0, size=data.d) / _scale_rates(data, Z)
    return 1.0 / np.sqrt(x)


def sample_mu_given(data, veck, lam, rng):
    """mu ~ N(Ybar, n^{-1} Z Lambda^2 Z^T)."""
    Z = cayley(np.asarray(veck, dtype=float).reshape(-1), data.d)
    return data.ybar + Z @ (np.asarray(lam) * rng.standard_normal(data.d)) / math.sqrt(data.n)


def initial_veck(s2, perm):
    """Cayley parameter of the permuted eigenvector matrix of S^2.

    Column signs are chosen (det +1) to keep every entry within [-1, 1] with
    the smallest largest entry; falls back to zero when no sign pattern works.
    """
    d = s2.shape[0]
    if d == 1:
        return np.zeros(0)
    _, vecs = np.linalg.eigh(s2)
    Z0 = vecs[:, perm]
    best, best_val = None, np.inf
    for signs in itertools.product((1.0, -1.0), repeat=d):
        Z = Z0 * np.array(signs)
        if np.linalg.det(Z) < 0:
            continue
        if np.linalg.cond(np.eye(d) + Z) > 1e8:
            continue
        v = veck_from_skew(inverse_cayley(Z))
        m = np.max(np.abs(v))
        if m < best_val:
            best, best_val = v, m
    if best is None or best_val > 1.0:
        return np.zeros(n_skew(d))
    return best


@dataclass
class MvnChainConfig:
    chains: int = 4
    iterations: int = 6000
    burn_in: int = 1000
    proposal_sd: float | None = None
    seed: int = 0
    thin: int = 1
    target_accept: float = 0.3

    def __post_init__(self):
        if self.chains < 1:
            raise DomainError("chains must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise DomainError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise DomainError("thin must be >= 1")
        if self.proposal_sd is not None and not self.proposal_sd > 0:
            raise DomainError("proposal_sd must be positive")

    def default_sd(self, d):
        if self.proposal_sd is not None:
            return self.proposal_sd
        if d < 2:
            return 0.0
        return 0.05 * 2.0 / math.sqrt(d * (d - 1))


@dataclass
class MvnDraw:
    veck: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    cov: np.ndarray


@dataclass
class MvnSample:
    """Pooled post-burn-in draws; row r belongs to ``chain[r]``, iteration ``iteration[r]``."""

    chain: np.ndarray
    iteration: np.ndarray
    veck: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    acceptance: np.ndarray

    def __len__(self):
        return self.chain.shape[0]

    @property
    def cov(self):
        Z = cayley(self.veck, self.mu.shape[1])
        return (Z * self.lam[:, None, :] ** 2) @ np.swapaxes(Z, 1, 2)

    def draws(self):
        covs = self.cov
        return [MvnDraw(self.veck[r], self.lam[r], self.mu[r], covs[r]) for r in range(len(self))]

    def records(self):
        """Flat rows: chain, iter, veck..., lambda..., mu..., vech(cov)..."""
        d = self.mu.shape[1]
        rows, cols = np.tril_indices(d)
        covs = self.cov[:, rows, cols]
        return np.column_stack([self.chain, self.iteration, self.veck, self.lam, self.mu, covs])

    @staticmethod
    def record_header(d):
        rows, cols = np.tril_indices(d)
        vr, vc = veck_index(d)
        return (
            ["chain", "iter"]
            + [f"a_{j}{k}" for j, k in zip(vr, vc)]
            + [f"lambda_{j}" for j in range(d)]
            + [f"mu_{j}" for j in range(d)]
            + [f"cov_{j}{k}" for j, k in zip(rows, cols)]
        )


def run_chain_batch(datasets, seeds, config):
    """Run one chain per (dataset, seed) pair as a single vectorized batch.

    All datasets must share (n, d).  Each chain draws its randomness from its
    own generator, so results do not depend on how chains are batched.
    Returns a list of dicts with keys veck, lam, mu, iteration, acceptance.
    """
    n, d = datasets[0].n, datasets[0].d
    if any(ds.n != n or ds.d != d for ds in datasets):
        raise DomainError("all datasets in a batch must share n and d")
    B = len(datasets)
    K = n_skew(d)
    it, burn, thin = config.iterations, config.burn_in, config.thin
    keep_iters = np.arange(burn, it)[:: thin]
    n_keep = keep_iters.shape[0]

    chols = []
    for ds in datasets:
        L = ds.scatter_chol()
        if L is None:
            raise DomainError("sample covariance is singular")
        chols.append(L)
    L = np.array(chols)
    scatter = L @ np.swapaxes(L, 1, 2)
    ybar = np.array([ds.ybar for ds in datasets])

    # per-chain random streams, drawn in a fixed order
    steps = np.empty((B, it, K))
    logu = np.empty((B, it))
    gam = np.empty((B, n_keep, d))
    nrm = np.empty((B, n_keep, d))
    veck = np.empty((B, K))
    for b, seed in enumerate(seeds):
        rng = chain_rng(seed, 0)
        perm = rng.permutation(d)
        steps[b] = rng.standard_normal((it, K))
        logu[b] = np.log(rng.random(it))
        gam[b] = rng.standard_gamma((n - 1) / 2.0, size=(n_keep, d))
        nrm[b] = rng.standard_normal((n_keep, d))
        veck[b] = initial_veck(datasets[b].s2, perm)

    sd = np.full(B, config.default_sd(d))
    out_veck = np.empty((B, n_keep, K))
    accepted = np.zeros(B)
    window_acc = np.zeros(B)
    window = 50
    if K > 0:
        logp = _log_target_batch(L, n, veck, d)
        j = 0
        for t in range(it):
            prop = veck + sd[:, None] * steps[:, t]
            inside = np.all(np.abs(prop) <= 1.0, axis=1)
            lp = np.full(B, -np.inf)
            if inside.any():
                lp[inside] = _log_target_batch(L[inside], n, prop[inside], d)
            acc = logu[:, t] < lp - logp
            veck = np.where(acc[:, None], prop, veck)
            logp = np.where(acc, lp, logp)
            if t < burn:
                window_acc += acc
                if (t + 1) % window == 0:
                    rate = window_acc / window
                    sd *= np.exp(1.5 * (rate - config.target_accept))
                    window_acc[:] = 0.0
            else:
                accepted += acc
            if j < n_keep and t == keep_iters[j]:
                out_veck[:, j] = veck
                j += 1
    acceptance = accepted / max(it - burn, 1)

    # closed-form conditionals for the kept draws
    Z = cayley(out_veck.reshape(B * n_keep, K), d).reshape(B, n_keep, d, d)
    rates = np.einsum("bkij,bil,bklj->bkj", Z, scatter, Z, optimize=True) / 2.0
    lam = 1.0 / np.sqrt(gam / rates)
    mu = ybar[:, None, :] + np.einsum("bkij,bkj->bki", Z, lam * nrm) / math.sqrt(n)
    return [
        {"veck": out_veck[b], "lam": lam[b], "mu": mu[b], "iteration": keep_iters, "acceptance": acceptance[b]}
        for b in range(B)
    ]


def run_chains(data, config=None):
    """Parallel Metropolis-within-Gibbs chains; chain k is seeded with ``config.seed + k``."""
    config = config or MvnChainConfig()
    if not isinstance(data, MvnData):
        data = MvnData.from_observations(data)
    seeds = [config.seed + k for k in range(config.chains)]
    res = run_chain_batch([data] * config.chains, seeds, config)
    return _pool(res, data.d)


def _pool(res, d):
    acc = np.array([r["acceptance"] for r in res])
    if d > 1 and (np.any(acc < 0.1) or np.any(acc > 0.6)):
        warnings.warn(f"veck acceptance rates {np.round(acc, 3).tolist()} outside [0.1, 0.6]", RuntimeWarning)
    chain = np.concatenate([np.full(len(r["iteration"]), k) for k, r in enumerate(res)])
    return MvnSample(
        chain=chain,
        iteration=np.concatenate([r["iteration"] for r in res]),
        veck=np.concatenate([r["veck"] for r in res]),
        lam=np.concatenate([r["lam"] for r in res]),
        mu=np.concatenate([r["mu"] for r in res]),
        acceptance=acc,
    )
