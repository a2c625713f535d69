"""Fiducial distribution for the one-way random-effects model.

Y = X beta + Sigma^{1/2} U with Sigma = sigma_a2 * S_a + sigma_e2 * I and
S_a block diagonal with all-ones blocks.  The fiducial density is the normal
likelihood times D of the Jacobian [X | dY/dsigma_e2 | dY/dsigma_a2], with
dY/dsigma_e2 = Sigma^{-1} r / 2 and dY/dsigma_a2 = S_a Sigma^{-1} r / 2 where
r = y - X beta.

Everything is written for stacks of B independent problems sharing one
design, so a whole simulation cell can run as one vectorized sampler.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import sqrtm

from .numerics import DomainError, chain_rng, log_pseudo_det, re_cov_logdet_solve

__all__ = [
    "ReModel",
    "ReParams",
    "ReSamplerConfig",
    "ReSample",
    "re_jacobian_matrix",
    "re_jacobian",
    "re_log_density",
    "re_log_density_batch",
    "re_sample",
    "re_sample_batch",
    "simulate_ranef",
    "dense_log_density",
    "dga_forward",
]

LOG_SA2_FLOOR = -30.0


class ReModel:
    """Group sizes, fixed-effect design (intercept by default) and whether the group effect is present.

    With ``random_effect=False`` sigma_a2 is pinned at zero and the model is
    ordinary regression with normal errors.
    """

    def __init__(self, group_sizes, design=None, random_effect=True):
        self.random_effect = bool(random_effect)
        sizes = np.asarray(group_sizes, dtype=int)
        if sizes.ndim != 1 or sizes.size == 0 or np.any(sizes < 1):
            raise DomainError("group sizes must be positive integers")
        self.sizes = sizes
        self.N = int(sizes.sum())
        self.G = sizes.size
        X = np.ones((self.N, 1)) if design is None else np.asarray(design, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != self.N:
            raise DomainError("design has the wrong number of rows")
        if np.linalg.matrix_rank(X) < X.shape[1]:
            raise DomainError("design must have full column rank")
        self.X = X
        self.q = X.shape[1]
        self.starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
        self.Xsum = np.add.reduceat(X, self.starts, axis=0)
        self.XtX = X.T @ X
        self.groups = np.repeat(np.arange(self.G), sizes)

    def s_alpha(self):
        S = np.zeros((self.N, self.N))
        for a, k in zip(self.starts, self.sizes):
            S[a:a + k, a:a + k] = 1.0
        return S


@dataclass
class ReParams:
    beta: np.ndarray
    sigma_a2: float
    sigma_e2: float

    def __post_init__(self):
        self.beta = np.atleast_1d(np.asarray(self.beta, dtype=float))


def _valid(params):
    return params.sigma_e2 > 0 and params.sigma_a2 >= 0


def re_jacobian_matrix(y, model, params):
    """The N x (q+2) matrix [X | dY/dsigma_e2 | dY/dsigma_a2]."""
    if not _valid(params):
        raise DomainError("need sigma_e2 > 0 and sigma_a2 >= 0")
    r = np.asarray(y, dtype=float) - model.X @ params.beta
    _, v = re_cov_logdet_solve(params.sigma_a2, params.sigma_e2, model.sizes, r)
    if not model.random_effect:
        return np.column_stack([model.X, 0.5 * v])
    sv = np.repeat(np.add.reduceat(v, model.starts), model.sizes)
    return np.column_stack([model.X, 0.5 * v, 0.5 * sv])


def re_jacobian(y, model, params):
    """D of the Jacobian matrix (QR route); 0 when rank deficient."""
    return float(np.exp(log_pseudo_det(re_jacobian_matrix(y, model, params))))


def re_log_density_batch(y, model, beta, sigma_a2, sigma_e2):
    """Unnormalized log fiducial density for stacks: y (B, N), beta (B, q), variances (B,).

    Uses closed forms per group: with s_g the group sums of r and
    t_g = s_g / (sigma_e2 + n_g sigma_a2), the Jacobian Gram matrix has
    blocks X^T X, X^T v / 2, Xsum^T t / 2, |v|^2 / 4, sum t^2 / 4 and
    sum n_g t^2 / 4, where v = Sigma^{-1} r.
    """
    y = np.atleast_2d(np.asarray(y, dtype=float))
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    sa2 = np.atleast_1d(np.asarray(sigma_a2, dtype=float))
    se2 = np.atleast_1d(np.asarray(sigma_e2, dtype=float))
    if not model.random_effect:
        sa2 = np.zeros_like(sa2)
    bad = (se2 <= 0) | (sa2 < 0)
    se2 = np.where(bad, 1.0, se2)
    sa2 = np.where(bad, 0.0, sa2)
    B = y.shape[0]
    q = model.q
    sizes = model.sizes
    r = y - beta @ model.X.T
    s = np.add.reduceat(r, model.starts, axis=1)
    big = se2[:, None] + sizes * sa2[:, None]
    shrink = sa2[:, None] / big
    logdet = (model.N - model.G) * np.log(se2) + np.sum(np.log(big), axis=1)
    quad = (np.sum(r * r, axis=1) - np.sum(shrink * s * s, axis=1)) / se2
    v = (r - np.repeat(shrink * s, sizes, axis=1)) / se2[:, None]
    t = s / big
    G = np.empty((B, q + 2, q + 2))
    G[:, :q, :q] = model.XtX
    G[:, :q, q] = 0.5 * (v @ model.X)
    G[:, :q, q + 1] = 0.5 * (t @ model.Xsum)
    G[:, q, q] = 0.25 * np.sum(v * v, axis=1)
    G[:, q, q + 1] = 0.25 * np.sum(t * t, axis=1)
    G[:, q + 1, q + 1] = 0.25 * np.sum(sizes * t * t, axis=1)
    iu = np.triu_indices(q + 2, 1)
    G[:, iu[1], iu[0]] = G[:, iu[0], iu[1]]
    if not model.random_effect:
        G = G[:, : q + 1, : q + 1]
    sign, gl = np.linalg.slogdet(G)
    log_j = np.where(sign > 0, 0.5 * gl, -np.inf)
    out = -0.5 * logdet - 0.5 * quad + log_j
    return np.where(bad, -np.inf, out)


def re_log_density(y, model, params):
    """log f(y | theta) + log D(J), up to an additive constant."""
    if not _valid(params):
        return -np.inf
    y = np.asarray(y, dtype=float)
    val = re_log_density_batch(y[None], model, params.beta[None], params.sigma_a2, params.sigma_e2)[0]
    return float(val) - 0.5 * model.N * math.log(2 * math.pi)


def dense_log_density(y, model, params):
    """Reference implementation with dense matrices (for testing)."""
    if not _valid(params):
        return -np.inf
    Sigma = params.sigma_a2 * model.s_alpha() + params.sigma_e2 * np.eye(model.N)
    r = np.asarray(y, dtype=float) - model.X @ params.beta
    _, ld = np.linalg.slogdet(Sigma)
    Si = np.linalg.inv(Sigma)
    v = Si @ r
    cols = [model.X, 0.5 * v] + ([0.5 * model.s_alpha() @ v] if model.random_effect else [])
    J = np.column_stack(cols)
    return -0.5 * ld - 0.5 * r @ v - 0.5 * model.N * math.log(2 * math.pi) + log_pseudo_det(J)


def dga_forward(model, params, u):
    """X beta + Sigma^{1/2} u with a dense symmetric square root (testing aid)."""
    Sigma = params.sigma_a2 * model.s_alpha() + params.sigma_e2 * np.eye(model.N)
    return model.X @ params.beta + np.real(sqrtm(Sigma)) @ u


@dataclass
class ReSamplerConfig:
    chains: int = 1
    iterations: int = 5000
    burn_in: int = 1000
    seed: int = 0
    thin: int = 1
    target_accept: float = 0.4

    def __post_init__(self):
        if self.chains < 1:
            raise DomainError("chains must be >= 1")
        if not 0 <= self.burn_in < self.iterations:
            raise DomainError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise DomainError("thin must be >= 1")


@dataclass
class ReSample:
    chain: np.ndarray
    iteration: np.ndarray
    beta: np.ndarray
    sigma_a2: np.ndarray
    sigma_e2: np.ndarray
    acceptance: np.ndarray

    def __len__(self):
        return self.chain.shape[0]

    def records(self):
        return np.column_stack([self.chain, self.iteration, self.beta, self.sigma_a2, self.sigma_e2])

    @staticmethod
    def record_header(q):
        return ["chain", "iter"] + [f"beta_{j}" for j in range(q)] + ["sigma_a2", "sigma_e2"]


def _start(y, model):
    """Least squares beta and ANOVA-style variance components."""
    beta, *_ = np.linalg.lstsq(model.X, y, rcond=None)
    r = y - model.X @ beta
    means = np.add.reduceat(r, model.starts) / model.sizes
    within = r - np.repeat(means, model.sizes)
    dfw = model.N - model.G
    mse = float(within @ within / dfw) if dfw > 0 else float(np.var(r)) + 1e-8
    mse = max(mse, 1e-8)
    if model.G > 1:
        msb = float(np.sum(model.sizes * (means - np.average(means, weights=model.sizes)) ** 2) / (model.G - 1))
        n0 = (model.N - np.sum(model.sizes**2) / model.N) / (model.G - 1)
        sa2 = (msb - mse) / n0
    else:
        sa2 = 0.0
    sa2 = max(sa2, 0.05 * mse)
    return beta, sa2, mse


def re_sample_batch(ys, model, seeds, config):
    """One chain per (dataset, seed); random-walk Metropolis, one coordinate at a time.

    Coordinates are (beta, log sigma_a2, log sigma_e2); the target includes
    the change-of-variables term log sigma_a2 + log sigma_e2.  Proposal
    scales adapt toward ``config.target_accept`` during burn-in only.
    """
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    B = ys.shape[0]
    if model.N <= model.q + 2:
        raise DomainError("need more observations than q + 2")
    q = model.q
    re = model.random_effect
    P = q + 2 if re else q + 1
    it, burn, thin = config.iterations, config.burn_in, config.thin
    keep_iters = np.arange(burn, it)[::thin]
    n_keep = keep_iters.shape[0]

    steps = np.empty((B, it, P))
    logu = np.empty((B, it, P))
    theta = np.empty((B, P))
    scale = np.empty((B, P))
    for b, seed in enumerate(seeds):
        rng = chain_rng(seed, 0)
        steps[b] = rng.standard_normal((it, P))
        logu[b] = np.log(rng.random((it, P)))
        beta0, sa0, se0 = _start(ys[b], model)
        if not re:
            sa0 = 0.0
        se_beta = np.sqrt(np.diag(np.linalg.inv(model.XtX)) * (se0 + sa0 * model.sizes.max()))
        if re:
            theta[b] = np.concatenate([beta0, [math.log(sa0), math.log(se0)]])
            scale[b] = np.concatenate([se_beta, [1.0, 0.3]])
        else:
            theta[b] = np.concatenate([beta0, [math.log(se0)]])
            scale[b] = np.concatenate([se_beta, [0.3]])

    def logpost(th):
        le = th[:, P - 1]
        if not re:
            return re_log_density_batch(ys, model, th[:, :q], np.zeros(B), np.exp(le)) + le
        la = th[:, q]
        val = re_log_density_batch(ys, model, th[:, :q], np.exp(la), np.exp(le)) + la + le
        return np.where(la < LOG_SA2_FLOOR, -np.inf, val)

    cur = logpost(theta)
    out = np.empty((B, n_keep, P))
    acc_win = np.zeros((B, P))
    acc_tot = np.zeros((B, P))
    window = 50
    j = 0
    for t in range(it):
        for c in range(P):
            prop = theta.copy()
            prop[:, c] += scale[:, c] * steps[:, t, c]
            lp = logpost(prop)
            acc = logu[:, t, c] < lp - cur
            theta[acc, c] = prop[acc, c]
            cur = np.where(acc, lp, cur)
            if t < burn:
                acc_win[:, c] += acc
            else:
                acc_tot[:, c] += acc
        if t < burn and (t + 1) % window == 0:
            scale *= np.exp(1.5 * (acc_win / window - config.target_accept))
            acc_win[:] = 0.0
        if j < n_keep and t == keep_iters[j]:
            out[:, j] = theta
            j += 1
    acceptance = acc_tot / max(it - burn, 1)
    return [
        {
            "beta": out[b, :, :q],
            "sigma_a2": np.exp(out[b, :, q]) if re else np.zeros(n_keep),
            "sigma_e2": np.exp(out[b, :, P - 1]),
            "iteration": keep_iters,
            "acceptance": acceptance[b],
        }
        for b in range(B)
    ]


def re_sample(y, model, config=None):
    """Fiducial draws of (beta, sigma_a2, sigma_e2); chain k uses seed ``config.seed + k``."""
    config = config or ReSamplerConfig()
    y = np.asarray(y, dtype=float)
    if y.shape != (model.N,):
        raise DomainError("y must have one entry per observation")
    seeds = [config.seed + k for k in range(config.chains)]
    res = re_sample_batch(np.tile(y, (config.chains, 1)), model, seeds, config)
    return pool_samples(res)


def pool_samples(res):
    acc = np.array([r["acceptance"] for r in res])
    if np.any(acc < 0.1) or np.any(acc > 0.7):
        warnings.warn(f"coordinate acceptance rates {np.round(acc, 3).tolist()} outside [0.1, 0.7]", RuntimeWarning)
    return ReSample(
        chain=np.concatenate([np.full(len(r["iteration"]), k) for k, r in enumerate(res)]),
        iteration=np.concatenate([r["iteration"] for r in res]),
        beta=np.concatenate([r["beta"] for r in res]),
        sigma_a2=np.concatenate([r["sigma_a2"] for r in res]),
        sigma_e2=np.concatenate([r["sigma_e2"] for r in res]),
        acceptance=acc,
    )


def simulate_ranef(model, params, rng, size=None):
    """Draw y = X beta + alpha_group + e; ``size`` stacks independent datasets."""
    shape = () if size is None else (size,)
    alpha = rng.standard_normal(shape + (model.G,)) * math.sqrt(params.sigma_a2)
    e = rng.standard_normal(shape + (model.N,)) * math.sqrt(params.sigma_e2)
    return model.X @ params.beta + np.repeat(alpha, model.sizes, axis=-1) + e
