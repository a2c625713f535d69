"""Coverage studies: simulate, run the fiducial samplers, build regions, record containment.

A study is a pure function of its spec.  Replicate r draws its data from
the stream seeded ``seed + r`` and its chains from seeds in a separate
range, so records do not depend on how replicates are split over workers.
"""

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import regions as rg
from .binom_n import bayes_posterior_n, candidate_range, ds_masses, mass_to_pmf, sample_n, upper_interval
from .binom_np import NpSamplerConfig, run_np_sampler
from .binom_p import BinPModel, gfd_sample_p
from .mvn import MvnChainConfig, MvnData, cayley, run_chain_batch
from .numerics import DomainError, make_rng
from .ranef import ReModel, ReParams, ReSamplerConfig, re_sample_batch, simulate_ranef

__all__ = [
    "StudySpec",
    "CoverageRecord",
    "StudyResult",
    "run_study",
    "run_mvn_study",
    "run_ranef_study",
    "run_binom_p_study",
    "run_binom_n_study",
    "run_binom_np_study",
    "summarize",
    "worker_count",
    "sampler_seed",
    "eta_split",
    "FAMILIES",
    "MVN_MU",
    "MVN_SIGMA",
    "RANEF_PATTERNS",
    "RANEF_PAIRS",
]

FAMILIES = ("mvn", "ranef", "binom_p", "binom_n", "binom_np")

MVN_MU = [1.0, 2.0, 3.0, 1.0]
MVN_SIGMA = [[4.0, 1.0, 0.0, 0.0], [1.0, 1.0, 0.0, 1.0], [0.0, 0.0, 9.0, 1.0], [0.0, 1.0, 1.0, 4.0]]

RANEF_PATTERNS = {
    1: (1, 1, 1, 1, 1, 100),
    2: (2, 2, 2, 2, 2, 100),
    3: (2, 5, 60),
    4: (4, 4, 4, 8, 48),
    5: (5, 10, 15, 20, 25, 30),
    6: (2, 2, 4, 6),
    7: (6, 6, 8, 8, 10, 10),
}
RANEF_PAIRS = [(0.1, 10.0), (0.5, 10.0), (1.0, 10.0), (0.5, 2.0), (1.0, 1.0), (2.0, 0.5), (5.0, 0.2), (10.0, 0.1)]

DEFAULT_LEVELS = {
    "mvn": [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99],
    "ranef": [0.8, 0.9, 0.95, 0.99],
    "binom_p": [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99],
    "binom_n": [0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99],
    "binom_np": [0.95],
}
DEFAULT_REPLICATES = {"mvn": 200, "ranef": 100, "binom_p": 300, "binom_n": 300, "binom_np": 50}

# chain seeds live far above any replicate data seed
_CHAIN_OFFSET = 1_000_000_007


def _chain_seed(seed, rep, k=0, per=64):
    return _CHAIN_OFFSET + (int(seed) + int(rep)) * per + k


def sampler_seed(seed):
    """Sampler seed paired with a data seed, disjoint from the data streams."""
    return _chain_seed(seed, 0)


def _default_truth(family):
    if family == "mvn":
        return {"mu": MVN_MU, "sigma": MVN_SIGMA}
    if family == "ranef":
        return {"patterns": list(RANEF_PATTERNS), "pairs": [list(p) for p in RANEF_PAIRS], "beta": 0.0}
    if family == "binom_p":
        return {"n": 10, "p": [0.1, 0.5, 0.9]}
    if family == "binom_n":
        return {"n": 10, "p": [0.05, 0.4, 0.5, 0.6, 0.9, 0.99]}
    return {"n": [15, 75], "p": [0.1, 0.5, 0.9]}


def _default_size(family):
    return {"mvn": 100, "ranef": 0, "binom_p": 20, "binom_n": 100, "binom_np": 100}[family]


@dataclass
class StudySpec:
    family: str
    truth: dict = field(default_factory=dict)
    data_size: int | list | None = None
    replicates: int | None = None
    levels: list | None = None
    seed: int = 0
    chains: int | None = None
    iterations: int | None = None
    burn_in: int | None = None
    thin: int | None = None
    draws: int = 1000
    options: dict = field(default_factory=dict)
    records_out: str | None = None
    summary_out: str | None = None
    extras_out: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if not self.truth:
            self.truth = _default_truth(self.family)
        if self.data_size is None:
            self.data_size = _default_size(self.family)
        if self.replicates is None:
            self.replicates = DEFAULT_REPLICATES[self.family]
        if self.levels is None:
            self.levels = list(DEFAULT_LEVELS[self.family])
        if self.replicates < 1:
            raise DomainError("replicates must be >= 1")
        if not self.levels or any(not 0.0 < lv < 1.0 for lv in self.levels):
            raise DomainError("levels must lie in (0, 1)")
        self.levels = sorted(float(lv) for lv in self.levels)

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise DomainError(f"unknown study fields: {sorted(extra)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class CoverageRecord:
    family: str
    cell: str
    metric: str
    level: float
    replicate: int
    contained: bool
    summary: float


RECORD_FIELDS = ["family", "cell", "metric", "level", "replicate", "contained", "summary"]


@dataclass
class StudyResult:
    spec: StudySpec
    records: list
    extras: list = field(default_factory=list)

    def record_rows(self):
        return [[r.family, r.cell, r.metric, r.level, r.replicate, int(r.contained), r.summary] for r in self.records]

    def coverage(self, cell=None, metric=None, level=None):
        sel = [
            r.contained for r in self.records
            if (cell is None or r.cell == cell) and (metric is None or r.metric == metric)
            and (level is None or abs(r.level - level) < 1e-12)
        ]
        if not sel:
            raise DomainError("no records match")
        return float(np.mean(sel))

    def summaries(self, cell, metric, level):
        return np.array([
            r.summary for r in self.records
            if r.cell == cell and r.metric == metric and abs(r.level - level) < 1e-12
        ])


def summarize(records):
    """Rows (family, cell, metric, level, replicates, coverage, median summary)."""
    groups = {}
    for r in records:
        groups.setdefault((r.family, r.cell, r.metric, r.level), []).append(r)
    rows = []
    for key in sorted(groups, key=lambda k: (k[0], k[1], k[2], k[3])):
        rs = groups[key]
        cov = float(np.mean([r.contained for r in rs]))
        med = float(np.median([r.summary for r in rs]))
        rows.append([*key, len(rs), cov, med])
    return rows


EXTRA_FIELDS = {"binom_n": ["cell", "replicate", "mad_fiducial", "mad_bayes"]}

SUMMARY_FIELDS = ["family", "cell", "metric", "level", "replicates", "coverage", "median_summary"]


def worker_count():
    env = os.environ.get("GFI_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cap))
        except ValueError:
            raise DomainError("GFI_THREADS must be an integer") from None
    return cap


def _map_chunks(fn, spec, items):
    """Apply fn(spec, chunk) over contiguous chunks; results concatenated in item order."""
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return fn(spec, items)
    bounds = np.linspace(0, len(items), workers + 1).round().astype(int)
    chunks = [items[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    out = []
    with ProcessPoolExecutor(max_workers=workers) as ex:
        for part in ex.map(fn, [spec] * len(chunks), chunks):
            out.extend(part)
    return out


def _sorted(records):
    return sorted(records, key=lambda r: (r.cell, r.replicate, r.metric, r.level))


# ---------------------------------------------------------------------------
# multivariate normal


def _mvn_config(spec):
    return MvnChainConfig(
        chains=spec.chains or 4,
        iterations=spec.iterations or 6000,
        burn_in=spec.burn_in if spec.burn_in is not None else 1000,
        thin=spec.thin or 5,
        seed=spec.seed,
    )


def _mvn_chunk(spec, reps):
    mu0 = np.asarray(spec.truth["mu"], dtype=float)
    S0 = np.asarray(spec.truth["sigma"], dtype=float)
    n = int(spec.data_size)
    cfg = _mvn_config(spec)
    C = cfg.chains
    datasets = []
    for r in reps:
        rng = make_rng(spec.seed + r)
        datasets.append(MvnData.from_observations(rng.multivariate_normal(mu0, S0, n)))
    seeds = [_chain_seed(spec.seed, r, k) for r in reps for k in range(C)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = run_chain_batch([ds for ds in datasets for _ in range(C)], seeds, cfg)
    d = mu0.size
    cell = f"n={n}"
    records = []
    for j, r in enumerate(reps):
        part = res[j * C:(j + 1) * C]
        veck = np.concatenate([x["veck"] for x in part])
        lam = np.concatenate([x["lam"] for x in part])
        mu = np.concatenate([x["mu"] for x in part])
        Z = cayley(veck, d)
        cov = (Z * lam[:, None, :] ** 2) @ np.swapaxes(Z, 1, 2)
        for lv in spec.levels:
            for m in ("fm", "stein", "spectral", "frobenius"):
                ball = rg.ball_region(cov, m, lv)
                records.append(CoverageRecord("mvn", cell, m, lv, r, bool(ball.contains(S0)), ball.radius))
            for f in ("logdet", "spectral_norm", "frobenius_norm"):
                vals = rg.FUNCTIONALS[f](cov)
                lo, hi = rg.central_interval(vals, lv)
                v = float(rg.FUNCTIONALS[f](S0))
                records.append(CoverageRecord("mvn", cell, f, lv, r, bool(lo <= v <= hi), hi - lo))
            ball = rg.ball_region(mu, "euclidean", lv)
            records.append(CoverageRecord("mvn", cell, "mu_euclidean", lv, r, bool(ball.contains(mu0)), ball.radius))
    return records


def run_mvn_study(spec):
    """Coverage of the seven covariance regions and the mean ball across the level grid."""
    records = _map_chunks(_mvn_chunk, spec, list(range(spec.replicates)))
    return StudyResult(spec, _sorted(records))


# ---------------------------------------------------------------------------
# one-way random effects


def _ranef_config(spec):
    return ReSamplerConfig(
        iterations=spec.iterations or 10000,
        burn_in=spec.burn_in if spec.burn_in is not None else 2000,
        thin=spec.thin or 1,
        seed=spec.seed,
    )


def _ranef_cells(spec):
    cells = []
    for pat in spec.truth.get("patterns", list(RANEF_PATTERNS)):
        sizes = RANEF_PATTERNS[int(pat)] if isinstance(pat, int) else tuple(pat)
        for sa, se in spec.truth.get("pairs", RANEF_PAIRS):
            cells.append((pat, sizes, float(sa), float(se)))
    return cells


def _cell_label(pat, sa, se):
    return f"pattern={pat},sa2={sa:g},se2={se:g}"


def _ranef_chunk(spec, items):
    cfg = _ranef_config(spec)
    beta0 = float(spec.truth.get("beta", 0.0))
    records = []
    for ci, (pat, sizes, sa, se) in items:
        model = ReModel(sizes)
        params = ReParams([beta0], sa, se)
        base = spec.seed + ci * 100_000
        ys = np.array([simulate_ranef(model, params, make_rng(base + r)) for r in range(spec.replicates)])
        seeds = [_chain_seed(base, r) for r in range(spec.replicates)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = re_sample_batch(ys, model, seeds, cfg)
        cell = _cell_label(pat, sa, se)
        for r, out in enumerate(res):
            for lv in spec.levels:
                for name, truth in (("sigma_a2", sa), ("sigma_e2", se)):
                    lo, hi = rg.central_interval(out[name], lv)
                    records.append(CoverageRecord("ranef", cell, name, lv, r, bool(lo <= truth <= hi), hi - lo))
    return records


def run_ranef_study(spec):
    """Central-interval coverage and lengths for sigma_a2 and sigma_e2 over (pattern, pair) cells."""
    cells = list(enumerate(_ranef_cells(spec)))
    records = _map_chunks(_ranef_chunk, spec, cells)
    return StudyResult(spec, _sorted(records))


def eta_split(result, metric, level=0.95):
    """Mean coverage over cells with sigma_a2/sigma_e2 < 1 and >= 1."""
    low, high = [], []
    for r in result.records:
        if r.metric != metric or abs(r.level - level) > 1e-12:
            continue
        parts = dict(kv.split("=") for kv in r.cell.split(","))
        eta = float(parts["sa2"]) / float(parts["se2"])
        (low if eta < 1 else high).append(r.contained)
    return float(np.mean(low)) if low else math.nan, float(np.mean(high)) if high else math.nan


# ---------------------------------------------------------------------------
# binomial p


def _binom_p_chunk(spec, reps):
    n = int(spec.truth.get("n", 10))
    m = int(spec.data_size)
    records = []
    for p in spec.truth["p"]:
        cell = f"n={n},p={p:g},m={m}"
        for r in reps:
            rng = make_rng(spec.seed + r)
            y = rng.binomial(n, p, m)
            model = BinPModel.from_counts(y, n)
            srng = make_rng(_chain_seed(spec.seed, r))
            for conv in ("geometric", "arithmetic"):
                draws = gfd_sample_p(model, conv, spec.draws, srng)
                for lv in spec.levels:
                    lo, hi = rg.central_interval(draws, lv)
                    records.append(CoverageRecord("binom_p", cell, conv, lv, r, bool(lo <= p <= hi), hi - lo))
    return records


def run_binom_p_study(spec):
    records = _map_chunks(_binom_p_chunk, spec, list(range(spec.replicates)))
    return StudyResult(spec, _sorted(records))


# ---------------------------------------------------------------------------
# binomial n, p known


def _mad(draws, n0):
    return float(np.mean(np.abs(np.asarray(draws, dtype=float) - n0)))


def _binom_n_chunk(spec, reps):
    n0 = int(spec.truth.get("n", 10))
    eps1 = float(spec.options.get("eps1", 1e-8))
    sizes = spec.data_size if isinstance(spec.data_size, list) else [spec.data_size]
    records = []
    extras = []
    for p in spec.truth["p"]:
        for m in sizes:
            cell = f"n={n0},p={p:g},m={m}"
            for r in reps:
                rng = make_rng(spec.seed + r)
                y = rng.binomial(n0, p, int(m))
                if y.max() == 0:
                    y = y.copy()
                support = candidate_range(y, p, eps1)
                masses = ds_masses(support, y, p)
                srng = make_rng(_chain_seed(spec.seed, r))
                fid = sample_n(masses, spec.draws, srng)
                pmf_b = bayes_posterior_n(y, p, support)
                bay = support.lo + np.searchsorted(np.cumsum(pmf_b), srng.random(spec.draws) * pmf_b.sum(), side="right")
                bay = np.minimum(bay, support.hi)
                pmf_f = mass_to_pmf(masses, support)
                ns = support.values()
                for lv in spec.levels:
                    for name, pmf in (("fiducial", pmf_f), ("bayes", pmf_b)):
                        iv = upper_interval(lv, pmf=pmf, support=ns)
                        records.append(CoverageRecord("binom_n", cell, name, lv, r, n0 in iv, float(iv.hi)))
                extras.append([cell, r, _mad(fid, n0), _mad(bay, n0)])
    return [("rec", x) for x in records] + [("mad", x) for x in extras]


def run_binom_n_study(spec):
    """Upper-interval coverage for the fiducial and flat-prior Bayesian pmfs; MAD pairs as extras."""
    out = _map_chunks(_binom_n_chunk, spec, list(range(spec.replicates)))
    records = [x for tag, x in out if tag == "rec"]
    mads = sorted((x for tag, x in out if tag == "mad"), key=lambda row: (row[0], row[1]))
    return StudyResult(spec, _sorted(records), extras=mads)


# ---------------------------------------------------------------------------
# binomial n and mu = n p


def _np_config(spec, seed):
    opts = spec.options
    return NpSamplerConfig(
        eps2=float(opts.get("eps2", 1e-3)),
        iterations=spec.iterations or 500,
        burn_in=spec.burn_in if spec.burn_in is not None else 100,
        seed=seed,
    )


def _np_cells(spec):
    ns = spec.truth["n"] if isinstance(spec.truth["n"], list) else [spec.truth["n"]]
    return [(int(n), float(p)) for n in ns for p in spec.truth["p"]]


def _np_chunk(spec, items):
    m = int(spec.data_size)
    records = []
    for ci, r in items:
        n0, p0 = _np_cells(spec)[ci]
        mu0 = n0 * p0
        cell = f"n={n0},p={p0:g},m={m}"
        base = spec.seed + ci * 100_000
        y = make_rng(base + r).binomial(n0, p0, m)
        if y.max() == 0:
            y[0] = 1
        seed = _chain_seed(base, r)
        run = run_np_sampler(y, _np_config(spec, seed), make_rng(seed))
        brng = make_rng(seed + 1)
        tail = float(np.mean([s.unbounded_tail for s in run.sets]))
        n_rep, mu_rep = rg.representatives(run.sets, brng)
        # unbounded sets contribute their last computed n (right-censored)
        for lv in spec.levels:
            boxes = rg.belief_plaus_boxes(run.sets, lv, brng)
            b, pl = boxes.belief, boxes.plausibility
            records.append(CoverageRecord("binom_np", cell, "plausibility", lv, r, bool(pl.contains(n0, mu0)),
                                          pl.widths[1]))
            records.append(CoverageRecord("binom_np", cell, "belief", lv, r, bool(b.contains(n0, mu0)),
                                          b.widths[1]))
            lo, hi = _quantile_interval(mu_rep, lv)
            records.append(CoverageRecord("binom_np", cell, "mu_marginal", lv, r, bool(lo <= mu0 <= hi), hi - lo))
            lo, hi = _quantile_interval(n_rep, lv)
            records.append(CoverageRecord("binom_np", cell, "n_marginal", lv, r, bool(lo <= n0 <= hi), hi - lo))
        records.append(CoverageRecord("binom_np", cell, "tail_fraction", 0.0, r, tail > 0, tail))
    return records


def _quantile_interval(x, level):
    """Central order-statistic interval of the draws."""
    x = np.sort(np.asarray(x, dtype=float))
    a = (1.0 - level) / 2.0
    k_lo = int(math.floor(a * (x.size - 1)))
    k_hi = int(math.ceil((1.0 - a) * (x.size - 1)))
    return float(x[k_lo]), float(x[k_hi])


def run_binom_np_study(spec):
    """Belief/plausibility box containment and marginal coverage over the (n, p) cells."""
    items = [(ci, r) for ci in range(len(_np_cells(spec))) for r in range(spec.replicates)]
    records = _map_chunks(_np_chunk, spec, items)
    return StudyResult(spec, _sorted(records))


RUNNERS = {
    "mvn": run_mvn_study,
    "ranef": run_ranef_study,
    "binom_p": run_binom_p_study,
    "binom_n": run_binom_n_study,
    "binom_np": run_binom_np_study,
}


def run_study(spec):
    if isinstance(spec, dict):
        spec = StudySpec.from_dict(spec)
    return RUNNERS[spec.family](spec)
