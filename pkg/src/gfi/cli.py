"""Command-line entry point: single-dataset inference and study runs."""

import argparse
import sys
import warnings

import numpy as np

from . import harness, io
from . import regions as rg
from .binom_n import candidate_range, ds_masses, upper_interval, mass_to_pmf
from .binom_np import NpSamplerConfig, run_np_sampler
from .binom_p import BinPModel, gfd_sample_p
from .mvn import MvnChainConfig, MvnData, MvnSample, run_chains
from .numerics import DomainError, make_rng
from .ranef import ReModel, ReParams, ReSample, ReSamplerConfig, re_sample, simulate_ranef

__all__ = ["main", "build_parser"]


def _common():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, help="base random seed (default 0; a study's own seed when omitted)")
    g.add_argument("--out", help="write records here instead of standard output")
    g.add_argument("--format", choices=("csv", "json"), default="csv")
    g.add_argument("--chains", type=int, help="number of chains")
    g.add_argument("--iters", type=int, help="iterations per chain, burn-in included")
    g.add_argument("--burn-in", type=int, dest="burn_in", help="burn-in iterations")
    g.add_argument("--level", type=float, default=0.95, help="nominal level for reported regions")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="gfi", description="Generalized fiducial inference samplers and studies.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mvn-sample", parents=[common], help="fiducial draws for a multivariate normal")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV, one d-dimensional observation per row")
    src.add_argument("--simulate", type=int, metavar="N", help="simulate N observations from the default truth")
    p.add_argument("--thin", type=int, default=1)

    p = sub.add_parser("ranef-sample", parents=[common], help="fiducial draws for one-way random effects")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV with columns y, group")
    src.add_argument("--pattern", type=int, choices=sorted(harness.RANEF_PATTERNS), help="simulate with this group pattern")
    p.add_argument("--sigma-a2", type=float, default=1.0, dest="sigma_a2")
    p.add_argument("--sigma-e2", type=float, default=1.0, dest="sigma_e2")

    p = sub.add_parser("binom-p", parents=[common], help="fiducial interval for a binomial p with n known")
    p.add_argument("--n", type=int, required=True, help="trials per observation")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV with one count column")
    src.add_argument("--simulate", type=float, nargs=2, metavar=("P", "M"), help="simulate M counts with success probability P")
    p.add_argument("--convention", choices=("geometric", "arithmetic"), default="geometric")
    p.add_argument("--draws", type=int, default=10000)

    p = sub.add_parser("binom-n", parents=[common], help="Dempster-Shafer masses for binomial n with p known")
    p.add_argument("--p", type=float, required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV with one count column")
    src.add_argument("--simulate", type=float, nargs=2, metavar=("N", "M"), help="simulate M counts from Bin(N, p)")
    p.add_argument("--eps1", type=float, default=1e-8)

    p = sub.add_parser("binom-np", parents=[common], help="set-valued fiducial draws for binomial (n, mu)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="CSV with one count column")
    src.add_argument("--simulate", type=float, nargs=3, metavar=("N", "P", "M"), help="simulate M counts from Bin(N, P)")
    p.add_argument("--eps2", type=float, default=1e-3)

    p = sub.add_parser("study", parents=[common], help="run a JSON study specification")
    p.add_argument("spec", help="study JSON file")
    p.add_argument("--replicates", type=int, help="override the spec's replicate count")
    p.add_argument("--summary", help="write the coverage summary here (default: standard output)")
    return parser


def _emit(args, header, rows):
    text = io.format_rows(header, rows, args.format)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _info(msg):
    print(msg, file=sys.stderr)


def _data_rng(args):
    return make_rng(args.seed or 0)


def _sampler_seed(args):
    return harness.sampler_seed(args.seed or 0)


def _cmd_mvn(args):
    if args.data:
        Y = io.read_matrix(args.data)
    else:
        Y = _data_rng(args).multivariate_normal(harness.MVN_MU, harness.MVN_SIGMA, args.simulate)
    cfg = MvnChainConfig(
        chains=args.chains or 4, iterations=args.iters or 6000,
        burn_in=1000 if args.burn_in is None else args.burn_in, thin=args.thin, seed=_sampler_seed(args),
    )
    data = MvnData.from_observations(Y)
    sample = run_chains(data, cfg)
    _emit(args, MvnSample.record_header(data.d), sample.records().tolist())
    ball = rg.ball_region(sample.mu, "euclidean", args.level)
    lo, hi = rg.central_interval(rg.logdet(sample.cov), args.level)
    _info(f"acceptance {np.round(sample.acceptance, 3).tolist()}")
    _info(f"mu ball radius {ball.radius:.6g}; logdet interval ({lo:.6g}, {hi:.6g})")


def _cmd_ranef(args):
    if args.data:
        y, sizes = io.read_grouped(args.data)
    else:
        sizes = harness.RANEF_PATTERNS[args.pattern]
        model = ReModel(sizes)
        y = simulate_ranef(model, ReParams([0.0], args.sigma_a2, args.sigma_e2), _data_rng(args))
    model = ReModel(sizes)
    cfg = ReSamplerConfig(
        chains=args.chains or 1, iterations=args.iters or 10000,
        burn_in=2000 if args.burn_in is None else args.burn_in, seed=_sampler_seed(args),
    )
    sample = re_sample(y, model, cfg)
    _emit(args, ReSample.record_header(model.q), sample.records().tolist())
    for name in ("sigma_a2", "sigma_e2"):
        lo, hi = rg.central_interval(getattr(sample, name), args.level)
        _info(f"{name} interval ({lo:.6g}, {hi:.6g})")


def _counts(args, simulate):
    if args.data:
        return io.read_counts(args.data)
    return simulate(_data_rng(args))


def _cmd_binom_p(args):
    y = _counts(args, lambda rng: rng.binomial(args.n, args.simulate[0], int(args.simulate[1])))
    model = BinPModel.from_counts(y, args.n)
    draws = gfd_sample_p(model, args.convention, args.draws, make_rng(_sampler_seed(args)))
    lo, hi = rg.central_interval(draws, args.level)
    print(f"{float(lo)!r},{float(hi)!r}")
    if args.out:
        io.write_rows(args.out, ["p"], [[v] for v in draws], args.format)


def _cmd_binom_n(args):
    y = _counts(args, lambda rng: rng.binomial(int(args.simulate[0]), args.p, int(args.simulate[1])))
    support = candidate_range(y, args.p, args.eps1)
    masses = ds_masses(support, y, args.p)
    _emit(args, ["lo", "hi", "mass"], masses.records().tolist())
    iv = upper_interval(args.level, pmf=mass_to_pmf(masses, support), support=support.values())
    _info(f"candidate n {support.lo}..{support.hi}; upper interval {iv.lo}..{iv.hi}; empty mass {masses.empty_mass:.3g}")


def _cmd_binom_np(args):
    y = _counts(args, lambda rng: rng.binomial(int(args.simulate[0]), args.simulate[1], int(args.simulate[2])))
    base = _sampler_seed(args)
    runs = []
    for k in range(args.chains or 1):
        cfg = NpSamplerConfig(
            eps2=args.eps2, iterations=args.iters or 5000,
            burn_in=1000 if args.burn_in is None else args.burn_in, seed=base + k,
        )
        runs.append(run_np_sampler(y, cfg, make_rng(base + k)))
    rows = []
    for k, run in enumerate(runs):
        rows.extend([k, *r] for r in run.records().tolist())
    _emit(args, ["chain", "iter", "n", "mu_lo", "mu_hi", "unbounded_tail"], rows)
    sets = [s for run in runs for s in run.sets]
    boxes = rg.belief_plaus_boxes(sets, args.level, make_rng(base + 10_000))
    for name, b in (("belief", boxes.belief), ("plausibility", boxes.plausibility)):
        _info(f"{name} box n [{b.n_lo:.6g}, {b.n_hi:.6g}] mu [{b.mu_lo:.6g}, {b.mu_hi:.6g}]")
    _info(f"acceptance mu {np.mean([r.accept_mu for r in runs]):.3f} n {np.mean([r.accept_n for r in runs]):.3f}")


def _cmd_study(args):
    d = io.read_spec(args.spec)
    if not isinstance(d, dict):
        raise DomainError("study spec must be a JSON object")
    d = dict(d)
    if args.seed is not None:
        d["seed"] = args.seed
    if args.replicates is not None:
        d["replicates"] = args.replicates
    for key, val in (("chains", args.chains), ("iterations", args.iters), ("burn_in", args.burn_in)):
        if val is not None:
            d[key] = val
    spec = harness.StudySpec.from_dict(d)
    result = harness.run_study(spec)
    out = args.out or spec.records_out
    if out:
        io.write_rows(out, harness.RECORD_FIELDS, result.record_rows(), args.format)
    summary = io.format_rows(harness.SUMMARY_FIELDS, harness.summarize(result.records), args.format)
    target = args.summary or spec.summary_out
    if target:
        with open(target, "w", newline="") as fh:
            fh.write(summary)
    else:
        sys.stdout.write(summary)
    if result.extras and spec.extras_out:
        io.write_rows(spec.extras_out, harness.EXTRA_FIELDS[spec.family], result.extras, args.format)


COMMANDS = {
    "mvn-sample": _cmd_mvn,
    "ranef-sample": _cmd_ranef,
    "binom-p": _cmd_binom_p,
    "binom-n": _cmd_binom_n,
    "binom-np": _cmd_binom_np,
    "study": _cmd_study,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    if not 0.0 < args.level < 1.0:
        print("error: --level must lie in (0, 1)", file=sys.stderr)
        return 2
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            COMMANDS[args.command](args)
    except (DomainError, ValueError, RuntimeError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
