"""Command-line front-end: ``gecal calibrate | estimate | simulate | selftest``."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import io
from .adjusted import KKind, kernel_alpha, make_kspec, solve_adjusted
from .calibration import CalibrationProblem, Mode, solve_ds, solve_gec, solve_gec_scaled
from .design import SampleData
from .entropy import EntropyKind, parse_entropy
from .errors import GecalError, InputError
from .estimators import METHODS, Controls, estimate

EXIT_CODES = """\
exit codes:
  0  success
  1  selftest failure or unexpected internal error
  2  usage error (bad or missing flags)
  3  input error (unreadable file, malformed row, missing control total)
  4  invalid entropy parameters (e.g. renyi without r)
  5  solver failure (singular Hessian, nonconvergence, infeasible start,
     no bracket for alpha, empty kernel neighbourhood)
  6  domain error (a weight or design weight outside the entropy domain)
  7  simulation config schema violation (every bad key is listed)
"""

ALPHA_MODES = ("known", "gec1", "gec2", "kernel")
CAL_METHODS = ("gec", "ds", "ds-debias", "gec-scaled")


def _entropy_args(p):
    p.add_argument("--entropy", required=True, choices=[k.value for k in EntropyKind],
                   help="generalized entropy")
    p.add_argument("--entropy-param", action="append", default=[], metavar="KEY=VALUE",
                   help="entropy parameter, e.g. M=30 for ph or r=0.5 for renyi (repeatable)")


def _problem_args(p):
    p.add_argument("--sample", required=True, help="sample CSV: id, pi, [y], x1..xp, [c]")
    p.add_argument("--totals", required=True, help="totals CSV: control_name,value rows")
    _entropy_args(p)
    p.add_argument("--method", choices=CAL_METHODS, default="gec", help="calibration method (default gec)")
    p.add_argument("--alpha-mode", choices=ALPHA_MODES, default="known",
                   help="source of the debiasing total for --method gec (default known)")
    p.add_argument("--population", help="population CSV with x1..xp and optionally pi "
                                        "(kernel alpha; debias totals when absent from --totals)")
    p.add_argument("--bandwidth", type=float, help="kernel bandwidth (default: Silverman's rule)")
    p.add_argument("--model-assisted", action="store_true",
                   help="use unit costs c and the tgc total (gec with known alpha only)")
    p.add_argument("--no-intercept", action="store_true", help="do not calibrate to N")
    p.add_argument("--out", required=True, help="output CSV path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gecal", description="Debiased generalized entropy calibration for survey samples.",
        epilog=EXIT_CODES, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="compute calibration weights", epilog=EXIT_CODES,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _problem_args(p)

    p = sub.add_parser("estimate", help="estimate the mean or total of y with inference", epilog=EXIT_CODES,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    _problem_args(p)
    p.add_argument("--estimators", help=f"comma-separated subset of {','.join(METHODS)} "
                                        "(default: ht, hajek and the one implied by --method/--alpha-mode)")
    p.add_argument("--level", type=float, default=0.95, help="confidence level (default 0.95)")
    p.add_argument("--target", choices=("mean", "total"), default="mean")

    p = sub.add_parser("simulate", help="run a Monte Carlo study from a config file", epilog=EXIT_CODES,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config", required=True,
                   help="key = value file; keys: model, n_pop, reps, seed, entropies, methods, level, "
                        "alpha_known")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--workers", type=int, help="worker processes (default: GECAL_THREADS or CPU count)")

    sub.add_parser("selftest", help="run the property checks on the bundled fixtures", epilog=EXIT_CODES,
                   formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


# --------------------------------------------------------------------------
# shared setup
# --------------------------------------------------------------------------

class _Setup:
    """Sample, totals and entropy resolved from the flags."""

    def __init__(self, args, need_y=False):
        self.args = args
        self.entropy = parse_entropy(args.entropy, args.entropy_param)
        self.sample = io.read_sample(args.sample, need_y=need_y)
        self.totals = io.read_totals(args.totals)
        self.pop_x, self.pop_pi = (io.read_population(args.population) if args.population else (None, None))
        s = self.sample
        self.N = self.totals.N
        xt = self.totals.x_totals(s.x_names)
        if args.no_intercept:
            if s.x.shape[1] == 0:
                raise InputError("no covariates to calibrate on with --no-intercept")
            self.x, self.x_totals = s.x, xt
        else:
            self.x = np.column_stack([np.ones(s.n), s.x])
            self.x_totals = np.append(self.N, xt)
        if self.pop_x is not None and self.pop_x.shape[1] != s.x.shape[1]:
            raise InputError(f"population has {self.pop_x.shape[1]} covariates, sample has {s.x.shape[1]}")

    def debias_total(self, key="tg", scale=1.0):
        """Total of ``g(scale d)`` from the totals file or the population pi column."""
        name = self.entropy.name
        if key == "tg" and scale == 1.0:
            v = self.totals.debias("tg", name)
            if v is not None:
                return v
        if key == "tgc":
            v = self.totals.debias("tgc", name)
            if v is not None:
                return v
            raise InputError("--model-assisted needs a 'tgc' row in the totals file")
        if self.pop_pi is None:
            what = "a 'tg' row in --totals or " if scale == 1.0 else ""
            raise InputError(f"the debiasing total needs {what}a --population file with a pi column")
        return float(np.sum(self.entropy.g(scale / self.pop_pi)))

    def sample_data(self):
        s = self.sample
        return SampleData.from_arrays(s.x, s.y, s.pi, int(round(self.N)))

    def kernel_total(self):
        if self.pop_x is None:
            raise InputError("--alpha-mode kernel needs --population")
        return self.N * kernel_alpha(self.pop_x, self.sample_data(), self.entropy, self.args.bandwidth)


def _check_combo(parser, args):
    if args.method != "gec" and args.alpha_mode != "known":
        parser.error("--alpha-mode applies to --method gec only")
    if args.model_assisted and (args.method != "gec" or args.alpha_mode != "known"):
        parser.error("--model-assisted requires --method gec with --alpha-mode known")


def calibrate_weights(setup: _Setup):
    """Return the solver result for the flags in ``setup.args``."""
    a, ent, s = setup.args, setup.entropy, setup.sample
    d, x, xt = s.d, setup.x, setup.x_totals
    if a.method == "ds":
        return solve_ds(CalibrationProblem(x, d, xt, ent, Mode.DsBenchmarkOnly))
    if a.method == "ds-debias":
        return solve_ds(CalibrationProblem(x, d, xt, ent, Mode.DsWithDebias, debias_total=setup.debias_total()))
    if a.method == "gec-scaled":
        sc = s.n / setup.N
        prob = CalibrationProblem(x, d, xt, ent, Mode.GecScaled,
                                  debias_total=setup.debias_total("tgs", sc), n_over_N=sc)
        return solve_gec_scaled(prob, s.n, setup.N)
    if a.alpha_mode == "known":
        if a.model_assisted:
            if s.costs is None:
                raise InputError("--model-assisted needs a cost column c in the sample")
            return solve_gec(CalibrationProblem(x, d, xt, ent, Mode.ModelAssisted,
                                                debias_total=setup.debias_total("tgc"), costs=s.costs))
        return solve_gec(CalibrationProblem(x, d, xt, ent, Mode.GecKnown, debias_total=setup.debias_total()))
    if a.alpha_mode == "kernel":
        return solve_gec(CalibrationProblem(x, d, xt, ent, Mode.GecKnown, debias_total=setup.kernel_total()))
    kind = KKind.K1_Identity if a.alpha_mode == "gec1" else KKind.K2_QinShrink
    prob = CalibrationProblem(x, d, xt, ent, Mode.GecKnown, debias_total=0.0)
    return solve_adjusted(prob, make_kspec(kind, d, ent, setup.N), N=setup.N).result


def _implied_estimator(args, parser):
    if args.method == "gec-scaled" or args.model_assisted:
        parser.error("estimate supports --method gec, ds and ds-debias without --model-assisted")
    if args.method != "gec":
        return args.method
    return {"known": "gec0", "gec1": "gec1", "gec2": "gec2", "kernel": "gec-kernel"}[args.alpha_mode]


def _cmd_calibrate(args, parser):
    _check_combo(parser, args)
    setup = _Setup(args)
    res = calibrate_weights(setup)
    io.write_weights(args.out, setup.sample.ids, setup.sample.d, res.omega)
    print(f"calibrated {setup.sample.n} weights in {res.iterations} Newton iterations; "
          f"max constraint residual {res.constraint_residual:.3g}")
    return 0


def _cmd_estimate(args, parser):
    _check_combo(parser, args)
    if not 0.0 < args.level < 1.0:
        parser.error("--level must lie in (0, 1)")
    implied = _implied_estimator(args, parser)
    if args.estimators:
        names = [t.strip() for t in args.estimators.split(",") if t.strip()]
        bad = [t for t in names if t not in METHODS]
        if bad or not names:
            parser.error(f"unknown estimators {bad}; choose from {','.join(METHODS)}")
    else:
        names = ["ht", "hajek", implied]
    setup = _Setup(args, need_y=True)
    if not args.no_intercept and "greg" in names and setup.x.shape[1] == 0:
        raise InputError("greg needs at least one control")
    N = setup.N
    g_total = setup.debias_total() if any(m in ("gec0", "ds-debias") for m in names) else None
    ctrl = Controls(N, setup.x_totals, g_total, setup.pop_x, args.bandwidth)
    if "gec-kernel" in names and setup.pop_x is None:
        raise InputError("gec-kernel needs --population")
    sample = setup.sample_data()
    as_mean = args.target == "mean"
    reports = [estimate(m, sample, setup.x, ctrl, setup.entropy, level=args.level, as_mean=as_mean)
               for m in names]
    io.write_report(args.out, reports)
    for r in reports:
        print(f"{r.estimator:<11}{r.entropy or '-':<14}{r.theta_hat:>16.8g}  se {r.se:.6g}")
    return 0


def _cmd_simulate(args, parser):
    from .simulation import run_study

    config = io.read_config(args.config)
    if args.workers is not None and args.workers < 1:
        parser.error("--workers must be at least 1")
    table = run_study(config, workers=args.workers)
    io.write_metrics(args.out, table)
    print(table.summary())
    return 0


def _cmd_selftest(args, parser):
    from .selftest import run_selftest

    return 0 if run_selftest() else 1


COMMANDS = {"calibrate": _cmd_calibrate, "estimate": _cmd_estimate,
            "simulate": _cmd_simulate, "selftest": _cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args, parser)
    except GecalError as exc:
        print(f"gecal: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
