"""Command-line entry point: ``cbayes <subcommand> ...``.

Every output file starts with (or, for JSON, contains) the format version
and the fully resolved run configuration, defaults included.  Files are
written atomically.  Exit status: 0 success, 2 bad input, 3 degenerate
importance weights, 4 sampler failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from cbayes._io import FORMAT_VERSION, atomic_write_text, header_lines
from cbayes.baselines import bayes_class_set, bayes_interval, split_conformal
from cbayes.bench import METHODS, SCENARIOS, run_benchmark, scenario
from cbayes.conformal import ConformalBayes, ConformalGrid, default_grid, result_record
from cbayes.errors import EXIT_OK, CBayesError, InputError
from cbayes.hierarchy import GroupConformalBayes, GroupedView, parse_alpha_policy
from cbayes.likelihoods import model_from_dict, model_to_dict, read_dataset_csv, standardize
from cbayes.posterior import ingest_draws, sample_metropolis, write_draws

logger = logging.getLogger("cbayes")

WORKERS_ENV = "CBAYES_WORKERS"


# ---------------------------------------------------------------------------
# argument parsing


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_model(p):
    g = p.add_argument_group("model")
    g.add_argument("--family", choices=("gaussian", "logistic", "hierarchical"),
                   default="gaussian")
    g.add_argument("--prior", choices=("laplace", "normal"), default="laplace",
                   help="coefficient prior for gaussian/logistic")
    g.add_argument("--c", type=float, default=1.0, help="half-normal scale of the tau prior")
    g.add_argument("--prior-scale", type=float, default=1.0,
                   help="normal prior sd (normal prior or logistic)")
    g.add_argument("--fixed-tau", type=float, default=None,
                   help="known noise sd (gaussian); drops tau from the draws")
    g.add_argument("--no-intercept", action="store_true")
    g.add_argument("--J", type=int, default=None, help="number of groups (hierarchical)")
    g.add_argument("--standardize", action="store_true",
                   help="centre and scale covariates and a regression response")


def _add_data(p, test=True):
    p.add_argument("--data", required=True, help="training CSV (x1..xd, y[, group])")
    if test:
        p.add_argument("--test", required=True, help="test covariates CSV (y optional)")


def _add_draws(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--draws", help="posterior draws CSV")
    src.add_argument("--sample-inline", action="store_true",
                     help="run the built-in sampler instead of reading draws")
    p.add_argument("--T", type=_positive_int, default=8000)
    p.add_argument("--tune", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=_positive_int, default=1)


def _add_grid(p):
    p.add_argument("--grid", default="auto", help="'auto' or LO:HI")
    p.add_argument("--n-grid", type=int, default=100)
    p.add_argument("--pad-scale", type=float, default=1.0,
                   help="auto grid padding is 2 * pad-scale beyond the observed range")


def _add_alpha(p):
    p.add_argument("--alpha", type=float, default=0.2)


def _add_out(p, help_text="output file (default stdout)"):
    p.add_argument("--out", default=None, help=help_text)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cbayes", description="Conformal Bayesian prediction sets from posterior draws.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("sample", help="draw from the posterior with adaptive Metropolis")
    _add_data(p, test=False)
    _add_model(p)
    p.add_argument("--T", type=_positive_int, default=8000)
    p.add_argument("--tune", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=_positive_int, default=1)
    p.add_argument("--out", required=True, help="draws CSV to write")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("conformal", help="conformal Bayes sets for each test row")
    _add_data(p)
    _add_model(p)
    _add_draws(p)
    _add_alpha(p)
    _add_grid(p)
    p.add_argument("--dump-rank", action="store_true", help="include pi(y) and ESS per grid point")
    p.add_argument("--on-degenerate", choices=("error", "min-rank"), default="error")
    _add_out(p)
    p.set_defaults(func=cmd_conformal)

    p = sub.add_parser("group-conformal", help="within-group sets for a hierarchical model")
    _add_data(p)
    _add_model(p)
    _add_draws(p)
    _add_alpha(p)
    p.add_argument("--alpha-policy", default=None,
                   help="uniform:<alpha> or min-feasible:<multiplier> (default uniform:<alpha>)")
    _add_grid(p)
    p.add_argument("--dump-rank", action="store_true")
    p.add_argument("--on-degenerate", choices=("error", "min-rank"), default="error")
    _add_out(p)
    p.set_defaults(func=cmd_group_conformal, family="hierarchical")

    p = sub.add_parser("bayes", help="Bayes credible intervals or class sets")
    _add_data(p)
    _add_model(p)
    _add_draws(p)
    _add_alpha(p)
    _add_grid(p)
    _add_out(p)
    p.set_defaults(func=cmd_bayes)

    p = sub.add_parser("split", help="split conformal intervals around a ridge fit")
    _add_data(p)
    _add_alpha(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--standardize", action="store_true")
    _add_out(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("bench", help="repeated simulation coverage benchmark")
    p.add_argument("--scenario", required=True, choices=sorted(SCENARIOS))
    p.add_argument("--repeats", type=_positive_int, default=50)
    _add_alpha(p)
    p.add_argument("--T", type=_positive_int, default=8000)
    p.add_argument("--tune", type=int, default=None, help="default depends on the scenario")
    p.add_argument("--seed", type=int, required=True, help="master seed (required)")
    p.add_argument("--methods", default="bayes,cb",
                   help="comma separated subset of " + ",".join(METHODS))
    p.add_argument("--n-grid", type=int, default=None)
    p.add_argument("--exact", action="store_true",
                   help="report coverage by evaluating pi at the true outcome")
    p.add_argument("--workers", type=_positive_int, default=None,
                   help=f"parallel repeats (default ${WORKERS_ENV} or 1)")
    p.add_argument("--json", default=None, help="write the full report as JSON")
    p.add_argument("--csv", default=None, help="write long-format per-repeat rows")
    _add_out(p, "write the text table here instead of stdout")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("diagnose", help="ESS and pi(y) profiles across the grid")
    _add_data(p)
    _add_model(p)
    _add_draws(p)
    _add_grid(p)
    p.add_argument("--points", default=None,
                   help="comma separated y values to evaluate instead of a grid")
    p.add_argument("--on-degenerate", choices=("error", "min-rank"), default="min-rank")
    _add_out(p, "profile CSV (default stdout)")
    p.set_defaults(func=cmd_diagnose)
    return parser


# ---------------------------------------------------------------------------
# shared pipeline pieces


def _workers(args):
    if getattr(args, "workers", None) is not None:
        return args.workers
    env = os.environ.get(WORKERS_ENV)
    if not env:
        return 1
    try:
        v = int(env)
    except ValueError:
        v = 0
    if v < 1:
        raise InputError(f"${WORKERS_ENV} must be a positive integer", module="cli", value=env)
    return v


def _kind(args):
    return "classification" if args.family == "logistic" else "regression"


def _load_data(args, config):
    kind = _kind(args) if hasattr(args, "family") else "regression"
    train = read_dataset_csv(args.data, kind)
    test = read_dataset_csv(args.test, kind) if getattr(args, "test", None) else None
    if test is not None and test.d != train.d:
        raise InputError("test and training covariate counts differ", module="cli",
                         value=(test.d, train.d))
    if args.standardize:
        train = standardize(train)
        if test is not None:
            test = train.standardization.apply(test)
        config["standardization"] = train.standardization.to_dict()
    return train, test


def _build_model(args, train, config):
    if args.family == "hierarchical":
        J = args.J if args.J is not None else train.J
        spec = {"family": "hierarchical", "J": J, "d": train.d}
    elif args.family == "logistic":
        spec = {"family": "logistic", "d": train.d, "prior": args.prior,
                "prior_scale": args.prior_scale, "intercept": not args.no_intercept}
    else:
        spec = {"family": "gaussian", "d": train.d, "prior": args.prior, "c": args.c,
                "prior_scale": args.prior_scale, "fixed_tau": args.fixed_tau,
                "intercept": not args.no_intercept}
    model = model_from_dict(spec)
    config["model"] = model_to_dict(model)
    return model


def _load_draws(args, model, train, config):
    if args.draws:
        draws = ingest_draws(args.draws, model)
    else:
        draws = sample_metropolis(model, train, T=args.T, tune=args.tune, seed=args.seed,
                                  chains=args.chains)
        config["sampler"] = {"acceptance": draws.acceptance,
                             "min_mcmc_ess": draws.min_mcmc_ess}
    config["draws_T"] = draws.T
    return draws


def _grid(args, train, config):
    if _kind(args) == "classification":
        grid = ConformalGrid.classification()
    elif args.grid == "auto":
        grid = default_grid(train, args.n_grid, pad_scale=args.pad_scale)
    else:
        lo, sep, hi = args.grid.partition(":")
        try:
            lo, hi = float(lo), float(hi)
        except ValueError:
            raise InputError("grid must be 'auto' or LO:HI", module="cli",
                             value=args.grid) from None
        if not sep:
            raise InputError("grid must be 'auto' or LO:HI", module="cli", value=args.grid)
        grid = ConformalGrid.regression(lo, hi, args.n_grid)
    config["resolved_grid"] = grid.to_dict()
    return grid


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must lie in (0, 1)", module="cli", value=alpha)


def _base_config(args):
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    if "workers" in cfg:
        cfg["workers"] = _workers(args)
    return cfg


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj).__name__)


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _emit_json(results, config, out):
    doc = {"format_version": FORMAT_VERSION, "config": config, "results": results}
    text = json.dumps(_clean(doc), indent=2, sort_keys=True, default=_json_default) + "\n"
    _emit_text(text, out)


def _emit_text(text, out):
    if out:
        atomic_write_text(out, text)
    else:
        sys.stdout.write(text)


def _rows(test):
    for i in range(test.n):
        g = None if test.group is None else int(test.group[i])
        yield i, test.X[i], g


# ---------------------------------------------------------------------------
# subcommands


def cmd_sample(args):
    config = _base_config(args)
    train, _ = _load_data(args, config)
    model = _build_model(args, train, config)
    draws = sample_metropolis(model, train, T=args.T, tune=args.tune, seed=args.seed,
                              chains=args.chains)
    config["sampler"] = {"acceptance": draws.acceptance, "min_mcmc_ess": draws.min_mcmc_ess}
    write_draws(draws, args.out, config)
    print(f"wrote {draws.T} draws to {args.out}; acceptance {draws.acceptance:.3f}, "
          f"min ESS {draws.min_mcmc_ess:.1f}", file=sys.stderr)
    return EXIT_OK


def _prepare(args):
    config = _base_config(args)
    train, test = _load_data(args, config)
    model = _build_model(args, train, config)
    grid = _grid(args, train, config)
    draws = _load_draws(args, model, train, config)
    return config, train, test, model, grid, draws


def cmd_conformal(args):
    _check_alpha(args.alpha)
    config, train, test, model, grid, draws = _prepare(args)
    if model.family == "hierarchical" and test.group is None:
        raise InputError("hierarchical conformal prediction needs a group column in --test",
                         module="cli")
    engine = ConformalBayes(model, draws, train, args.on_degenerate)
    results = []
    for i, x, g in _rows(test):
        prof, pset = engine.conformal_set(x, grid, args.alpha, group=g)
        results.append(result_record(prof, pset, "cb", args.dump_rank, row=i))
    _emit_json(results, config, args.out)
    return EXIT_OK


def cmd_group_conformal(args):
    _check_alpha(args.alpha)
    config, train, test, model, grid, draws = _prepare(args)
    if test.group is None:
        raise InputError("--test needs a group column", module="cli")
    grouped = GroupedView.of(train, model.J)
    policy = parse_alpha_policy(args.alpha_policy or f"uniform:{args.alpha}", grouped)
    config["alpha_policy_resolved"] = {str(j): a for j, a in policy.alphas.items()}
    engine = GroupConformalBayes(model, draws, grouped, args.on_degenerate)
    results = []
    for i, x, g in _rows(test):
        if g not in policy.alphas:
            raise InputError(f"test row {i + 1} has unknown group", module="cli", value=g,
                             hint=f"groups are 1..{model.J}")
        prof, pset = engine.conformal_set(x, g, grid, policy[g])
        results.append(result_record(prof, pset, "cb-group", args.dump_rank, row=i,
                                     feasible=policy.feasible[g]))
    _emit_json(results, config, args.out)
    return EXIT_OK


def cmd_bayes(args):
    _check_alpha(args.alpha)
    config, train, test, model, grid, draws = _prepare(args)
    results = []
    for i, x, g in _rows(test):
        if model.kind == "classification":
            rep = bayes_class_set(draws, model, x, args.alpha)
            results.append({"method": "bayes", "row": i, "test_x": x.tolist(),
                            "alpha": args.alpha, "set": rep.to_dict(), "p1": rep.p1,
                            "confidence": rep.confidence})
        else:
            iv = bayes_interval(draws, model, x, grid, args.alpha, group=g)
            rec = {"method": "bayes", "row": i, "test_x": x.tolist(), "alpha": args.alpha,
                   "set": iv.to_dict(), "length": iv.length, "clamped": iv.clamped}
            if g is not None:
                rec["group"] = g
            results.append(rec)
    _emit_json(results, config, args.out)
    return EXIT_OK


def cmd_split(args):
    _check_alpha(args.alpha)
    config = _base_config(args)
    args.family = "gaussian"
    train, test = _load_data(args, config)
    results = []
    for i, x, _ in _rows(test):
        iv = split_conformal(train, x, args.alpha, seed=args.seed)
        results.append({"method": "split", "row": i, "test_x": x.tolist(), "alpha": args.alpha,
                        "set": iv.to_dict(), "length": iv.length})
    _emit_json(results, config, args.out)
    return EXIT_OK


def cmd_bench(args):
    _check_alpha(args.alpha)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    config = _base_config(args)
    overrides = {"n_grid": args.n_grid} if args.n_grid is not None else {}
    spec = scenario(args.scenario, **overrides)
    report = run_benchmark(spec, methods, alpha=args.alpha, R=args.repeats, T=args.T,
                           tune=args.tune, seed=args.seed, exact=args.exact,
                           workers=config["workers"])
    report.run_config = config
    if args.json:
        atomic_write_text(args.json, json.dumps(_clean(report.to_dict()), indent=2,
                                                sort_keys=True) + "\n")
    if args.csv:
        atomic_write_text(args.csv, report.to_csv())
    table = report.to_table()
    if args.out:
        atomic_write_text(args.out, "\n".join(header_lines(config)) + "\n" + table)
    else:
        sys.stdout.write(table)
    return EXIT_OK


def cmd_diagnose(args):
    config, train, test, model, grid, draws = _prepare(args)
    engine = ConformalBayes(model, draws, train, args.on_degenerate)
    if args.points:
        try:
            ys = np.array([float(v) for v in args.points.split(",")])
        except ValueError:
            raise InputError("--points must be comma separated numbers", module="cli",
                             value=args.points) from None
        config["resolved_grid"] = {"kind": "points", "n": int(ys.size)}
    else:
        ys = grid.points
    scale = engine.ess_scale
    lines = header_lines(config)
    lines.append("test,y,ess,scaled_ess,pi")
    for i, x, g in _rows(test):
        pi, ess = engine.rank_ess_at(x, ys, g)
        for y, e, p in zip(ys, ess, pi):
            scaled = "" if scale is None else repr(float(e * scale))
            lines.append(f"{i},{float(y)!r},{float(e)!r},{scaled},{float(p)!r}")
    _emit_text("\n".join(lines) + "\n", args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CBayesError as err:
        print(f"error: {err.describe()}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print(f"error: [cli] {err}", file=sys.stderr)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
