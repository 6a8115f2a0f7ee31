"""Command-line entry point.  Exit codes: 0 ok, 2 usage/config error, 3 numerical degeneracy."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .debias import debias_estimated_score, debias_known_sigma
from .diagnostics import AssumptionParams, check_assumption_main, rates
from .exceptions import CovarianceError, DegenerateFitError, NonUniqueSolutionError
from .lasso import LassoConfig, is_nonunique, lambda_default, lasso_cd, scaled_lasso
from .model import CovarianceSpec
from .score import estimated_score, ideal_score
from .simulate import (ExperimentConfig, field_values, fig1_config, fig2_config, run_experiment,
                       summarize_experiment, write_json, write_records_csv)

EXIT_OK, EXIT_USAGE, EXIT_DEGENERATE = 0, 2, 3
FORMATS = ("csv", "json", "svg")


class UsageError(Exception):
    pass


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _formats(s):
    out = tuple(f.strip() for f in s.split(",") if f.strip())
    bad = set(out) - set(FORMATS)
    if bad or not out:
        raise UsageError(f"--format takes a comma list from {FORMATS}, got {s!r}")
    return out


def write_outputs(config: ExperimentConfig, records, out: Path, formats) -> list:
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "config.json"]
    write_json(config.to_dict(), written[0])
    if "csv" in formats:
        write_records_csv(records, config, out / "records.csv")
        written.append(out / "records.csv")
    if "json" in formats:
        write_json(summarize_experiment(config, records), out / "summary.json")
        written.append(out / "summary.json")
    if "svg" in formats:
        from .plots import pivot_boxplot, pivot_histogram, shared_bins

        df = config.n if config.score == "ideal" else None
        groups = {}
        for v in config.variants:
            cols = {nu: field_values(records, f"pivot_{v}_{nu}") for nu in config.nu_rules}
            bins = shared_bins(list(cols.values()))
            for nu, vals in cols.items():
                path = out / f"hist_{v}_{nu}.svg"
                pivot_histogram(vals, bins, path, f"{v}, nu={nu}", df)
                written.append(path)
                groups[f"{v} nu={nu}"] = vals
        pivot_boxplot(groups, out / "box.svg", config.scale_tag)
        written.append(out / "box.svg")
    return written


def _run(config, args):
    records = run_experiment(config, threads=args.threads)
    written = write_outputs(config, records, Path(args.out), _formats(args.format))
    errors = sum(1 for r in records if r.error)
    print(json.dumps({"files": [str(p) for p in written], "replications": len(records), "errors": errors}))
    return EXIT_OK


def cmd_simulate(args):
    try:
        config = ExperimentConfig.from_dict(_load_json(args.config))
    except (TypeError, ValueError, CovarianceError) as exc:
        raise UsageError(f"bad config: {exc}") from None
    return _run(config, args)


def _override(config, args):
    from dataclasses import replace

    kw = {}
    if args.R is not None:
        kw["R"] = args.R
    if args.seed is not None:
        kw["base_seed"] = args.seed
    return replace(config, **kw) if kw else config


def cmd_fig1(args):
    return _run(_override(fig1_config(args.s0, args.scale), args), args)


def cmd_fig2(args):
    return _run(_override(fig2_config(args.scale), args), args)


def _read_matrix(path, name):
    try:
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read {name} from {path}: {exc}") from None


def _parse_a0(spec, p):
    if spec.startswith("ej:"):
        try:
            j = int(spec[3:])
        except ValueError:
            raise UsageError(f"bad a0 spec {spec!r}") from None
        if not 0 <= j < p:
            raise UsageError(f"a0 index {j} out of range for p={p} (0-based)")
        a0 = np.zeros(p)
        a0[j] = 1.0
        return a0
    a0 = _read_matrix(spec, "a0").ravel()
    if a0.size != p:
        raise UsageError(f"a0 has length {a0.size}, expected p={p}")
    return a0


def cmd_debias(args):
    X = _read_matrix(args.x, "X")
    y = _read_matrix(args.y, "y").ravel()
    n, p = X.shape
    if y.size != n:
        raise UsageError(f"dimension mismatch: X has {n} rows, y has {y.size} entries")
    a0 = _parse_a0(args.a0, p)
    k = args.s0 or 1
    if not 1 <= k <= p:
        raise UsageError("--s0 must lie in [1, p]")
    if args.sigma_known is not None:
        sigma = args.sigma_known
        lam = lambda_default(n, p, k, sigma)
        if is_nonunique(X, lam):
            raise NonUniqueSolutionError("lambda = 0 with a rank-deficient design")
        fit = lasso_cd(X, y, LassoConfig(lam=lam))
        source = "known"
    else:
        fit, sigma = scaled_lasso(X, y, lambda_default(n, p, k, 1.0))
        lam = fit.lam
        source = "scaled-lasso"
    if args.cov == "unknown":
        score = estimated_score(X, a0)
        est = debias_estimated_score(fit, score, y, X, args.nu, args.alpha, sigma_hat=sigma)
        extra = {"tau_hat": score.tau_hat, "inner_zz_over_n": score.inner_zz / n}
    else:
        try:
            cov = CovarianceSpec.from_dict(_load_json(args.cov))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"bad covariance spec: {exc}") from None
        if cov.p != p:
            raise UsageError(f"covariance has p={cov.p}, X has p={p}")
        score = ideal_score(cov, a0, X, sigma)
        est = debias_known_sigma(fit, score, y, X, args.nu, args.alpha, sigma=sigma)
        extra = {"C0": score.C0}
    out = {"theta_hat": est.theta_hat, "se": est.se, "ci": [est.ci[0], est.ci[1]], "alpha": args.alpha,
           "nu": est.nu, "variant": est.variant, "reference": est.reference, "sigma": float(sigma),
           "sigma_source": source, "lambda": lam, "shat": fit.nu} | extra
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_check(args):
    cov = CovarianceSpec.identity(args.p) if args.cov is None else CovarianceSpec.from_dict(_load_json(args.cov))
    if cov.p != args.p:
        raise UsageError(f"covariance has p={cov.p}, expected {args.p}")
    try:
        params = AssumptionParams.from_dict(_load_json(args.params))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid params: {exc}") from None
    rep = check_assumption_main(cov, args.n, args.p, args.s0, params, mode=args.mode)
    print(json.dumps(rep, indent=2))
    return EXIT_OK


def cmd_rates(args):
    try:
        out = rates(args.s0, args.somega, args.rho, args.n, args.p, args.c0u0)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(json.dumps(out, indent=2))
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="dflasso", description="De-biased Lasso inference with df adjustment")
    sub = ap.add_subparsers(dest="command", required=True)

    def run_opts(sp):
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--format", default="csv,json,svg", help="comma list of csv,json,svg")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: $DEBIAS_LASSO_THREADS or 1)")

    sp = sub.add_parser("simulate", help="run an experiment from a JSON config")
    sp.add_argument("--config", required=True)
    run_opts(sp)
    sp.set_defaults(func=cmd_simulate)

    for name, func in (("fig1", cmd_fig1), ("fig2", cmd_fig2)):
        sp = sub.add_parser(name, help=f"{name} preset")
        if name == "fig1":
            sp.add_argument("--s0", type=int, default=20, help="full-scale sparsity (scaled with --scale)")
        sp.add_argument("--scale", type=float, default=0.1)
        sp.add_argument("--R", type=int, default=None, help="replications (default 200)")
        sp.add_argument("--seed", type=int, default=None, help="base seed (default 0)")
        run_opts(sp)
        sp.set_defaults(func=func)

    sp = sub.add_parser("debias", help="inference for <a0, beta> on user data")
    sp.add_argument("--x", required=True, help="headerless CSV design matrix")
    sp.add_argument("--y", required=True, help="single-column CSV response")
    sp.add_argument("--a0", required=True, help='"ej:<j>" (0-based) or a CSV vector')
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--sigma-known", type=float, default=None)
    g.add_argument("--sigma", choices=["estimate"], default="estimate")
    sp.add_argument("--cov", default="unknown", help='covariance JSON spec or "unknown"')
    sp.add_argument("--nu", choices=["zero", "shat"], default="shat")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--s0", type=int, default=None, help="sparsity used in the penalty level (default 1)")
    sp.set_defaults(func=cmd_debias)

    sp = sub.add_parser("check", help="evaluate the main assumption clauses")
    sp.add_argument("--cov", default=None, help="covariance JSON spec (default identity)")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--s0", type=int, required=True)
    sp.add_argument("--params", required=True, help="JSON with m, k and optional eta/eps/rho_star")
    sp.add_argument("--mode", choices=["exact", "sampled"], default="sampled")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("rates", help="estimation rate formulas")
    sp.add_argument("--s0", type=float, required=True)
    sp.add_argument("--somega", type=float, required=True)
    sp.add_argument("--rho", type=float, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--c0u0", type=float, default=None, help="C0 ||u0||_1, if known")
    sp.set_defaults(func=cmd_rates)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dflasso: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DegenerateFitError, NonUniqueSolutionError) as exc:
        print(f"dflasso: numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (CovarianceError, ValueError, KeyError) as exc:
        print(f"dflasso: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
