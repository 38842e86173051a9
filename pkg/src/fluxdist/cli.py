"""Command-line interface: simulate, fit, select, loglik, bootstrap, lognlogs.

Every command is a deterministic function of its input bytes, flags and
seed.  File outputs get a ``<out>.manifest.json`` companion recording the
resolved configuration.  Exit codes: 0 success, 2 usage error, 3 data
error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bootstrap import bootstrap_se, parameter_names
from .distribution import BrokenParetoParams
from .em import FITTERS, Dataset, EmConfig, impute_fluxes
from .errors import (
    BootstrapError,
    DataError,
    DomainError,
    EmptySegmentError,
    FitError,
    NumericalError,
    ParameterError,
)
from .likelihood import PowerPosteriorConfig, power_posterior_loglik
from .model_select import select_b
from .numerics import closed_form_loglik_nobg
from .simulate import PRESETS, SimSetting, generate, lognlogs_curve, lognlogs_overlay, preset

log = logging.getLogger("fluxdist")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SEED_ENV = "FLUXDIST_SEED"
HEADER = ["y", "a", "b"]


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def _num(x: float) -> str:
    return repr(float(x))


def read_dataset(path) -> Dataset:
    """Read a ``y,a,b`` CSV; errors name the offending line."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as err:
        raise DataError(f"{path}: not UTF-8 text ({err.reason})") from None
    if not rows:
        raise DataError(f"{path}: empty file", line=1)
    header = [h.strip().lower() for h in rows[0]]
    if header != HEADER:
        raise DataError(f"expected header 'y,a,b', got {','.join(rows[0])!r}", line=1)
    y, a, b = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not f.strip() for f in row):
            continue
        if len(row) != 3:
            raise DataError(f"expected 3 fields, got {len(row)}", line=lineno)
        try:
            yv, av, bv = (float(f) for f in row)
        except ValueError:
            raise DataError(f"non-numeric field in {','.join(row)!r}", line=lineno) from None
        if not (math.isfinite(yv) and yv >= 0 and yv == int(yv)):
            raise DataError(f"count must be a nonnegative integer, got {row[0].strip()!r}", line=lineno)
        if not (math.isfinite(av) and av > 0):
            raise DataError(f"effective area must be positive, got {row[1].strip()!r}", line=lineno)
        if not (math.isfinite(bv) and bv >= 0):
            raise DataError(f"background must be nonnegative, got {row[2].strip()!r}", line=lineno)
        y.append(int(yv))
        a.append(av)
        b.append(bv)
    if not y:
        raise DataError(f"{path}: no data rows", line=2)
    return Dataset(np.array(y, dtype=np.int64), np.array(a), np.array(b))


def write_dataset(data: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(HEADER) + "\n")
        for y, a, b in zip(data.y, data.a, data.b):
            fh.write(f"{int(y)},{_num(a)},{_num(b)}\n")


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else _num(v) if isinstance(v, float)
                              else str(v) for v in row) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def read_theta(path) -> BrokenParetoParams:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as err:
        raise DataError(f"{path}: invalid JSON ({err.msg})", line=err.lineno) from None
    if not isinstance(doc, dict) or "beta" not in doc or "tau" not in doc:
        raise DataError(f"{path}: fit file needs 'beta' and 'tau' arrays")
    try:
        return BrokenParetoParams(list(map(float, doc["beta"])), list(map(float, doc["tau"])))
    except (TypeError, ValueError) as err:
        raise DataError(f"{path}: bad parameters: {err}") from None


def _theta_json(theta: BrokenParetoParams) -> dict:
    return {"beta": list(theta.beta), "tau": list(theta.tau),
            "log10_tau": [math.log10(t) for t in theta.tau]}


# ---------------------------------------------------------------------------
# shared options
# ---------------------------------------------------------------------------

def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _add_common(p):
    p.add_argument("--seed", type=int, default=None,
                   help=f"random seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker processes for independent fits (results do not depend on it)")


def _add_em(p):
    g = p.add_argument_group("EM")
    g.add_argument("--n-sim", type=int, default=1000, help="MH draws per E-step")
    g.add_argument("--n-burn", type=int, default=200, help="burn-in draws per E-step")
    g.add_argument("--n-limit", type=int, default=200, help="maximum EM iterations")
    g.add_argument("--theta-tol", type=float, default=1e-3, help="relative-change tolerance")


def _add_pp(p):
    g = p.add_argument_group("power posterior")
    g.add_argument("--pp-grid", type=int, default=30, help="number of temperature intervals")
    g.add_argument("--c", dest="pp_c", type=float, default=3.0, help="grid exponent, t_k = (k/N)^c")
    g.add_argument("--pp-sim", type=int, default=2000, help="MH draws per rung")
    g.add_argument("--pp-burn", type=int, default=200, help="burn-in draws per rung")
    g.add_argument("--pp-rule", choices=["exponential", "trapezoid"], default="exponential")


def _em_cfg(args, seed) -> EmConfig:
    if args.n_burn >= args.n_sim or args.n_burn < 0 or args.n_limit < 1:
        raise UsageError("need 0 <= --n-burn < --n-sim and --n-limit >= 1")
    return EmConfig(n_sim=args.n_sim, n_burn=args.n_burn, n_limit=args.n_limit,
                    theta_tol=args.theta_tol, seed=seed)


def _pp_cfg(args, seed) -> PowerPosteriorConfig:
    return PowerPosteriorConfig(n_grid=args.pp_grid, c=args.pp_c, n_sim=args.pp_sim,
                                n_burn=args.pp_burn, seed=seed, rule=args.pp_rule)


def _manifest(args, seed, inputs, outputs, **resolved) -> dict:
    # thread count and verbosity never change results, so they stay out
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "threads", "verbose")}
    return {"tool": "fluxdist", "version": __version__, "command": args.command,
            "seed": seed, "flags": flags, "config": resolved,
            "inputs": [str(p) for p in inputs], "outputs": [str(p) for p in outputs]}


def _write_manifest(out, manifest) -> None:
    write_json(f"{out}.manifest.json", manifest)


def _sub_seed(seed, tag) -> int:
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def _plot(fig, path):
    from .plotting import save

    try:
        save(fig, path)
    except ValueError as err:
        raise UsageError(str(err)) from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    seed = _seed(args)
    if args.preset:
        if args.beta or args.tau:
            raise UsageError("give either --preset or --beta/--tau, not both")
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(sorted(PRESETS))}")
        base = preset(args.preset, seed)
        setting = SimSetting(base.params, args.n or base.n,
                             base.a if args.a is None else args.a,
                             base.b if args.b is None else args.b, seed)
    else:
        if not (args.beta and args.tau and args.n):
            raise UsageError("without --preset, --beta, --tau and --n are required")
        setting = SimSetting(BrokenParetoParams(args.beta, args.tau), args.n,
                             1e19 if args.a is None else args.a,
                             10.0 if args.b is None else args.b, seed)
    data, _ = generate(setting)
    write_dataset(data, args.out)
    _write_manifest(args.out, _manifest(args, seed, [], [args.out], setting=setting.to_dict()))
    return EXIT_OK


def _trace(fit):
    return [{"iteration": k, **_theta_json(t)} for k, t in enumerate(fit.trajectory)]


def cmd_fit(args) -> int:
    seed = _seed(args)
    if args.B < 1:
        raise UsageError("--b must be >= 1")
    data = read_dataset(args.input)
    em_seed, pp_seed = _sub_seed(seed, 0), _sub_seed(seed, 1)
    cfg = _em_cfg(args, em_seed)
    fit = FITTERS[args.algo](data, args.B, cfg)
    out = {**_theta_json(fit.theta_hat), "converged": bool(fit.converged),
           "iterations": int(fit.iterations), "algorithm": fit.algorithm,
           "near_equal_slopes": list(fit.slope_flags), "loglik": None, "loglik_mc_se": None}
    pp = None
    if not args.no_loglik:
        pp = _pp_cfg(args, pp_seed)
        est = power_posterior_loglik(fit.theta_hat, data, pp)
        out["loglik"], out["loglik_mc_se"] = est.value, est.mc_se
    negll = None
    if args.trace or args.trace_loglik:
        out["trace"] = _trace(fit)
        if fit.half_steps:
            out["trace_half_steps"] = [_theta_json(t) for t in fit.half_steps]
    if args.trace_loglik:
        if np.any(data.b != 0):
            raise UsageError("--trace-loglik needs every background b to be 0")
        negll = [-closed_form_loglik_nobg(t, data.y, data.a) for t in fit.trajectory]
        out["trace_negloglik"] = negll
    outputs = [args.out] + ([args.plot] if args.plot else [])
    out["manifest"] = _manifest(args, seed, [args.input], outputs, em=cfg.to_dict(),
                                pp=pp.to_dict() if pp else None)
    write_json(args.out, out)
    _write_manifest(args.out, out["manifest"])
    if args.plot:
        from .plotting import trace_figure

        base = (negll, min(negll)) if negll else None
        _plot(trace_figure(fit.trajectory, base), args.plot)
    return EXIT_OK


def cmd_select(args) -> int:
    seed = _seed(args)
    if args.b_max < 1:
        raise UsageError("--b-max must be >= 1")
    data = read_dataset(args.input)
    em, pp = _em_cfg(args, 0), _pp_cfg(args, 0)
    report = select_b(data, args.b_max, em, pp, seed=seed, workers=args.threads)
    out = report.to_dict()
    outputs = [args.out] + [p for p in (args.table, args.plot) if p]
    out["manifest"] = _manifest(args, seed, [args.input], outputs, em=em.to_dict(), pp=pp.to_dict())
    write_json(args.out, out)
    _write_manifest(args.out, out["manifest"])
    if args.table:
        write_rows(args.table, ["B", "loglik", "loglik_mc_se", "aic", "bic", "converged", "iterations"],
                   [[c.B, c.loglik, c.loglik_mc_se, c.aic, c.bic, str(c.converged).lower(), c.iterations]
                    for c in report.candidates])
    if args.plot:
        from .plotting import criteria_figure

        bs = [c.B for c in report.candidates]
        _plot(criteria_figure(bs, report.column("aic"), report.column("bic")), args.plot)
    if report.b_hat_bic is None:
        log.error("every candidate failed")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_loglik(args) -> int:
    seed = _seed(args)
    if len(args.beta) != len(args.tau):
        raise UsageError("--beta and --tau need the same number of values")
    theta = BrokenParetoParams(args.beta, args.tau)
    data = read_dataset(args.input)
    pp = _pp_cfg(args, seed)
    est = power_posterior_loglik(theta, data, pp)
    print(f"loglik={est.value!r} mc_se={est.mc_se!r} trapezoid={est.trapezoid_value!r}")
    if args.rungs:
        write_rows(args.rungs, ["t", "mean_loglik", "se"], est.rows())
    if args.out:
        outputs = [args.out] + [p for p in (args.rungs, args.plot) if p]
        doc = {**est.to_dict(), **_theta_json(theta),
               "manifest": _manifest(args, seed, [args.input], outputs, pp=pp.to_dict())}
        write_json(args.out, doc)
        _write_manifest(args.out, doc["manifest"])
    if args.plot:
        from .plotting import rungs_figure

        _plot(rungs_figure(est.rung_ts, est.rung_means, est.rung_se), args.plot)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    seed = _seed(args)
    if args.B < 1:
        raise UsageError("--b must be >= 1")
    if args.n_boot < 2:
        raise UsageError("--n-boot must be >= 2")
    data = read_dataset(args.input)
    theta = read_theta(args.fit) if args.fit else None
    if theta is not None and theta.B != args.B:
        raise UsageError(f"--fit has {theta.B} pieces but --b is {args.B}")
    cfg = _em_cfg(args, _sub_seed(seed, 0))
    report = bootstrap_se(data, args.B, args.n_boot, cfg, seed=seed, theta_hat=theta,
                          workers=args.threads)
    out = report.to_dict()
    inputs = [args.input] + ([args.fit] if args.fit else [])
    outputs = [args.out] + ([args.replicates] if args.replicates else [])
    out["manifest"] = _manifest(args, seed, inputs, outputs, em=cfg.to_dict())
    write_json(args.out, out)
    _write_manifest(args.out, out["manifest"])
    if args.replicates:
        write_rows(args.replicates, ["replicate"] + parameter_names(args.B),
                   [[r] + row.tolist() for r, row in enumerate(report.replicates)])
    if report.failures > args.n_boot / 2:
        log.error("%d of %d replicates failed", report.failures, args.n_boot)
        return EXIT_NUMERIC
    return EXIT_OK


def _overlay_path(out):
    p = Path(out)
    return p.with_name(p.stem + ".overlay.csv")


def cmd_lognlogs(args) -> int:
    seed = _seed(args)
    data = read_dataset(args.input)
    overlay, taus, em = None, (), None
    if args.fit:
        theta = read_theta(args.fit)
        em = EmConfig(n_sim=args.n_sim, n_burn=args.n_burn, seed=seed)
        fluxes = impute_fluxes(data, theta, em, args.impute)
        overlay = lognlogs_overlay(theta, data.n, float(np.max(fluxes)))
        taus = theta.tau
    else:
        # plot-only plug-in fluxes; they ignore the uncertainty in each flux
        fluxes = np.maximum(data.y - data.b, 0.5) / data.a
    curve = lognlogs_curve(fluxes)
    write_rows(args.out, ["log10_s", "log10_n"], curve.tolist())
    outputs = [args.out]
    if overlay is not None:
        opath = args.overlay or _overlay_path(args.out)
        keys = ["piece", "slope", "log10_alpha", "log10_s_start", "log10_s_end",
                "log10_n_start", "log10_n_end"]
        write_rows(opath, keys, [[seg[k] for k in keys] for seg in overlay])
        outputs.append(opath)
    if args.plot:
        from .plotting import lognlogs_figure

        _plot(lognlogs_figure(curve, overlay, taus), args.plot)
        outputs.append(args.plot)
    inputs = [args.input] + ([args.fit] if args.fit else [])
    _write_manifest(args.out, _manifest(args, seed, inputs, outputs,
                                        em=em.to_dict() if em else None))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fluxdist", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fluxdist {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic dataset")
    p.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))}")
    p.add_argument("--beta", type=float, nargs="+")
    p.add_argument("--tau", type=float, nargs="+")
    p.add_argument("--n", type=int)
    p.add_argument("--a", type=float, help="effective area (default 1e19)")
    p.add_argument("--b", type=float, help="background counts (default 10)")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a B-piece model by Monte-Carlo EM")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--b", dest="B", type=int, required=True, help="number of pieces")
    p.add_argument("--algo", choices=sorted(FITTERS), default="iem")
    p.add_argument("--trace", action="store_true", help="store every iterate")
    p.add_argument("--trace-loglik", action="store_true",
                   help="also store closed-form negative log-likelihoods (needs b = 0)")
    p.add_argument("--no-loglik", action="store_true", help="skip the power-posterior log-likelihood")
    p.add_argument("--plot", help="trajectory figure (.svg, .png or .pdf)")
    p.add_argument("--out", required=True)
    _add_em(p)
    _add_pp(p)
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="choose B by AIC and BIC")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--b-max", type=int, default=4)
    p.add_argument("--table", help="per-candidate CSV")
    p.add_argument("--plot", help="criteria figure")
    p.add_argument("--out", required=True)
    _add_em(p)
    _add_pp(p)
    _add_common(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("loglik", help="power-posterior log-likelihood at given parameters")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--beta", type=float, nargs="+", required=True)
    p.add_argument("--tau", type=float, nargs="+", required=True)
    p.add_argument("--rungs", help="write the (t, mean, se) rung table as CSV")
    p.add_argument("--plot", help="rung figure")
    p.add_argument("--out", help="JSON result")
    _add_pp(p)
    _add_common(p)
    p.set_defaults(func=cmd_loglik)

    p = sub.add_parser("bootstrap", help="bootstrap standard errors")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--b", dest="B", type=int, required=True)
    p.add_argument("--n-boot", type=int, default=200)
    p.add_argument("--fit", help="fit JSON whose estimate starts every replicate")
    p.add_argument("--replicates", help="per-replicate CSV")
    p.add_argument("--out", required=True)
    _add_em(p)
    _add_common(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("lognlogs", help="log N - log S curve, with the fitted overlay given a fit")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--fit", help="fit JSON; fluxes are then imputed by one E-step")
    p.add_argument("--impute", choices=["mean", "draw"], default="mean")
    p.add_argument("--n-sim", type=int, default=1000)
    p.add_argument("--n-burn", type=int, default=200)
    p.add_argument("--overlay", help="overlay CSV (default: <out stem>.overlay.csv)")
    p.add_argument("--plot", help="figure (.svg, .png or .pdf)")
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_lognlogs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (UsageError, ParameterError, DomainError) as err:
        print(f"fluxdist {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as err:
        print(f"fluxdist {args.command}: data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FitError, BootstrapError, EmptySegmentError) as err:
        print(f"fluxdist {args.command}: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
