"""Command-line entry point: ``causalve {simulate,estimate,benchmark,seed-sweep}``.

Every command writes its CSV output plus a JSON manifest next to it
(``<out>.manifest.json``) recording the command, seeds, method and, for
simulated data, the configuration hash.  Outputs depend only on inputs,
flags and seeds.

Exit codes: 0 success, 1 usage or validation error, 2 estimation failure,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .benchmark import derive_seed, run_benchmark, seed_sweep
from .bootstrap import bootstrap_estimates, pointwise_ci, simultaneous_ci
from .data import read_cohort_csv, write_cohort_csv
from .estimator import StudyConfig, estimate_ve
from .exceptions import EstimationError
from .matching import matched_cox, matched_km, rolling_match
from .simulation import SimConfig, generate_cohort

EXIT_OK, EXIT_USAGE, EXIT_ESTIMATION, EXIT_IO = 0, 1, 2, 3
FLOAT_FORMAT = "%.12g"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_grid(text: str) -> tuple[int, ...]:
    """``"15:180"`` (inclusive range), ``"15:180:5"`` or ``"30,60,90"``."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError
            lo, hi = parts[0], parts[1]
            step = parts[2] if len(parts) == 3 else 1
            if step < 1 or hi < lo:
                raise ValueError
            return tuple(range(lo, hi + 1, step))
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise UsageError(f"cannot parse t0 grid {text!r}") from None


def _names(text):
    return None if text is None else tuple(s.strip() for s in text.split(",") if s.strip())


def load_config(path) -> SimConfig:
    if path is None:
        return SimConfig()
    text = Path(path).read_text(encoding="utf-8")
    try:
        return SimConfig.from_yaml(text)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{path}: {exc}") from None


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def write_manifest(out, **fields) -> None:
    record = {"causalve_version": __version__, **fields}
    manifest_path(out).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(frame: pd.DataFrame, path) -> None:
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def _read_cohort(args):
    return read_cohort_csv(args.cohort, max_day=args.max_day, categorical=_names(args.categorical) or ())


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.n is not None:
        cfg = cfg.replace(n=args.n)
    seed = cfg.seed if args.seed is None else args.seed
    cohort = generate_cohort(cfg, seed=seed)
    write_cohort_csv(cohort, args.out)
    write_manifest(args.out, command="simulate", seed=seed, config_hash=cfg.config_hash(), n=cfg.n,
                   config=cfg.to_dict())
    return EXIT_OK


def _point_and_boot(cohort, study, method, B, seed, matching_vars):
    boot_seed = derive_seed(seed, 1)
    if method == "proposed":
        res = estimate_ve(cohort, study)
        boot = bootstrap_estimates(cohort, "proposed", B, boot_seed, study) if B else None
        return res, boot, {}
    analysis = "km" if method == "matching-km" else "cox"
    mc = rolling_match(cohort, matching_vars, study, seed)
    res = (matched_km if analysis == "km" else matched_cox)(mc, study)
    boot = (bootstrap_estimates(cohort, "matching-fixed", B, boot_seed, study, matched=mc, analysis=analysis)
            if B else None)
    extra = {"n_pairs": len(mc), "n_excluded_pairs": mc.excluded_pairs, "match_rate": mc.match_rate}
    return res, boot, extra


def cmd_estimate(args) -> int:
    grid = parse_grid(args.t0)
    cohort = _read_cohort(args)
    study = StudyConfig.for_cohort(cohort, args.tau, grid)
    if args.B == 1 or args.B < 0:
        raise UsageError("B must be 0 (no bands) or at least 2")
    res, boot, extra = _point_and_boot(cohort, study, args.method, args.B, args.seed, _names(args.matching_vars))
    table = pd.DataFrame({"t0": study.grid, "psi0": res.psi0.estimate, "psi1": res.psi1.estimate,
                          "ve": res.ve.estimate})
    crit = {}
    if boot is not None:
        kinds = ("pointwise", "simultaneous") if args.band == "both" else (args.band,)
        for target in ("psi0", "psi1", "ve"):
            est = getattr(res, target).estimate
            for kind in kinds:
                if kind == "pointwise":
                    band = pointwise_ci(est, boot[target], args.alpha)
                else:
                    band = simultaneous_ci(est, boot[target], args.alpha, n_sim=args.n_sim,
                                           sim_seed=derive_seed(args.seed, 2))
                    crit[target] = {"critical_value": band.critical_value, "mc_quantile": band.mc_quantile}
                table[f"{target}_lo_{kind}"] = band.lower
                table[f"{target}_hi_{kind}"] = band.upper
        extra["bootstrap_failed"] = boot["ve"].n_failed
    _write_csv(table, args.out)
    write_manifest(args.out, command="estimate", method=args.method, seed=args.seed, tau=args.tau,
                   t0=list(study.grid.tolist()), B=args.B, alpha=args.alpha, band=args.band,
                   cohort=str(args.cohort), n_subjects=len(cohort), simultaneous=crit, **extra)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = load_config(args.config)
    n_list = [int(v) for v in args.n_list.split(",") if v.strip()]
    if not n_list or any(n < 1 for n in n_list):
        raise UsageError("n-list must hold positive integers")
    methods = tuple(_names(args.methods))
    result = run_benchmark(cfg, n_list, args.sims, args.B, args.seed, t0=args.t0, alpha=args.alpha,
                           mc_reps=args.mc_reps, n_jobs=args.jobs, methods=methods,
                           matching_analysis=args.matching_analysis)
    _write_csv(result.metrics, args.out)
    raw_out = args.raw_out or str(Path(args.out).with_suffix("")) + ".raw.csv"
    _write_csv(result.raw, raw_out)
    truth = result.truth
    write_manifest(args.out, command="benchmark", seed=args.seed, config_hash=cfg.config_hash(), n_list=n_list,
                   sims=args.sims, B=args.B, t0=args.t0, alpha=args.alpha, methods=list(methods),
                   matching_analysis=args.matching_analysis, raw=raw_out,
                   truth={"psi0": truth.at("psi0_true", args.t0), "psi1": truth.at("psi1_true", args.t0),
                          "ve": truth.at("ve_true", args.t0), "mc_reps": truth.mc_reps})
    return EXIT_OK


def cmd_seed_sweep(args) -> int:
    grid = parse_grid(args.t0)
    cohort = _read_cohort(args)
    study = StudyConfig.for_cohort(cohort, args.tau, grid)
    table = seed_sweep(cohort, args.n_seeds, study, _names(args.matching_vars), args.base_seed)
    _write_csv(table, args.out)
    write_manifest(args.out, command="seed-sweep", method="matching-km", n_seeds=args.n_seeds,
                   base_seed=args.base_seed, tau=args.tau, t0=list(study.grid.tolist()), cohort=str(args.cohort))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _cohort_args(p):
    p.add_argument("--cohort", required=True, help="cohort CSV (id, x_*, d_star, y_tilde, delta)")
    p.add_argument("--max-day", type=int, default=None, help="last study day (default: largest y_tilde)")
    p.add_argument("--categorical", default=None, help="comma-separated numeric covariates to treat as categorical")
    p.add_argument("--tau", type=int, default=14)
    p.add_argument("--t0", default="15:180", help="grid as lo:hi[:step] or a comma list")
    p.add_argument("--matching-vars", default=None, help="comma-separated exact-match covariates (default all)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="causalve", description="Causal vaccine-effectiveness estimation and simulation.")
    parser.add_argument("--version", action="version", version=f"causalve {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a synthetic cohort")
    p.add_argument("--config", default=None, help="YAML config; omitted keys take default values")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    p.add_argument("--n", type=int, default=None, help="overrides the config cohort size")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate incidence and VE curves with bootstrap bands")
    _cohort_args(p)
    p.add_argument("--method", choices=("proposed", "matching-km", "matching-cox"), default="proposed")
    p.add_argument("--B", type=int, default=200, help="bootstrap replicates (0 for point estimates only)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--band", choices=("pointwise", "simultaneous", "both"), default="both")
    p.add_argument("--n-sim", type=int, default=10_000, help="normal draws for the simultaneous critical value")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("benchmark", help="simulation benchmark against oracle truth")
    p.add_argument("--config", default=None)
    p.add_argument("--n-list", default="1000,2000")
    p.add_argument("--sims", type=int, default=200)
    p.add_argument("--B", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t0", type=int, default=180)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--mc-reps", type=int, default=200_000, help="oracle Monte-Carlo draws")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (-1: all cores)")
    p.add_argument("--methods", default="matching,proposed")
    p.add_argument("--matching-analysis", choices=("km", "cox"), default="km")
    p.add_argument("--out", required=True, help="metrics CSV")
    p.add_argument("--raw-out", default=None, help="per-replicate CSV (default <out>.raw.csv)")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("seed-sweep", help="matching VE curves under many matching seeds")
    _cohort_args(p)
    p.add_argument("--n-seeds", type=int, default=100)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_seed_sweep)
    return parser


def _fail(code: int, kind: str, exc: BaseException) -> int:
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(parser.format_usage(), end="", file=sys.stderr)
        return _fail(EXIT_USAGE, "usage", exc)
    except EstimationError as exc:
        return _fail(EXIT_ESTIMATION, "estimation", exc)
    except OSError as exc:
        return _fail(EXIT_IO, "io", exc)
    except ValueError as exc:
        return _fail(EXIT_USAGE, "validation", exc)


if __name__ == "__main__":
    sys.exit(main())
