"""Command-line entry point: ``cpbpolicy <subcommand> [options]``.

Every subcommand prints one JSON document (sorted keys, ``schema_version`` at
the root) to stdout or ``--out``. Exit codes: 0 success, 1 data or numeric
failure, 2 bad arguments.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import traceback
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .cpb import dr_learn_cpb, pseudo_outcomes
from .dataset import Cohort, Schema, load_csv, make_folds, select_covariates, write_csv
from .errors import ArgumentError, CPBError, SchemaError
from .learners import LearnerSpec
from .nuisance import DEFAULT_EPS, NuisanceFits, crossfit_nuisances
from .policy import (
    TIE_POLICIES,
    aupbc,
    default_grid,
    estimate_value,
    gap_to_unconstrained,
    margin_diagnostic,
    qini_curve,
)
from .restricted import (
    MODES,
    restricted_aupbc,
    restricted_scores_both,
    restricted_scores_contact_only,
    restricted_value,
)
from .sensitivity import sensitivity_bounds
from .simulation import SCENARIOS, ScenarioSpec, generate, oracle

SCHEMA_VERSION = 1
THREADS_ENV = "CPB_THREADS"


class _Parser(argparse.ArgumentParser):
    """Argument parser whose errors name the offending subcommand."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _learner(text: str) -> LearnerSpec:
    try:
        return LearnerSpec.parse(text)
    except ArgumentError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _add_data_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("data")
    g.add_argument("--data", required=True, help="cohort CSV with a header row")
    g.add_argument("--covariates", help="comma-separated covariate columns (default: all others)")
    g.add_argument("--treatment", default="a", help="binary treatment column (default: a)")
    g.add_argument("--outcome", default="y", help="outcome column (default: y)")
    m = p.add_argument_group("estimation")
    m.add_argument("--propensity-learner", type=_learner, default=LearnerSpec(),
                   help="e.g. kernel, kernel:h=0.3, local-linear, knn:k=25, linear:lambda=0")
    m.add_argument("--outcome-learner", type=_learner, default=LearnerSpec())
    m.add_argument("--cpb-learner", type=_learner, default=LearnerSpec(),
                   help="second-stage regression of pseudo-outcomes")
    m.add_argument("--folds", type=int, default=2, help="cross-fitting folds (default: 2)")
    m.add_argument("--eps", type=float, default=DEFAULT_EPS, help="propensity clip level")
    m.add_argument("--seed", type=int, default=0, help="fold-assignment seed")
    m.add_argument("--nuisances", help="reuse a nuisance CSV written by `fit` instead of refitting")
    m.add_argument("--threads", type=int, default=None,
                   help=f"worker cap (default: ${THREADS_ENV} or 1)")
    p.add_argument("--out", help="write JSON here instead of stdout")


def _add_policy_args(p, delta=True, grid=False, ties="under"):
    if delta:
        p.add_argument("--delta", type=float, default=0.5, help="budget in [0, 1] (default: 0.5)")
    if grid:
        p.add_argument("--grid-points", type=int, default=101, help="budget grid size (default: 101)")
    p.add_argument("--alpha", type=float, default=0.05, help="interval level (default: 0.05)")
    p.add_argument("--ties", choices=TIE_POLICIES, default=ties,
                   help=f"how tied scores at the threshold share the budget (default: {ties})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cpbpolicy", description="Budget-constrained treatment targeting.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw a synthetic cohort and its oracle values")
    p.add_argument("--scenario", choices=SCENARIOS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--noise-sd", type=float, default=1.0)
    p.add_argument("--confounding", type=float, default=0.5,
                   help="outcome shift from the hidden confounder (confounded only)")
    p.add_argument("--confounding-treatment", type=float, default=1.0,
                   help="treatment log-odds shift from the hidden confounder (confounded only)")
    p.add_argument("--deltas", type=_float_list, default=[0.25, 0.5, 0.75])
    p.add_argument("--csv", required=True, help="cohort CSV path; the oracle goes to <stem>.oracle.json")
    p.add_argument("--out", help="write JSON summary here instead of stdout")

    p = sub.add_parser("fit", help="cross-fit nuisances and write them as CSV")
    _add_data_args(p)
    p.add_argument("--csv", required=True, help="nuisance CSV output path")

    p = sub.add_parser("value", help="value of the top-delta rule with a Wald interval")
    _add_data_args(p)
    _add_policy_args(p)

    p = sub.add_parser("qini", help="value curve over a budget grid plus AUPBC")
    _add_data_args(p)
    _add_policy_args(p, delta=False, grid=True)
    p.add_argument("--csv", help="plot-ready curve CSV path")

    p = sub.add_parser("aupbc", help="area under the potential benefit curve")
    _add_data_args(p)
    _add_policy_args(p, delta=False, grid=True)

    p = sub.add_parser("sensitivity", help="value bounds under unmeasured confounding")
    _add_data_args(p)
    _add_policy_args(p)
    p.add_argument("--gamma", type=_float_list, default=[0.0, 0.1, 0.25, 0.5],
                   help="comma-separated confounding sizes")

    p = sub.add_parser("restricted", help="rules that may only see a subset of covariates")
    _add_data_args(p)
    _add_policy_args(p, grid=True, ties="split")
    p.add_argument("--w", required=True, help="comma-separated allowed columns ('' for none)")
    p.add_argument("--mode", choices=MODES, default="contact-only")
    return parser


# -- pipeline -----------------------------------------------------------------

def _header(path: str) -> list[str]:
    p = Path(path)
    if not p.exists():
        raise SchemaError(f"file not found: {p}")
    with p.open(newline="", encoding="utf-8") as fh:
        return [h.strip() for h in next(csv.reader(fh), [])]


def _split(text: str) -> list[str]:
    return [c.strip() for c in text.split(",") if c.strip()]


def _load(args) -> Cohort:
    if args.covariates is not None:
        covariates = _split(args.covariates)
    else:
        covariates = [c for c in _header(args.data) if c not in (args.treatment, args.outcome)]
    if not covariates:
        raise ArgumentError("no covariate columns selected")
    return load_csv(args.data, Schema(covariates, args.treatment, args.outcome))


def _validate(args):
    if getattr(args, "folds", 2) < 2:
        raise ArgumentError(f"--folds must be >= 2, got {args.folds}")
    if hasattr(args, "eps") and not 0 < args.eps < 0.5:
        raise ArgumentError(f"--eps must lie in (0, 0.5), got {args.eps}")
    if hasattr(args, "alpha") and not 0 < args.alpha < 1:
        raise ArgumentError(f"--alpha must lie in (0, 1), got {args.alpha}")
    if hasattr(args, "delta") and not 0 <= args.delta <= 1:
        raise ArgumentError(f"--delta must lie in [0, 1], got {args.delta}")
    if hasattr(args, "grid_points") and args.grid_points < 2:
        raise ArgumentError(f"--grid-points must be >= 2, got {args.grid_points}")
    if any(g < 0 for g in getattr(args, "gamma", [])):
        raise ArgumentError("--gamma values must be >= 0")


def _nuisances(args, cohort: Cohort) -> NuisanceFits:
    if args.nuisances:
        fits = NuisanceFits.from_csv(args.nuisances, eps=args.eps, seed=args.seed)
        if fits.n != cohort.n:
            raise ArgumentError(f"{args.nuisances} has {fits.n} rows, cohort has {cohort.n}")
        if fits.folds is None:
            fits = NuisanceFits(fits.pi, fits.mu0, fits.mu1, fits.eps,
                                make_folds(cohort.n, args.folds, args.seed))
        return fits
    threads = args.threads if args.threads is not None else _default_threads()
    folds = make_folds(cohort.n, args.folds, args.seed)
    return crossfit_nuisances(cohort, folds, args.propensity_learner, args.outcome_learner,
                              args.eps, n_jobs=threads)


def _scored(args):
    cohort = _load(args)
    fits = _nuisances(args, cohort)
    phi = pseudo_outcomes(cohort, fits)
    model = dr_learn_cpb(cohort, fits, spec=args.cpb_learner, pseudo=phi)
    return cohort, fits, phi, model.scores()


def _settings(args) -> dict:
    return {
        "n_folds": args.folds,
        "eps": args.eps,
        "seed": args.seed,
        "propensity_learner": str(args.propensity_learner),
        "outcome_learner": str(args.outcome_learner),
        "cpb_learner": str(args.cpb_learner),
        "nuisances": args.nuisances,
    }


def _grid(args) -> np.ndarray:
    return default_grid(args.grid_points)


def cmd_simulate(args) -> dict:
    spec = ScenarioSpec(args.scenario, args.n, args.seed, args.noise_sd,
                        args.confounding, args.confounding_treatment)
    sim = generate(spec)
    path = Path(args.csv)
    write_csv(sim.cohort, path)
    oracle_path = path.with_name(path.stem + ".oracle.json")
    truth = oracle(spec, args.deltas)
    oracle_doc = {"schema_version": SCHEMA_VERSION, "command": "simulate", **truth.to_dict()}
    oracle_path.write_text(_dumps(oracle_doc), encoding="utf-8")
    return {
        "scenario": spec.id,
        "n": spec.n,
        "seed": spec.seed,
        "noise_sd": spec.noise_sd,
        "csv": str(path),
        "oracle": str(oracle_path),
        "treated_fraction": float(sim.cohort.treatment.mean()),
    }


def cmd_fit(args) -> dict:
    cohort = _load(args)
    fits = _nuisances(args, cohort)
    fits.to_csv(args.csv)
    return {
        "settings": _settings(args),
        "n": cohort.n,
        "csv": args.csv,
        "mean_pi": float(fits.pi.mean()),
        "mean_tau": float(fits.tau.mean()),
        "share_h_star": float(fits.h_star.mean()),
    }


def cmd_value(args) -> dict:
    cohort, fits, phi, scores = _scored(args)
    ev = estimate_value(cohort, phi, scores, args.delta, args.alpha, args.ties)
    full = estimate_value(cohort, phi, scores, 1.0, args.alpha, args.ties)
    gap = gap_to_unconstrained(ev, full)
    return {
        "settings": _settings(args),
        "ties": args.ties,
        **ev.to_dict(),
        "outcome_mean": float(cohort.outcome.mean()),
        "gap": {"value": gap.gap, "bound": gap.bound, "se": gap.se, "within_bound": gap.within_bound},
        "margin": margin_diagnostic(fits.tau, scores, ev.threshold),
    }


def cmd_qini(args) -> dict:
    cohort, _, phi, scores = _scored(args)
    report = qini_curve(cohort, phi, scores, _grid(args), args.alpha, args.ties)
    if args.csv:
        with Path(args.csv).open("w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(report.csv_rows())
    return {
        "settings": _settings(args),
        "ties": args.ties,
        **report.to_dict(),
        "budget_80_percent_of_peak": report.budget_for_fraction_of_peak(0.8),
    }


def cmd_aupbc(args) -> dict:
    cohort, _, phi, scores = _scored(args)
    return {"settings": _settings(args), "ties": args.ties,
            **aupbc(cohort, phi, scores, _grid(args), args.alpha, args.ties).to_dict()}


def cmd_sensitivity(args) -> dict:
    cohort, fits, phi, scores = _scored(args)
    ev = estimate_value(cohort, phi, scores, args.delta, args.alpha, args.ties)
    bands = [sensitivity_bounds(cohort, phi, ev, fits, g, args.alpha).to_dict() for g in args.gamma]
    return {"settings": _settings(args), "ties": args.ties, "evaluation": ev.to_dict(), "bands": bands}


def cmd_restricted(args) -> dict:
    cohort = _load(args)
    fits = _nuisances(args, cohort)
    view = select_covariates(cohort, _split(args.w))
    phi = pseudo_outcomes(cohort, fits)
    if args.mode == "both":
        rs = restricted_scores_both(fits, cohort, view, args.cpb_learner)
    else:
        rs = restricted_scores_contact_only(fits, cohort, view, args.cpb_learner, phi)
    full_scores = dr_learn_cpb(cohort, fits, spec=args.cpb_learner, pseudo=phi).scores()
    out = {
        "settings": _settings(args),
        "ties": args.ties,
        "mode": args.mode,
        "w": list(view.selected),
        "restricted": restricted_value(cohort, rs, args.delta, args.alpha, args.ties).to_dict(),
        "unrestricted": estimate_value(cohort, phi, full_scores, args.delta, args.alpha,
                                       args.ties).to_dict(),
    }
    if args.mode == "contact-only":
        out["restricted_aupbc"] = restricted_aupbc(cohort, rs, _grid(args), args.alpha, args.ties).to_dict()
        out["unrestricted_aupbc"] = aupbc(cohort, phi, full_scores, _grid(args), args.alpha,
                                          args.ties).to_dict()
    return out


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "value": cmd_value,
    "qini": cmd_qini,
    "aupbc": cmd_aupbc,
    "sensitivity": cmd_sensitivity,
    "restricted": cmd_restricted,
}


# -- output -------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _dumps(doc: dict) -> str:
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def _failing_module(exc: BaseException) -> str:
    """Name of the innermost package module on the traceback."""
    name = "cli"
    pkg_dir = Path(__file__).resolve().parent
    for frame in traceback.extract_tb(exc.__traceback__):
        path = Path(frame.filename).resolve()
        if path.parent == pkg_dir:
            name = path.stem
    return name


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _validate(args)
        doc = COMMANDS[args.command](args)
    except ArgumentError as exc:
        print(f"cpbpolicy {args.command}: argument error [{_failing_module(exc)}]: {exc}", file=sys.stderr)
        return 2
    except (CPBError, OSError) as exc:
        print(f"cpbpolicy {args.command}: error [{_failing_module(exc)}]: {exc}", file=sys.stderr)
        return 1
    text = _dumps({"schema_version": SCHEMA_VERSION, "command": args.command, **doc})
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
