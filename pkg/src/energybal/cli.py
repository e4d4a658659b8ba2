"""Command-line interface: weights, estimate, balance, simulate, itr.

Exit codes: 0 success, 1 usage error, 2 data validation error, 3 solver
non-convergence (QP only with ``--strict``; a failed propensity fit always).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from .data import DataError, Sample, load_table, write_table
from .estimation import ConvergenceError

JOBS_ENV = "ENERGYBAL_JOBS"
EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 1, 2, 3

log = logging.getLogger("energybal")


class UsageError(Exception):
    pass


class SolverFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    return str(v)


def _emit(pairs, out=None, file=None):
    """Key-value report: 6 significant digits on stdout, full precision in ``file``."""
    out = out or sys.stdout
    for k, v in pairs:
        print(f"{k}={fmt(v)}", file=out)
    if file:
        with open(file, "w") as fh:
            for k, v in pairs:
                fh.write(f"{k}={repr(float(v)) if isinstance(v, (float, np.floating)) else v}\n")


def _split(s):
    return [t.strip() for t in s.split(",") if t.strip()] if s else []


def _read_sample(args) -> Sample:
    if not args.input:
        raise UsageError("--input is required")
    with open(args.input) as fh:
        head = fh.readline()
    delim = "\t" if head.count("\t") > head.count(",") else ","
    header = [h.strip() for h in head.rstrip("\n").split(delim)]
    roles = {args.treatment: "treatment"}
    if getattr(args, "outcome", None):
        roles[args.outcome] = "outcome"
    ignore = set(_split(args.ignore))
    covs = _split(args.covariates) or [h for h in header if h not in roles and h not in ignore]
    for c in covs:
        roles.setdefault(c, "covariate")
    for c in ignore:
        roles.setdefault(c, "ignore")
    return load_table(args.input, roles)


def _read_weights(path, n) -> np.ndarray:
    rows = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    if rows.dtype.names is None or "weight" not in rows.dtype.names:
        raise DataError(f"{path}: expected a 'weight' column")
    w = np.atleast_1d(rows["weight"])
    if len(w) != n:
        raise DataError(f"{path}: {len(w)} weights for {n} data rows")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise DataError(f"{path}: weights must be finite and nonnegative")
    return w


def _solve(sample, method, args):
    """Weights for ``method``; returns (w, metadata pairs)."""
    from .balancing import METHODS, energy_balancing_weights
    from .estimation import compute_weights

    if method in METHODS:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bw = energy_balancing_weights(sample, method, tol=args.tol, max_iter=args.max_iter)
        meta = [("method", method), ("status", bw.solver.status),
                ("iterations", bw.solver.iterations), ("polished", bw.solver.polished),
                ("objective", bw.solver.objective), ("a5_statistic", bw.a5_statistic())]
        for k, v in bw.energies.items():
            meta.append((f"energy_{k}", v.value if hasattr(v, "value") else v))
        if not bw.converged:
            log.warning("solver did not converge (status %s)", bw.solver.status)
            if args.strict:
                raise SolverFailure(f"{method} solver status {bw.solver.status}")
        return bw.w, meta
    w, _ = compute_weights(sample, method)
    return w, [("method", method), ("status", "converged"),
               ("a5_statistic", float(w.max() / len(w) ** (1 / 3)))]


def _weights_for(sample, args):
    if getattr(args, "weights", None):
        return _read_weights(args.weights, sample.n), [("method", "file")]
    return _solve(sample, args.method, args)


# ---------------------------------------------------------------------------
# subcommands

def cmd_weights(args) -> int:
    sample = _read_sample(args)
    w, meta = _solve(sample, args.method, args)
    out = args.output or "weights.csv"
    write_table(out, ["row", "weight"], [(i, float(v)) for i, v in enumerate(w)])
    meta = [("n", sample.n)] + meta
    _emit(meta, file=out + ".meta")
    return 0


def cmd_estimate(args) -> int:
    from .estimation import bootstrap_estimate, point_estimate

    sample = _read_sample(args)
    if sample.Y is None:
        raise UsageError("--outcome is required for estimate")
    contrast = tuple(int(t) for t in _split(args.contrast)) if args.contrast else None
    if args.estimand == "contrast" and (contrast is None or len(contrast) != 2):
        raise UsageError("--contrast a,b is required with --estimand contrast")
    if args.bootstrap:
        if args.weights:
            raise UsageError("--bootstrap re-estimates weights; use --method, not --weights")
        if args.seed is None:
            raise UsageError("--seed is required with --bootstrap")
        res = bootstrap_estimate(sample, args.method, args.estimand, B=args.bootstrap,
                                 seed=args.seed, contrast=contrast, jobs=args.jobs)
        pairs = list(res.as_dict().items())
    else:
        w, meta = _weights_for(sample, args)
        pairs = [("point", point_estimate(sample, w, args.estimand, contrast)),
                 ("estimand", args.estimand)] + meta
    _emit(pairs, file=args.output)
    return 0


def cmd_balance(args) -> int:
    from .diagnostics import balance_report

    sample = _read_sample(args)
    w, meta = _weights_for(sample, args)
    rep = balance_report(sample, w, max_poly=args.max_poly, pairs=not args.no_pairs)
    _emit(list(rep.summary().items()), file=args.output)
    if args.table:
        names = sample.names or tuple(f"x{j}" for j in range(sample.p))
        rows = [("smd", names[j], float(v)) for j, v in enumerate(rep.smd)]
        rows += [("rimse1", names[j], float(v)) for j, v in enumerate(rep.rimse1)]
        rows += [("smd2", t, float(v)) for t, v in zip(rep.smd2_terms, rep.smd2)]
        rows += [("rimse2", f"{names[j]}:{names[l]}", float(v))
                 for (j, l), v in zip(rep.pairs, rep.rimse2)]
        write_table(args.table, ["measure", "term", "value"], rows)
    return 0


def cmd_simulate(args) -> int:
    from .simulation import MC_METHODS, ScenarioSpec, run_mc

    if args.seed is None:
        raise UsageError("--seed is required for simulate")
    methods = _split(args.methods) or list(MC_METHODS)
    spec = ScenarioSpec(args.propensity, args.outcome_model, n=args.n, p=args.p, seed=args.seed)
    table = run_mc(spec, methods, reps=args.reps, jobs=args.jobs)
    header = ["method", "rmse", "bias", "reps", "failures", "true_tau", "max_a5"]
    print("\t".join(header))
    for r in table.values():
        print("\t".join(fmt(r.row()[k]) for k in header))
    if args.output:
        write_table(args.output, header, [[r.row()[k] for k in header] for r in table.values()])
    return 0


def cmd_itr(args) -> int:
    from .itr import evaluate_value, fit_itr, misclassification
    from .simulation import itr_oracle, itr_scenario

    if args.scenario:
        if args.seed is None:
            raise UsageError("--seed is required for scenario mode")
        train = itr_scenario(args.scenario, args.n, seed=args.seed)
    else:
        train = _read_sample(args)
        if train.Y is None:
            raise UsageError("--outcome is required for itr on user data")
    w, meta = _solve(train, args.method, args) if not args.weights else (
        _read_weights(args.weights, train.n), [("method", "file")])
    rule = fit_itr(train, w, loss=args.loss, lam=args.lam)
    pairs = [("intercept", rule.intercept)] + [(f"beta_{j}", float(b)) for j, b in enumerate(rule.beta)]
    pairs += [("lambda", rule.lam), ("loss", rule.loss), ("shift", rule.shift),
              ("treated_share", float(rule.decide(train.X).mean()))] + meta
    if args.scenario:
        test = itr_scenario(args.scenario, args.test_size, seed=args.seed + 1)
        opt, share = itr_oracle(args.scenario, args.test_size, seed=args.seed + 1)
        pairs += [("value", evaluate_value(rule, test)), ("oracle_value", opt),
                  ("oracle_treated_share", share), ("misclassification", misclassification(rule, test))]
    _emit(pairs, file=args.output)
    return 0


# ---------------------------------------------------------------------------
# parser

def _data_args(p):
    p.add_argument("--input", help="comma- or tab-delimited table with a header row")
    p.add_argument("--treatment", default="A", help="treatment column (default A)")
    p.add_argument("--outcome", default=None, help="outcome column (never used as a covariate)")
    p.add_argument("--covariates", default="", help="comma list (default: all other columns)")
    p.add_argument("--ignore", default="", help="comma list of columns to skip")


def _solver_args(p, default="ebw", choices=None):
    from .estimation import WEIGHT_METHODS
    p.add_argument("--method", default=default, choices=choices or WEIGHT_METHODS)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--max-iter", type=int, default=20000)
    p.add_argument("--strict", action="store_true", help="exit 3 when the solver does not converge")


def _jobs_default():
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="energybal", description="Energy balancing weights and causal estimation.")
    parser.add_argument("--config", help="key=value file merged under the command-line flags")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("weights", help="solve for balancing weights")
    _data_args(p)
    _solver_args(p)
    p.add_argument("--output", help="weight table path (default weights.csv); metadata in <output>.meta")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("estimate", help="weighted treatment-effect estimate")
    _data_args(p)
    _solver_args(p)
    p.add_argument("--weights", help="weight table from the weights command")
    p.add_argument("--estimand", default="ate", choices=("ate", "att", "contrast"))
    p.add_argument("--contrast", help="a,b treatment labels for --estimand contrast")
    p.add_argument("--bootstrap", type=int, default=0, metavar="B")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=_jobs_default())
    p.add_argument("--output")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("balance", help="balance diagnostics for a weight vector")
    _data_args(p)
    _solver_args(p, default="unweighted")
    p.add_argument("--weights", help="weight table from the weights command")
    p.add_argument("--max-poly", type=int, default=2)
    p.add_argument("--no-pairs", action="store_true", help="skip the bivariate RIMSEs")
    p.add_argument("--output")
    p.add_argument("--table", help="per-covariate / per-pair table path")
    p.set_defaults(func=cmd_balance)

    from .simulation import OUTCOME_MODELS, PROPENSITY_MODELS
    p = sub.add_parser("simulate", help="Monte-Carlo RMSE/bias table")
    p.add_argument("--propensity", required=True, choices=PROPENSITY_MODELS)
    p.add_argument("--outcome-model", required=True, choices=OUTCOME_MODELS)
    p.add_argument("--n", type=int, default=250)
    p.add_argument("--p", type=int, default=10)
    p.add_argument("--reps", type=int, default=1000)
    p.add_argument("--methods", default="", help="comma list from unweighted,ipw,ebw,iebw")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=_jobs_default())
    p.add_argument("--output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("itr", help="fit an individualized treatment rule")
    _data_args(p)
    _solver_args(p, default="iebw", choices=("unweighted", "ipw", "ebw", "iebw"))
    p.add_argument("--weights", help="weight table from the weights command")
    p.add_argument("--scenario", type=int, choices=(1, 2), help="simulated scenario instead of --input")
    p.add_argument("--n", type=int, default=400, help="training size in scenario mode")
    p.add_argument("--test-size", type=int, default=100_000)
    p.add_argument("--loss", default="logistic", choices=("logistic", "hinge"))
    p.add_argument("--lam", type=float, default=None, help="ridge penalty (default 1/n)")
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    p.set_defaults(func=cmd_itr)
    return parser


def read_config(path) -> list:
    """Turn a key=value file into flag tokens (``true`` means a bare switch)."""
    tokens = []
    for k, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{k}: expected key=value")
        key, val = (t.strip() for t in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if val.lower() in ("true", "yes"):
            tokens.append(flag)
        elif val.lower() not in ("false", "no"):
            tokens += [flag, val]
    return tokens


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        if args.config:
            # config entries go first so explicit flags win
            i = argv.index(args.command)
            extra = read_config(args.config)
            args = parser.parse_args(argv[:i + 1] + extra + argv[i + 1:])
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s: %(message)s")
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (SolverFailure, ConvergenceError) as e:
        print(f"solver error: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as e:
        # scenario validation and other argument-level problems
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
