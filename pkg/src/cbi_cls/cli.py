"""Command-line entry point.

Subcommands::

    simulate   --params p.json --n N [--seed S] --out x.csv
    estimate   --in x.csv [--params p.json] [--regime R]
    limit      --params p.json --reps R [--grid G] [--seed S] --out f.csv
    experiment --config e.json
    moments    --params p.json --t T --q Q [--step H]

Exit codes: 0 success, 1 usage error, 2 numeric failure.  Output files are
written to a temporary name and renamed only on success.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .errors import CbiError, NumericalError, UsageError
from .estimate import REGIMES, cls_rho_betabar, scaled_errors
from .harness import atomic_write, load_config, run_experiment, to_json
from .model import derive, load_params
from .moments import centered_moments
from .rng import MAX_SEED, draw_seed
from .simulate import (
    SCHEMES,
    SimConfig,
    limit_vectors,
    sample_limit_functionals_batch,
    simulate_skeleton,
    skeleton_from_csv,
    skeleton_to_csv,
)

PARAMS_HELP = """\
parameter file schema (JSON):
  {"c": >=0, "beta": >=0, "b": real,
   "nu": [{"z": >0, "rate": >0}, ...],   (optional)
   "mu": [{"z": >0, "rate": >0}, ...]}   (optional)
experiment config schema (JSON):
  {"params": {...}, "n_values": [int >= 2, ...], "replicates": int >= 100,
   "grid_points": int, "seed": int, "regime": "general-critical" | "pure-immigration",
   "output_path": str, "substeps_per_unit": int, "scheme": str, "workers": int,
   "reference_factor": int, "checks": ["convergence", "deterministic_limits",
   "scaling_limit", "iid_residuals"]}
"""


class _UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n\n{PARAMS_HELP}")
        raise _UsageExit(message)


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be in [0, 2**64)")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cbi-cls", description=__doc__.split("\n")[0],
                     formatter_class=argparse.RawDescriptionHelpFormatter, epilog=PARAMS_HELP)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="simulate one skeleton X_0..X_n to CSV")
    p.add_argument("--params", required=True)
    p.add_argument("--n", type=_positive, required=True)
    p.add_argument("--seed", type=_seed)
    p.add_argument("--out", required=True)
    p.add_argument("--substeps", type=_positive, default=64)
    p.add_argument("--scheme", choices=SCHEMES, default="auto")
    p.add_argument("--replicate", type=int, default=0)

    p = sub.add_parser("estimate", help="CLS estimate from a skeleton CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--params", help="true parameters; adds scaled errors to the output")
    p.add_argument("--regime", choices=REGIMES)

    p = sub.add_parser("limit", help="sample the limit vector of the scaled CLS errors")
    p.add_argument("--params", required=True)
    p.add_argument("--reps", type=_positive, required=True)
    p.add_argument("--grid", type=int, default=2000)
    p.add_argument("--seed", type=_seed)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=_positive, default=1)

    p = sub.add_parser("experiment", help="run a Monte Carlo experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="override output_path from the config")
    p.add_argument("--workers", type=_positive, help="override workers from the config")

    p = sub.add_parser("moments", help="centered moments of X_t started at 0")
    p.add_argument("--params", required=True)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--q", type=int, required=True)
    p.add_argument("--step", type=float, default=1.0 / 512)
    return parser


def _read_text(path: str) -> str:
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _params(path):
    try:
        return load_params(path)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _cmd_simulate(args) -> dict:
    params = _params(args.params)
    seed = draw_seed() if args.seed is None else args.seed
    sk = simulate_skeleton(params, args.n, SimConfig(args.substeps, args.scheme), seed=seed,
                           replicate=args.replicate)
    atomic_write(args.out, skeleton_to_csv(sk))
    return {"out": args.out, "n": args.n, "seed": seed, "replicate": args.replicate}


def _cmd_estimate(args) -> dict:
    sk = skeleton_from_csv(_read_text(args.input))
    est = cls_rho_betabar(sk)
    out = est.to_dict()
    if args.params:
        d = derive(_params(args.params))
        regime = args.regime or ("pure-immigration" if d.C == 0 else "general-critical")
        out["regime"] = regime
        out["scaled_errors"] = scaled_errors(est, d, sk.n, regime).tolist() if est.transformed else None
    return out


def _cmd_limit(args) -> dict:
    d = derive(_params(args.params))
    if args.grid < 2:
        raise UsageError("--grid must be at least 2")
    seed = draw_seed() if args.seed is None else args.seed
    funcs = sample_limit_functionals_batch(d.beta_tilde, d.C, args.grid, args.reps, seed=seed,
                                           workers=args.workers)
    vec, ok = limit_vectors(funcs)
    lines = ["rep,e1,e2"]
    for r in np.flatnonzero(ok):
        lines.append(f"{r},{float(vec[r, 0])!r},{float(vec[r, 1])!r}")
    atomic_write(args.out, "\n".join(lines) + "\n")
    return {"out": args.out, "reps": args.reps, "grid": args.grid, "seed": seed,
            "discards": int((~ok).sum())}


def _cmd_experiment(args) -> dict:
    try:
        cfg = load_config(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read {args.config}: {exc.strerror}") from None
    overrides = {}
    if args.out:
        overrides["output_path"] = args.out
    if args.workers:
        overrides["workers"] = args.workers
    if overrides:
        cfg = replace(cfg, **overrides)
    result = run_experiment(cfg)
    summary = {"seed": cfg.seed, "output_path": cfg.output_path}
    if cfg.output_path is None:
        summary["report"] = result
    return summary


def _cmd_moments(args) -> dict:
    cm = centered_moments(_params(args.params), args.t, args.q, args.step)
    return cm.to_dict()


COMMANDS = {
    "simulate": _cmd_simulate,
    "estimate": _cmd_estimate,
    "limit": _cmd_limit,
    "experiment": _cmd_experiment,
    "moments": _cmd_moments,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageExit:
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        out = COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"cbi-cls {args.command}: {exc}\n\n{PARAMS_HELP}")
        return 1
    except OSError as exc:
        sys.stderr.write(f"cbi-cls {args.command}: {exc}\n")
        return 1
    except (NumericalError, FloatingPointError, OverflowError) as exc:
        sys.stderr.write(f"cbi-cls {args.command}: numeric failure: {exc}\n")
        return 2
    except CbiError as exc:
        sys.stderr.write(f"cbi-cls {args.command}: {exc}\n")
        return 2
    sys.stdout.write(to_json(out))
    return 0


if __name__ == "__main__":
    sys.exit(main())
