"""Command-line experiment runner.

Subcommands: build, estimate, experiment, scaling, diagnose. Exit codes:
0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_config
from .experiments import run_build, run_diagnose, run_estimate, run_experiment, run_scaling
from .ftt import CrossEvaluationError
from .problems.ode import StepLimitError
from .sirt import MassMatrixError

_NUMERICAL_ERRORS = (
    CrossEvaluationError,
    MassMatrixError,
    StepLimitError,
    ZeroDivisionError,
    FloatingPointError,
    np.linalg.LinAlgError,
)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="YAML experiment configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="output directory (default from config)")
    parser.add_argument("--threads", type=int, default=1, help="parallel replicate workers")
    parser.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deepis", description=__doc__)
    parser.add_argument("--version", action="version", version=f"deepis {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="build and serialize the transport(s)")
    _common(p_build)

    p_est = sub.add_parser("estimate", help="replicate estimation against stored transports")
    _common(p_est)
    p_est.add_argument("--dirt", required=True, help="path to the (numerator) transport")
    p_est.add_argument("--dirt2", default=None, help="path to the denominator transport")

    p_exp = sub.add_parser("experiment", help="end-to-end build + estimate + summary")
    _common(p_exp)

    p_sca = sub.add_parser("scaling", help="sweep one control variable")
    _common(p_sca)
    p_sca.add_argument(
        "--sweep", required=True, choices=["dimension", "rank", "gamma_star", "n_samples"]
    )
    p_sca.add_argument("--values", required=True, help="comma-separated sweep values")

    p_diag = sub.add_parser("diagnose", help="Hellinger/ESS of stored transports")
    _common(p_diag)
    p_diag.add_argument("--dirt", required=True)
    p_diag.add_argument("--dirt2", default=None)
    return parser


def _dirt_paths(args) -> dict:
    paths = {"dirt_p": args.dirt}
    if args.dirt2:
        paths["dirt_q"] = args.dirt2
    return paths


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = config.with_seed(args.seed)
        out = Path(args.out) if args.out else Path(config.output)

        if args.command == "build":
            result = run_build(config, out)
            if args.verbose:
                for name, rec in result["builds"].items():
                    layers = rec["layers"]
                    evals = sum(r["n_evals"] for r in layers)
                    print(f"{name}: {len(layers)} layers, {evals} target evaluations")
            print(f"wrote {', '.join(result['paths'].values())}")
        elif args.command == "estimate":
            result = run_estimate(config, _dirt_paths(args), out, threads=args.threads)
            s = result["summary"]
            print(
                f"estimate {s['estimate_mean']:.6e} +- {s['estimate_std']:.2e} "
                f"({s['replicates']} replicates)"
            )
        elif args.command == "experiment":
            result = run_experiment(config, out, threads=args.threads)
            s = result["summary"]
            line = f"estimate {s['estimate_mean']:.6e} +- {s['estimate_std']:.2e}"
            if "rel_bias_mean" in s:
                line += f", rel bias {s['rel_bias_mean']:.4f}"
            if np.isfinite(s.get("d_hell_mean", float("nan"))):
                line += f", D_H {s['d_hell_mean']:.4f}"
            print(line)
        elif args.command == "scaling":
            values = [v for v in args.values.split(",") if v]
            rows = run_scaling(config, args.sweep, values, out, threads=args.threads)
            print(f"wrote {out / 'scaling.csv'} ({len(rows)} rows)")
        elif args.command == "diagnose":
            result = run_diagnose(config, _dirt_paths(args), out)
            for name in ("dirt_p", "dirt_q"):
                if name in result:
                    rec = result[name]
                    print(f"{name}: D_H {rec['d_hell']:.4f} +- {rec['d_hell_se']:.4f}, ESS {rec['ess']:.0f}")
        return 0
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
