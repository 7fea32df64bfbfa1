"""Command-line interface.

Subcommands mirror the experiment stages: ``synth`` builds and saves the
network, ``optimize`` adds the optimization passes, ``evaluate`` adds the
metric sweep, ``pipeline`` runs end to end and renders figures, and
``export-states`` writes the per-cell discrete state manifest.

Exit codes: 0 success, 2 configuration problem, 3 file parse problem,
4 solver failure, 5 estimation failure, 1 anything unexpected.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .cells import CellCodebook, CellModel, TuningState
from .config import apply_cli_overrides, load_config
from .errors import (ConfigurationError, EstimationError, GeometryError,
                     SolverFailureError, TouchstoneError)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_SOLVER = 4
EXIT_ESTIMATION = 5


def _add_common_options(sub):
    sub.add_argument("--config", required=True,
                     help="experiment config JSON file")
    sub.add_argument("--seed", type=int, default=None,
                     help="override the scenario seed")
    sub.add_argument("--out-dir", default=None,
                     help="override the output directory")
    sub.add_argument("--model", choices=["ni", "i", "w"], default=None,
                     help="coupling model: ni dense, i layer-banded, "
                          "w banded plus first-order residual")
    sub.add_argument("--levels", type=int, default=None,
                     help="codebook size for discrete optimization "
                          "(0 forces continuous-only)")
    sub.add_argument("--snr-sweep", default=None, metavar="START:STEP:STOP",
                     help="SNR sweep in dB, e.g. 0:10:40")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="simnet",
        description="Multiport scattering model and phase optimization "
                    "for stacked reconfigurable surfaces")
    parser.add_argument("--verbose", "-v", action="count", default=0,
                        help="-v for progress info, -vv for debug detail")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
            ("synth", "synthesize the network and save it"),
            ("optimize", "synthesize and run the optimization passes"),
            ("evaluate", "optimize and evaluate metrics over the SNR sweep"),
            ("pipeline", "full run: synthesize, optimize, evaluate, render "
                         "figures")):
        p = sub.add_parser(name, help=help_text)
        _add_common_options(p)
        p.set_defaults(stage=name)

    p = sub.add_parser("export-states",
                       help="write the per-cell discrete state manifest")
    _add_common_options(p)
    p.add_argument("--states", default=None,
                   help="states.json from a previous run (otherwise the "
                        "optimization is run first)")
    p.set_defaults(stage="export-states")
    return parser


def _load(args):
    config = load_config(args.config)
    return apply_cli_overrides(config, seed=args.seed, model=args.model,
                               levels=args.levels, snr_sweep=args.snr_sweep,
                               out_dir=args.out_dir)


def _run_stage(args):
    from .pipeline import run_experiment

    config = _load(args)
    result = run_experiment(config, stage=args.stage)
    for name in sorted(result.files):
        print(f"wrote {result.files[name]}")
    return EXIT_OK


def _export_states(args):
    from .pipeline import _build_problem, export_gamma_states, run_experiment

    config = _load(args)
    if config.cells.levels is None:
        raise ConfigurationError(
            "state export requires a discrete state: set cells.levels in "
            "the config or pass --levels")
    if args.states is None:
        result = run_experiment(config, stage="optimize")
        print(f"wrote {result.files['gamma_states']}")
        return EXIT_OK
    try:
        with open(args.states, encoding="utf-8") as fh:
            states = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read states: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"invalid JSON in {args.states}: {exc}") from exc
    if not states.get("levels"):
        raise ConfigurationError(f"{args.states} holds no discrete levels")
    levels = np.asarray(states["levels"], dtype=int)
    cells = CellModel(kind=config.cells.kind,
                      insertion_loss_db=config.cells.insertion_loss_db,
                      return_loss_db=config.cells.return_loss_db)
    codebook = CellCodebook.uniform_phase(config.cells.levels, model=cells)
    problem = _build_problem(config)
    path = os.path.join(config.output.out_dir, "gamma_states.json")
    export_gamma_states(TuningState(levels=levels), codebook,
                        problem.topology, path)
    print(f"wrote {path}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.stage == "export-states":
            return _export_states(args)
        return _run_stage(args)
    except (ConfigurationError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TouchstoneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except SolverFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except Exception as exc:  # pragma: no cover - last-resort guard
        print(f"unexpected error: {exc!r}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
