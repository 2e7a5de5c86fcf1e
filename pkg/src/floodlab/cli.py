"""Command line interface.

Verbs: ``run`` (execute an experiment config), ``truth`` (build twin
scenario + synthetic observations), ``diagnose-bias`` (per-station offsets
from a free run), ``score`` (recompute metrics for an experiment directory).
Exit codes: 0 success, 1 usage/config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

import yaml


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; the CLI contract reserves
    # 2 for runtime failures, so route usage problems through status 1
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="floodlab",
                     description="flood simulation and data assimilation laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None, help="override config seed")
    p_run.add_argument("--output", default=None, help="override output directory")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="worker hint; members are propagated as one vectorised "
                            "batch, so results never depend on it")

    p_truth = sub.add_parser("truth", help="build twin scenario and observations")
    p_truth.add_argument("twin_config", nargs="?", default=None,
                         help="twin YAML; omit with --default for the built-in twin")
    p_truth.add_argument("--default", action="store_true",
                         help="use the default channel twin")
    p_truth.add_argument("--output", required=True)
    p_truth.add_argument("--seed", type=int, default=None)
    p_truth.add_argument("--double-peak", action="store_true")

    p_diag = sub.add_parser("diagnose-bias",
                            help="estimate per-station bias from a free run")
    p_diag.add_argument("--model", required=True, help="stations.csv of a free run")
    p_diag.add_argument("--obs", required=True, help="gauge observations CSV")
    p_diag.add_argument("--t0", type=float, required=True)
    p_diag.add_argument("--t1", type=float, required=True)
    p_diag.add_argument("--out", required=True, help="bias CSV to write")

    p_score = sub.add_parser("score", help="recompute scores for an experiment dir")
    p_score.add_argument("experiment_dir")
    p_score.add_argument("--obs", default=None, help="override observations CSV")
    p_score.add_argument("--masks", default=None, help="override masks directory")

    return parser


def _cmd_run(args):
    from .experiment import ExperimentConfig, run_experiment
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.output is not None:
        config.output = args.output
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    result = run_experiment(config)
    print(f"experiment {config.name}: wrote {result.out_dir}")
    return 0


def _cmd_truth(args):
    from .twinlab import build_twin_assets, default_twin, load_twin
    if args.twin_config and args.default:
        raise UsageError("give either a twin config or --default, not both")
    if args.twin_config:
        twin = load_twin(args.twin_config)
        if args.seed is not None:
            twin.seed = args.seed
    elif args.default:
        twin = default_twin(seed=args.seed if args.seed is not None else 0,
                            double_peak=args.double_peak)
    else:
        raise UsageError("need a twin config path or --default")
    paths = build_twin_assets(twin, args.output)
    print(f"twin assets: scenario={paths['scenario']} obs={paths['observations']} "
          f"masks={paths['masks']}")
    return 0


def _cmd_diagnose(args):
    from .experiment import diagnose_bias
    bias = diagnose_bias(args.model, args.obs, (args.t0, args.t1), args.out)
    for name, value in bias.items():
        print(f"{name}: {value:+.4f} m")
    return 0


def _cmd_score(args):
    import os

    from .enkf import GaugeObservationSet, load_bias
    from .experiment import (ExperimentConfig, load_observation_masks,
                             score_experiment, write_manifest)
    from .twinlab import load_scenario

    echo = os.path.join(args.experiment_dir, "config.yaml")
    if not os.path.exists(echo):
        raise UsageError(f"{args.experiment_dir} has no config.yaml; run the "
                         "experiment first")
    with open(echo) as f:
        config = ExperimentConfig.from_dict(yaml.safe_load(f),
                                            base_dir=args.experiment_dir)
    if args.obs:
        config.observations = args.obs
    if args.masks:
        config.masks = args.masks
    scenario = load_scenario(config.scenario)
    bias = load_bias(config.bias_file) if config.bias_file else {}
    obs = GaugeObservationSet.load_csv(config.observations, tau=config.tau, bias=bias)
    masks = load_observation_masks(config.masks) if config.masks else {}
    rows = score_experiment(args.experiment_dir, config, scenario, obs, masks)
    inputs = [(config.scenario, "scenario-asset"),
              (config.observations, "generated-observation")]
    if config.bias_file:
        inputs.append((config.bias_file, "bias-estimate"))
    write_manifest(args.experiment_dir, config, inputs)
    print(f"wrote {len(rows)} score rows to "
          f"{os.path.join(args.experiment_dir, 'scores.csv')}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        from .experiment import ConfigError
        handlers = {"run": _cmd_run, "truth": _cmd_truth,
                    "diagnose-bias": _cmd_diagnose, "score": _cmd_score}
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # solver/DA runtime failures
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
