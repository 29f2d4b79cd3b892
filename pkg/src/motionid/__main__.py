#!/usr/bin/env python

import argparse
import inspect
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import List, Optional
import enum

import motionid.args as args
import motionid.config as config
import motionid.stages as stages
from motionid.errors import MotionIDError, UsageError
from motionid.evaluation import as_fraction
from motionid.report import format_mean_std, summarize


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class MotionIDCommands(enum.Enum):
    """
    The set of subcommands that motionid accepts.
    """

    SYNTH = "synth"
    PREPROCESS = "preprocess"
    FEATURES = "features"
    TRAIN = "train"
    FINETUNE = "finetune"
    SELECT_EPOCH = "select-epoch"
    FINAL_TEST = "final-test"
    REPORT = "report"
    PLAN = "plan"


class MotionIDArgumentParser(argparse.ArgumentParser):
    """
    An ArgumentParser whose usage errors exit with EXIT_USAGE instead of
    argparse's 2, which motionid reserves for data errors.
    """

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def synth(experiment_config: config.ExperimentConfig, args: argparse.Namespace) -> None:
    logger.info(f"Synthesizing {args.users} users into {experiment_config.data_dir}")
    layout = stages.synth(
        experiment_config,
        users=args.users,
        days=args.days,
        unlocks_per_day=args.unlocks_per_day,
        lifts_per_location=args.lifts_per_location,
    )
    print(f"Wrote {args.users} synthetic users to {layout.data_dir}")


def preprocess_patterns(
    experiment_config: config.ExperimentConfig, args: argparse.Namespace
) -> None:
    counts = stages.preprocess_patterns(experiment_config)
    print(f"Wrote {sum(counts.values())} pattern windows for {len(counts)} users")


def preprocess_verify(experiment_config: config.ExperimentConfig, args: argparse.Namespace) -> None:
    counts = stages.preprocess_verify(experiment_config)
    print(f"Wrote {sum(counts.values())} verification attempts for {len(counts)} users")


def features(experiment_config: config.ExperimentConfig, args: argparse.Namespace) -> None:
    counts = stages.features(experiment_config)
    print(f"Wrote {sum(counts.values())} feature tensors for {len(counts)} users")


def train_patterns(experiment_config: config.ExperimentConfig, args: argparse.Namespace) -> None:
    accuracies = stages.train_patterns(experiment_config)
    trained = [a for a in accuracies if a.accuracies]
    print(f"Trained unlock predictors for {len(trained)} of {len(accuracies)} users")


def train_baseline(experiment_config: config.ExperimentConfig, args: argparse.Namespace) -> None:
    summary = stages.train_baseline(experiment_config)
    print(
        f"Baseline n={summary.n_base}: test accuracy "
        f"{summarize(summary.acc_test)}, "
        f"test FAR@TAR90 {summarize(summary.far_test)}"
    )


def finetune(experiment_config: config.ExperimentConfig, args: argparse.Namespace) -> None:
    counts = stages.finetune(experiment_config)
    print(f"Fine-tuned {len(counts)} held-out users, {sum(counts.values())} checkpoints")


def select_epoch(experiment_config: config.ExperimentConfig, args: argparse.Namespace) -> None:
    for user_id, epoch in stages.select_epochs(experiment_config).items():
        print(f"{user_id}: epoch {epoch}")


def final_test(experiment_config: config.ExperimentConfig, args: argparse.Namespace) -> None:
    for user_id, (mean, std) in stages.final_test(experiment_config).items():
        print(f"{user_id}: FAR@TAR90 {format_mean_std(mean, std)}")


def report(experiment_config: config.ExperimentConfig, args: argparse.Namespace) -> None:
    stages.report(experiment_config, args.format, sys.stdout)


def plan(experiment_config: config.ExperimentConfig, args: argparse.Namespace) -> None:
    for name in ("target_far", "tar"):
        value = getattr(args, name)
        try:
            rate = as_fraction(value)
        except (ValueError, ZeroDivisionError) as e:
            raise UsageError(f"--{name.replace('_', '-')} {value!r} is not a rate: {e}")
        if not 0 < rate < 1:
            raise UsageError(f"--{name.replace('_', '-')} must lie in (0, 1), got {value}")
    if args.users is not None and args.users < 2:
        raise UsageError(f"--users must be at least 2, got {args.users}")
    stages.plan_budget(args.target_far, args.tar, args.users, args.attempts, sys.stdout)


def _add_parser(subparser, command: str, help: str) -> argparse.ArgumentParser:
    return subparser.add_parser(
        command,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        help=inspect.cleandoc(help),
    )


def build_synth_parser(subparser) -> argparse.ArgumentParser:
    synth_parser = _add_parser(
        subparser,
        MotionIDCommands.SYNTH.value,
        """Write seeded synthetic specific-motion and all-motions datasets""",
    )
    synth_parser.set_defaults(func=synth)
    args.experiment(synth_parser)
    synth_parser.add_argument(
        "-u",
        "--users",
        dest="users",
        type=int,
        default=12,
        help=inspect.cleandoc("""Number of simulated users."""),
    )
    synth_parser.add_argument(
        "--days",
        dest="days",
        type=int,
        default=1,
        help=inspect.cleandoc("""All-motions recordings (days) per user."""),
    )
    synth_parser.add_argument(
        "--unlocks-per-day",
        dest="unlocks_per_day",
        type=int,
        default=10,
        help=inspect.cleandoc("""Unlocks in every all-motions recording."""),
    )
    synth_parser.add_argument(
        "--lifts-per-location",
        dest="lifts_per_location",
        type=int,
        default=50,
        help=inspect.cleandoc(
            """Specific-motion unlocks at each of the six
        locations."""
        ),
    )
    return synth_parser


def build_preprocess_parser(subparser) -> argparse.ArgumentParser:
    preprocess_parser = _add_parser(
        subparser,
        MotionIDCommands.PREPROCESS.value,
        """Cut recordings into pattern windows or verification attempts""",
    )
    targets = preprocess_parser.add_subparsers(title="Targets", required=True, dest="target")
    patterns_parser = _add_parser(
        targets, "patterns", """Unlock-positive and negative windows from all-motions data"""
    )
    patterns_parser.set_defaults(func=preprocess_patterns)
    args.experiment(patterns_parser)
    verify_parser = _add_parser(
        targets, "verify", """Clustered unlock attempts from specific-motion data"""
    )
    verify_parser.set_defaults(func=preprocess_verify)
    args.experiment(verify_parser)
    return preprocess_parser


def build_features_parser(subparser) -> argparse.ArgumentParser:
    features_parser = _add_parser(
        subparser,
        MotionIDCommands.FEATURES.value,
        """Turn verification attempts into 22 x 3 feature tensors""",
    )
    features_parser.set_defaults(func=features)
    args.experiment(features_parser)
    return features_parser


def build_train_parser(subparser) -> argparse.ArgumentParser:
    train_parser = _add_parser(
        subparser, MotionIDCommands.TRAIN.value, """Train the unlock predictors or the baseline"""
    )
    targets = train_parser.add_subparsers(title="Models", required=True, dest="target")
    patterns_parser = _add_parser(
        targets, "patterns", """One unlock predictor per device and user"""
    )
    patterns_parser.set_defaults(func=train_patterns)
    args.experiment(patterns_parser)
    args.epochs(patterns_parser, dest="pattern_epochs")
    args.batch_size(patterns_parser)
    args.learning_rate(patterns_parser)
    args.repetitions(patterns_parser)

    baseline_parser = _add_parser(
        targets, "baseline", """The n-class verification baseline on the base users"""
    )
    baseline_parser.set_defaults(func=train_baseline)
    args.experiment(baseline_parser)
    args.n_base(baseline_parser)
    args.n_test_final(baseline_parser)
    args.epochs(baseline_parser)
    args.batch_size(baseline_parser)
    args.learning_rate(baseline_parser)
    args.repetitions(baseline_parser)
    return train_parser


def build_finetune_parser(subparser) -> argparse.ArgumentParser:
    finetune_parser = _add_parser(
        subparser,
        MotionIDCommands.FINETUNE.value,
        """Fine-tune the baseline into a 2-class verifier per held-out user""",
    )
    finetune_parser.set_defaults(func=finetune)
    args.experiment(finetune_parser)
    args.n_base(finetune_parser)
    args.n_test_final(finetune_parser)
    args.epochs(finetune_parser, dest="finetune_epochs")
    args.batch_size(finetune_parser)
    args.test_attempts(finetune_parser)
    return finetune_parser


def build_select_epoch_parser(subparser) -> argparse.ArgumentParser:
    select_parser = _add_parser(
        subparser,
        MotionIDCommands.SELECT_EPOCH.value,
        """Choose each held-out user's fine-tune epoch by validation FAR""",
    )
    select_parser.set_defaults(func=select_epoch)
    args.experiment(select_parser)
    args.n_base(select_parser)
    args.n_test_final(select_parser)
    args.test_attempts(select_parser)
    args.score_mode(select_parser)
    return select_parser


def build_final_test_parser(subparser) -> argparse.ArgumentParser:
    final_parser = _add_parser(
        subparser,
        MotionIDCommands.FINAL_TEST.value,
        """Bootstrap FAR at TAR = 90% for every held-out user""",
    )
    final_parser.set_defaults(func=final_test)
    args.experiment(final_parser)
    args.n_base(final_parser)
    args.n_test_final(final_parser)
    args.test_attempts(final_parser)
    args.bootstrap_iterations(final_parser)
    args.score_mode(final_parser)
    return final_parser


def build_report_parser(subparser) -> argparse.ArgumentParser:
    report_parser = _add_parser(
        subparser,
        MotionIDCommands.REPORT.value,
        """Render the pattern, baseline and fine-tune tables""",
    )
    report_parser.set_defaults(func=report)
    args.output_dir(report_parser)
    args.report_format(report_parser)
    return report_parser


def build_plan_parser(subparser) -> argparse.ArgumentParser:
    plan_parser = _add_parser(
        subparser,
        MotionIDCommands.PLAN.value,
        """Rule-of-30 comparison budget for a target FAR and TAR""",
    )
    plan_parser.set_defaults(func=plan)
    plan_parser.add_argument(
        "--target-far",
        dest="target_far",
        default="1/50000",
        help=inspect.cleandoc("""Target false acceptance rate, e.g. 1/50000."""),
    )
    plan_parser.add_argument(
        "--tar",
        dest="tar",
        default="0.9",
        help=inspect.cleandoc("""Target true acceptance rate."""),
    )
    plan_parser.add_argument(
        "-u",
        "--users",
        dest="users",
        type=int,
        help=inspect.cleandoc(
            """Users available for cross-comparison. Prints the
        attempts each user must contribute."""
        ),
    )
    plan_parser.add_argument(
        "-m",
        "--attempts",
        dest="attempts",
        type=int,
        help=inspect.cleandoc(
            """Attempts per user actually available. Checks
        whether they meet the budget (needs --users)."""
        ),
    )
    return plan_parser


def build_argparser() -> argparse.ArgumentParser:
    parser = MotionIDArgumentParser(
        prog="motionid",
        description="Predict phone unlocks and verify the owner from IMU motion.",
        add_help=True,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument(
        "-c",
        "--config",
        dest="config_path",
        required=False,
        type=Path,
        default=Path("motionid.yaml"),
        help=inspect.cleandoc(
            """Path to a motionid configuration file.
        If unspecified, motionid looks for motionid.yaml in the directory it
        was invoked from (the PWD). A missing file means all defaults."""
        ),
    )

    args.verbose(parser)

    subparsers = parser.add_subparsers(
        title="Commands",
        required=True,
        dest="command_str",
        help=inspect.cleandoc("""Available Commands"""),
    )
    build_synth_parser(subparsers)
    build_preprocess_parser(subparsers)
    build_features_parser(subparsers)
    build_train_parser(subparsers)
    build_finetune_parser(subparsers)
    build_select_epoch_parser(subparsers)
    build_final_test_parser(subparsers)
    build_report_parser(subparsers)
    build_plan_parser(subparsers)

    return parser


PATH_FIELDS = ("data_dir", "output_dir")


def read_config(config_path: Path) -> config.ExperimentConfig:
    """
    Read motionid's configuration file from CONFIG_PATH and return the
    configuration. A missing file yields the defaults.
    """
    import yaml

    # Use the "!path" YAML tag to trigger a specialty constructor that we use
    # to do type conversion from bare string to a pathlib.Path object.
    def path_constructor(loader, node):
        value = loader.construct_scalar(node)
        return Path(value)

    # Register the constructor
    yaml.SafeLoader.add_constructor("!path", path_constructor)

    if not config_path.exists():
        logger.debug(f"No configuration file at {config_path.resolve()}, using defaults")
        return config.ExperimentConfig()

    logger.info(f"Reading motionid configuration from {config_path.resolve()}")
    with open(config_path.resolve(), "r") as cfg:
        file_config = yaml.safe_load(cfg) or {}
        logger.debug(f"Read motionid config: {file_config}")

    if not isinstance(file_config, dict):
        raise UsageError(f"{config_path} must hold a mapping of configuration keys")
    known = {f.name for f in fields(config.ExperimentConfig)}
    unknown = sorted(set(file_config) - known)
    if unknown:
        raise UsageError(f"Unknown configuration keys in {config_path}: {', '.join(unknown)}")
    for key in PATH_FIELDS:
        if isinstance(file_config.get(key), str):
            file_config[key] = Path(file_config[key])

    cfg = config.ExperimentConfig(**file_config)
    logger.debug(f"Found configuration options in config file: {cfg=!s}")

    return cfg


def config_with_cli_flags(
    config: config.ExperimentConfig,
    cli_flags: argparse.Namespace,
) -> config.ExperimentConfig:
    config_fields = {f.name for f in fields(config)}

    config_cli_flags = {
        k: v for k, v in vars(cli_flags).items() if k in config_fields and v is not None
    }
    new_cfg = replace(config, **config_cli_flags)
    logger.debug(f"Configuration options after overlaying CLI flags: {new_cfg=!s}")
    return new_cfg


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_argparser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        format="%(levelname)s:%(name)s:%(funcName)s:%(lineno)d:%(message)s",
        level=logging.DEBUG if args.verbosity > 0 else logging.INFO,
    )
    logger.debug(f"Running with {args=!s}")

    try:
        experiment_config = read_config(args.config_path)
        # "Overlay" arguments provided on the CLI so they take precedence over the
        # config file.
        experiment_config = config_with_cli_flags(experiment_config, args)
        args.func(experiment_config, args)
    except (UsageError, AssertionError) as e:
        logger.debug("Usage error", exc_info=True)
        print(f"motionid: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (MotionIDError, OSError) as e:
        logger.debug("Data error", exc_info=True)
        print(f"motionid: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
