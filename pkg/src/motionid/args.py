"""
Provides a uniform way to build argparse Arguments for common command-line
flags that motionid needs.

Flags whose dest matches an ExperimentConfig field default to None so that
only values given on the command line overlay the configuration file.
"""

import argparse
import inspect
from pathlib import Path

from motionid.pipeline import ScoreMode


def verbose(parser: argparse.ArgumentParser) -> None:
    """
    Add the -v/--verbose flag to PARSER.
    """
    parser.add_argument(
        "-v",
        "--verbose",
        dest="verbosity",
        action="count",
        default=0,
        help=inspect.cleandoc(
            """How verbosely to log. This flag can be included
        multiple times to increase the verbosity."""
        ),
    )


def data_dir(parser: argparse.ArgumentParser) -> None:
    """
    Add the --data-dir flag to PARSER.
    """
    parser.add_argument(
        "--data-dir",
        dest="data_dir",
        required=False,
        type=Path,
        help=inspect.cleandoc(
            """Directory holding the specific_motion and
        all_motions datasets."""
        ),
    )


def output_dir(parser: argparse.ArgumentParser) -> None:
    """
    Add the -o/--output-dir flag to PARSER.
    """
    parser.add_argument(
        "-o",
        "--output-dir",
        dest="output_dir",
        required=False,
        type=Path,
        help=inspect.cleandoc(
            """Directory every stage writes its tensors, models,
        metrics and reports to."""
        ),
    )


def seed(parser: argparse.ArgumentParser) -> None:
    """
    Add the -s/--seed flag to PARSER.
    """
    parser.add_argument(
        "-s",
        "--seed",
        dest="seed",
        required=False,
        type=int,
        help=inspect.cleandoc(
            """Root seed of every randomized step. Required in
        replication mode."""
        ),
    )


def replication(parser: argparse.ArgumentParser) -> None:
    """
    Add the --replication flag to PARSER.
    """
    parser.add_argument(
        "--replication",
        dest="replication",
        action="store_const",
        const=True,
        default=None,
        help=inspect.cleandoc(
            """Hold the run to the full-scale protocol: 90 + 11
        users, n_base in 60..85 and an explicit seed."""
        ),
    )


def n_base(parser: argparse.ArgumentParser) -> None:
    """
    Add the -n/--n-base flag to PARSER.
    """
    parser.add_argument(
        "-n",
        "--n-base",
        dest="n_base",
        required=False,
        type=int,
        help=inspect.cleandoc("""Number of users the baseline classifier is trained on."""),
    )


def n_test_final(parser: argparse.ArgumentParser) -> None:
    """
    Add the --n-test-final flag to PARSER.
    """
    parser.add_argument(
        "--n-test-final",
        dest="n_test_final",
        required=False,
        type=int,
        help=inspect.cleandoc("""Number of users held out for fine-tuning and the final test."""),
    )


def repetitions(parser: argparse.ArgumentParser) -> None:
    """
    Add the -r/--repetitions flag to PARSER.
    """
    parser.add_argument(
        "-r",
        "--repetitions",
        dest="repetitions",
        required=False,
        type=int,
        help=inspect.cleandoc(
            """How many times to train each model, every time
        with freshly resampled attempt splits."""
        ),
    )


def epochs(parser: argparse.ArgumentParser, dest: str = "epochs") -> None:
    """
    Add the -e/--epochs flag to PARSER, stored in DEST.
    """
    parser.add_argument(
        "-e",
        "--epochs",
        dest=dest,
        required=False,
        type=int,
        help=inspect.cleandoc("""Training epochs."""),
    )


def batch_size(parser: argparse.ArgumentParser) -> None:
    """
    Add the --batch-size flag to PARSER.
    """
    parser.add_argument(
        "--batch-size",
        dest="batch_size",
        required=False,
        type=int,
        help=inspect.cleandoc("""Attempts (or windows) per training batch."""),
    )


def learning_rate(parser: argparse.ArgumentParser) -> None:
    """
    Add the --learning-rate flag to PARSER.
    """
    parser.add_argument(
        "--learning-rate",
        dest="learning_rate",
        required=False,
        type=float,
        help=inspect.cleandoc(
            """Adam learning rate of the baseline. Fine-tuning
        divides it by lr_reduction."""
        ),
    )


def test_attempts(parser: argparse.ArgumentParser) -> None:
    """
    Add the --test-attempts flag to PARSER.
    """
    parser.add_argument(
        "--test-attempts",
        dest="test_attempts",
        required=False,
        type=int,
        help=inspect.cleandoc(
            """Genuine test attempts per held-out user, which is
        also the number of impostor attempts drawn per bootstrap iteration."""
        ),
    )


def bootstrap_iterations(parser: argparse.ArgumentParser) -> None:
    """
    Add the --iterations flag to PARSER.
    """
    parser.add_argument(
        "--iterations",
        dest="bootstrap_iterations",
        required=False,
        type=int,
        help=inspect.cleandoc("""Bootstrap iterations of the final FAR estimate."""),
    )


def score_mode(parser: argparse.ArgumentParser) -> None:
    """
    Add the --score-mode flag to PARSER.
    """
    parser.add_argument(
        "--score-mode",
        dest="score_mode",
        required=False,
        choices=[m.value for m in ScoreMode],
        help=inspect.cleandoc(
            """How a verification score is computed: the
        genuine-class probability or the distance to the enrolment centroid."""
        ),
    )


def experiment(parser: argparse.ArgumentParser) -> None:
    """
    Add the flags every data-handling subcommand shares to PARSER.
    """
    data_dir(parser)
    output_dir(parser)
    seed(parser)
    replication(parser)


def report_format(parser: argparse.ArgumentParser) -> None:
    """
    Add the -f/--format flag to PARSER.
    """
    parser.add_argument(
        "-f",
        "--format",
        dest="format",
        default="text",
        choices=["csv", "text"],
        help=inspect.cleandoc("""Format of the tables written and printed."""),
    )
