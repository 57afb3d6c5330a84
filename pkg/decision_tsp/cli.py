"""
Command-line interface for decision-tsp.
"""

import argparse
import sys
from typing import List, Optional


class ArgumentParser(argparse.ArgumentParser):
    """Argument parser that exits with status 1 on usage errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def float_list(value: str) -> List[float]:
    """Parse a comma-separated list of reals, e.g. '-0.1,0,0.1'."""
    try:
        return [float(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{value}'")


def int_list(value: str) -> List[int]:
    try:
        return [int(item) for item in value.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{value}'")


def _add_predictor_options(subparser: argparse.ArgumentParser) -> None:
    subparser.add_argument("--checkpoint", help="Trained model checkpoint")
    subparser.add_argument(
        "--oracle",
        action="store_true",
        default=None,
        help="Use the exact threshold oracle instead of a model"
    )


def parse_args(args: Optional[List[str]] = None) -> argparse.Namespace:
    """
    Parse command-line arguments.

    Flags left unset are None so that config-file values survive; main applies
    the rest on top of the loaded config.

    Args:
        args: Command-line arguments (defaults to sys.argv[1:]).

    Returns:
        Parsed arguments.
    """
    parser = ArgumentParser(
        description="decision-tsp - train and evaluate a graph neural network on the decision TSP",
        prog="decision-tsp"
    )

    subparsers = parser.add_subparsers(dest="command", help="Command to run", parser_class=ArgumentParser)
    subparsers.required = True

    # Dataset generation
    generate_parser = subparsers.add_parser("generate", help="Generate and solve a dataset")
    generate_parser.add_argument(
        "--tag",
        choices=["euclidean", "random_metric", "random"],
        help="Instance distribution (default: euclidean)"
    )
    generate_parser.add_argument("--count", type=int, help="Number of graphs (default: 1024)")
    generate_parser.add_argument("--n-min", type=int, help="Smallest city count (default: 10)")
    generate_parser.add_argument("--n-max", type=int, help="Largest city count (default: 18)")
    generate_parser.add_argument(
        "--allow-approximate",
        action="store_true",
        default=None,
        help="Accept simulated-annealing ground truth above the exact solver limit"
    )
    generate_parser.add_argument("--dataset", help="Dataset file name inside the output directory")

    # Training
    train_parser = subparsers.add_parser("train", help="Train the model")
    train_parser.add_argument("--dataset", help="Training dataset")
    train_parser.add_argument("--epochs", type=int, help="Epochs to run (default: 50)")
    train_parser.add_argument("--deviation", type=float, help="Dual-pair deviation x (default: 0.02)")
    train_parser.add_argument("--lr", type=float, help="Adam learning rate (default: 2e-5)")
    train_parser.add_argument("--resume", help="Checkpoint to resume from")
    train_parser.add_argument(
        "--fine-tune",
        action="store_true",
        default=None,
        help="Finish with one epoch over large deviations"
    )
    train_parser.add_argument(
        "--timing",
        dest="log_timing",
        action="store_true",
        default=None,
        help="Add a wall-time column to the metrics log"
    )

    # Accuracy sweeps
    eval_parser = subparsers.add_parser("eval", help="Accuracy, distribution and size sweeps")
    _add_predictor_options(eval_parser)
    eval_parser.add_argument("--dataset", action="append", dest="datasets", help="Evaluation dataset (repeatable)")
    eval_parser.add_argument("--deviations", type=float_list, help="Comma-separated deviations")
    eval_parser.add_argument("--sizes", type=int_list, help="Comma-separated city counts for a size sweep")
    eval_parser.add_argument("--count", type=int, help="Instances per size (default: 256)")

    # Acceptance curves
    curve_parser = subparsers.add_parser("curve", help="Acceptance curves")
    _add_predictor_options(curve_parser)
    curve_parser.add_argument("--dataset", action="append", dest="datasets", help="Dataset per size class (repeatable)")
    curve_parser.add_argument("--deviations", type=float_list, help="Comma-separated deviation grid")

    # Cost extraction
    cost_parser = subparsers.add_parser("cost", help="Binary-search cost extraction")
    _add_predictor_options(cost_parser)
    cost_parser.add_argument("--dataset", help="Dataset of solved graphs")
    cost_parser.add_argument("--tsplib", nargs="+", help="TSPLIB .tsp files")
    cost_parser.add_argument(
        "--convention",
        choices=["haversine", "tsplib"],
        help="Distance convention for TSPLIB files (default: haversine)"
    )
    cost_parser.add_argument("--delta", type=float, help="Relative tolerance (default: 0.01)")
    cost_parser.add_argument("--p", type=float, help="Probability threshold (default: 0.5)")
    cost_parser.add_argument("--midpoint", action="store_true", default=None, help="Start at the bracket midpoint")

    # Heuristic baselines
    baseline_parser = subparsers.add_parser("baseline", help="Nearest neighbor and simulated annealing baselines")
    _add_predictor_options(baseline_parser)
    baseline_parser.add_argument("--dataset", help="Dataset of solved graphs")
    baseline_parser.add_argument("--deviations", type=float_list, help="Comma-separated deviations for the TPR table")
    baseline_parser.add_argument("--budget", type=int, dest="calibration_budget", help="Calibration trials (default: 50)")
    baseline_parser.add_argument(
        "--no-default",
        dest="include_default",
        action="store_false",
        default=None,
        help="Do not let the default SA schedule compete in calibration"
    )

    # General options (add to every subparser)
    for subparser in [generate_parser, train_parser, eval_parser, curve_parser, cost_parser, baseline_parser]:
        subparser.add_argument("-c", "--config", help="JSON run configuration")
        subparser.add_argument("-o", "--output-dir", help="Output directory (default: runs)")
        subparser.add_argument(
            "-f", "--format",
            choices=["csv", "json"],
            help="Table format: csv or json (default: csv)"
        )
        subparser.add_argument("--seed", type=int, help="Master random seed (default: 0)")
        subparser.add_argument("--threads", type=int, help="Worker threads (default: 1)")
        subparser.add_argument(
            "-v", "--verbose",
            action="store_true",
            help="Enable verbose output"
        )

    return parser.parse_args(args)
