"""
Main module for the decision-tsp tool.
"""

import argparse
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from colorama import Fore, Style, init

from decision_tsp.cli import parse_args
from decision_tsp.config import RunConfig, apply_overrides, load_config, sa_params, write_resolved_config
from decision_tsp.evaluation import (
    CostTarget,
    Predictor,
    acceptance_curve,
    baseline_tpr,
    cost_report,
    default_heuristics,
    distribution_eval,
    eval_accuracy,
    heuristic_excess,
    model_predictor,
    size_sweep,
    threshold_oracle,
)
from decision_tsp.exceptions import ConfigError, DataError, InvalidInstanceError, InvariantError
from decision_tsp.formatter import OutputFormatter
from decision_tsp.instances import DatasetRecord, generate_dataset, load_dataset, save_dataset, save_manifest
from decision_tsp.oracles import calibrate_sa, nearest_neighbor, simulated_annealing
from decision_tsp.trainer import TrainConfig, fine_tune_large_deviations, load_checkpoint, save_checkpoint, train
from decision_tsp.tsplib import parse_tsplib_tour, tsplib_parse


# Initialize colorama
init()

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3

# Flags that land in a command's config section, keyed by argparse dest
SECTION_FLAGS = {
    "generate": {"tag": "tag", "count": "count", "n_min": "n_min", "n_max": "n_max",
                 "allow_approximate": "allow_approximate", "dataset": "output"},
    "train": {"dataset": "dataset", "epochs": "epochs", "deviation": "deviation", "lr": "lr",
              "resume": "resume", "fine_tune": "fine_tune", "log_timing": "log_timing"},
    "eval": {"checkpoint": "checkpoint", "oracle": "oracle", "datasets": "datasets",
             "deviations": "deviations", "sizes": "sizes", "count": "count"},
    "curve": {"checkpoint": "checkpoint", "oracle": "oracle", "datasets": "datasets", "deviations": "deviations"},
    "cost": {"checkpoint": "checkpoint", "oracle": "oracle", "dataset": "dataset", "tsplib": "tsplib",
             "convention": "convention", "delta": "delta", "p": "p", "midpoint": "midpoint"},
    "baseline": {"checkpoint": "checkpoint", "oracle": "oracle", "dataset": "dataset", "deviations": "deviations",
                 "calibration_budget": "calibration_budget", "include_default": "include_default"},
}


def setup_logging(verbose: bool = False) -> None:
    """
    Set up logging configuration.

    Args:
        verbose: Whether to enable verbose output.
    """
    log_level = logging.DEBUG if verbose else logging.INFO
    log_format = "%(asctime)s - %(levelname)s - %(message)s"
    logging.basicConfig(level=log_level, format=log_format)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then command-line flags."""
    config = load_config(args.config)
    apply_overrides(config, None, {
        "seed": args.seed,
        "threads": args.threads,
        "output_dir": args.output_dir,
        "format": args.format,
    })
    flags = SECTION_FLAGS[args.command]
    apply_overrides(config, args.command, {key: getattr(args, dest, None) for dest, key in flags.items()})
    return config


def load_predictor(section, config: RunConfig) -> Predictor:
    """Threshold oracle when requested, otherwise the model stored in the section's checkpoint."""
    if section.oracle:
        return threshold_oracle()
    if not section.checkpoint:
        raise ConfigError("a checkpoint (or oracle mode) is required")
    checkpoint = load_checkpoint(section.checkpoint, expected_config=config.model)
    return model_predictor(checkpoint.params, threads=config.threads)


def require_dataset(path: Optional[str], command: str) -> List[DatasetRecord]:
    if not path:
        raise ConfigError(f"{command} needs a dataset")
    return load_dataset(path)


def write_table(data, config: RunConfig, protocol: str) -> str:
    path = OutputFormatter.table_path(config.output_dir, protocol, config.seed, config.format)
    OutputFormatter.write_table(data, path, config.format)
    print(f"{Fore.GREEN}Results saved to {path}{Style.RESET_ALL}")
    return path


def cmd_generate(config: RunConfig, verbose: bool = False) -> List[str]:
    """
    Generate a solved dataset and its seed manifest.

    Args:
        config: Resolved run configuration.
        verbose: Whether to show progress.

    Returns:
        Paths of the files written.
    """
    section = config.generate
    records = generate_dataset(section.tag, section.count, section.n_min, section.n_max, config.seed,
                               section.allow_approximate, config.threads, verbose)
    os.makedirs(config.output_dir, exist_ok=True)
    path = os.path.join(config.output_dir, section.output)
    save_dataset(records, path)
    manifest = os.path.splitext(path)[0] + ".manifest.json"
    save_manifest(manifest, section.tag, section.count, section.n_min, section.n_max, config.seed, records)
    resolved = write_resolved_config(config, config.output_dir, "generate")
    print(f"{Fore.GREEN}Results saved to {path}{Style.RESET_ALL}")
    return [path, manifest, resolved]


def cmd_train(config: RunConfig, verbose: bool = False) -> List[str]:
    """Train, optionally fine-tune on large deviations, and leave checkpoints plus metrics."""
    section = config.train
    train_config = TrainConfig(
        epochs=section.epochs,
        batches_per_epoch=section.batches_per_epoch,
        pairs_per_batch=section.pairs_per_batch,
        deviation=section.deviation,
        dataset_path=section.dataset,
        model=config.model,
        lr=section.lr,
        beta1=section.beta1,
        beta2=section.beta2,
        eps=section.eps,
        seed=config.seed,
        checkpoint_every=section.checkpoint_every,
        output_dir=config.output_dir,
        log_timing=section.log_timing,
    )
    records = require_dataset(section.dataset, "train")
    checkpoint, _ = train(train_config, records, resume_from=section.resume, verbose=verbose)
    outputs = [os.path.join(config.output_dir, "checkpoint.json"), os.path.join(config.output_dir, "metrics.csv")]

    if section.fine_tune:
        params, metrics = fine_tune_large_deviations(checkpoint.params, records, train_config,
                                                     section.fine_tune_deviations, checkpoint.optimizer)
        path = os.path.join(config.output_dir, "checkpoint_finetuned.json")
        metadata = dict(checkpoint.metadata, fine_tune_loss=metrics.loss, fine_tune_accuracy=metrics.accuracy)
        save_checkpoint(params, metadata, path, checkpoint.optimizer)
        outputs.append(path)

    outputs.append(write_resolved_config(config, config.output_dir, "train"))
    print(f"{Fore.GREEN}Training finished; checkpoint saved to {outputs[0]}{Style.RESET_ALL}")
    return outputs


def cmd_eval(config: RunConfig, verbose: bool = False) -> List[str]:
    """Accuracy per dataset and deviation, per distribution, and optionally per size."""
    section = config.eval
    if not section.datasets and not section.sizes:
        raise ConfigError("eval needs datasets or sizes")
    predict = load_predictor(section, config)
    outputs = []

    if section.datasets:
        rows = []
        by_tag: Dict[str, List[DatasetRecord]] = {}
        for path in section.datasets:
            records = load_dataset(path)
            for record in records:
                by_tag.setdefault(record.tag, []).append(record)
            for dev in section.deviations:
                rows.append({"dataset": path, "deviation": dev, "accuracy": eval_accuracy(predict, records, dev),
                             "count": len(records)})
        outputs.append(write_table(rows, config, "eval_accuracy"))
        distribution = distribution_eval(predict, by_tag, section.deviations)
        outputs.append(write_table(distribution.to_frame(), config, "eval_distribution"))

    if section.sizes:
        sweep = size_sweep(predict, section.sizes, section.deviations, section.count, section.tag, config.seed,
                           section.allow_approximate, config.threads, verbose)
        outputs.append(write_table(sweep.to_frame(), config, "eval_sizes"))

    outputs.append(write_resolved_config(config, config.output_dir, "eval"))
    return outputs


def size_class(records: List[DatasetRecord]) -> str:
    sizes = [record.n for record in records]
    return f"n{min(sizes)}-{max(sizes)}" if sizes else "empty"


def cmd_curve(config: RunConfig, verbose: bool = False) -> List[str]:
    """Acceptance curve per dataset (size class) with backward differences."""
    section = config.curve
    if not section.datasets:
        raise ConfigError("curve needs at least one dataset")
    predict = load_predictor(section, config)
    frames = []
    for path in section.datasets:
        records = load_dataset(path)
        curve = acceptance_curve(predict, records, section.deviations, size_class(records))
        frames.append(curve.to_frame())
    outputs = [write_table(pd.concat(frames, ignore_index=True), config, "curve")]
    outputs.append(write_resolved_config(config, config.output_dir, "curve"))
    return outputs


def cost_targets(config: RunConfig) -> List[CostTarget]:
    """Dataset records and TSPLIB files to price, with known optima in raw units."""
    section = config.cost
    targets = []
    if section.dataset:
        for index, record in enumerate(load_dataset(section.dataset)):
            targets.append(CostTarget(f"record{index}", record.instance, record.optimal_cost))
    for path in section.tsplib:
        parsed = tsplib_parse(path, section.convention)
        optimum = section.optima.get(parsed.name)
        if optimum is None and parsed.name in section.tours:
            optimum = parsed.raw_tour_cost(parse_tsplib_tour(section.tours[parsed.name]))
        if optimum is not None:
            parsed.instance.optimal_cost = optimum / parsed.factor
        targets.append(CostTarget(parsed.name, parsed.instance, optimum, parsed.factor))
    if not targets:
        raise ConfigError("cost needs a dataset or TSPLIB files")
    return targets


def cmd_cost(config: RunConfig, verbose: bool = False) -> List[str]:
    """Binary-search cost extraction next to simulated annealing, in raw units."""
    section = config.cost
    targets = cost_targets(config)
    predict = load_predictor(section, config)
    report = cost_report(predict, targets, sa_params(section.sa, config.seed), section.p, section.delta,
                         config.seed, section.midpoint, config.threads)
    outputs = [write_table(report, config, "cost")]
    outputs.append(write_resolved_config(config, config.output_dir, "cost"))
    return outputs


def split_holdout(records: List[DatasetRecord], fraction: float, seed: int):
    """Seeded split into (calibration, holdout); the holdout gets round(fraction * len) records."""
    order = np.random.default_rng(seed).permutation(len(records))
    cut = len(records) - int(round(fraction * len(records)))
    return [records[i] for i in order[:cut]], [records[i] for i in order[cut:]]


def cmd_baseline(config: RunConfig, verbose: bool = False) -> List[str]:
    """NN and SA excess, SA calibration on one split judged on the other, and the TPR table."""
    section = config.baseline
    records = require_dataset(section.dataset, "baseline")
    calibration, holdout = split_holdout(records, section.holdout_fraction, config.seed)
    if not calibration or not holdout:
        raise ConfigError("dataset too small to split into calibration and holdout sets")

    base = sa_params(section.sa, config.seed)
    result = calibrate_sa([r.instance for r in calibration], section.calibration_budget, config.seed, base,
                          section.include_default, config.threads)
    heuristics = {
        "nn": lambda instance: nearest_neighbor(instance, 0),
        "sa_default": lambda instance: simulated_annealing(instance, base),
        "sa_calibrated": lambda instance: simulated_annealing(instance, result.params),
    }
    excess = heuristic_excess(holdout, heuristics, config.threads)
    summary = OutputFormatter.summarize_excess(excess, list(heuristics))

    predict = load_predictor(section, config) if (section.oracle or section.checkpoint) else None
    tpr = baseline_tpr(predict, holdout, section.deviations, default_heuristics(result.params), config.threads)

    outputs = [
        write_table(excess, config, "baseline_excess"),
        write_table(summary, config, "baseline_summary"),
        write_table(tpr, config, "baseline_tpr"),
    ]
    calibration_path = OutputFormatter.table_path(config.output_dir, "baseline_calibration", config.seed, "json")
    OutputFormatter.write_table(OutputFormatter.format_calibration(result), calibration_path, "json")
    outputs.append(calibration_path)
    outputs.append(write_resolved_config(config, config.output_dir, "baseline"))
    return outputs


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "curve": cmd_curve,
    "cost": cmd_cost,
    "baseline": cmd_baseline,
}


def fail(args: argparse.Namespace, message: str, code: int) -> int:
    """Log a failure (with traceback when verbose) and return its exit code."""
    logging.error(message)
    if args.verbose:
        logging.exception(message)
    print(f"{Fore.RED}{args.command} failed (exit code {code}).{Style.RESET_ALL}", file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    """
    Main entry point for the CLI tool.

    Returns:
        Exit code: 0 success, 1 usage or configuration error, 2 data or
        capacity error, 3 internal error.
    """
    args = parse_args(argv)
    setup_logging(args.verbose)

    try:
        config = resolve_config(args)
        os.makedirs(config.output_dir, exist_ok=True)
        COMMANDS[args.command](config, args.verbose)
        return EXIT_OK

    except ConfigError as e:
        return fail(args, f"Configuration error: {str(e)}", EXIT_CONFIG)
    except (DataError, InvalidInstanceError, OSError) as e:
        return fail(args, f"Data error: {str(e)}", EXIT_DATA)
    except InvariantError as e:
        return fail(args, f"Internal invariant violated: {str(e)}", EXIT_INTERNAL)
    except Exception as e:
        return fail(args, f"Unexpected error: {str(e)}", EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())
