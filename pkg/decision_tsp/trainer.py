"""
Supervised training on dual decision pairs, the large-deviation fine-tune
and checkpoint persistence.
"""

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit
from tqdm import tqdm

from decision_tsp.autodiff import Tape, backward, bce_with_logits
from decision_tsp.exceptions import CheckpointError, ConfigError, DataError
from decision_tsp.instances import DatasetRecord, load_dataset, make_decision
from decision_tsp.model import ModelConfig, ModelParams, batch_logits, build_batch
from decision_tsp.optimizer import AdamState, adam_step

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "decision-tsp-checkpoint"
CHECKPOINT_VERSION = 1
LARGE_DEVIATIONS = (-0.02, 0.02, 1.0, 2.0, 10.0)
# Stream key of the fine-tune epoch; above any epoch number a run reaches.
FINE_TUNE_STREAM = 2**32 - 1
METRICS_FILE = "metrics.csv"
FINAL_CHECKPOINT = "checkpoint.json"


@dataclass
class TrainConfig:
    """
    Training run settings.

    epochs counts the epochs run by one call; a resumed run continues the
    epoch numbering of its checkpoint.
    """

    epochs: int = 50
    batches_per_epoch: int = 128
    pairs_per_batch: int = 16
    deviation: float = 0.02
    dataset_path: Optional[str] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 10
    output_dir: str = "runs/train"
    log_timing: bool = False

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batches_per_epoch <= 0 or self.pairs_per_batch <= 0:
            raise ConfigError("batches_per_epoch and pairs_per_batch must be positive")
        if not 0.0 < self.deviation < 1.0:
            raise ConfigError(f"deviation must lie in (0, 1), got {self.deviation}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be non-negative")

    def optimizer_hyper(self) -> Dict[str, float]:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    accuracy: float
    seconds: float

    def to_row(self, log_timing: bool = True) -> Dict:
        row = asdict(self)
        if not log_timing:
            del row["seconds"]
        return row


@dataclass
class Checkpoint:
    params: ModelParams
    metadata: Dict
    optimizer: Optional[AdamState] = None


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Random stream of one epoch; depends only on (seed, epoch) so resumed runs match."""
    return np.random.default_rng([seed, epoch])


def run_epoch(params: ModelParams, state: AdamState, records: Sequence[DatasetRecord],
              deviations: Sequence[float], batches: int, graphs_per_batch: int,
              rng: np.random.Generator, epoch: int = 0) -> EpochMetrics:
    """
    One pass of batches_per_epoch Adam steps.

    Each batch samples graphs with replacement and places every signed
    deviation of a graph in the same batch, in the order given.

    Raises:
        DataError: If the dataset cannot fill one batch.
    """
    if len(records) < graphs_per_batch:
        raise DataError(f"dataset holds {len(records)} graphs, fewer than one batch of {graphs_per_batch}")
    if any(dev == 0 for dev in deviations):
        raise ConfigError("training deviations must be non-zero")
    if any(record.optimal_cost is None for record in records):
        raise DataError("every training record needs an optimal cost")

    start = time.perf_counter()
    losses = []
    correct = total = 0
    for _ in range(batches):
        picks = rng.integers(0, len(records), size=graphs_per_batch)
        batch = [make_decision(records[i], dev) for i in picks for dev in deviations]
        labels = np.array([1.0 if item.label else 0.0 for item in batch])
        graph = build_batch(batch)

        with Tape():
            logits = batch_logits(graph, params)
            loss = bce_with_logits(logits, labels)
        backward(loss, params.store)
        adam_step(params.store, state)

        losses.append(loss.item())
        predictions = expit(logits.data) >= 0.5
        correct += int(np.sum(predictions == (labels == 1.0)))
        total += labels.size
        logger.debug("epoch %d batch loss %.6f", epoch, losses[-1])

    return EpochMetrics(epoch=epoch, loss=float(np.mean(losses)), accuracy=correct / total,
                        seconds=time.perf_counter() - start)


def train_epoch(params: ModelParams, records: Sequence[DatasetRecord], config: TrainConfig,
                rng: np.random.Generator, state: Optional[AdamState] = None,
                epoch: int = 0) -> Tuple[ModelParams, EpochMetrics]:
    """Standard epoch: every sampled graph contributes its YES and NO instance at +/- deviation."""
    state = state or AdamState.for_params(params.store, **config.optimizer_hyper())
    metrics = run_epoch(params, state, records, (config.deviation, -config.deviation),
                        config.batches_per_epoch, config.pairs_per_batch, rng, epoch)
    return params, metrics


def fine_tune_large_deviations(params: ModelParams, records: Sequence[DatasetRecord], config: TrainConfig,
                               deviations: Sequence[float] = LARGE_DEVIATIONS,
                               state: Optional[AdamState] = None,
                               rng: Optional[np.random.Generator] = None) -> Tuple[ModelParams, EpochMetrics]:
    """
    One epoch over instances at the given signed deviations, labels by sign.

    Restores confidence far above the optimum without disturbing the
    decision boundary close to it.
    """
    state = state or AdamState.for_params(params.store, **config.optimizer_hyper())
    rng = rng or epoch_rng(config.seed, FINE_TUNE_STREAM)
    metrics = run_epoch(params, state, records, deviations, config.batches_per_epoch,
                        config.pairs_per_batch, rng)
    logger.info("Fine-tuned on deviations %s: loss %.4f, accuracy %.4f",
                list(deviations), metrics.loss, metrics.accuracy)
    return params, metrics


def _append_metrics(path: str, metrics: EpochMetrics, log_timing: bool) -> None:
    frame = pd.DataFrame([metrics.to_row(log_timing)])
    frame.to_csv(path, mode="a", header=False, index=False)


def _reset_metrics(path: str, log_timing: bool) -> None:
    columns = ["epoch", "loss", "accuracy"] + (["seconds"] if log_timing else [])
    pd.DataFrame(columns=columns).to_csv(path, index=False)


def train(config: TrainConfig, records: Optional[Sequence[DatasetRecord]] = None,
          resume_from: Optional[str] = None, verbose: bool = False) -> Tuple[Checkpoint, List[EpochMetrics]]:
    """
    Run config.epochs epochs, logging metrics and writing checkpoints.

    Args:
        config: Training settings.
        records: Training graphs; loaded from config.dataset_path when omitted.
        resume_from: Checkpoint to continue from, including optimizer state.
        verbose: Show a progress bar.

    Returns:
        The final checkpoint and the metrics of the epochs run by this call.
    """
    if records is None:
        if not config.dataset_path:
            raise ConfigError("no dataset given for training")
        records = load_dataset(config.dataset_path)

    try:
        os.makedirs(config.output_dir, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory: {e}", config.output_dir) from e
    metrics_path = os.path.join(config.output_dir, METRICS_FILE)

    if resume_from:
        checkpoint = load_checkpoint(resume_from, expected_config=config.model)
        params = checkpoint.params
        state = checkpoint.optimizer or AdamState.for_params(params.store, **config.optimizer_hyper())
        first_epoch = int(checkpoint.metadata.get("epoch", 0)) + 1
        if not os.path.exists(metrics_path):
            _reset_metrics(metrics_path, config.log_timing)
        logger.info("Resuming from %s at epoch %d", resume_from, first_epoch)
    else:
        params = ModelParams.initialize(config.model, np.random.default_rng(config.seed))
        state = AdamState.for_params(params.store, **config.optimizer_hyper())
        first_epoch = 1
        _reset_metrics(metrics_path, config.log_timing)
        logger.info("Initialized model with %d parameters", params.store.num_parameters())

    history: List[EpochMetrics] = []
    metadata = {"epoch": first_epoch - 1, "seed": config.seed, "loss": None, "accuracy": None}
    for epoch in tqdm(range(first_epoch, first_epoch + config.epochs), desc="Training", disable=not verbose):
        _, metrics = train_epoch(params, records, config, epoch_rng(config.seed, epoch), state, epoch)
        history.append(metrics)
        _append_metrics(metrics_path, metrics, config.log_timing)
        metadata = {"epoch": epoch, "seed": config.seed, "loss": metrics.loss, "accuracy": metrics.accuracy}
        logger.info("Epoch %d: loss %.4f, accuracy %.4f", epoch, metrics.loss, metrics.accuracy)
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(params, metadata, os.path.join(config.output_dir, f"checkpoint_epoch{epoch:04d}.json"),
                            state)

    save_checkpoint(params, metadata, os.path.join(config.output_dir, FINAL_CHECKPOINT), state)
    return Checkpoint(params=params, metadata=metadata, optimizer=state), history


# Checkpoints

def _encode_arrays(arrays: Dict[str, np.ndarray]) -> List[Dict]:
    return [{"name": name, "shape": list(arrays[name].shape), "values": arrays[name].ravel().tolist()}
            for name in sorted(arrays)]


def save_checkpoint(params: ModelParams, metadata: Dict, path: str,
                    optimizer: Optional[AdamState] = None) -> None:
    """Write parameters (and optionally Adam moments) as versioned JSON with full-precision floats."""
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": params.config.to_dict(),
        "metadata": metadata,
        "parameters": _encode_arrays(params.store.to_arrays()),
    }
    if optimizer is not None:
        document["optimizer"] = {
            "lr": optimizer.lr,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "t": optimizer.t,
            "m": _encode_arrays(optimizer.m),
            "v": _encode_arrays(optimizer.v),
        }
    try:
        with open(path, "w") as f:
            json.dump(document, f)
    except OSError as e:
        raise DataError(f"cannot write checkpoint: {e}", path) from e
    logger.info("Saved checkpoint %s", path)


def _decode_arrays(entries, expected: Dict[str, Tuple[int, ...]], path: str) -> Dict[str, np.ndarray]:
    if not isinstance(entries, list):
        raise CheckpointError("parameter list is missing", path=path)
    arrays = {}
    for entry in entries:
        name = entry.get("name") if isinstance(entry, dict) else None
        if name is None:
            raise CheckpointError("parameter entry without a name", path=path)
        if name not in expected:
            raise CheckpointError("not part of the model", parameter=name, path=path)
        shape = entry.get("shape")
        if not isinstance(shape, list) or tuple(shape) != expected[name]:
            raise CheckpointError(f"shape {shape} does not match expected {list(expected[name])}",
                                  parameter=name, path=path)
        values = entry.get("values")
        if not isinstance(values, list) or len(values) != int(np.prod(shape)):
            raise CheckpointError(f"expected {int(np.prod(shape))} values", parameter=name, path=path)
        arrays[name] = np.asarray(values, dtype=np.float64).reshape(shape)
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise CheckpointError("missing from checkpoint", parameter=missing[0], path=path)
    return arrays


def load_checkpoint(path: str, expected_config: Optional[ModelConfig] = None) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        CheckpointError: On version, config or parameter mismatches.
        DataError: If the file cannot be read.
    """
    try:
        with open(path) as f:
            document = json.load(f)
    except OSError as e:
        raise DataError(f"cannot read checkpoint: {e}", path) from e
    except json.JSONDecodeError as e:
        raise CheckpointError(f"not valid JSON: {e.msg}", path=path) from e

    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError("not a decision-tsp checkpoint", path=path)
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {document.get('version')!r}", path=path)
    try:
        config = ModelConfig.from_dict(document.get("model_config") or {})
    except (ConfigError, TypeError) as e:
        raise CheckpointError(f"invalid model config: {e}", path=path) from e
    if expected_config is not None and config != expected_config:
        raise CheckpointError(f"model config mismatch: checkpoint has {config.to_dict()}, "
                              f"run expects {expected_config.to_dict()}", path=path)

    params = ModelParams.zeros(config)
    expected = params.expected_shapes()
    for name, values in _decode_arrays(document.get("parameters"), expected, path).items():
        params.store.assign(name, values)

    optimizer = None
    if document.get("optimizer") is not None:
        section = document["optimizer"]
        try:
            optimizer = AdamState(lr=section["lr"], beta1=section["beta1"], beta2=section["beta2"],
                                  eps=section["eps"], t=section["t"],
                                  m=_decode_arrays(section["m"], expected, path),
                                  v=_decode_arrays(section["v"], expected, path))
        except KeyError as e:
            raise CheckpointError(f"optimizer state lacks {e}", path=path) from e
    return Checkpoint(params=params, metadata=document.get("metadata") or {}, optimizer=optimizer)
