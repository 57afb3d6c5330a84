"""
Instance generation in three distributions, labeled dual decision pairs and
the line-delimited dataset format.

Dataset files start with a header line
``{"format": "decision-tsp-dataset", "version": 1}`` followed by one JSON
record per line with the fields tag, seed, n, approximate, optimal_cost,
weights (row-major upper triangle, i < j) and optionally coords.
"""

import json
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy.sparse.csgraph import shortest_path
from scipy.spatial.distance import pdist, squareform

from decision_tsp.exceptions import (
    CapacityError,
    ConfigError,
    DataError,
    DatasetFormatError,
    InvalidInstanceError,
)
from decision_tsp.model import DecisionInstance, TSPInstance
from decision_tsp.oracles import HELD_KARP_LIMIT, SAParams, approximate_optimum, held_karp
from decision_tsp.parallel import parallel_map

logger = logging.getLogger(__name__)

DATASET_FORMAT = "decision-tsp-dataset"
DATASET_VERSION = 1
SQUARE_SIDE = np.sqrt(2.0) / 2.0

EUCLIDEAN = "euclidean"
RANDOM_METRIC = "random_metric"
RANDOM = "random"
TAGS = (EUCLIDEAN, RANDOM_METRIC, RANDOM)

_RECORD_FIELDS = ("tag", "seed", "n", "approximate", "optimal_cost", "weights")


@dataclass
class DatasetRecord:
    """A generated graph with its (exact or approximate) optimal tour cost."""

    instance: TSPInstance
    optimal_cost: float
    tag: str
    seed: int
    approximate: bool = False

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ConfigError(f"unknown generator tag '{self.tag}', expected one of {TAGS}")
        self.instance.optimal_cost = self.optimal_cost

    @property
    def n(self) -> int:
        return self.instance.n


@dataclass
class DualPair:
    positive: DecisionInstance
    negative: DecisionInstance
    deviation: float


def _check_size(n: int) -> None:
    if n < 3:
        raise InvalidInstanceError(f"instance needs at least 3 cities, got {n}")


def gen_euclidean(n: int, rng: np.random.Generator) -> TSPInstance:
    """n uniform points on a square of side sqrt(2)/2, so every distance is at most 1."""
    _check_size(n)
    coords = rng.uniform(0.0, SQUARE_SIDE, size=(n, 2))
    weights = squareform(pdist(coords, metric="euclidean"))
    return TSPInstance(weights=np.minimum(weights, 1.0), coords=coords)


def _symmetric_uniform(n: int, rng: np.random.Generator) -> np.ndarray:
    rows, cols = np.triu_indices(n, k=1)
    weights = np.zeros((n, n))
    weights[rows, cols] = 1.0 - rng.random(rows.size)
    return weights + weights.T


def metric_closure(weights: np.ndarray) -> np.ndarray:
    """All-pairs shortest-path distances (Floyd-Warshall), kept exactly symmetric."""
    closed = shortest_path(weights, method="FW", directed=False)
    closed = np.minimum(closed, closed.T)
    np.fill_diagonal(closed, 0.0)
    return closed


def gen_random_metric(n: int, rng: np.random.Generator) -> TSPInstance:
    _check_size(n)
    return TSPInstance(weights=metric_closure(_symmetric_uniform(n, rng)))


def gen_random(n: int, rng: np.random.Generator) -> TSPInstance:
    _check_size(n)
    return TSPInstance(weights=_symmetric_uniform(n, rng))


GENERATORS: Dict[str, Callable[[int, np.random.Generator], TSPInstance]] = {
    EUCLIDEAN: gen_euclidean,
    RANDOM_METRIC: gen_random_metric,
    RANDOM: gen_random,
}


def generate_record(tag: str, n: int, seed: int, allow_approximate: bool = False,
                    sa_params: Optional[SAParams] = None) -> DatasetRecord:
    """
    Generate one graph and solve it.

    The result is a pure function of (tag, n, seed). Instances above the
    Held-Karp limit are solved approximately by restarted simulated annealing
    and flagged as such, but only when allow_approximate is set.

    Raises:
        CapacityError: If n exceeds the exact limit and approximation is not allowed.
    """
    if tag not in GENERATORS:
        raise ConfigError(f"unknown generator tag '{tag}', expected one of {TAGS}")
    if n > HELD_KARP_LIMIT and not allow_approximate:
        raise CapacityError(f"n={n} exceeds the exact oracle limit of {HELD_KARP_LIMIT}; "
                            f"allow approximate ground truth to go beyond it")
    instance = GENERATORS[tag](n, np.random.default_rng(seed))
    if n <= HELD_KARP_LIMIT:
        tour = held_karp(instance)
        approximate = False
    else:
        tour = approximate_optimum(instance, sa_params or SAParams(seed=seed))
        approximate = True
    return DatasetRecord(instance=instance, optimal_cost=tour.cost, tag=tag, seed=seed, approximate=approximate)


def derive_seeds(count: int, n_min: int, n_max: int, seed: int):
    """Per-record seeds and sizes drawn from the master seed."""
    master = np.random.default_rng(seed)
    seeds = master.integers(0, 2 ** 31 - 1, size=count)
    sizes = master.integers(n_min, n_max + 1, size=count)
    return [int(s) for s in seeds], [int(n) for n in sizes]


def generate_dataset(tag: str, count: int, n_min: int = 10, n_max: int = 18, seed: int = 0,
                     allow_approximate: bool = False, threads: int = 1,
                     verbose: bool = False) -> List[DatasetRecord]:
    """
    Generate count solved records with n uniform in [n_min, n_max].

    Args:
        tag: Generator name (euclidean, random_metric or random).
        count: Number of records, may be zero.
        n_min: Smallest city count.
        n_max: Largest city count.
        seed: Master seed from which every record seed is derived.
        allow_approximate: Accept SA ground truth beyond the exact limit.
        threads: Worker threads; results keep the derived seed order.
        verbose: Show a progress bar.

    Returns:
        The records in generation order.
    """
    if count < 0:
        raise ConfigError(f"count must be non-negative, got {count}")
    if not 3 <= n_min <= n_max:
        raise ConfigError(f"size range must satisfy 3 <= n_min <= n_max, got [{n_min}, {n_max}]")
    if n_max > HELD_KARP_LIMIT and not allow_approximate:
        raise CapacityError(f"n_max={n_max} exceeds the exact oracle limit of {HELD_KARP_LIMIT}")
    seeds, sizes = derive_seeds(count, n_min, n_max, seed)

    def solve(item):
        n, record_seed = item
        return generate_record(tag, n, record_seed, allow_approximate)

    records = parallel_map(solve, list(zip(sizes, seeds)), threads, desc=f"Generating {tag}", verbose=verbose)
    logger.info("Generated %d %s records with n in [%d, %d]", count, tag, n_min, n_max)
    return records


def make_decision(record: DatasetRecord, deviation: float) -> DecisionInstance:
    """
    Decision instance at target (1 + deviation) * C*.

    Positive deviations are YES instances, negative ones NO; deviation 0 is
    left unlabeled.
    """
    if record.optimal_cost is None:
        raise InvalidInstanceError("record has no optimal cost")
    if deviation <= -1.0:
        raise ConfigError(f"deviation must exceed -1, got {deviation}")
    label = None if deviation == 0 else deviation > 0
    return DecisionInstance(record.instance, (1.0 + deviation) * record.optimal_cost, label)


def make_dual_pair(record: DatasetRecord, x: float) -> DualPair:
    """
    YES instance at (1 + x) * C* and NO instance at (1 - x) * C* on the same graph.

    Raises:
        ConfigError: If x is not in (0, 1).
        InvalidInstanceError: If the record carries no optimal cost.
    """
    if not 0.0 < x < 1.0:
        raise ConfigError(f"deviation must lie in (0, 1), got {x}")
    return DualPair(positive=make_decision(record, x), negative=make_decision(record, -x), deviation=x)


def _record_to_dict(record: DatasetRecord) -> Dict:
    rows, cols = np.triu_indices(record.n, k=1)
    entry = {
        "tag": record.tag,
        "seed": record.seed,
        "n": record.n,
        "approximate": record.approximate,
        "optimal_cost": record.optimal_cost,
        "weights": record.instance.weights[rows, cols].tolist(),
    }
    if record.instance.coords is not None:
        entry["coords"] = record.instance.coords.tolist()
    return entry


def _record_from_dict(entry: Dict, line: int, index: int, path: Optional[str]) -> DatasetRecord:
    if not isinstance(entry, dict):
        raise DatasetFormatError("record is not an object", line, index, path)
    missing = [key for key in _RECORD_FIELDS if key not in entry]
    if missing:
        raise DatasetFormatError(f"missing fields {missing}", line, index, path)
    n = entry["n"]
    if not isinstance(n, int) or n < 3:
        raise DatasetFormatError(f"invalid city count {n!r}", line, index, path)
    upper = entry["weights"]
    if not isinstance(upper, list) or len(upper) != n * (n - 1) // 2:
        raise DatasetFormatError(f"expected {n * (n - 1) // 2} weights for n={n}", line, index, path)
    rows, cols = np.triu_indices(n, k=1)
    weights = np.zeros((n, n))
    try:
        weights[rows, cols] = np.asarray(upper, dtype=np.float64)
        weights[cols, rows] = weights[rows, cols]
        instance = TSPInstance(weights=weights, coords=entry.get("coords"))
        return DatasetRecord(instance=instance, optimal_cost=entry["optimal_cost"], tag=entry["tag"],
                             seed=entry["seed"], approximate=bool(entry["approximate"]))
    except (TypeError, ValueError, InvalidInstanceError, ConfigError) as e:
        raise DatasetFormatError(str(e), line, index, path) from e


def save_dataset(records: Sequence[DatasetRecord], path: str) -> None:
    """Write records to path; floats keep their shortest round-trip repr."""
    try:
        with open(path, "w") as f:
            f.write(json.dumps({"format": DATASET_FORMAT, "version": DATASET_VERSION}) + "\n")
            for record in records:
                f.write(json.dumps(_record_to_dict(record)) + "\n")
    except OSError as e:
        raise DataError(f"cannot write dataset: {e}", path) from e
    logger.info("Wrote %d records to %s", len(records), path)


def load_dataset(path: str) -> List[DatasetRecord]:
    """
    Read a dataset written by save_dataset.

    Raises:
        DataError: If the file cannot be read.
        DatasetFormatError: On a bad header or record, naming line and record index.
    """
    try:
        with open(path) as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise DataError(f"cannot read dataset: {e}", path) from e

    if not lines:
        raise DatasetFormatError("missing header", 1, path=path)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"unreadable header: {e.msg}", 1, path=path) from e
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise DatasetFormatError("not a decision-tsp dataset", 1, path=path)
    if header.get("version") != DATASET_VERSION:
        raise DatasetFormatError(f"unsupported dataset version {header.get('version')!r}", 1, path=path)

    records = []
    for offset, text in enumerate(lines[1:]):
        line = offset + 2
        if not text.strip():
            continue
        try:
            entry = json.loads(text)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"unreadable record: {e.msg}", line, len(records), path) from e
        records.append(_record_from_dict(entry, line, len(records), path))
    logger.debug("Loaded %d records from %s", len(records), path)
    return records


def save_manifest(path: str, tag: str, count: int, n_min: int, n_max: int, seed: int,
                  records: Sequence[DatasetRecord]) -> None:
    """Side file listing the generation parameters and every derived record seed."""
    manifest = {
        "tag": tag,
        "count": count,
        "n_min": n_min,
        "n_max": n_max,
        "seed": seed,
        "records": [{"seed": r.seed, "n": r.n, "approximate": r.approximate} for r in records],
    }
    try:
        with open(path, "w") as f:
            json.dump(manifest, f, indent=2)
    except OSError as e:
        raise DataError(f"cannot write manifest: {e}", path) from e
