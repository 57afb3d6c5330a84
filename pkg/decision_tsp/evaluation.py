"""
Measurement protocols: accuracy sweeps, acceptance curves, heuristic
baselines and binary-search extraction of tour costs from a decision
predictor.

A predictor maps a list of decision instances to YES probabilities. Both the
trained network (model_predictor) and the exact threshold oracle
(threshold_oracle) fit that shape, so every protocol runs in either mode.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from decision_tsp.exceptions import ConfigError, InvalidInstanceError
from decision_tsp.instances import DatasetRecord, generate_dataset, make_decision
from decision_tsp.model import DecisionInstance, ModelParams, TSPInstance, forward_batch
from decision_tsp.oracles import SAParams, Tour, nearest_neighbor, relative_excess, simulated_annealing
from decision_tsp.parallel import parallel_map

logger = logging.getLogger(__name__)

Predictor = Callable[[Sequence[DecisionInstance]], np.ndarray]
PredictorLike = Union[ModelParams, Predictor]

YES_THRESHOLD = 0.5
MAX_SEARCH_ITERATIONS = 64
TOUR_TOLERANCE = 1e-9


def model_predictor(params: ModelParams, batch_size: int = 32, threads: int = 1) -> Predictor:
    """
    Wrap trained parameters into a predictor.

    Instances are evaluated in disjoint-union chunks of batch_size; chunks
    run on the thread pool and are reassembled in input order.
    """
    def predict(instances: Sequence[DecisionInstance]) -> np.ndarray:
        instances = list(instances)
        if not instances:
            return np.zeros(0)
        chunks = [instances[i:i + batch_size] for i in range(0, len(instances), batch_size)]
        return np.concatenate(parallel_map(lambda chunk: forward_batch(chunk, params), chunks, threads))

    return predict


def threshold_oracle(optimum: Optional[float] = None) -> Predictor:
    """
    Exact decision oracle: 1 when the target exceeds the optimal cost, else 0.

    With optimum=None each instance's own graph.optimal_cost is the threshold.
    """
    def predict(instances: Sequence[DecisionInstance]) -> np.ndarray:
        result = []
        for item in instances:
            threshold = optimum if optimum is not None else item.graph.optimal_cost
            if threshold is None:
                raise InvalidInstanceError("threshold oracle needs a known optimal cost")
            result.append(1.0 if item.target_cost > threshold else 0.0)
        return np.asarray(result)

    return predict


def as_predictor(model: PredictorLike, threads: int = 1) -> Predictor:
    return model_predictor(model, threads=threads) if isinstance(model, ModelParams) else model


def eval_accuracy(model: PredictorLike, records: Sequence[DatasetRecord], x: float, threads: int = 1) -> float:
    """Fraction of dual instances at +/- x predicted on the correct side of 0.5."""
    if not records:
        raise ConfigError("accuracy needs at least one record")
    predict = as_predictor(model, threads)
    instances = [make_decision(record, dev) for record in records for dev in (x, -x)]
    probabilities = predict(instances)
    labels = np.array([item.label for item in instances], dtype=bool)
    return float(np.mean((probabilities >= YES_THRESHOLD) == labels))


@dataclass
class AcceptanceCurve:
    deviations: List[float]
    mean_prediction: List[float]
    counts: List[int]
    size_class: Optional[str] = None

    @property
    def delta(self) -> List[float]:
        """Backward differences of the mean prediction; the first entry is 0."""
        m = self.mean_prediction
        return [0.0] + [m[i] - m[i - 1] for i in range(1, len(m))]

    @property
    def slope(self) -> List[float]:
        d, m = self.deviations, self.mean_prediction
        return [0.0] + [(m[i] - m[i - 1]) / (d[i] - d[i - 1]) for i in range(1, len(m))]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "size_class": self.size_class,
            "deviation": self.deviations,
            "mean_prediction": self.mean_prediction,
            "delta": self.delta,
            "slope": self.slope,
            "count": self.counts,
        })


def acceptance_curve(model: PredictorLike, records: Sequence[DatasetRecord], deviations: Sequence[float],
                     size_class: Optional[str] = None, threads: int = 1) -> AcceptanceCurve:
    """
    Mean YES probability at target (1 + deviation) * C* for every grid point.

    Raises:
        ConfigError: If the grid is not strictly increasing or there are no records.
    """
    deviations = [float(dev) for dev in deviations]
    if not deviations or any(b <= a for a, b in zip(deviations, deviations[1:])):
        raise ConfigError("deviation grid must be non-empty and strictly increasing")
    if not records:
        raise ConfigError("acceptance curve needs at least one record")
    predict = as_predictor(model, threads)
    means = []
    for dev in deviations:
        probabilities = predict([make_decision(record, dev) for record in records])
        means.append(float(np.mean(probabilities)))
        logger.debug("deviation %+.3f: mean prediction %.4f", dev, means[-1])
    return AcceptanceCurve(deviations, means, [len(records)] * len(deviations), size_class)


@dataclass
class SweepResult:
    """Accuracy per grid cell; axis names the swept column ('n' or 'distribution')."""

    axis: str
    rows: List[Dict] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=[self.axis, "deviation", "accuracy", "count"])


def sweep_seed(seed: int, key: int) -> int:
    return int(np.random.SeedSequence([seed, key]).generate_state(1)[0])


def size_sweep(model: PredictorLike, sizes: Sequence[int], deviations: Sequence[float], count: int = 256,
               tag: str = "euclidean", seed: int = 0, allow_approximate: bool = False,
               threads: int = 1, verbose: bool = False) -> SweepResult:
    """Accuracy per (n, deviation) on fresh instances of exactly n cities."""
    predict = as_predictor(model, threads)
    result = SweepResult(axis="n")
    for n in sizes:
        records = generate_dataset(tag, count, n, n, sweep_seed(seed, n), allow_approximate,
                                   threads=threads, verbose=verbose)
        for dev in deviations:
            result.rows.append({"n": n, "deviation": dev, "accuracy": eval_accuracy(predict, records, dev),
                                "count": len(records)})
        logger.info("Size sweep n=%d done", n)
    return result


def distribution_eval(model: PredictorLike, datasets: Dict[str, Sequence[DatasetRecord]],
                      deviations: Sequence[float], threads: int = 1) -> SweepResult:
    """Accuracy per (generator tag, deviation); tags are reported in the given order."""
    predict = as_predictor(model, threads)
    result = SweepResult(axis="distribution")
    for tag, records in datasets.items():
        for dev in deviations:
            result.rows.append({"distribution": tag, "deviation": dev,
                                "accuracy": eval_accuracy(predict, records, dev), "count": len(records)})
    return result


Heuristic = Callable[[TSPInstance], Tour]


def default_heuristics(sa_params: Optional[SAParams] = None) -> Dict[str, Heuristic]:
    sa_params = sa_params or SAParams()
    return {
        "nn": lambda instance: nearest_neighbor(instance, 0),
        "sa": lambda instance: simulated_annealing(instance, sa_params),
    }


def heuristic_excess(records: Sequence[DatasetRecord], heuristics: Optional[Dict[str, Heuristic]] = None,
                     threads: int = 1) -> pd.DataFrame:
    """Per-instance heuristic tour cost and relative excess over the known optimum."""
    heuristics = heuristics or default_heuristics()

    def solve(item) -> Dict:
        index, record = item
        row = {"index": index, "n": record.n, "optimum": record.optimal_cost}
        for name, heuristic in heuristics.items():
            cost = heuristic(record.instance).cost
            row[f"{name}_cost"] = cost
            row[f"{name}_excess"] = relative_excess(cost, record.optimal_cost)
        return row

    return pd.DataFrame(parallel_map(solve, list(enumerate(records)), threads))


def baseline_tpr(model: Optional[PredictorLike], records: Sequence[DatasetRecord], deviations: Sequence[float],
                 heuristics: Optional[Dict[str, Heuristic]] = None, threads: int = 1) -> pd.DataFrame:
    """
    True positive rate per deviation for the model and for each heuristic.

    A heuristic counts as answering YES when its tour costs at most
    (1 + deviation) * C*. With model=None only the heuristics are reported.
    """
    heuristics = heuristics or default_heuristics()
    predict = as_predictor(model, threads) if model is not None else None
    excess = heuristic_excess(records, heuristics, threads)
    optimum = excess["optimum"].to_numpy()
    rows = []
    for dev in deviations:
        row = {"deviation": dev}
        if predict is not None:
            probabilities = predict([make_decision(record, dev) for record in records])
            row["model"] = float(np.mean(probabilities >= YES_THRESHOLD))
        bound = (1.0 + dev) * optimum * (1.0 + TOUR_TOLERANCE)
        for name in heuristics:
            row[name] = float(np.mean(excess[f"{name}_cost"].to_numpy() <= bound))
        row["count"] = len(records)
        rows.append(row)
    return pd.DataFrame(rows)


@dataclass
class BinarySearchResult:
    """Estimated cost, number of predictor calls and the (C_min, C, C_max) bracket per call."""

    cost: float
    iterations: int
    capped: bool
    trace: List[tuple] = field(default_factory=list)


def cost_bounds(instance: TSPInstance) -> tuple:
    """Sums of the n smallest and the n largest edge weights."""
    rows, cols = np.triu_indices(instance.n, k=1)
    weights = np.sort(instance.weights[rows, cols])
    return float(weights[:instance.n].sum()), float(weights[-instance.n:].sum())


def binary_search_cost(model: PredictorLike, instance: TSPInstance, p: float = 0.5, delta: float = 0.01,
                       rng: Optional[np.random.Generator] = None, midpoint: bool = False,
                       max_iterations: int = MAX_SEARCH_ITERATIONS) -> BinarySearchResult:
    """
    Estimate the optimal tour cost by bisecting on the predictor's answer.

    The bracket starts at the sums of the n cheapest and n most expensive
    edges and the first guess is uniform inside it (or its midpoint). A
    guess predicted below p moves C_min up, otherwise C_max comes down. The
    search stops once both bracket ends lie within delta of the guess just
    evaluated, which is the estimate returned, or after max_iterations
    predictor calls.

    Args:
        model: Trained parameters or a predictor.
        instance: Graph to price.
        p: Probability threshold in (0, 1).
        delta: Relative tolerance, positive.
        rng: Source for the initial guess; a fresh default generator when omitted.
        midpoint: Start from the bracket midpoint instead of a random guess.
        max_iterations: Hard cap on predictor calls.

    Returns:
        BinarySearchResult with capped=True if the cap ended the search.
    """
    if not 0.0 < p < 1.0:
        raise ConfigError(f"p must lie in (0, 1), got {p}")
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    predict = as_predictor(model)
    c_min, c_max = cost_bounds(instance)
    if midpoint:
        c = (c_min + c_max) / 2.0
    else:
        c = float((rng or np.random.default_rng()).uniform(c_min, c_max))

    trace = []
    iterations = 0
    while iterations < max_iterations:
        probability = float(predict([DecisionInstance(instance, c)])[0])
        iterations += 1
        if probability < p:
            c_min = c
        else:
            c_max = c
        trace.append((c_min, c, c_max))
        logger.debug("iteration %d: C=%.6f p=%.4f bracket [%.6f, %.6f]", iterations, c, probability, c_min, c_max)
        if c_min >= c * (1.0 - delta) and c_max <= c * (1.0 + delta):
            return BinarySearchResult(c, iterations, False, trace)
        c = (c_min + c_max) / 2.0
    logger.warning("Binary search hit the cap of %d iterations", max_iterations)
    return BinarySearchResult(trace[-1][1] if trace else c, iterations, True, trace)


@dataclass
class CostTarget:
    """An instance to price; factor converts normalized costs back to raw units."""

    name: str
    instance: TSPInstance
    optimum: Optional[float] = None
    factor: float = 1.0


def _deviation_pct(cost: float, optimum: Optional[float]) -> Optional[float]:
    return None if optimum is None else 100.0 * relative_excess(cost, optimum)


def cost_report(model: PredictorLike, targets: Sequence[CostTarget], sa_params: Optional[SAParams] = None,
                p: float = 0.5, delta: float = 0.01, seed: int = 0, midpoint: bool = False,
                threads: int = 1) -> pd.DataFrame:
    """
    Price every target with the binary search and with simulated annealing.

    Costs are reported in raw units; deviation columns are percentages over
    the known optimum and stay empty when it is unknown.
    """
    predict = as_predictor(model)
    sa_params = sa_params or SAParams()

    def price(item) -> Dict:
        index, target = item
        search = binary_search_cost(predict, target.instance, p, delta, np.random.default_rng([seed, index]),
                                    midpoint)
        sa = simulated_annealing(target.instance, sa_params)
        gnn_cost = search.cost * target.factor
        sa_cost = sa.cost * target.factor
        return {
            "name": target.name,
            "n": target.instance.n,
            "optimum": target.optimum,
            "gnn_cost": gnn_cost,
            "gnn_deviation_pct": _deviation_pct(gnn_cost, target.optimum),
            "gnn_iterations": search.iterations,
            "gnn_capped": search.capped,
            "sa_cost": sa_cost,
            "sa_deviation_pct": _deviation_pct(sa_cost, target.optimum),
        }

    return pd.DataFrame(parallel_map(price, list(enumerate(targets)), threads))
