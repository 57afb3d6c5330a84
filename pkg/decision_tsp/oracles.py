"""
Tour-cost oracles: exact solvers for ground truth and the nearest-neighbor
and simulated-annealing baselines.
"""

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from decision_tsp.exceptions import CapacityError, ConfigError, InvalidInstanceError
from decision_tsp.model import TSPInstance
from decision_tsp.parallel import parallel_map

logger = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 10
HELD_KARP_LIMIT = 20


@dataclass
class Tour:
    order: List[int]
    cost: float

    @property
    def n(self) -> int:
        return len(self.order)


@dataclass
class SAParams:
    """
    Simulated annealing schedule.

    moves_per_temperature defaults to 100 * n; max_moves caps the total
    number of proposals across all temperature levels.
    """

    T0: float = 0.1
    alpha: float = 0.95
    T_min: float = 1e-4
    moves_per_temperature: Optional[int] = None
    seed: int = 0
    max_moves: int = 500_000

    def __post_init__(self):
        if not self.T0 > 0:
            raise ConfigError(f"T0 must be positive, got {self.T0}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.T_min < self.T0:
            raise ConfigError(f"T_min must lie in (0, T0), got {self.T_min}")
        if self.moves_per_temperature is not None and self.moves_per_temperature <= 0:
            raise ConfigError("moves_per_temperature must be positive")
        if self.max_moves <= 0:
            raise ConfigError("max_moves must be positive")

    def to_dict(self) -> Dict:
        return asdict(self)


def _weights(instance: Union[TSPInstance, np.ndarray]) -> np.ndarray:
    return instance.weights if isinstance(instance, TSPInstance) else np.asarray(instance, dtype=np.float64)


def tour_cost(instance: Union[TSPInstance, np.ndarray], order: Sequence[int]) -> float:
    """
    Cyclic cost of visiting the cities in order, closing edge included.

    Raises:
        InvalidInstanceError: If order is not a permutation of 0..n-1.
    """
    w = _weights(instance)
    n = w.shape[0]
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (n,) or not np.array_equal(np.sort(order), np.arange(n)):
        raise InvalidInstanceError(f"tour must be a permutation of 0..{n - 1}")
    return float(w[order, np.roll(order, -1)].sum())


def brute_force_optimal(instance: TSPInstance) -> Tour:
    """Enumerate every distinct cyclic tour (city 0 fixed, one direction only)."""
    n = instance.n
    if not 3 <= n <= BRUTE_FORCE_LIMIT:
        raise CapacityError(f"brute force handles 3..{BRUTE_FORCE_LIMIT} cities, got {n}")
    w = instance.weights.tolist()
    best_cost, best_perm = math.inf, None
    for perm in itertools.permutations(range(1, n)):
        if perm[0] > perm[-1]:
            continue
        cost = w[0][perm[0]] + w[perm[-1]][0]
        for a, b in zip(perm, perm[1:]):
            cost += w[a][b]
        if cost < best_cost:
            best_cost, best_perm = cost, perm
    order = [0, *best_perm]
    return Tour(order, tour_cost(instance, order))


def _popcounts(count: int, bits: int) -> np.ndarray:
    masks = np.arange(count)
    pc = np.zeros(count, dtype=np.int64)
    for b in range(bits):
        pc += (masks >> b) & 1
    return pc


def held_karp(instance: TSPInstance) -> Tour:
    """
    Exact optimum by subset dynamic programming, vectorized per subset size.

    City 0 is the fixed start; dp[mask, j] is the cheapest path from 0 through
    the cities in mask (bit k = city k+1) ending at city j+1.

    Raises:
        CapacityError: If the instance has more than HELD_KARP_LIMIT cities.
    """
    n = instance.n
    if n > HELD_KARP_LIMIT:
        raise CapacityError(f"Held-Karp is limited to {HELD_KARP_LIMIT} cities, got {n}")
    if n < 3:
        raise InvalidInstanceError(f"instance needs at least 3 cities, got {n}")

    m = n - 1
    full = 1 << m
    inner = instance.weights[1:, 1:]
    dp = np.full((full, m), np.inf)
    parent = np.full((full, m), -1, dtype=np.int8)
    for j in range(m):
        dp[1 << j, j] = instance.weights[0, j + 1]

    masks = np.arange(full)
    popcount = _popcounts(full, m)
    for size in range(2, m + 1):
        level = masks[popcount == size]
        for j in range(m):
            ending = level[((level >> j) & 1) == 1]
            candidates = dp[ending ^ (1 << j)] + inner[:, j]
            best = np.argmin(candidates, axis=1)
            dp[ending, j] = candidates[np.arange(ending.size), best]
            parent[ending, j] = best

    closing = dp[full - 1] + instance.weights[1:, 0]
    last = int(np.argmin(closing))
    path = []
    mask, j = full - 1, last
    while j != -1:
        path.append(j + 1)
        previous = int(parent[mask, j])
        mask ^= 1 << j
        j = previous
    order = [0, *reversed(path)]
    return Tour(order, tour_cost(instance, order))


def nearest_neighbor(instance: TSPInstance, start: int = 0) -> Tour:
    """Greedy closest-unvisited-city tour; ties go to the lowest city index."""
    n = instance.n
    if not 0 <= start < n:
        raise InvalidInstanceError(f"start city must lie in 0..{n - 1}, got {start}")
    visited = np.zeros(n, dtype=bool)
    visited[start] = True
    order = [start]
    current = start
    for _ in range(n - 1):
        current = int(np.argmin(np.where(visited, np.inf, instance.weights[current])))
        visited[current] = True
        order.append(current)
    return Tour(order, tour_cost(instance, order))


def simulated_annealing(instance: TSPInstance, params: SAParams) -> Tour:
    """
    2-opt simulated annealing started from the nearest-neighbor tour.

    A move reverses order[i..j]; worse moves are accepted with probability
    exp(-delta / T). The temperature cools geometrically from T0 until it
    drops to T_min. The best tour seen is returned, so the result is never
    worse than the starting tour.
    """
    n = instance.n
    rng = np.random.default_rng(params.seed)
    start = nearest_neighbor(instance, 0)
    w = instance.weights.tolist()
    order = list(start.order)
    current = best = start.cost
    best_order = order[:]
    moves = params.moves_per_temperature or 100 * n

    T = params.T0
    total = 0
    while T > params.T_min and total < params.max_moves:
        count = min(moves, params.max_moves - total)
        first = rng.integers(0, n, size=count)
        second = rng.integers(0, n - 1, size=count)
        second = second + (second >= first)
        lo, hi = np.minimum(first, second).tolist(), np.maximum(first, second).tolist()
        draws = rng.random(count).tolist()
        for i, j, u in zip(lo, hi, draws):
            if i == 0 and j == n - 1:
                continue
            p, q, r, s = order[i - 1], order[i], order[j], order[(j + 1) % n]
            delta = w[p][r] + w[q][s] - w[p][q] - w[r][s]
            if delta < 0 or u < math.exp(-delta / T):
                order[i:j + 1] = order[i:j + 1][::-1]
                current += delta
                if current < best - 1e-12:
                    best = current
                    best_order = order[:]
        total += count
        T *= params.alpha
    logger.debug("SA finished after %d proposals at T=%.3g", total, T)

    result = Tour(best_order, tour_cost(instance, best_order))
    return result if result.cost <= start.cost else start


def approximate_optimum(instance: TSPInstance, params: Optional[SAParams] = None, restarts: int = 5) -> Tour:
    """Best tour over several seeded SA runs; used where exact solving is out of reach."""
    params = params or SAParams()
    runs = [simulated_annealing(instance, replace(params, seed=params.seed + r)) for r in range(restarts)]
    return min(runs, key=lambda tour: tour.cost)


def relative_excess(cost: float, optimum: float) -> float:
    return (cost - optimum) / optimum


def mean_sa_excess(instances: Sequence[TSPInstance], params: SAParams, threads: int = 1) -> float:
    """Mean relative excess of SA over the known optimum; instance i runs with seed params.seed + i."""
    def excess(item: Tuple[int, TSPInstance]) -> float:
        i, instance = item
        tour = simulated_annealing(instance, replace(params, seed=params.seed + i))
        return relative_excess(tour.cost, instance.optimal_cost)

    return float(np.mean(parallel_map(excess, list(enumerate(instances)), threads)))


@dataclass
class CalibrationResult:
    params: SAParams
    mean_excess: float
    default_excess: Optional[float] = None
    trials: List[Tuple[SAParams, float]] = field(default_factory=list)


def calibrate_sa(instances: Sequence[TSPInstance], budget: int, seed: int = 0,
                 base: Optional[SAParams] = None, include_default: bool = True,
                 threads: int = 1) -> CalibrationResult:
    """
    Seeded random search over the annealing schedule.

    T0 and T_min are drawn log-uniformly from [1e-2, 10] and [1e-6, 1e-2],
    alpha uniformly from [0.8, 0.999]. The configuration with the lowest
    mean relative excess wins; with include_default the base configuration
    competes as the incumbent.

    Raises:
        ConfigError: If there are no instances, an optimum is missing or budget < 1.
    """
    if not instances:
        raise ConfigError("calibration needs at least one instance")
    if any(instance.optimal_cost is None for instance in instances):
        raise ConfigError("calibration instances must carry optimal costs")
    if budget < 1:
        raise ConfigError("calibration budget must be at least 1")
    base = base or SAParams()
    rng = np.random.default_rng(seed)

    best: Optional[Tuple[SAParams, float]] = None
    default_excess = None
    if include_default:
        default_excess = mean_sa_excess(instances, base, threads)
        best = (base, default_excess)

    trials = []
    for trial in range(budget):
        T0 = math.exp(rng.uniform(math.log(1e-2), math.log(10.0)))
        alpha = rng.uniform(0.8, 0.999)
        T_min = math.exp(rng.uniform(math.log(1e-6), math.log(1e-2)))
        while T_min >= T0:
            T_min = math.exp(rng.uniform(math.log(1e-6), math.log(1e-2)))
        candidate = replace(base, T0=T0, alpha=alpha, T_min=T_min)
        score = mean_sa_excess(instances, candidate, threads)
        trials.append((candidate, score))
        logger.debug("Calibration trial %d: T0=%.4g alpha=%.4f T_min=%.3g excess=%.4f",
                     trial, T0, alpha, T_min, score)
        if best is None or score < best[1]:
            best = (candidate, score)

    logger.info("Calibrated SA: T0=%.4g alpha=%.4f T_min=%.3g mean excess %.4f",
                best[0].T0, best[0].alpha, best[0].T_min, best[1])
    return CalibrationResult(params=best[0], mean_excess=best[1], default_excess=default_excess, trials=trials)
