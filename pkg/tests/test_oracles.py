"""
Tests for the oracles module.
"""

import numpy as np
import pytest

from decision_tsp.exceptions import CapacityError, ConfigError, InvalidInstanceError
from decision_tsp.instances import gen_euclidean, gen_random, gen_random_metric
from decision_tsp.model import TSPInstance
from decision_tsp.oracles import (
    SAParams,
    approximate_optimum,
    brute_force_optimal,
    calibrate_sa,
    held_karp,
    mean_sa_excess,
    nearest_neighbor,
    relative_excess,
    simulated_annealing,
    tour_cost,
)

QUICK = SAParams(max_moves=5000)


def unit_square() -> TSPInstance:
    """Cities 0..3 at the corners of a square of side 0.5, listed around the boundary."""
    s, d = 0.5, 0.5 * np.sqrt(2.0)
    return TSPInstance(np.array([[0, s, d, s], [s, 0, s, d], [d, s, 0, s], [s, d, s, 0]], dtype=float))


def solved(instances):
    for instance in instances:
        instance.optimal_cost = held_karp(instance).cost
    return instances


class TestTourCost:
    """Test cases for tour_cost."""

    def test_triangle(self):
        """Test that a triangle tour costs the sum of its sides."""
        w = np.array([[0.0, 0.3, 0.5], [0.3, 0.0, 0.4], [0.5, 0.4, 0.0]])
        assert tour_cost(w, [0, 1, 2]) == pytest.approx(1.2)

    def test_square_perimeter_and_diagonal(self):
        """Test the perimeter tour and a crossing tour of the square."""
        square = unit_square()
        assert tour_cost(square, [0, 1, 2, 3]) == pytest.approx(2.0)
        assert tour_cost(square, [0, 2, 1, 3]) == pytest.approx(1.0 + np.sqrt(2.0))

    def test_rotation_and_reversal(self):
        """Test that rotating or reversing a tour keeps its cost."""
        instance = gen_random(7, np.random.default_rng(0))
        order = [3, 1, 6, 0, 2, 5, 4]
        cost = tour_cost(instance, order)
        assert tour_cost(instance, order[2:] + order[:2]) == pytest.approx(cost)
        assert tour_cost(instance, order[::-1]) == pytest.approx(cost)

    @pytest.mark.parametrize("order", [[0, 1, 1], [0, 1], [0, 1, 3]])
    def test_not_a_permutation(self, order):
        """Test that repeated, missing or out-of-range cities are rejected."""
        with pytest.raises(InvalidInstanceError):
            tour_cost(np.zeros((3, 3)), order)


class TestExactOracles:
    """Test cases for brute force and Held-Karp."""

    def test_square(self):
        """Test that the optimum of the square is its perimeter."""
        assert held_karp(unit_square()).cost == pytest.approx(2.0)
        assert brute_force_optimal(unit_square()).cost == pytest.approx(2.0)

    def test_agree_on_small_instances(self):
        """Test that both exact oracles agree on 50 instances with 5 to 9 cities."""
        rng = np.random.default_rng(1)
        for _ in range(50):
            instance = gen_random(int(rng.integers(5, 10)), rng)
            assert held_karp(instance).cost == pytest.approx(brute_force_optimal(instance).cost, abs=1e-12)

    def test_tour_is_valid(self):
        """Test that the returned order is a permutation starting at city 0."""
        instance = gen_euclidean(9, np.random.default_rng(2))
        tour = held_karp(instance)
        assert tour.order[0] == 0
        assert sorted(tour.order) == list(range(9))
        assert tour.cost == pytest.approx(tour_cost(instance, tour.order))

    def test_beats_random_tours(self):
        """Test that the optimum at 17 cities undercuts 1000 random permutations."""
        rng = np.random.default_rng(3)
        instance = gen_random_metric(17, rng)
        optimum = held_karp(instance).cost
        assert all(optimum <= tour_cost(instance, rng.permutation(17)) + 1e-12 for _ in range(1000))

    def test_limits(self):
        """Test the size limits of both oracles."""
        with pytest.raises(CapacityError):
            brute_force_optimal(gen_random(11, np.random.default_rng(0)))
        with pytest.raises(CapacityError):
            held_karp(gen_random(21, np.random.default_rng(0)))

    def test_three_cities(self):
        """Test the smallest instance."""
        w = np.array([[0.0, 0.3, 0.5], [0.3, 0.0, 0.4], [0.5, 0.4, 0.0]])
        assert held_karp(TSPInstance(w)).cost == pytest.approx(1.2)


class TestHeuristics:
    """Test cases for nearest neighbor and simulated annealing."""

    def test_nearest_neighbor_square(self):
        """Test that nearest neighbor walks the square perimeter."""
        tour = nearest_neighbor(unit_square())
        assert tour.order == [0, 1, 2, 3]
        assert tour.cost == pytest.approx(2.0)

    def test_nearest_neighbor_ties(self):
        """Test that ties go to the lowest index."""
        w = np.full((4, 4), 0.5)
        np.fill_diagonal(w, 0.0)
        assert nearest_neighbor(TSPInstance(w)).order == [0, 1, 2, 3]

    def test_nearest_neighbor_start(self):
        """Test the start city range check."""
        with pytest.raises(InvalidInstanceError):
            nearest_neighbor(unit_square(), start=4)

    def test_sa_no_worse_than_nearest_neighbor(self):
        """Test that SA never returns a tour worse than its start."""
        rng = np.random.default_rng(4)
        for seed in range(5):
            instance = gen_random(12, rng)
            tour = simulated_annealing(instance, SAParams(seed=seed, max_moves=3000))
            assert tour.cost <= nearest_neighbor(instance).cost + 1e-12
            assert sorted(tour.order) == list(range(12))

    def test_sa_deterministic(self):
        """Test that a seed fixes the SA result."""
        instance = gen_euclidean(15, np.random.default_rng(5))
        assert simulated_annealing(instance, QUICK).order == simulated_annealing(instance, QUICK).order

    def test_sa_near_optimum(self):
        """Test that full-length SA gets within 10% of the optimum at 10 cities."""
        instance = gen_euclidean(10, np.random.default_rng(6))
        optimum = held_karp(instance).cost
        assert relative_excess(simulated_annealing(instance, SAParams()).cost, optimum) < 0.1

    def test_approximate_optimum_takes_best(self):
        """Test that restarts never do worse than the first run."""
        instance = gen_random(10, np.random.default_rng(7))
        first = simulated_annealing(instance, QUICK)
        assert approximate_optimum(instance, QUICK, restarts=3).cost <= first.cost

    @pytest.mark.parametrize("values", [
        {"T0": 0.0}, {"alpha": 1.0}, {"T_min": 0.5}, {"moves_per_temperature": 0}, {"max_moves": 0},
    ])
    def test_params_validation(self, values):
        """Test that schedules outside their ranges are rejected."""
        with pytest.raises(ConfigError):
            SAParams(**values)


class TestCalibration:
    """Test cases for calibrate_sa."""

    def test_budget_one_without_default(self):
        """Test that a single trial is returned as the winner."""
        instances = solved([gen_euclidean(8, np.random.default_rng(s)) for s in range(3)])
        result = calibrate_sa(instances, budget=1, base=QUICK, include_default=False)
        assert len(result.trials) == 1
        assert result.params == result.trials[0][0]
        assert result.default_excess is None

    def test_winner_is_argmin(self):
        """Test that the winner has the lowest score among trials and default."""
        instances = solved([gen_random(8, np.random.default_rng(s)) for s in range(3)])
        result = calibrate_sa(instances, budget=4, seed=1, base=QUICK)
        scores = [score for _, score in result.trials] + [result.default_excess]
        assert result.mean_excess == min(scores)
        assert result.mean_excess == pytest.approx(mean_sa_excess(instances, result.params))

    def test_sampled_ranges(self):
        """Test that sampled schedules are valid and inside their ranges."""
        instances = solved([gen_random(6, np.random.default_rng(0))])
        result = calibrate_sa(instances, budget=5, seed=2, base=QUICK, include_default=False)
        for params, _ in result.trials:
            assert 1e-2 <= params.T0 <= 10.0
            assert 0.8 <= params.alpha <= 0.999
            assert 1e-6 <= params.T_min < min(params.T0, 1e-2 + 1e-12)

    @pytest.mark.slow
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_calibration_beats_hot_default(self, seed):
        """Test that 50 trials on 30 graphs with 10 to 14 cities beat a schedule that never cools."""
        rng = np.random.default_rng(40)
        instances = solved([gen_euclidean(int(rng.integers(10, 15)), rng) for _ in range(30)])
        hot = SAParams(T0=10.0, alpha=0.999, T_min=1e-2, moves_per_temperature=20, max_moves=2000)
        result = calibrate_sa(instances, budget=50, seed=seed, base=hot)
        assert len(result.trials) == 50
        assert result.mean_excess < result.default_excess
        assert result.params != hot

    def test_empty_instance_set(self):
        """Test that calibration needs instances."""
        with pytest.raises(ConfigError):
            calibrate_sa([], budget=1)

    def test_missing_optimum(self):
        """Test that calibration needs known optima."""
        with pytest.raises(ConfigError):
            calibrate_sa([gen_random(5, np.random.default_rng(0))], budget=1)

    def test_zero_budget(self):
        """Test that the budget must be positive."""
        instances = solved([gen_random(5, np.random.default_rng(0))])
        with pytest.raises(ConfigError):
            calibrate_sa(instances, budget=0)
