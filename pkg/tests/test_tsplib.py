"""
Tests for the tsplib module.
"""

import os

import numpy as np
import pytest

from decision_tsp.exceptions import DataError, TsplibFormatError, UnsupportedFormatError
from decision_tsp.oracles import held_karp, tour_cost
from decision_tsp.tsplib import (
    HAVERSINE,
    TSPLIB,
    euclidean_distances,
    geo_distances,
    parse_tsplib_tour,
    tsplib_parse,
)

FIXTURES_DIR = os.path.join(os.path.dirname(__file__), "fixtures")


def fixture(name: str) -> str:
    return os.path.join(FIXTURES_DIR, name)


class TestDistances:
    """Test cases for the distance conventions."""

    def test_euclidean_exact_and_rounded(self):
        """Test a 3-4-5 triangle and nint rounding of a non-integer distance."""
        coords = np.array([[0.0, 0.0], [3.0, 0.0], [3.0, 4.0]])
        exact = euclidean_distances(coords, HAVERSINE)
        rounded = euclidean_distances(coords, TSPLIB)
        assert exact[0, 2] == 5.0
        assert rounded[0, 2] == 5.0
        square = np.array([[0.0, 0.0], [1.0, 1.0]])
        assert euclidean_distances(square, HAVERSINE)[0, 1] == pytest.approx(np.sqrt(2.0))
        assert euclidean_distances(square, TSPLIB)[0, 1] == 1.0

    def test_geo_symmetric(self):
        """Test symmetry and zero diagonal of great-circle distances."""
        coords = np.array([[38.24, 20.42], [39.57, 26.15], [40.56, 25.32]])
        for convention in (HAVERSINE, TSPLIB):
            d = geo_distances(coords, convention)
            np.testing.assert_array_equal(d, d.T)
            np.testing.assert_array_equal(np.diag(d), np.zeros(3))

    def test_geo_conventions_agree_closely(self):
        """Test that the integer library distance stays within 1% plus one unit of haversine."""
        coords = np.array([[38.24, 20.42], [36.26, 23.12], [33.48, 10.54]])
        exact = geo_distances(coords, HAVERSINE)
        library = geo_distances(coords, TSPLIB)
        assert np.all(np.abs(library - exact) <= 0.01 * exact + 1.0)
        assert np.all(library == np.trunc(library))


class TestParse:
    """Test cases for tsplib_parse."""

    def test_square(self):
        """Test the scaled square: side 3, diagonal 3*sqrt(2)."""
        parsed = tsplib_parse(fixture("square4.tsp"))
        assert parsed.name == "square4"
        assert parsed.n == 4
        assert parsed.weight_type == "EUC_2D"
        assert parsed.raw[0, 1] == 3.0
        assert parsed.raw[0, 2] == pytest.approx(3.0 * np.sqrt(2.0))
        assert parsed.factor == pytest.approx(3.0 * np.sqrt(2.0))
        assert parsed.instance.weights[0, 2] == 1.0

    def test_square_tsplib_rounding(self):
        """Test that the diagonal rounds to 4 under library rounding."""
        parsed = tsplib_parse(fixture("square4.tsp"), convention=TSPLIB)
        assert parsed.raw[0, 2] == 4.0
        assert parsed.factor == 4.0

    @pytest.mark.parametrize("name,n", [("ulysses16.tsp", 16), ("berlin52.tsp", 52)])
    def test_sizes(self, name, n):
        """Test the city counts of the bundled instances."""
        parsed = tsplib_parse(fixture(name))
        assert parsed.n == n
        assert parsed.instance.weights.shape == (n, n)

    @pytest.mark.parametrize("name", ["ulysses16.tsp", "berlin52.tsp"])
    def test_normalization(self, name):
        """Test that normalized weights lie in [0, 1] and scale back to the raw matrix."""
        parsed = tsplib_parse(fixture(name))
        w = parsed.instance.weights
        assert w.min() >= 0.0
        assert w.max() == 1.0
        np.testing.assert_allclose(w * parsed.factor, parsed.raw, rtol=1e-12)

    @pytest.mark.parametrize("name,optimum", [("ulysses16", 6859.0), ("berlin52", 7542.0)])
    def test_optimal_tour_library_convention(self, name, optimum):
        """Test that published optimal tours reproduce their published cost exactly."""
        parsed = tsplib_parse(fixture(f"{name}.tsp"), convention=TSPLIB)
        order = parse_tsplib_tour(fixture(f"{name}.opt.tour"))
        assert parsed.raw_tour_cost(order) == optimum

    @pytest.mark.parametrize("name,optimum", [("ulysses16", 6859.0), ("berlin52", 7542.0)])
    def test_optimal_tour_haversine_convention(self, name, optimum):
        """Test that exact distances stay within 0.5% of the published cost."""
        parsed = tsplib_parse(fixture(f"{name}.tsp"))
        order = parse_tsplib_tour(fixture(f"{name}.opt.tour"))
        assert parsed.raw_tour_cost(order) == pytest.approx(optimum, rel=0.005)

    def test_denormalized_tour_cost(self):
        """Test that normalized tour costs scale back to raw costs."""
        parsed = tsplib_parse(fixture("ulysses16.tsp"))
        order = parse_tsplib_tour(fixture("ulysses16.opt.tour"))
        normalized = tour_cost(parsed.instance, order)
        assert parsed.denormalize(normalized) == pytest.approx(parsed.raw_tour_cost(order), rel=1e-12)

    def test_held_karp_matches_optimal_tour(self):
        """Test that the exact oracle finds a tour no longer than the published one."""
        parsed = tsplib_parse(fixture("ulysses16.tsp"), convention=TSPLIB)
        order = parse_tsplib_tour(fixture("ulysses16.opt.tour"))
        best = held_karp(parsed.instance)
        assert best.cost <= tour_cost(parsed.instance, order) + 1e-12

    def test_unsupported_weight_type(self):
        """Test that explicit matrices are refused."""
        with pytest.raises(UnsupportedFormatError):
            tsplib_parse(fixture("unsupported.tsp"))

    def test_malformed_coordinate(self):
        """Test that a bad coordinate names its line."""
        with pytest.raises(TsplibFormatError) as info:
            tsplib_parse(fixture("malformed.tsp"))
        assert info.value.line == 7

    def test_missing_nodes(self, tmp_path):
        """Test that the coordinate count must match DIMENSION."""
        path = tmp_path / "short.tsp"
        path.write_text("NAME: short\nDIMENSION: 4\nEDGE_WEIGHT_TYPE: EUC_2D\nNODE_COORD_SECTION\n1 0 0\n2 1 1\nEOF\n")
        with pytest.raises(TsplibFormatError):
            tsplib_parse(str(path))

    def test_unknown_convention(self):
        """Test that only the two conventions are accepted."""
        with pytest.raises(UnsupportedFormatError):
            tsplib_parse(fixture("square4.tsp"), convention="manhattan")

    def test_missing_file(self):
        """Test that an unreadable path raises a data error."""
        with pytest.raises(DataError):
            tsplib_parse(fixture("absent.tsp"))


class TestTour:
    """Test cases for parse_tsplib_tour."""

    def test_zero_based(self):
        """Test 0-based indices and the -1 terminator."""
        order = parse_tsplib_tour(fixture("ulysses16.opt.tour"))
        assert order[:3] == [0, 13, 12]
        assert sorted(order) == list(range(16))

    def test_missing_section(self, tmp_path):
        """Test that a file without TOUR_SECTION is rejected."""
        path = tmp_path / "empty.tour"
        path.write_text("NAME: empty\nTYPE: TOUR\n")
        with pytest.raises(TsplibFormatError):
            parse_tsplib_tour(str(path))

    def test_bad_city(self, tmp_path):
        """Test that a non-integer city names its line."""
        path = tmp_path / "bad.tour"
        path.write_text("TOUR_SECTION\n1\nx\n-1\n")
        with pytest.raises(TsplibFormatError) as info:
            parse_tsplib_tour(str(path))
        assert info.value.line == 3
