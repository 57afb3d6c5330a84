"""
TSPLIB ingestion for node-coordinate instances (EUC_2D and GEO) and their
optimal tour files.

Two distance conventions are offered. ``haversine`` uses exact euclidean
distances for EUC_2D and haversine great-circle distances for GEO.
``tsplib`` reproduces the library's own integer-rounded formulas, which is
what the published optima are computed with.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from decision_tsp.exceptions import DataError, TsplibFormatError, UnsupportedFormatError
from decision_tsp.model import TSPInstance

logger = logging.getLogger(__name__)

HAVERSINE = "haversine"
TSPLIB = "tsplib"
CONVENTIONS = (HAVERSINE, TSPLIB)
SUPPORTED_WEIGHT_TYPES = ("EUC_2D", "GEO")

EARTH_RADIUS = 6378.388
TSPLIB_PI = 3.141592


@dataclass
class TsplibInstance:
    """
    A parsed TSPLIB instance.

    Attributes:
        name: NAME field, or the file name.
        weight_type: EUC_2D or GEO.
        convention: Distance convention used for raw.
        coords: n x 2 coordinates as written in the file.
        raw: Distance matrix in the file's units.
        instance: raw / factor, the model-ready graph.
        factor: Largest raw distance.
    """

    name: str
    weight_type: str
    convention: str
    coords: np.ndarray
    raw: np.ndarray
    instance: TSPInstance
    factor: float

    @property
    def n(self) -> int:
        return self.raw.shape[0]

    def denormalize(self, cost: float) -> float:
        return cost * self.factor

    def raw_tour_cost(self, order) -> float:
        order = np.asarray(order)
        return float(self.raw[order, np.roll(order, -1)].sum())


def _nint(values: np.ndarray) -> np.ndarray:
    return np.floor(values + 0.5)


def euclidean_distances(coords: np.ndarray, convention: str = HAVERSINE) -> np.ndarray:
    distances = squareform(pdist(coords, metric="euclidean"))
    return _nint(distances) if convention == TSPLIB else distances


def _geo_radians(coords: np.ndarray, pi: float) -> np.ndarray:
    """DDD.MM (degrees and minutes) to radians."""
    degrees = np.trunc(coords)
    minutes = coords - degrees
    return pi * (degrees + 5.0 * minutes / 3.0) / 180.0


def geo_distances(coords: np.ndarray, convention: str = HAVERSINE) -> np.ndarray:
    """
    Great-circle distances between GEO coordinates (latitude, longitude).

    The tsplib convention applies the library's truncated spherical-cosine
    formula; haversine computes the exact great-circle length.
    """
    n = coords.shape[0]
    rows, cols = np.triu_indices(n, k=1)
    if convention == TSPLIB:
        rad = _geo_radians(coords, TSPLIB_PI)
        lat, lon = rad[:, 0], rad[:, 1]
        q1 = np.cos(lon[rows] - lon[cols])
        q2 = np.cos(lat[rows] - lat[cols])
        q3 = np.cos(lat[rows] + lat[cols])
        upper = np.trunc(EARTH_RADIUS * np.arccos(0.5 * ((1.0 + q1) * q2 - (1.0 - q1) * q3)) + 1.0)
    else:
        rad = _geo_radians(coords, math.pi)
        lat, lon = rad[:, 0], rad[:, 1]
        h = (np.sin((lat[cols] - lat[rows]) / 2.0) ** 2
             + np.cos(lat[rows]) * np.cos(lat[cols]) * np.sin((lon[cols] - lon[rows]) / 2.0) ** 2)
        upper = 2.0 * EARTH_RADIUS * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    distances = np.zeros((n, n))
    distances[rows, cols] = upper
    distances[cols, rows] = upper
    return distances


def _read_lines(path: str) -> List[str]:
    try:
        with open(path) as f:
            return f.read().splitlines()
    except OSError as e:
        raise DataError(f"cannot read TSPLIB file: {e}", path) from e


def _split_header(line: str) -> Optional[Tuple[str, str]]:
    if ":" not in line:
        return None
    key, value = line.split(":", 1)
    return key.strip().upper(), value.strip()


def tsplib_parse(path: str, convention: str = HAVERSINE) -> TsplibInstance:
    """
    Parse a node-coordinate TSPLIB file.

    Args:
        path: Path to a .tsp file.
        convention: 'haversine' or 'tsplib'.

    Returns:
        TsplibInstance with raw distances and the normalized graph.

    Raises:
        UnsupportedFormatError: For weight types other than EUC_2D and GEO.
        TsplibFormatError: For malformed headers or coordinates, with line number.
    """
    if convention not in CONVENTIONS:
        raise UnsupportedFormatError(f"unknown distance convention '{convention}'", path)
    lines = _read_lines(path)
    header: Dict[str, str] = {}
    coords: Dict[int, Tuple[float, float]] = {}
    in_coords = False

    for number, text in enumerate(lines, start=1):
        line = text.strip()
        if not line:
            continue
        if line == "EOF":
            break
        if line.upper() == "NODE_COORD_SECTION":
            if "EDGE_WEIGHT_TYPE" not in header:
                raise TsplibFormatError("coordinates before EDGE_WEIGHT_TYPE", number, path)
            in_coords = True
            continue
        if in_coords:
            parts = line.split()
            if len(parts) != 3:
                raise TsplibFormatError(f"expected 'index x y', got '{line}'", number, path)
            try:
                index, x, y = int(parts[0]), float(parts[1]), float(parts[2])
            except ValueError as e:
                raise TsplibFormatError(f"malformed coordinate line '{line}'", number, path) from e
            if index in coords:
                raise TsplibFormatError(f"duplicate node {index}", number, path)
            coords[index] = (x, y)
            continue
        entry = _split_header(line)
        if entry is None:
            if line.upper().endswith("_SECTION"):
                raise UnsupportedFormatError(f"unsupported section {line}", path)
            raise TsplibFormatError(f"unexpected line '{line}'", number, path)
        key, value = entry
        header[key] = value
        if key == "EDGE_WEIGHT_TYPE" and value not in SUPPORTED_WEIGHT_TYPES:
            raise UnsupportedFormatError(f"edge weight type {value} is not supported", path)

    if "DIMENSION" not in header:
        raise TsplibFormatError("missing DIMENSION", path=path)
    try:
        n = int(header["DIMENSION"])
    except ValueError as e:
        raise TsplibFormatError(f"invalid DIMENSION '{header['DIMENSION']}'", path=path) from e
    if "EDGE_WEIGHT_TYPE" not in header:
        raise TsplibFormatError("missing EDGE_WEIGHT_TYPE", path=path)
    if sorted(coords) != list(range(1, n + 1)):
        raise TsplibFormatError(f"expected nodes 1..{n}, found {len(coords)} coordinate lines", path=path)

    points = np.array([coords[i] for i in range(1, n + 1)])
    weight_type = header["EDGE_WEIGHT_TYPE"]
    if weight_type == "GEO":
        raw = geo_distances(points, convention)
    else:
        raw = euclidean_distances(points, convention)
    factor = float(raw.max())
    if factor <= 0:
        raise TsplibFormatError("all cities coincide", path=path)

    name = header.get("NAME", path)
    logger.debug("Parsed %s: n=%d, %s, factor %.3f", name, n, weight_type, factor)
    return TsplibInstance(name=name, weight_type=weight_type, convention=convention, coords=points, raw=raw,
                          instance=TSPInstance(weights=np.minimum(raw / factor, 1.0)), factor=factor)


def parse_tsplib_tour(path: str) -> List[int]:
    """
    Read the TOUR_SECTION of a .tour file as 0-based city indices.

    Raises:
        TsplibFormatError: If the section is missing or holds a non-integer.
    """
    lines = _read_lines(path)
    order: List[int] = []
    in_tour = False
    for number, text in enumerate(lines, start=1):
        line = text.strip()
        if not line:
            continue
        if line.upper() == "TOUR_SECTION":
            in_tour = True
            continue
        if not in_tour:
            continue
        if line == "EOF":
            break
        for token in line.split():
            try:
                city = int(token)
            except ValueError as e:
                raise TsplibFormatError(f"invalid city '{token}'", number, path) from e
            if city == -1:
                return order
            order.append(city - 1)
    if not in_tour:
        raise TsplibFormatError("missing TOUR_SECTION", path=path)
    return order
