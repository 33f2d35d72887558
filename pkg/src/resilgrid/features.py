"""Per-cell resilience features and the cell-by-feature matrix.

Twelve features cover four urban sub-systems (facility, transportation,
communication, society) crossed with three resilience components
(robustness, redundancy, resourcefulness). Inverse-direction features
(ages, poverty) are mapped through x -> 1/(1+x) so that larger always
means more resilient before any downstream scaling.

Reducers sort their operands before summing so the assembled matrix is
bit-identical under permutation of input layer records.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .config import DataError
from .geodata import (
    Grid,
    GridCell,
    PointLayer,
    PolygonLayer,
    RoadSegment,
    circle_intersects_cell,
    clip_polygon_to_rect,
    clip_segment_params,
    clip_segments_to_cell,
    intersecting_units,
    polygon_area,
)
from .roadnet import (
    RoadNetwork,
    assortativity_coefficient,
    build_road_graph,
    travel_time_matrix,
)

logger = logging.getLogger(__name__)

SUBSYSTEMS = ("facility", "transportation", "communication", "society")
COMPONENTS = ("robustness", "redundancy", "resourcefulness")


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    subsystem: str
    component: str
    direction: str  # "positive" | "inverse"
    unit: str


# Column order: sub-systems stacked by component triplets.
FEATURE_SCHEMA: tuple[FeatureSpec, ...] = (
    FeatureSpec("building_age", "facility", "robustness", "inverse", "years"),
    FeatureSpec("healthcare_access", "facility", "redundancy", "positive", "count"),
    FeatureSpec("greenspace_area", "facility", "resourcefulness", "positive", "m^2"),
    FeatureSpec("road_assortativity", "transportation", "robustness", "positive", "coefficient"),
    FeatureSpec("boundary_roads", "transportation", "redundancy", "positive", "count"),
    FeatureSpec("road_density", "transportation", "resourcefulness", "positive", "m/m^2"),
    FeatureSpec("cell_tower_age", "communication", "robustness", "inverse", "years"),
    FeatureSpec("cell_tower_count", "communication", "redundancy", "positive", "count"),
    FeatureSpec("internet_speed", "communication", "resourcefulness", "positive", "Mbps"),
    FeatureSpec("poverty_rate", "society", "robustness", "inverse", "fraction"),
    FeatureSpec("social_connectedness", "society", "redundancy", "positive", "index"),
    FeatureSpec("education_level", "society", "resourcefulness", "positive", "fraction"),
)

FEATURE_NAMES = tuple(spec.name for spec in FEATURE_SCHEMA)
INVERSE_FEATURES = tuple(s.name for s in FEATURE_SCHEMA if s.direction == "inverse")


def feature_index(name: str) -> int:
    try:
        return FEATURE_NAMES.index(name)
    except ValueError:
        raise DataError(f"unknown feature name: {name!r}")


def validate_schema(schema=FEATURE_SCHEMA) -> None:
    """Exactly one feature per (subsystem, component) pair."""
    if len(schema) != 12:
        raise DataError(f"schema must have 12 entries, got {len(schema)}")
    seen = set()
    for spec in schema:
        if spec.subsystem not in SUBSYSTEMS or spec.component not in COMPONENTS:
            raise DataError(f"bad schema entry {spec.name}")
        key = (spec.subsystem, spec.component)
        if key in seen:
            raise DataError(f"duplicate schema slot {key}")
        seen.add(key)


# ---------------------------------------------------------------------------
# per-feature operations

def areal_mean(cell: GridCell, layer: PolygonLayer) -> float:
    """Unweighted mean of unit values over units overlapping the cell;
    NaN marks a cell with no intersecting units."""
    hits = intersecting_units(cell, layer)
    if not hits:
        return math.nan
    values = sorted(layer.units[idx].value for idx, _ in hits)
    return math.fsum(values) / len(values)


def service_circle_stats(cell: GridCell, towers: PointLayer) -> tuple[int, float]:
    """(count, mean age) of towers whose service circle reaches the cell.

    A tower serves every cell its service circle touches. Zero covering
    towers yields (0, NaN).
    """
    ages = []
    for i, pt in enumerate(towers.points):
        rng = pt.attrs.get("range")
        if rng is None:
            raise DataError(f"tower {i} missing service range")
        if rng < 0:
            raise DataError(f"tower {i} has negative service range {rng}")
        if circle_intersects_cell((pt.x, pt.y), rng, cell):
            age = pt.attrs.get("age")
            if age is None:
                raise DataError(f"tower {i} missing age")
            ages.append(float(age))
    if not ages:
        return 0, math.nan
    return len(ages), math.fsum(sorted(ages)) / len(ages)


def healthcare_access_count(cell_index: int, tt: np.ndarray,
                            threshold: float = 30.0) -> int:
    """Facilities reachable within the drive-time threshold (inclusive)."""
    return int(np.sum(tt[cell_index] <= threshold))


def boundary_road_count(cell: GridCell, segments: list[RoadSegment]) -> int:
    """Distinct segments whose polyline crosses the cell boundary ring.

    Binary per segment: entering and leaving twice still counts once;
    fully interior segments never touch the ring and do not count.
    """
    count = 0
    for seg in segments:
        if _polyline_crosses_ring(seg.polyline, cell):
            count += 1
    return count


def _polyline_crosses_ring(pts, cell: GridCell) -> bool:
    def strictly_inside(p):
        return (cell.min_x < p[0] < cell.max_x) and (cell.min_y < p[1] < cell.max_y)

    def outside(p):
        return p[0] < cell.min_x or p[0] > cell.max_x or p[1] < cell.min_y or p[1] > cell.max_y

    saw_in = saw_out_or_on = False
    for p in pts:
        if strictly_inside(p):
            saw_in = True
        else:
            saw_out_or_on = True
        if saw_in and saw_out_or_on:
            return True
    if all(strictly_inside(p) for p in pts):
        return False
    if all(outside(p) for p in pts):
        # entirely of outside vertices can still clip a corner of the square
        for i in range(len(pts) - 1):
            if clip_segment_params(pts[i], pts[i + 1], cell.min_x, cell.min_y,
                                   cell.max_x, cell.max_y) is not None:
                return True
        return False
    return True  # mixes boundary-touching and outside/inside vertices


def greenspace_area(cell: GridCell, pixels: PolygonLayer) -> float:
    """Summed overlap area between greenspace pixels and the cell."""
    areas = []
    for unit in pixels.units:
        clipped = clip_polygon_to_rect(list(unit.polygon), cell.min_x,
                                       cell.min_y, cell.max_x, cell.max_y)
        if clipped:
            a = polygon_area(clipped)
            if a > 0.0:
                areas.append(a)
    return math.fsum(sorted(areas))


def in_cell_road_length(cell: GridCell, segments: list[RoadSegment]) -> float:
    clipped = clip_segments_to_cell(segments, cell)
    return math.fsum(sorted(s.length for s in clipped))


def road_density(cell: GridCell, segments: list[RoadSegment]) -> float:
    """Total in-cell road length divided by cell area (m per m^2)."""
    if cell.area <= 0:
        raise DataError(f"cell {cell.id} has non-positive area")
    return in_cell_road_length(cell, segments) / cell.area


def cell_road_assortativity(cell: GridCell, segments: list[RoadSegment],
                            classes, speed_table=None) -> float:
    """Assortativity of the simplified road graph built from the segments
    clipped to this cell; NaN when the graph is degenerate."""
    clipped = clip_segments_to_cell(segments, cell)
    if not clipped:
        return math.nan
    net = build_road_graph(clipped, classes, speed_table)
    r = assortativity_coefficient(net)
    return math.nan if r is None else r


# ---------------------------------------------------------------------------
# assembled matrix

@dataclass
class LayerBundle:
    """All input layers for one study area."""
    building_age: PolygonLayer
    poverty_rate: PolygonLayer
    social_connectedness: PolygonLayer
    internet_speed: PolygonLayer
    education_level: PolygonLayer
    greenspace: PolygonLayer
    towers: PointLayer
    healthcare: PointLayer
    roads: list[RoadSegment]


@dataclass
class FeatureConfig:
    road_classes: tuple[str, ...]
    speed_table: dict[str, float]
    healthcare_threshold_minutes: float = 30.0
    road_metric: str = "density"  # or "length"


@dataclass
class FeatureMatrix:
    """m x 12 cell-by-feature matrix.

    ``raw`` holds post-imputation feature values in native units;
    ``aligned`` is the direction-aligned version fed to the model.
    ``imputed`` flags entries that were filled with the column median.
    """
    cell_ids: np.ndarray          # (m,) int
    raw: np.ndarray               # (m, 12) float, no NaN
    aligned: np.ndarray           # (m, 12) float
    imputed: np.ndarray           # (m, 12) bool
    provenance: tuple[str, ...]   # per column: "raw" | "reciprocal-transformed"

    @property
    def m(self) -> int:
        return self.raw.shape[0]

    def copy(self) -> "FeatureMatrix":
        return FeatureMatrix(self.cell_ids.copy(), self.raw.copy(),
                             self.aligned.copy(), self.imputed.copy(),
                             self.provenance)


def align_directions(raw: np.ndarray, schema=FEATURE_SCHEMA) -> FeatureMatrix:
    """Impute no-data entries and align feature directions.

    NaN entries take the column median over cells with data (mask kept for
    audit). Inverse columns map x -> 1/(1+x); the assortativity column is
    shifted from [-1,1] to [0,2]; everything else passes through unchanged.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[1] != len(schema):
        raise DataError(f"expected m x {len(schema)} matrix, got {raw.shape}")
    m = raw.shape[0]
    imputed = np.isnan(raw)
    if np.isinf(raw).any():
        raise DataError("feature matrix contains infinities")
    filled = raw.copy()
    for j, spec in enumerate(schema):
        col = raw[:, j]
        nan_mask = imputed[:, j]
        if nan_mask.all():
            raise DataError(f"feature {spec.name!r} has no data in any cell")
        if nan_mask.any():
            filled[nan_mask, j] = np.median(col[~nan_mask])
    aligned = filled.copy()
    provenance = []
    for j, spec in enumerate(schema):
        if spec.direction == "inverse":
            if (filled[:, j] < 0).any():
                raise DataError(
                    f"inverse feature {spec.name!r} has negative values; "
                    "reciprocal transform requires x >= 0")
            aligned[:, j] = 1.0 / (1.0 + filled[:, j])
            provenance.append("reciprocal-transformed")
        else:
            if spec.name == "road_assortativity":
                aligned[:, j] = filled[:, j] + 1.0
            provenance.append("raw")
    cell_ids = np.arange(m, dtype=int)
    return FeatureMatrix(cell_ids, filled, aligned, imputed, tuple(provenance))


def compute_raw_features(grid: Grid, layers: LayerBundle,
                         config: FeatureConfig) -> np.ndarray:
    """Raw m x 12 matrix with NaN marking no-data cells."""
    validate_schema()
    m = len(grid.cells)
    raw = np.full((m, 12), np.nan)

    roads = [s for s in layers.roads if s.road_class in set(config.road_classes)]
    net = build_road_graph(roads, config.road_classes, config.speed_table) \
        if roads else RoadNetwork([], [])
    tt = travel_time_matrix(net, grid, layers.healthcare)

    col = {name: j for j, name in enumerate(FEATURE_NAMES)}
    for i, cell in enumerate(grid.cells):
        raw[i, col["building_age"]] = areal_mean(cell, layers.building_age)
        raw[i, col["healthcare_access"]] = healthcare_access_count(
            i, tt, config.healthcare_threshold_minutes)
        raw[i, col["greenspace_area"]] = greenspace_area(cell, layers.greenspace)
        raw[i, col["road_assortativity"]] = cell_road_assortativity(
            cell, roads, config.road_classes, config.speed_table)
        raw[i, col["boundary_roads"]] = boundary_road_count(cell, roads)
        if config.road_metric == "length":
            raw[i, col["road_density"]] = in_cell_road_length(cell, roads)
        else:
            raw[i, col["road_density"]] = road_density(cell, roads)
        count, mean_age = service_circle_stats(cell, layers.towers)
        raw[i, col["cell_tower_age"]] = mean_age
        raw[i, col["cell_tower_count"]] = count
        raw[i, col["internet_speed"]] = areal_mean(cell, layers.internet_speed)
        raw[i, col["poverty_rate"]] = areal_mean(cell, layers.poverty_rate)
        raw[i, col["social_connectedness"]] = areal_mean(cell, layers.social_connectedness)
        raw[i, col["education_level"]] = areal_mean(cell, layers.education_level)
    return raw


def assemble_features(grid: Grid, layers: LayerBundle,
                      config: FeatureConfig) -> FeatureMatrix:
    """Full raw-compute + impute + align pass; pure in its inputs."""
    raw = compute_raw_features(grid, layers, config)
    return align_directions(raw)
