"""Square-grid partitioning of a study area and geospatial layer ingestion.

All coordinates are planar meters; no CRS handling happens here. Geometry
primitives are limited to what axis-aligned grid cells need: point-to-square
distance, convex clipping of simple polygons against a rectangle
(Sutherland-Hodgman), and parametric segment clipping (Liang-Barsky).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

from .config import DataError

# Intersection areas below this (m^2) are treated as touching, not overlap.
AREA_EPS = 1e-9


# ---------------------------------------------------------------------------
# geometry primitives

def polygon_area(points: list[tuple[float, float]]) -> float:
    """Unsigned shoelace area of a ring (closing edge implied)."""
    n = len(points)
    if n < 3:
        return 0.0
    acc = 0.0
    for i in range(n):
        x0, y0 = points[i]
        x1, y1 = points[(i + 1) % n]
        acc += x0 * y1 - x1 * y0
    return abs(acc) / 2.0


def _segments_properly_intersect(p, q, r, s) -> bool:
    def orient(a, b, c):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if v > 1e-12:
            return 1
        if v < -1e-12:
            return -1
        return 0

    o1, o2 = orient(p, q, r), orient(p, q, s)
    o3, o4 = orient(r, s, p), orient(r, s, q)
    return o1 != o2 and o3 != o4 and 0 not in (o1, o2, o3, o4)


def validate_polygon(points: list[tuple[float, float]]) -> None:
    """Reject rings that are degenerate, non-finite, or self-intersecting."""
    if len(points) < 3:
        raise DataError(f"polygon needs >= 3 vertices, got {len(points)}")
    for x, y in points:
        if not (math.isfinite(x) and math.isfinite(y)):
            raise DataError("polygon has non-finite coordinates")
    if polygon_area(points) <= 0.0:
        raise DataError("polygon has zero area")
    n = len(points)
    edges = [(points[i], points[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue  # adjacent edges share an endpoint
            if _segments_properly_intersect(*edges[i], *edges[j]):
                raise DataError("polygon is self-intersecting")


def clip_polygon_to_rect(points, min_x, min_y, max_x, max_y):
    """Sutherland-Hodgman clip of a simple polygon against an axis-aligned
    rectangle. Returns the clipped ring (possibly empty)."""

    def clip_edge(poly, inside, intersect):
        out = []
        n = len(poly)
        for i in range(n):
            cur, nxt = poly[i], poly[(i + 1) % n]
            cur_in, nxt_in = inside(cur), inside(nxt)
            if cur_in:
                out.append(cur)
                if not nxt_in:
                    out.append(intersect(cur, nxt))
            elif nxt_in:
                out.append(intersect(cur, nxt))
        return out

    def x_cross(a, b, x):
        t = (x - a[0]) / (b[0] - a[0])
        return (x, a[1] + t * (b[1] - a[1]))

    def y_cross(a, b, y):
        t = (y - a[1]) / (b[1] - a[1])
        return (a[0] + t * (b[0] - a[0]), y)

    poly = list(points)
    for inside, intersect in (
        (lambda p: p[0] >= min_x, lambda a, b: x_cross(a, b, min_x)),
        (lambda p: p[0] <= max_x, lambda a, b: x_cross(a, b, max_x)),
        (lambda p: p[1] >= min_y, lambda a, b: y_cross(a, b, min_y)),
        (lambda p: p[1] <= max_y, lambda a, b: y_cross(a, b, max_y)),
    ):
        if not poly:
            return []
        poly = clip_edge(poly, inside, intersect)
    return poly


def point_to_rect_distance(px, py, min_x, min_y, max_x, max_y) -> float:
    dx = max(min_x - px, 0.0, px - max_x)
    dy = max(min_y - py, 0.0, py - max_y)
    return math.hypot(dx, dy)


def clip_segment_params(p0, p1, min_x, min_y, max_x, max_y):
    """Liang-Barsky: parameter interval [t0, t1] of p0->p1 inside the rect,
    or None if the segment misses it."""
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    t0, t1 = 0.0, 1.0
    for p, q in (
        (-dx, p0[0] - min_x),
        (dx, max_x - p0[0]),
        (-dy, p0[1] - min_y),
        (dy, max_y - p0[1]),
    ):
        if p == 0.0:
            if q < 0.0:
                return None
            continue
        t = q / p
        if p < 0.0:
            if t > t1:
                return None
            t0 = max(t0, t)
        else:
            if t < t0:
                return None
            t1 = min(t1, t)
    if t0 > t1:
        return None
    return t0, t1


def polyline_length(points: list[tuple[float, float]]) -> float:
    return sum(
        math.hypot(points[i + 1][0] - points[i][0], points[i + 1][1] - points[i][1])
        for i in range(len(points) - 1)
    )


# ---------------------------------------------------------------------------
# grid

@dataclass(frozen=True)
class GridCell:
    id: int
    row: int
    col: int
    min_x: float
    min_y: float
    max_x: float
    max_y: float

    @property
    def centroid(self) -> tuple[float, float]:
        return ((self.min_x + self.max_x) / 2.0, (self.min_y + self.max_y) / 2.0)

    @property
    def square(self) -> list[tuple[float, float]]:
        return [
            (self.min_x, self.min_y),
            (self.max_x, self.min_y),
            (self.max_x, self.max_y),
            (self.min_x, self.max_y),
        ]

    @property
    def area(self) -> float:
        return (self.max_x - self.min_x) * (self.max_y - self.min_y)


@dataclass(frozen=True)
class Grid:
    origin_x: float
    origin_y: float
    cell_size: float
    n_rows: int
    n_cols: int
    cells: tuple[GridCell, ...]

    def __len__(self) -> int:
        return len(self.cells)


def build_grid(bbox: tuple[float, float, float, float], cell_size: float) -> Grid:
    """Tile a bounding box with congruent squares (row-major ids from 0).

    The last row/column may overhang the bbox so every cell stays the same
    size; queen contiguity then remains uniform across the lattice.
    """
    min_x, min_y, max_x, max_y = (float(v) for v in bbox)
    if cell_size <= 0:
        raise DataError(f"cell_size must be > 0, got {cell_size}")
    width, height = max_x - min_x, max_y - min_y
    if width <= 0 or height <= 0:
        raise DataError(f"degenerate bbox: width={width}, height={height}")
    n_cols = math.ceil(width / cell_size - 1e-12)
    n_rows = math.ceil(height / cell_size - 1e-12)
    cells = []
    for row in range(n_rows):
        for col in range(n_cols):
            cells.append(GridCell(
                id=row * n_cols + col,
                row=row,
                col=col,
                min_x=min_x + col * cell_size,
                min_y=min_y + row * cell_size,
                max_x=min_x + (col + 1) * cell_size,
                max_y=min_y + (row + 1) * cell_size,
            ))
    return Grid(min_x, min_y, float(cell_size), n_rows, n_cols, tuple(cells))


# ---------------------------------------------------------------------------
# layers

@dataclass(frozen=True)
class PolygonUnit:
    polygon: tuple[tuple[float, float], ...]
    value: float
    unit_tag: str = ""


@dataclass
class PolygonLayer:
    units: list[PolygonUnit]

    def __post_init__(self):
        for i, unit in enumerate(self.units):
            if not math.isfinite(unit.value):
                raise DataError(f"polygon unit {i} has non-finite value")
            try:
                validate_polygon(list(unit.polygon))
            except DataError as exc:
                raise DataError(f"polygon unit {i}: {exc}") from exc


@dataclass(frozen=True)
class LayerPoint:
    x: float
    y: float
    attrs: dict = field(default_factory=dict)


@dataclass
class PointLayer:
    points: list[LayerPoint]

    def __post_init__(self):
        for i, pt in enumerate(self.points):
            if not (math.isfinite(pt.x) and math.isfinite(pt.y)):
                raise DataError(f"point {i} has non-finite coordinates")
            rng = pt.attrs.get("range")
            if rng is not None and rng < 0:
                raise DataError(f"point {i} has negative service range {rng}")


@dataclass(frozen=True)
class RoadSegment:
    polyline: tuple[tuple[float, float], ...]
    road_class: str
    length: float

    def __post_init__(self):
        if self.length <= 0:
            raise DataError("road segment has non-positive length")
        arc = polyline_length(list(self.polyline))
        if abs(self.length - arc) > 1e-6 * max(arc, 1e-12):
            raise DataError(
                f"stored length {self.length} != polyline arc length {arc}")

    @staticmethod
    def from_polyline(polyline, road_class: str) -> "RoadSegment":
        pts = tuple((float(x), float(y)) for x, y in polyline)
        if len(pts) < 2:
            raise DataError("road segment needs >= 2 points")
        for x, y in pts:
            if not (math.isfinite(x) and math.isfinite(y)):
                raise DataError("road segment has non-finite coordinates")
        length = polyline_length(list(pts))
        if length <= 0:
            raise DataError("road segment has zero length")
        return RoadSegment(pts, road_class, length)


# ---------------------------------------------------------------------------
# cell/layer joins

def intersecting_units(cell: GridCell, layer: PolygonLayer) -> list[tuple[int, float]]:
    """Units whose polygon overlaps the cell square with positive area,
    as (unit index, intersection area) pairs."""
    hits = []
    for idx, unit in enumerate(layer.units):
        clipped = clip_polygon_to_rect(
            list(unit.polygon), cell.min_x, cell.min_y, cell.max_x, cell.max_y)
        if not clipped:
            continue
        area = polygon_area(clipped)
        if area > AREA_EPS:
            hits.append((idx, area))
    return hits


def circle_intersects_cell(center: tuple[float, float], radius: float,
                           cell: GridCell) -> bool:
    if radius < 0:
        raise DataError(f"negative radius {radius}")
    d = point_to_rect_distance(center[0], center[1],
                               cell.min_x, cell.min_y, cell.max_x, cell.max_y)
    return d <= radius


def clip_segments_to_cell(segments: list[RoadSegment],
                          cell: GridCell) -> list[RoadSegment]:
    """Clip polylines to the cell square; each maximal in-cell run of a
    polyline becomes one output segment."""
    out = []
    for seg in segments:
        runs: list[list[tuple[float, float]]] = []
        current: list[tuple[float, float]] = []
        pts = seg.polyline
        for i in range(len(pts) - 1):
            p0, p1 = pts[i], pts[i + 1]
            params = clip_segment_params(p0, p1, cell.min_x, cell.min_y,
                                         cell.max_x, cell.max_y)
            if params is None:
                if len(current) >= 2:
                    runs.append(current)
                current = []
                continue
            t0, t1 = params
            if t1 - t0 <= 0.0:
                continue
            a = (p0[0] + t0 * (p1[0] - p0[0]), p0[1] + t0 * (p1[1] - p0[1]))
            b = (p0[0] + t1 * (p1[0] - p0[0]), p0[1] + t1 * (p1[1] - p0[1]))
            if current and _close(current[-1], a):
                current.append(b)
            else:
                if len(current) >= 2:
                    runs.append(current)
                current = [a, b]
        if len(current) >= 2:
            runs.append(current)
        for run in runs:
            length = polyline_length(run)
            if length > 0.0:
                out.append(RoadSegment(tuple(run), seg.road_class, length))
    return out


def _close(a, b, tol=1e-9) -> bool:
    return abs(a[0] - b[0]) <= tol and abs(a[1] - b[1]) <= tol


# ---------------------------------------------------------------------------
# file loaders (GeoJSON / CSV, coordinates already in meters)

def _read_geojson(path: str) -> dict:
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise DataError(f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}")
    if data.get("type") != "FeatureCollection":
        raise DataError(f"{path}: expected a GeoJSON FeatureCollection")
    return data


def load_polygon_layer(path: str, value_property: str,
                       filter_property: str | None = None,
                       filter_value=None, unit_tag: str = "") -> PolygonLayer:
    """Polygons from a GeoJSON FeatureCollection; MultiPolygon parts become
    separate units sharing the feature's value."""
    data = _read_geojson(path)
    units = []
    for i, feat in enumerate(data.get("features", [])):
        props = feat.get("properties") or {}
        if filter_property is not None and props.get(filter_property) != filter_value:
            continue
        if value_property not in props:
            raise DataError(f"{path}: feature {i} missing property {value_property!r}")
        value = float(props[value_property])
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            rings = [geom["coordinates"][0]]
        elif gtype == "MultiPolygon":
            rings = [poly[0] for poly in geom["coordinates"]]
        else:
            raise DataError(f"{path}: feature {i} has geometry {gtype}, expected Polygon")
        for ring in rings:
            pts = [(float(x), float(y)) for x, y in ring]
            if len(pts) > 1 and pts[0] == pts[-1]:
                pts = pts[:-1]
            units.append(PolygonUnit(tuple(pts), value, unit_tag))
    return PolygonLayer(units)


def load_point_layer(path: str, attr_fields: dict[str, str] | None = None) -> PointLayer:
    """Points from CSV (x, y + attribute columns) or GeoJSON Point features.

    attr_fields maps internal attribute names to source column/property
    names, e.g. {"age": "tower_age", "range": "service_range"}.
    """
    attr_fields = attr_fields or {}
    points = []
    if path.endswith(".csv"):
        try:
            f = open(path, newline="")
        except FileNotFoundError:
            raise DataError(f"file not found: {path}")
        with f:
            reader = csv.DictReader(f)
            for i, row in enumerate(reader):
                if "x" not in row or "y" not in row:
                    raise DataError(f"{path}: row {i} missing x/y columns")
                attrs = {}
                for name, column in attr_fields.items():
                    if column in row and row[column] != "":
                        attrs[name] = _parse_attr(row[column])
                points.append(LayerPoint(float(row["x"]), float(row["y"]), attrs))
    else:
        data = _read_geojson(path)
        for i, feat in enumerate(data.get("features", [])):
            geom = feat.get("geometry") or {}
            if geom.get("type") != "Point":
                raise DataError(f"{path}: feature {i} is not a Point")
            x, y = geom["coordinates"][:2]
            props = feat.get("properties") or {}
            attrs = {}
            for name, prop in attr_fields.items():
                if prop in props and props[prop] is not None:
                    attrs[name] = _parse_attr(props[prop])
            points.append(LayerPoint(float(x), float(y), attrs))
    return PointLayer(points)


def _parse_attr(value):
    if isinstance(value, (int, float)):
        return float(value)
    try:
        return float(value)
    except (TypeError, ValueError):
        return value


def load_road_layer(path: str, class_property: str = "class") -> list[RoadSegment]:
    """LineString/MultiLineString features with a road-class property."""
    data = _read_geojson(path)
    segments = []
    for i, feat in enumerate(data.get("features", [])):
        props = feat.get("properties") or {}
        if class_property not in props:
            raise DataError(f"{path}: feature {i} missing property {class_property!r}")
        road_class = str(props[class_property])
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "LineString":
            lines = [geom["coordinates"]]
        elif gtype == "MultiLineString":
            lines = geom["coordinates"]
        else:
            raise DataError(f"{path}: feature {i} has geometry {gtype}, expected LineString")
        for line in lines:
            segments.append(RoadSegment.from_polyline(line, road_class))
    return segments


def load_mask(path: str) -> set[int]:
    """Cell ids to exclude from spatial analysis, one per CSV row."""
    excluded = set()
    try:
        f = open(path, newline="")
    except FileNotFoundError:
        raise DataError(f"file not found: {path}")
    with f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or "cell_id" not in reader.fieldnames:
            raise DataError(f"{path}: mask CSV needs a cell_id column")
        for row in reader:
            excluded.add(int(row["cell_id"]))
    return excluded
