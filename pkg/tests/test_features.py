import math

import numpy as np
import pytest

from resilgrid.config import DataError, DEFAULT_SPEED_TABLE
from resilgrid.features import (
    FEATURE_NAMES,
    FEATURE_SCHEMA,
    FeatureConfig,
    LayerBundle,
    align_directions,
    areal_mean,
    assemble_features,
    boundary_road_count,
    cell_road_assortativity,
    feature_index,
    greenspace_area,
    healthcare_access_count,
    in_cell_road_length,
    road_density,
    service_circle_stats,
    validate_schema,
)
from resilgrid.geodata import (
    GridCell,
    LayerPoint,
    PointLayer,
    PolygonLayer,
    PolygonUnit,
    RoadSegment,
    build_grid,
)

CLASSES = ("primary", "secondary", "tertiary")


def square(min_x, min_y, w, h=None):
    h = w if h is None else h
    return ((min_x, min_y), (min_x + w, min_y),
            (min_x + w, min_y + h), (min_x, min_y + h))


def cell(min_x=0.0, min_y=0.0, size=2000.0, cid=0):
    return GridCell(cid, 0, 0, min_x, min_y, min_x + size, min_y + size)


def seg(points, cls="primary"):
    return RoadSegment.from_polyline(points, cls)


class TestSchema:
    def test_twelve_features_cover_table(self):
        validate_schema()
        assert len(FEATURE_SCHEMA) == 12
        pairs = {(s.subsystem, s.component) for s in FEATURE_SCHEMA}
        assert len(pairs) == 12

    def test_inverse_features(self):
        inverse = {s.name for s in FEATURE_SCHEMA if s.direction == "inverse"}
        assert inverse == {"building_age", "cell_tower_age", "poverty_rate"}

    def test_unknown_feature_name(self):
        with pytest.raises(DataError, match="unknown feature"):
            feature_index("bogus")


class TestArealMean:
    def test_mean_of_two(self):
        layer = PolygonLayer([
            PolygonUnit(square(-100, -100, 1200), 10.0),
            PolygonUnit(square(900, 900, 1200), 20.0),
        ])
        assert areal_mean(cell(), layer) == pytest.approx(15.0)

    def test_single_containing_unit(self):
        layer = PolygonLayer([PolygonUnit(square(-10, -10, 3000), 7.0)])
        assert areal_mean(cell(), layer) == pytest.approx(7.0)

    def test_disjoint_unit_excluded(self):
        layer = PolygonLayer([
            PolygonUnit(square(0, 0, 500), 3.0),
            PolygonUnit(square(1000, 1000, 500), 9.0),
            PolygonUnit(square(9000, 9000, 500), 100.0),
        ])
        assert areal_mean(cell(), layer) == pytest.approx(6.0)

    def test_no_units_is_nan(self):
        layer = PolygonLayer([PolygonUnit(square(9000, 9000, 10), 1.0)])
        assert math.isnan(areal_mean(cell(), layer))

    def test_within_min_max(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            units = [PolygonUnit(square(*rng.uniform(-500, 1800, 2),
                                        rng.uniform(50, 2500)),
                                 float(rng.normal()))
                     for _ in range(6)]
            layer = PolygonLayer(units)
            value = areal_mean(cell(), layer)
            if math.isnan(value):
                continue
            values = [u.value for u in units]
            assert min(values) - 1e-12 <= value <= max(values) + 1e-12


class TestServiceCircles:
    def test_two_covering_towers(self):
        towers = PointLayer([
            LayerPoint(1000, 1000, {"age": 4.0, "range": 100.0}),
            LayerPoint(2500, 1000, {"age": 8.0, "range": 600.0}),
        ])
        assert service_circle_stats(cell(), towers) == (2, pytest.approx(6.0))

    def test_no_tower_in_range(self):
        towers = PointLayer([LayerPoint(9000, 9000, {"age": 4.0, "range": 10.0})])
        count, age = service_circle_stats(cell(), towers)
        assert count == 0
        assert math.isnan(age)

    def test_tower_beyond_range_excluded(self):
        towers = PointLayer([LayerPoint(3500, 1000, {"age": 4.0, "range": 1000.0})])
        count, _ = service_circle_stats(cell(), towers)
        assert count == 0
        towers2 = PointLayer([LayerPoint(3500, 1000, {"age": 4.0, "range": 1500.0})])
        assert service_circle_stats(cell(), towers2)[0] == 1

    def test_negative_range_rejected(self):
        towers = PointLayer([LayerPoint(0, 0, {"age": 1.0})])
        towers.points[0].attrs["range"] = -5.0
        with pytest.raises(DataError, match="negative"):
            service_circle_stats(cell(), towers)


class TestHealthcareAccess:
    def test_no_facilities(self):
        tt = np.zeros((1, 0))
        assert healthcare_access_count(0, tt) == 0

    def test_boundary_inclusive_at_threshold(self):
        tt = np.array([[30.0]])
        assert healthcare_access_count(0, tt, 30.0) == 1

    def test_threshold_filter(self):
        tt = np.array([[10.0, 29.0, 31.0]])
        assert healthcare_access_count(0, tt, 30.0) == 2

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(4)
        tt = rng.uniform(0, 60, size=(1, 30))
        counts = [healthcare_access_count(0, tt, th) for th in range(0, 61, 5)]
        assert counts == sorted(counts)


class TestBoundaryRoads:
    def test_three_crossing_segments(self):
        segments = [
            seg([(-100, 500), (500, 500)]),
            seg([(1000, -100), (1000, 500)]),
            seg([(1900, 2100), (1900, 1500)]),
        ]
        assert boundary_road_count(cell(), segments) == 3

    def test_interior_segment_not_counted(self):
        assert boundary_road_count(cell(), [seg([(500, 500), (1500, 1500)])]) == 0

    def test_enter_and_exit_counted_once(self):
        through = seg([(-500, 1000), (2500, 1000)])
        assert boundary_road_count(cell(), [through]) == 1

    def test_fully_outside_not_counted(self):
        assert boundary_road_count(cell(), [seg([(3000, 3000), (4000, 3000)])]) == 0


class TestGreenspace:
    def test_no_pixels(self):
        layer = PolygonLayer([])
        assert greenspace_area(cell(), layer) == 0.0

    def test_contained_pixel(self):
        layer = PolygonLayer([PolygonUnit(square(100, 100, 30), 71.0)])
        assert greenspace_area(cell(), layer) == pytest.approx(900.0)

    def test_straddling_pixel_half_area(self):
        layer = PolygonLayer([PolygonUnit(square(-30, 100, 60), 71.0)])
        assert greenspace_area(cell(), layer) == pytest.approx(1800.0, abs=1e-6)


class TestRoadDensity:
    def test_no_roads(self):
        assert road_density(cell(), []) == 0.0

    def test_two_km_in_four_sq_km(self):
        segments = [seg([(0, 1000), (2000, 1000)])]
        assert road_density(cell(), segments) == pytest.approx(5e-4)

    def test_diagonal(self):
        segments = [seg([(-1000, -1000), (3000, 3000)])]
        expected = 2 * math.sqrt(2) * 1000 / 4e6
        assert road_density(cell(), segments) == pytest.approx(expected, abs=1e-9)


class TestCellAssortativity:
    def test_plus_inside_cell_is_star(self):
        segments = [seg([(0, 1000), (2000, 1000)]), seg([(1000, 0), (1000, 2000)])]
        r = cell_road_assortativity(cell(), segments, CLASSES)
        assert r == pytest.approx(-1.0, abs=1e-9)

    def test_no_roads_nan(self):
        assert math.isnan(cell_road_assortativity(cell(), [], CLASSES))

    def test_single_edge_degenerate_nan(self):
        segments = [seg([(500, 500), (1500, 500)])]
        assert math.isnan(cell_road_assortativity(cell(), segments, CLASSES))


class TestAlignDirections:
    def _raw(self, **overrides):
        raw = np.ones((3, 12))
        for name, values in overrides.items():
            raw[:, feature_index(name)] = values
        return raw

    def test_reciprocal_of_zero_age(self):
        raw = self._raw(building_age=[0.0, 1.0, 3.0])
        rf = align_directions(raw)
        col = feature_index("building_age")
        assert rf.aligned[0, col] == pytest.approx(1.0)
        assert rf.aligned[1, col] == pytest.approx(0.5)
        assert rf.provenance[col] == "reciprocal-transformed"

    def test_poverty_quarter(self):
        raw = self._raw(poverty_rate=[0.25, 0.25, 0.25])
        rf = align_directions(raw)
        assert rf.aligned[0, feature_index("poverty_rate")] == pytest.approx(0.8)

    def test_positive_column_bit_identical(self):
        raw = self._raw(internet_speed=[13.125, 99.0625, 7.25])
        rf = align_directions(raw)
        col = feature_index("internet_speed")
        assert np.array_equal(rf.aligned[:, col], raw[:, col])

    def test_negative_in_inverse_column_rejected(self):
        raw = self._raw(building_age=[-1.0, 1.0, 2.0])
        with pytest.raises(DataError, match="negative"):
            align_directions(raw)

    def test_assortativity_shifted(self):
        raw = self._raw(road_assortativity=[-1.0, 0.0, 1.0])
        rf = align_directions(raw)
        col = feature_index("road_assortativity")
        assert list(rf.aligned[:, col]) == [0.0, 1.0, 2.0]

    def test_imputation_median_and_mask(self):
        raw = self._raw(social_connectedness=[1.0, np.nan, 3.0])
        rf = align_directions(raw)
        col = feature_index("social_connectedness")
        assert rf.raw[1, col] == pytest.approx(2.0)
        assert rf.imputed[1, col]
        assert rf.imputed.sum() == 1

    def test_all_nan_column_aborts_with_name(self):
        raw = self._raw(internet_speed=[np.nan, np.nan, np.nan])
        with pytest.raises(DataError, match="internet_speed"):
            align_directions(raw)

    def test_monotone_in_resilience(self):
        # raising a raw building age never raises the aligned value
        ages = np.linspace(0, 80, 30)
        raw = np.ones((30, 12))
        raw[:, feature_index("building_age")] = ages
        rf = align_directions(raw)
        aligned = rf.aligned[:, feature_index("building_age")]
        assert np.all(np.diff(aligned) <= 0)


# ---------------------------------------------------------------------------
# assembled 2x2 mini-city

def _minicity_layers(order=1):
    """Four 2 km cells; `order=-1` reverses record order in every layer."""
    def maybe(rows):
        return rows[::order]

    tracts = PolygonLayer(maybe([
        PolygonUnit(square(0, 0, 2000, 4000), 10.0),       # west column
        PolygonUnit(square(2000, 0, 2000, 4000), 30.0),    # east column
        PolygonUnit(square(0, 0, 4000, 4000), 20.0),       # whole area
    ]))
    per_cell_values = {
        "poverty_rate": [0.4, 0.3, 0.2, 0.1],
        "social_connectedness": [0.5, 0.8, 1.1, 1.4],
        "internet_speed": [50.0, 90.0, 130.0, 170.0],
        "education_level": [0.15, 0.3, 0.45, 0.6],
    }
    cells_sq = [square(0, 0, 2000), square(2000, 0, 2000),
                square(0, 2000, 2000), square(2000, 2000, 2000)]

    def per_cell_layer(values):
        return PolygonLayer(maybe([
            PolygonUnit(sq, v) for sq, v in zip(cells_sq, values)]))

    greenspace = PolygonLayer(maybe([
        PolygonUnit(square(100, 100, 30), 71.0),
        PolygonUnit(square(2100, 100, 30), 71.0),
        PolygonUnit(square(2100, 200, 30), 71.0),
    ]))
    towers = PointLayer(maybe([
        LayerPoint(1000, 1000, {"age": 2.0, "range": 100.0}),
        LayerPoint(3000, 1000, {"age": 3.0, "range": 100.0}),
        LayerPoint(1000, 3000, {"age": 4.0, "range": 100.0}),
        LayerPoint(3000, 3000, {"age": 5.0, "range": 100.0}),
    ]))
    healthcare = PointLayer(maybe([LayerPoint(1800.0, 1800.0, {})]))
    roads = maybe([
        seg([(0, 1800), (4000, 1800)], "primary"),
        seg([(1800, 0), (1800, 4000)], "secondary"),
    ])
    return LayerBundle(
        building_age=tracts,
        poverty_rate=per_cell_layer(per_cell_values["poverty_rate"]),
        social_connectedness=per_cell_layer(per_cell_values["social_connectedness"]),
        internet_speed=per_cell_layer(per_cell_values["internet_speed"]),
        education_level=per_cell_layer(per_cell_values["education_level"]),
        greenspace=greenspace,
        towers=towers,
        healthcare=healthcare,
        roads=roads,
    )


class TestAssemble:
    def setup_method(self):
        self.grid = build_grid((0, 0, 4000, 4000), 2000)
        self.config = FeatureConfig(road_classes=CLASSES,
                                    speed_table=dict(DEFAULT_SPEED_TABLE))

    def test_matrix_matches_per_operation_oracles(self):
        layers = _minicity_layers()
        rf = assemble_features(self.grid, layers, self.config)
        assert rf.raw.shape == (4, 12)

        # rebuild the expected raw matrix from the individually tested ops
        expected = np.full((4, 12), np.nan)
        for i, c in enumerate(self.grid.cells):
            expected[i, feature_index("building_age")] = areal_mean(c, layers.building_age)
            expected[i, feature_index("greenspace_area")] = greenspace_area(c, layers.greenspace)
            expected[i, feature_index("road_assortativity")] = \
                cell_road_assortativity(c, layers.roads, CLASSES)
            expected[i, feature_index("boundary_roads")] = \
                boundary_road_count(c, layers.roads)
            expected[i, feature_index("road_density")] = road_density(c, layers.roads)
            count, age = service_circle_stats(c, layers.towers)
            expected[i, feature_index("cell_tower_count")] = count
            expected[i, feature_index("cell_tower_age")] = age
            expected[i, feature_index("poverty_rate")] = areal_mean(c, layers.poverty_rate)
            expected[i, feature_index("social_connectedness")] = \
                areal_mean(c, layers.social_connectedness)
            expected[i, feature_index("internet_speed")] = areal_mean(c, layers.internet_speed)
            expected[i, feature_index("education_level")] = areal_mean(c, layers.education_level)
        # the single facility is reachable from every cell within 30 min
        expected[:, feature_index("healthcare_access")] = 1.0
        aligned_expected = align_directions(expected)
        assert np.array_equal(rf.raw, aligned_expected.raw)
        assert np.array_equal(rf.aligned, aligned_expected.aligned)

        assert list(rf.raw[:, feature_index("building_age")]) == [15.0, 25.0, 15.0, 25.0]
        assert list(rf.raw[:, feature_index("cell_tower_count")]) == [1, 1, 1, 1]
        assert rf.raw[0, feature_index("greenspace_area")] == pytest.approx(900.0)
        assert rf.raw[1, feature_index("greenspace_area")] == pytest.approx(1800.0)

    def test_empty_facility_layer_gives_zero_column(self):
        layers = _minicity_layers()
        layers.healthcare = PointLayer([])
        rf = assemble_features(self.grid, layers, self.config)
        assert np.all(rf.raw[:, feature_index("healthcare_access")] == 0)

    def test_record_order_permutation_is_bit_identical(self):
        a = assemble_features(self.grid, _minicity_layers(order=1), self.config)
        b = assemble_features(self.grid, _minicity_layers(order=-1), self.config)
        assert np.array_equal(a.raw, b.raw)
        assert np.array_equal(a.aligned, b.aligned)

    def test_road_length_metric_switch(self):
        cfg = FeatureConfig(road_classes=CLASSES,
                            speed_table=dict(DEFAULT_SPEED_TABLE),
                            road_metric="length")
        rf = assemble_features(self.grid, _minicity_layers(), cfg)
        col = feature_index("road_density")
        # cell 0 holds 2000 m of each road
        assert rf.raw[0, col] == pytest.approx(4000.0, abs=1e-6)

    def test_determinism(self):
        a = assemble_features(self.grid, _minicity_layers(), self.config)
        b = assemble_features(self.grid, _minicity_layers(), self.config)
        assert np.array_equal(a.raw, b.raw)
        assert np.array_equal(a.aligned, b.aligned)
