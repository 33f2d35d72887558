#!/usr/bin/env python3
"""Generate the bundled 10x10-cell synthetic mini-city fixture.

Five vertical zone bands (2 columns each) carry planted feature gradients:
zone 0 (west) is the least resilient, zone 4 (east) the most. Deterministic
under the fixed seed; rerunning overwrites tests/fixtures/minicity/.
"""

from __future__ import annotations

import json
import os

import numpy as np

OUT = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures", "minicity")
CELL = 2000.0
N = 10  # rows and cols
SEED = 7


def cell_bounds(row, col):
    return col * CELL, row * CELL, (col + 1) * CELL, (row + 1) * CELL


def zone_of(col):
    return col // 2


def feature_collection(features):
    return {"type": "FeatureCollection", "features": features}


def square_feature(min_x, min_y, w, h, props):
    ring = [[min_x, min_y], [min_x + w, min_y], [min_x + w, min_y + h],
            [min_x, min_y + h], [min_x, min_y]]
    return {"type": "Feature", "properties": props,
            "geometry": {"type": "Polygon", "coordinates": [ring]}}


def line_feature(points, cls):
    return {"type": "Feature", "properties": {"class": cls},
            "geometry": {"type": "LineString",
                         "coordinates": [[float(x), float(y)] for x, y in points]}}


def write_json(name, payload):
    path = os.path.join(OUT, name)
    with open(path, "w") as f:
        json.dump(payload, f)
    print("wrote", path)


def main():
    os.makedirs(OUT, exist_ok=True)
    rng = np.random.default_rng(SEED)

    value_layers = {
        "building_age": lambda z: 60.0 - 12.0 * z + rng.uniform(-2, 2),
        "poverty_rate": lambda z: 0.40 - 0.08 * z + rng.uniform(-0.01, 0.01),
        "social_connectedness": lambda z: 0.5 + 0.3 * z + rng.uniform(-0.02, 0.02),
        "internet_speed": lambda z: 50.0 + 40.0 * z + rng.uniform(-2, 2),
        "education_level": lambda z: 0.15 + 0.15 * z + rng.uniform(-0.01, 0.01),
    }
    for name, sample in value_layers.items():
        features = []
        for row in range(N):
            for col in range(N):
                min_x, min_y, _, _ = cell_bounds(row, col)
                value = round(float(sample(zone_of(col))), 6)
                features.append(square_feature(min_x, min_y, CELL, CELL,
                                               {"value": value}))
        write_json(f"{name}.geojson", feature_collection(features))

    # greenspace pixels: (zone+1) class-71 pixels of 200x200 m per cell,
    # plus one class-81 distractor pixel per cell that ingestion must filter
    pixels = []
    for row in range(N):
        for col in range(N):
            min_x, min_y, _, _ = cell_bounds(row, col)
            for p in range(zone_of(col) + 1):
                px = min_x + 200.0 + 350.0 * p
                py = min_y + 200.0 + 150.0 * (p % 3)
                pixels.append(square_feature(px, py, 200, 200, {"value": 71}))
            pixels.append(square_feature(min_x + 1500.0, min_y + 1500.0,
                                         200, 200, {"value": 81}))
    write_json("greenspace.geojson", feature_collection(pixels))

    # towers: (zone+1) per cell, 100 m service range so each serves only
    # its own cell; ages fall with zone
    tower_rows = ["x,y,age,range"]
    for row in range(N):
        for col in range(N):
            z = zone_of(col)
            min_x, min_y, _, _ = cell_bounds(row, col)
            for t in range(z + 1):
                x = min_x + 400.0 + 300.0 * t
                y = min_y + 900.0 + 20.0 * t
                age = max(0.5, 25.0 - 5.0 * z + float(rng.uniform(-1, 1)))
                tower_rows.append(f"{x},{y},{round(age, 6)},100.0")
    with open(os.path.join(OUT, "towers.csv"), "w") as f:
        f.write("\n".join(tower_rows) + "\n")
    print("wrote", os.path.join(OUT, "towers.csv"))

    # healthcare: one facility per eastern cell (cols 6..9)
    fac_rows = ["x,y,category"]
    for row in range(N):
        for col in range(6, N):
            min_x, min_y, _, _ = cell_bounds(row, col)
            x = min_x + 1000.0 + float(rng.uniform(-300, 300))
            y = min_y + 1000.0 + float(rng.uniform(-300, 300))
            fac_rows.append(f"{round(x, 6)},{round(y, 6)},621")
    with open(os.path.join(OUT, "healthcare.csv"), "w") as f:
        f.write("\n".join(fac_rows) + "\n")
    print("wrote", os.path.join(OUT, "healthcare.csv"))

    # roads: full boundary lattice plus zone-specific interior street
    # patterns with distinct degree mixes, so per-cell assortativity varies
    roads = []
    extent = N * CELL
    for i in range(N + 1):
        roads.append(line_feature([(0, i * CELL), (extent, i * CELL)], "secondary"))
        roads.append(line_feature([(i * CELL, 0), (i * CELL, extent)], "secondary"))
    for row in range(N):
        for col in range(N):
            z = zone_of(col)
            min_x, min_y, max_x, max_y = cell_bounds(row, col)
            cx, cy = min_x + 1000.0, min_y + 1000.0
            if z == 2:
                # dead-end spur off the bottom edge
                roads.append(line_feature([(cx, min_y), (cx, min_y + 1200.0)],
                                          "tertiary"))
            elif z == 3:
                # full vertical street with a mid-street stub
                roads.append(line_feature([(cx, min_y), (cx, max_y)], "tertiary"))
                roads.append(line_feature([(cx, cy), (cx + 600.0, cy)], "tertiary"))
            elif z == 4:
                # crossing streets plus a pendant off the crossing
                roads.append(line_feature([(cx, min_y), (cx, max_y)], "tertiary"))
                roads.append(line_feature([(min_x, cy), (max_x, cy)], "tertiary"))
                roads.append(line_feature([(cx, cy), (cx + 500.0, cy + 500.0)],
                                          "tertiary"))
    write_json("roads.geojson", feature_collection(roads))

    # flood risk input (external model's output format): banded by row
    risk_by_row = [1, 1, 2, 2, 3, 3, 4, 4, 5, 6]
    risk_rows = ["cell_id,risk_level"]
    for row in range(N):
        for col in range(N):
            risk_rows.append(f"{row * N + col},{risk_by_row[row]}")
    with open(os.path.join(OUT, "risk.csv"), "w") as f:
        f.write("\n".join(risk_rows) + "\n")
    print("wrote", os.path.join(OUT, "risk.csv"))

    config = {
        "grid": {"bbox": [0, 0, extent, extent], "cell_size": CELL},
        "layers": {
            "building_age": {"path": "building_age.geojson"},
            "poverty_rate": {"path": "poverty_rate.geojson"},
            "social_connectedness": {"path": "social_connectedness.geojson"},
            "internet_speed": {"path": "internet_speed.geojson"},
            "education_level": {"path": "education_level.geojson"},
            "greenspace": {"path": "greenspace.geojson",
                           "filter_property": "value", "filter_value": 71},
            "towers": {"path": "towers.csv"},
            "healthcare": {"path": "healthcare.csv",
                           "category_field": "category",
                           "categories": ["621.0", "622.0", "623.0"]},
            "roads": {"path": "roads.geojson"},
        },
        "risk": "risk.csv",
        "train": {"learning_rate": 0.05, "epochs": 120, "finetune_epochs": 120},
        "dims": {"embedding": 10},
        "dec": {"k": 5, "max_iterations": 60},
        "forest": {"n_trees": 100},
        "seed": 2024,
        "output_dir": "out",
    }
    with open(os.path.join(OUT, "config.json"), "w") as f:
        json.dump(config, f, indent=2)
    print("wrote", os.path.join(OUT, "config.json"))


if __name__ == "__main__":
    main()
