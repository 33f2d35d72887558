"""Stage orchestration: extract features, train and rate, spatial reports.

Every stage is a pure function of (input files, config, seed): outputs are
byte-identical across reruns, which the run manifest makes checkable by
recording SHA-256 hashes of stage inputs and outputs. Floats are written
with repr so CSV round-trips are exact.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time

import numpy as np

from . import __version__
from .config import DataError, PipelineConfig, substream_seed
from .dec import ClusterState, DecConfig, dec_train, target_distribution
from .features import (
    FEATURE_NAMES,
    FeatureConfig,
    FeatureMatrix,
    LayerBundle,
    align_directions,
    assemble_features,
)
from .forest import fit_forest
from .geodata import (
    Grid,
    build_grid,
    load_mask,
    load_point_layer,
    load_polygon_layer,
    load_road_layer,
)
from .neural import TrainConfig
from .rating import (
    aggregate_and_rank,
    classification_metrics,
    cluster_means,
    grid_search,
    min_max_scale,
)
from .sdae import fit_sdae, save_sdae
from .spatial import (
    ScenarioSpec,
    apply_scenario,
    combine_risk_resilience,
    morans_i,
    queen_weights,
    rerate_and_compare,
)

logger = logging.getLogger(__name__)


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


class ManifestWriter:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.path = os.path.join(cfg.output_dir, "manifest.json")

    def record(self, stage: str, inputs: list[str], outputs: list[str],
               wall_time_s: float) -> None:
        manifest = {"config_hash": self.cfg.config_hash(), "stages": {}}
        if os.path.exists(self.path):
            with open(self.path) as f:
                manifest = json.load(f)
            if manifest.get("config_hash") != self.cfg.config_hash():
                manifest = {"config_hash": self.cfg.config_hash(), "stages": {}}
        manifest.setdefault("stages", {})[stage] = {
            "inputs": {os.path.basename(p): _sha256(p) for p in inputs if os.path.exists(p)},
            "outputs": {os.path.basename(p): _sha256(p) for p in outputs},
            "wall_time_s": wall_time_s,
            "package_version": __version__,
        }
        with open(self.path, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# config adapters

def grid_from_config(cfg: PipelineConfig) -> Grid:
    bbox = cfg.raw["grid"]["bbox"]
    if bbox is None:
        raise DataError("grid.bbox is not configured")
    return build_grid(tuple(bbox), cfg.raw["grid"]["cell_size"])


def feature_config(cfg: PipelineConfig) -> FeatureConfig:
    feats = cfg.raw["features"]
    return FeatureConfig(
        road_classes=tuple(feats["road_classes"]),
        speed_table=dict(feats["speed_table"]),
        healthcare_threshold_minutes=feats["healthcare_threshold_minutes"],
        road_metric=feats["road_metric"],
    )


def train_config(cfg: PipelineConfig, seed: int) -> TrainConfig:
    tr = cfg.raw["train"]
    return TrainConfig(
        learning_rate=tr["learning_rate"],
        batch_size=tr["batch_size"],
        epochs=tr["epochs"],
        dropout_rate=tr["dropout_rate"],
        seed=seed,
        momentum=tr["momentum"],
        finetune_epochs=tr["finetune_epochs"],
    )


def dec_config(cfg: PipelineConfig, seed: int, k: int | None = None) -> DecConfig:
    dec = cfg.raw["dec"]
    return DecConfig(
        k=k if k is not None else dec["k"],
        max_iterations=dec["max_iterations"],
        target_update_interval=dec["target_update_interval"],
        stop_tolerance=dec["stop_tolerance"],
        seed=seed,
    )


def load_layers(cfg: PipelineConfig) -> LayerBundle:
    layers = cfg.raw["layers"]

    def polygons(name):
        entry = layers[name]
        return load_polygon_layer(cfg.layer_path(name),
                                  entry["value_property"], unit_tag=name)

    green_entry = layers["greenspace"]
    greenspace = load_polygon_layer(
        cfg.layer_path("greenspace"), "value",
        filter_property=green_entry.get("filter_property"),
        filter_value=green_entry.get("filter_value"),
        unit_tag="greenspace")
    towers_entry = layers["towers"]
    towers = load_point_layer(cfg.layer_path("towers"), {
        "age": towers_entry["age_field"], "range": towers_entry["range_field"]})
    health_entry = layers["healthcare"]
    attr_fields = {}
    if health_entry.get("category_field"):
        attr_fields["category"] = health_entry["category_field"]
    healthcare = load_point_layer(cfg.layer_path("healthcare"), attr_fields)
    allowed = health_entry.get("categories")
    if allowed:
        allowed = {str(c) for c in allowed}
        healthcare.points = [
            p for p in healthcare.points
            if str(p.attrs.get("category", "")) in allowed]
    roads = load_road_layer(cfg.layer_path("roads"),
                            layers["roads"]["class_property"])
    return LayerBundle(
        building_age=polygons("building_age"),
        poverty_rate=polygons("poverty_rate"),
        social_connectedness=polygons("social_connectedness"),
        internet_speed=polygons("internet_speed"),
        education_level=polygons("education_level"),
        greenspace=greenspace,
        towers=towers,
        healthcare=healthcare,
        roads=roads,
    )


# ---------------------------------------------------------------------------
# feature matrix files

def features_csv_path(cfg) -> str:
    return os.path.join(cfg.output_dir, "features.csv")


def mask_csv_path(cfg) -> str:
    return os.path.join(cfg.output_dir, "imputation_mask.csv")


def write_feature_matrix(rf: FeatureMatrix, csv_path: str, mask_path: str) -> None:
    header = ["cell_id", *FEATURE_NAMES]
    _write_csv(csv_path, header,
               ([int(cid), *row] for cid, row in zip(rf.cell_ids, rf.raw)))
    _write_csv(mask_path, header,
               ([int(cid), *(int(v) for v in row)]
                for cid, row in zip(rf.cell_ids, rf.imputed)))


def read_feature_matrix(csv_path: str, mask_path: str | None = None) -> FeatureMatrix:
    if not os.path.exists(csv_path):
        raise DataError(f"feature matrix not found: {csv_path} (run extract first)")
    with open(csv_path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != ["cell_id", *FEATURE_NAMES]:
            raise DataError(f"{csv_path}: unexpected header")
        cell_ids, rows = [], []
        for row in reader:
            cell_ids.append(int(row[0]))
            rows.append([float(v) for v in row[1:]])
    raw = np.asarray(rows, dtype=float)
    rf = align_directions(raw)
    rf.cell_ids = np.asarray(cell_ids, dtype=int)
    if mask_path and os.path.exists(mask_path):
        with open(mask_path, newline="") as f:
            reader = csv.reader(f)
            next(reader)
            mask_rows = [[bool(int(v)) for v in row[1:]] for row in reader]
        rf.imputed = np.asarray(mask_rows, dtype=bool)
    return rf


# ---------------------------------------------------------------------------
# GeoJSON

def cell_polygon_coords(cell) -> list[list[list[float]]]:
    ring = [[cell.min_x, cell.min_y], [cell.max_x, cell.min_y],
            [cell.max_x, cell.max_y], [cell.min_x, cell.max_y],
            [cell.min_x, cell.min_y]]
    return [ring]


def write_cells_geojson(path: str, grid: Grid,
                        properties_per_cell: list[dict]) -> None:
    features = []
    for cell, props in zip(grid.cells, properties_per_cell):
        features.append({
            "type": "Feature",
            "geometry": {"type": "Polygon",
                         "coordinates": cell_polygon_coords(cell)},
            "properties": {"cell_id": cell.id, **props},
        })
    with open(path, "w") as f:
        json.dump({"type": "FeatureCollection", "features": features}, f)


# ---------------------------------------------------------------------------
# stages

def run_extract(cfg: PipelineConfig) -> FeatureMatrix:
    t0 = time.perf_counter()
    os.makedirs(cfg.output_dir, exist_ok=True)
    grid = grid_from_config(cfg)
    layers = load_layers(cfg)
    rf = assemble_features(grid, layers, feature_config(cfg))
    write_feature_matrix(rf, features_csv_path(cfg), mask_csv_path(cfg))
    input_paths = [cfg.layer_path(n) for n in (
        "building_age", "poverty_rate", "social_connectedness", "internet_speed",
        "education_level", "greenspace", "towers", "healthcare", "roads")]
    ManifestWriter(cfg).record(
        "extract", input_paths,
        [features_csv_path(cfg), mask_csv_path(cfg)],
        time.perf_counter() - t0)
    return rf


def _scaled_matrix(rf: FeatureMatrix):
    return min_max_scale(rf.aligned)


def _compact_clusters(state: ClusterState, labels: np.ndarray
                      ) -> tuple[ClusterState, np.ndarray]:
    """Drop clusters DEC refined into emptiness and relabel consecutively.

    Rating requires every cluster nonempty; levels then span 1..k_eff.
    Ordinal levels stay comparable across runs with different k_eff.
    """
    present = np.unique(labels)
    if len(present) == state.k:
        return state, labels
    logger.warning("DEC left %d of %d clusters nonempty; rating the nonempty ones",
                   len(present), state.k)
    remap = {int(old): new for new, old in enumerate(present)}
    labels = np.asarray([remap[int(l)] for l in labels], dtype=int)
    q = state.q[:, present]
    q = q / q.sum(axis=1, keepdims=True)
    return ClusterState(len(present), state.centroids[present], state.alpha,
                        q, target_distribution(q)), labels


def _rate_pipeline(cfg: PipelineConfig, rf: FeatureMatrix, seed_root: int,
                   embedding_dim: int, k: int):
    """scale -> SDAE -> DEC -> forest -> levels, fully seeded."""
    scale = _scaled_matrix(rf)
    x = scale.scaled
    dims = [x.shape[1], *cfg.raw["dims"]["hidden"], embedding_dim]
    tcfg = train_config(cfg, substream_seed(seed_root, "train-sdae"))
    model = fit_sdae(x, tcfg, dims)
    dcfg = dec_config(cfg, substream_seed(seed_root, "train-dec"), k)
    encoder, state, labels = dec_train(model.encoder, x, dcfg, tcfg)
    model.encoder = encoder
    state, labels = _compact_clusters(state, labels)
    rating_forest = fit_forest(
        x, labels, n_trees=cfg.raw["forest"]["n_trees"],
        seed=substream_seed(seed_root, "train-forest"))
    means = cluster_means(x, labels, state.k)
    assignment = aggregate_and_rank(means, rating_forest.feature_importances)
    return {
        "scale": scale, "x": x, "model": model, "state": state,
        "labels": labels, "forest": rating_forest, "means": means,
        "assignment": assignment, "dims": dims,
        "cell_levels": assignment.cell_levels(labels),
    }


def _fidelity_metrics(cfg: PipelineConfig, x: np.ndarray, labels: np.ndarray,
                      seed_root: int):
    """Forest fidelity on a seeded 80/20 split of cells."""
    rng = np.random.default_rng(substream_seed(seed_root, "train-split"))
    m = len(labels)
    order = rng.permutation(m)
    n_test = max(1, int(round(cfg.raw["forest"]["test_fraction"] * m)))
    test_idx, train_idx = order[:n_test], order[n_test:]
    if len(np.unique(labels[train_idx])) < 2:
        raise DataError("fidelity split left fewer than 2 classes in training")
    eval_forest = fit_forest(
        x[train_idx], labels[train_idx], n_trees=cfg.raw["forest"]["n_trees"],
        seed=substream_seed(seed_root, "train-eval-forest"))
    scores = eval_forest.predict_proba(x[test_idx])
    predicted = eval_forest.predict(x[test_idx])
    return classification_metrics(labels[test_idx], predicted, scores,
                                  class_labels=eval_forest.classes)


def _write_rating_outputs(cfg: PipelineConfig, result: dict, metrics) -> list[str]:
    out = cfg.output_dir
    labels = result["labels"]
    state: ClusterState = result["state"]
    assignment = result["assignment"]
    cell_ids = result["cell_ids"]
    levels_path = os.path.join(out, "levels.csv")
    _write_csv(levels_path,
               ["cell_id", "cluster", "level", "aggregate_score"],
               ([int(cid), int(lbl), int(assignment.levels[lbl]),
                 assignment.scores[lbl]]
                for cid, lbl in zip(cell_ids, labels)))
    clusters_path = os.path.join(out, "clusters.csv")
    k = state.k
    _write_csv(clusters_path,
               ["cell_id", "cluster", *[f"q_{j}" for j in range(k)]],
               ([int(cid), int(lbl), *state.q[i]]
                for i, (cid, lbl) in enumerate(zip(cell_ids, labels))))
    importances_path = os.path.join(out, "importances.csv")
    _write_csv(importances_path, ["feature", "importance"],
               ([name, imp] for name, imp in
                zip(FEATURE_NAMES, result["forest"].feature_importances)))
    metrics_path = os.path.join(out, "metrics.json")
    with open(metrics_path, "w") as f:
        json.dump(metrics.to_dict(), f, indent=2, sort_keys=True)
    return [levels_path, clusters_path, importances_path, metrics_path]


def run_train(cfg: PipelineConfig) -> dict:
    t0 = time.perf_counter()
    os.makedirs(cfg.output_dir, exist_ok=True)
    rf = read_feature_matrix(features_csv_path(cfg), mask_csv_path(cfg))
    seed_root = cfg.seed
    outputs = []

    embedding_dim = cfg.raw["dims"]["embedding"]
    k = cfg.raw["dec"]["k"]
    if cfg.raw["grid_search"]["enabled"]:
        scale = _scaled_matrix(rf)
        search = grid_search(
            scale.scaled,
            cfg.raw["grid_search"]["embedding_space"],
            cfg.raw["grid_search"]["k_space"],
            substream_seed(seed_root, "grid-search"),
            train_config(cfg, 0),
            dec_config(cfg, 0),
            hidden_dims=tuple(cfg.raw["dims"]["hidden"]),
        )
        embedding_dim, k = search.embedding_dim, search.k
        search_path = os.path.join(cfg.output_dir, "grid_search.csv")
        _write_csv(search_path,
                   ["embedding_dim", "k", "score", "diverged"],
                   ([e.embedding_dim, e.k, e.score, e.diverged]
                    for e in search.entries))
        outputs.append(search_path)

    result = _rate_pipeline(cfg, rf, seed_root, embedding_dim, k)
    result["cell_ids"] = rf.cell_ids
    metrics = _fidelity_metrics(cfg, result["x"], result["labels"], seed_root)

    model_dir = os.path.join(cfg.output_dir, "model")
    save_sdae(result["model"], model_dir)
    state = result["state"]
    with open(os.path.join(model_dir, "cluster_state.json"), "w") as f:
        json.dump({
            "k": state.k,
            "alpha": state.alpha,
            "centroids": state.centroids.tolist(),
            "embedding_dim": int(state.centroids.shape[1]),
            "selected_by_grid_search": bool(cfg.raw["grid_search"]["enabled"]),
        }, f)
    outputs.extend(os.path.join(model_dir, name) for name in
                   ("encoder.json", "decoder.json", "manifest.json",
                    "history.csv", "cluster_state.json"))
    outputs.extend(_write_rating_outputs(cfg, result, metrics))
    ManifestWriter(cfg).record(
        "train", [features_csv_path(cfg), mask_csv_path(cfg)], outputs,
        time.perf_counter() - t0)
    return result


def run_rate(cfg: PipelineConfig) -> dict:
    """Re-run only the rating layer from persisted cluster labels."""
    t0 = time.perf_counter()
    rf = read_feature_matrix(features_csv_path(cfg), mask_csv_path(cfg))
    clusters_path = os.path.join(cfg.output_dir, "clusters.csv")
    if not os.path.exists(clusters_path):
        raise DataError(f"cluster output not found: {clusters_path} (run train first)")
    labels, q_rows = [], []
    with open(clusters_path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            labels.append(int(row[1]))
            q_rows.append([float(v) for v in row[2:]])
    labels = np.asarray(labels, dtype=int)
    q = np.asarray(q_rows, dtype=float)
    k = q.shape[1]
    seed_root = cfg.seed
    scale = _scaled_matrix(rf)
    x = scale.scaled
    rating_forest = fit_forest(x, labels, n_trees=cfg.raw["forest"]["n_trees"],
                               seed=substream_seed(seed_root, "train-forest"))
    means = cluster_means(x, labels, k)
    assignment = aggregate_and_rank(means, rating_forest.feature_importances)
    metrics = _fidelity_metrics(cfg, x, labels, seed_root)
    state = ClusterState(k, np.zeros((k, 1)), 1.0, q, target_distribution(q))
    result = {
        "labels": labels, "state": state, "forest": rating_forest,
        "means": means, "assignment": assignment, "cell_ids": rf.cell_ids,
        "x": x, "cell_levels": assignment.cell_levels(labels),
    }
    outputs = _write_rating_outputs(cfg, result, metrics)
    ManifestWriter(cfg).record(
        "rate", [features_csv_path(cfg), clusters_path], outputs,
        time.perf_counter() - t0)
    return result


def read_levels(cfg: PipelineConfig) -> tuple[np.ndarray, np.ndarray]:
    """(cell_ids, per-cell levels) from the levels CSV."""
    path = os.path.join(cfg.output_dir, "levels.csv")
    if not os.path.exists(path):
        raise DataError(f"levels not found: {path} (run train first)")
    ids, levels = [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            ids.append(int(row[0]))
            levels.append(int(row[2]))
    return np.asarray(ids, dtype=int), np.asarray(levels, dtype=int)


def _load_exclusions(cfg: PipelineConfig) -> set[int]:
    mask_path = cfg.resolve_path(cfg.raw["mask"])
    if mask_path is None:
        return set()
    return load_mask(mask_path)


def run_moran(cfg: PipelineConfig) -> dict:
    t0 = time.perf_counter()
    grid = grid_from_config(cfg)
    _, levels = read_levels(cfg)
    weights = queen_weights(grid, _load_exclusions(cfg))
    result = morans_i(levels.astype(float), weights,
                      permutations=cfg.raw["moran"]["permutations"],
                      seed=substream_seed(cfg.seed, "moran"))
    payload = {"i": result.i, "p_value": result.p_value, "n": result.n,
               "permutations": result.permutations, "field": "resilience_level"}
    moran_path = os.path.join(cfg.output_dir, "moran.json")
    with open(moran_path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    ManifestWriter(cfg).record(
        "moran", [os.path.join(cfg.output_dir, "levels.csv")], [moran_path],
        time.perf_counter() - t0)
    return payload


def scenario_spec(cfg: PipelineConfig) -> ScenarioSpec:
    sc = cfg.raw["scenario"]
    return ScenarioSpec(levels=set(int(v) for v in sc["levels"]),
                        multipliers={k: float(v) for k, v in sc["multipliers"].items()},
                        seed_policy=sc["seed_policy"])


def _baseline_model_params(cfg: PipelineConfig) -> tuple[int, int]:
    """(embedding_dim, k) the baseline train stage actually used, which is
    the grid-search selection when one ran; falls back to the config."""
    state_path = os.path.join(cfg.output_dir, "model", "cluster_state.json")
    if os.path.exists(state_path):
        with open(state_path) as f:
            state = json.load(f)
        if state.get("selected_by_grid_search"):
            return int(state["embedding_dim"]), int(state["k"])
    return cfg.raw["dims"]["embedding"], cfg.raw["dec"]["k"]


def run_scenario(cfg: PipelineConfig) -> dict:
    t0 = time.perf_counter()
    grid = grid_from_config(cfg)
    rf = read_feature_matrix(features_csv_path(cfg), mask_csv_path(cfg))
    _, baseline_levels = read_levels(cfg)
    spec = scenario_spec(cfg)
    rf_after = apply_scenario(rf, baseline_levels, spec)

    seed_root = cfg.seed if spec.seed_policy == "reuse" \
        else substream_seed(cfg.seed, "scenario")
    embedding_dim, k = _baseline_model_params(cfg)

    def rate_fn(matrix: FeatureMatrix):
        return _rate_pipeline(cfg, matrix, seed_root, embedding_dim, k)["cell_levels"]

    delta, before, after = rerate_and_compare(rf, rf_after, rate_fn)

    deltas_path = os.path.join(cfg.output_dir, "scenario_deltas.csv")
    _write_csv(deltas_path,
               ["cell_id", "level_before", "level_after", "delta"],
               ([int(cid), int(b), int(a), int(d)] for cid, b, a, d in
                zip(rf.cell_ids, before, after, delta)))
    geojson_path = os.path.join(cfg.output_dir, "scenario_deltas.geojson")
    write_cells_geojson(geojson_path, grid, [
        {"level_before": int(b), "level_after": int(a), "delta": int(d)}
        for b, a, d in zip(before, after, delta)])
    ManifestWriter(cfg).record(
        "scenario",
        [features_csv_path(cfg), os.path.join(cfg.output_dir, "levels.csv")],
        [deltas_path, geojson_path], time.perf_counter() - t0)
    return {"delta": delta, "levels_before": before, "levels_after": after}


def read_risk(path: str) -> dict[int, int]:
    if not os.path.exists(path):
        raise DataError(f"risk file not found: {path}")
    risk = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"cell_id", "risk_level"} <= set(reader.fieldnames):
            raise DataError(f"{path}: risk CSV needs cell_id and risk_level columns")
        for row in reader:
            risk[int(row["cell_id"])] = int(row["risk_level"])
    return risk


def run_risk_combine(cfg: PipelineConfig) -> list:
    t0 = time.perf_counter()
    grid = grid_from_config(cfg)
    risk_path = cfg.resolve_path(cfg.raw["risk"])
    if risk_path is None:
        raise DataError("risk input file is not configured")
    risk_by_cell = read_risk(risk_path)
    cell_ids, levels = read_levels(cfg)
    missing = [int(cid) for cid in cell_ids if cid not in risk_by_cell]
    if missing:
        raise DataError(f"risk file missing cells: {missing[:10]}"
                        + ("..." if len(missing) > 10 else ""))
    risks = [risk_by_cell[int(cid)] for cid in cell_ids]
    combos = combine_risk_resilience(risks, levels)

    csv_path = os.path.join(cfg.output_dir, "risk_resilience.csv")
    _write_csv(csv_path,
               ["cell_id", "risk_level", "resilience_level", "label",
                "special_attention"],
               ([int(cid), int(r), int(lv), c.label, c.special_attention]
                for cid, r, lv, c in zip(cell_ids, risks, levels, combos)))
    geojson_path = os.path.join(cfg.output_dir, "risk_resilience.geojson")
    write_cells_geojson(geojson_path, grid, [
        {"risk_level": int(r), "resilience_level": int(lv),
         "label": c.label, "special_attention": c.special_attention}
        for r, lv, c in zip(risks, levels, combos)])
    ManifestWriter(cfg).record(
        "risk-combine", [risk_path, os.path.join(cfg.output_dir, "levels.csv")],
        [csv_path, geojson_path], time.perf_counter() - t0)
    return combos


def run_report(cfg: PipelineConfig) -> dict:
    t0 = time.perf_counter()
    out = cfg.output_dir
    grid = grid_from_config(cfg)
    rf = read_feature_matrix(features_csv_path(cfg), mask_csv_path(cfg))
    cell_ids, levels = read_levels(cfg)

    clusters_path = os.path.join(out, "clusters.csv")
    labels = None
    if os.path.exists(clusters_path):
        with open(clusters_path, newline="") as f:
            reader = csv.reader(f)
            next(reader)
            labels = np.asarray([int(row[1]) for row in reader], dtype=int)

    report: dict = {"package_version": __version__}
    hist: dict[str, int] = {}
    for lv in levels:
        hist[str(int(lv))] = hist.get(str(int(lv)), 0) + 1
    report["level_histogram"] = hist

    if labels is not None:
        k = int(labels.max()) + 1
        scale = _scaled_matrix(rf)
        report["cluster_feature_means"] = {
            "features": list(FEATURE_NAMES),
            "clusters": list(range(k)),
            "scaled": cluster_means(scale.scaled, labels, k).tolist(),
            "raw": cluster_means(rf.raw, labels, k).tolist(),
        }

    for name, fname in (("moran", "moran.json"), ("metrics", "metrics.json")):
        path = os.path.join(out, fname)
        if os.path.exists(path):
            with open(path) as f:
                report[name] = json.load(f)

    report_path = os.path.join(out, "report.json")
    with open(report_path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)

    props = []
    risk_csv = os.path.join(out, "risk_resilience.csv")
    risk_props: dict[int, dict] = {}
    if os.path.exists(risk_csv):
        with open(risk_csv, newline="") as f:
            for row in csv.DictReader(f):
                risk_props[int(row["cell_id"])] = {
                    "risk_level": int(row["risk_level"]),
                    "risk_resilience": row["label"],
                    "special_attention": row["special_attention"] == "True",
                }
    delta_csv = os.path.join(out, "scenario_deltas.csv")
    delta_props: dict[int, int] = {}
    if os.path.exists(delta_csv):
        with open(delta_csv, newline="") as f:
            for row in csv.DictReader(f):
                delta_props[int(row["cell_id"])] = int(row["delta"])
    for i, (cid, lv) in enumerate(zip(cell_ids, levels)):
        p = {"level": int(lv)}
        if labels is not None:
            p["cluster"] = int(labels[i])
        p.update(risk_props.get(int(cid), {}))
        if int(cid) in delta_props:
            p["delta"] = delta_props[int(cid)]
        props.append(p)
    geojson_path = os.path.join(out, "cells.geojson")
    write_cells_geojson(geojson_path, grid, props)

    ManifestWriter(cfg).record(
        "report", [features_csv_path(cfg), os.path.join(out, "levels.csv")],
        [report_path, geojson_path], time.perf_counter() - t0)
    return report
