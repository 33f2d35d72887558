import json
import os

import numpy as np
import pytest

from conftest import write_config, FAST_OVERRIDES
from resilgrid.config import ConfigError, DataError, PipelineConfig
from resilgrid.features import FEATURE_NAMES, align_directions
from resilgrid.pipeline import (
    read_feature_matrix,
    run_extract,
    run_train,
    write_feature_matrix,
)


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 1, "bogus_section": {}}))
        with pytest.raises(ConfigError, match="bogus_section"):
            PipelineConfig.from_file(str(path))

    def test_missing_seed_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"grid": {"bbox": [0, 0, 1, 1]}}))
        with pytest.raises(ConfigError, match="seed"):
            PipelineConfig.from_file(str(path))

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            PipelineConfig.from_file(str(path))

    def test_missing_file_rejected(self):
        with pytest.raises(ConfigError, match="not found"):
            PipelineConfig.from_file("/nonexistent/config.json")

    def test_bad_road_metric(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"seed": 1, "features": {"road_metric": "area"}}))
        with pytest.raises(ConfigError, match="road_metric"):
            PipelineConfig.from_file(str(path))

    def test_config_hash_stable(self, tmp_path):
        path = write_config(tmp_path)
        a = PipelineConfig.from_file(path).config_hash()
        b = PipelineConfig.from_file(path).config_hash()
        assert a == b


class TestExtract:
    def test_writes_hundred_by_twelve(self, tmp_path):
        cfg = PipelineConfig.from_file(write_config(tmp_path))
        rf = run_extract(cfg)
        assert rf.raw.shape == (100, 12)
        features_csv = os.path.join(cfg.output_dir, "features.csv")
        with open(features_csv) as f:
            header = f.readline().strip().split(",")
            rows = f.readlines()
        assert header == ["cell_id", *FEATURE_NAMES]
        assert len(rows) == 100

    def test_rerun_byte_identical(self, tmp_path):
        cfg = PipelineConfig.from_file(write_config(tmp_path))
        run_extract(cfg)
        first = open(os.path.join(cfg.output_dir, "features.csv"), "rb").read()
        run_extract(cfg)
        second = open(os.path.join(cfg.output_dir, "features.csv"), "rb").read()
        assert first == second

    def test_missing_towers_file_names_path(self, tmp_path):
        path = write_config(tmp_path, {"layers": {"towers": {"path": "/nope/towers.csv"}}})
        cfg = PipelineConfig.from_file(path)
        with pytest.raises(DataError, match="/nope/towers.csv"):
            run_extract(cfg)

    def test_feature_csv_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        raw = rng.uniform(0.1, 50.0, size=(7, 12))
        rf = align_directions(raw)
        csv_path = str(tmp_path / "f.csv")
        mask_path = str(tmp_path / "m.csv")
        write_feature_matrix(rf, csv_path, mask_path)
        back = read_feature_matrix(csv_path, mask_path)
        assert np.array_equal(back.raw, rf.raw)
        assert np.array_equal(back.aligned, rf.aligned)
        assert np.array_equal(back.imputed, rf.imputed)

    def test_read_without_extract_errors(self, tmp_path):
        with pytest.raises(DataError, match="run extract first"):
            read_feature_matrix(str(tmp_path / "missing.csv"))


class TestManifest:
    def test_identical_config_reproduces_stage_hashes(self, tmp_path):
        out_a, out_b = {}, {}
        for label, store in (("a", out_a), ("b", out_b)):
            sub = tmp_path / label
            sub.mkdir()
            cfg = PipelineConfig.from_file(write_config(sub, FAST_OVERRIDES))
            run_extract(cfg)
            run_train(cfg)
            with open(os.path.join(cfg.output_dir, "manifest.json")) as f:
                store.update(json.load(f))
        for stage in ("extract", "train"):
            assert out_a["stages"][stage]["outputs"] == out_b["stages"][stage]["outputs"]

    def test_manifest_reset_on_config_change(self, tmp_path):
        cfg = PipelineConfig.from_file(write_config(tmp_path, FAST_OVERRIDES))
        run_extract(cfg)
        manifest_path = os.path.join(cfg.output_dir, "manifest.json")
        first = json.load(open(manifest_path))
        cfg2 = PipelineConfig.from_file(write_config(tmp_path, {
            **FAST_OVERRIDES, "seed": 999}, name="config2.json"))
        cfg2.raw["output_dir"] = cfg.raw["output_dir"]
        run_extract(cfg2)
        second = json.load(open(manifest_path))
        assert first["config_hash"] != second["config_hash"]


class TestTrainStage:
    def test_outputs_and_invariants(self, tmp_path):
        cfg = PipelineConfig.from_file(write_config(tmp_path, FAST_OVERRIDES))
        run_extract(cfg)
        result = run_train(cfg)
        out = cfg.output_dir
        for name in ("levels.csv", "clusters.csv", "importances.csv",
                     "metrics.json", "model/encoder.json",
                     "model/cluster_state.json"):
            assert os.path.exists(os.path.join(out, name)), name
        levels = result["assignment"].levels
        assert sorted(levels) == list(range(1, len(levels) + 1))
        assert result["forest"].feature_importances.sum() == pytest.approx(1.0)
        q = result["state"].q
        assert np.allclose(q.sum(axis=1), 1.0, atol=1e-9)
        metrics = json.load(open(os.path.join(out, "metrics.json")))
        assert 0.0 <= metrics["macro_f1"] <= 1.0
        assert metrics["micro_f1"] == metrics["micro_precision"]
