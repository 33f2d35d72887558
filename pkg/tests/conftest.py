import json
import os

import pytest

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
MINICITY = os.path.join(FIXTURES, "minicity")


def minicity_config_dict():
    with open(os.path.join(MINICITY, "config.json")) as f:
        return json.load(f)


def write_config(tmp_path, overrides=None, name="config.json"):
    """Mini-city config with absolute layer paths and a tmp output dir."""
    cfg = minicity_config_dict()
    for layer in cfg["layers"].values():
        layer["path"] = os.path.join(MINICITY, layer["path"])
    cfg["risk"] = os.path.join(MINICITY, cfg["risk"])
    cfg["output_dir"] = str(tmp_path / "out")
    for key, value in (overrides or {}).items():
        if isinstance(value, dict):
            cfg.setdefault(key, {}).update(value)
        else:
            cfg[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


FAST_OVERRIDES = {
    "train": {"learning_rate": 0.1, "epochs": 25, "finetune_epochs": 25},
    "dims": {"hidden": [32, 16, 8], "embedding": 6},
    "dec": {"k": 5, "max_iterations": 20},
    "forest": {"n_trees": 30},
    "moran": {"permutations": 199},
}


@pytest.fixture(scope="session")
def minicity_run(tmp_path_factory):
    """One full CLI run (all stages, reduced dims) shared by read-only tests."""
    from resilgrid import cli

    tmp_path = tmp_path_factory.mktemp("minicity_run")
    config_path = write_config(tmp_path, FAST_OVERRIDES)
    for command in ("extract", "train", "moran", "scenario", "risk-combine",
                    "report"):
        code = cli.main([command, "--config", config_path])
        assert code == 0, f"{command} failed"
    out_dir = json.loads(open(config_path).read())["output_dir"]
    return {"config_path": config_path, "out": out_dir}
