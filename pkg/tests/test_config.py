from pathlib import Path

import pytest

from gpmhe.config import ConfigError, build_spec, load_config
from gpmhe.harness import ExperimentSpec
from gpmhe.models import ModelKind

ROOT = Path(__file__).resolve().parents[1]


def test_default_config_equals_builtin_defaults():
    spec = build_spec(ROOT / "configs" / "default.ini")
    base = ExperimentSpec()
    for name in ("trajectory", "noise_level", "seeds", "estimators", "nodes", "warmup",
                 "ramp", "hold", "mass", "rate", "disturbance", "max_iter", "arrival_mode",
                 "payload_std", "payload_rate", "payload_bounds", "inducing",
                 "gp_train_stride", "payload_mass", "payload_times"):
        assert getattr(spec, name) == getattr(base, name), name


def test_overrides_win(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[experiment]\nnodes = 20\ntrajectory = circle\n")
    spec = build_spec(cfg, nodes=30, trajectory=None)
    assert spec.nodes == 30 and spec.trajectory == "circle"


def test_custom_sensor_noise(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[sensors]\nsigma_p = 0.2\nsigma_w = 0.3\nsigma_a = 0.04\n"
                   "[process_noise]\nv = 0.01\n[estimator]\nestimators_unused = 1\n")
    with pytest.raises(ConfigError, match="estimators_unused"):
        load_config(cfg)
    cfg.write_text("[sensors]\nsigma_p = 0.2\nsigma_w = 0.3\nsigma_a = 0.04\n"
                   "[process_noise]\nv = 0.01\n")
    spec = build_spec(cfg, estimators=("gp",))
    assert spec.sigmas == (0.2, 0.3, 0.04)
    assert spec.process == {"v": 0.01}
    assert spec.estimators == (ModelKind.GP,)


@pytest.mark.parametrize("text,match", [
    ("[bogus]\nx = 1\n", "unknown section"),
    ("[experiment]\nnodes = many\n", "bad value"),
    ("[sensors]\nsigma_p = 1\n", "needs all"),
    ("[experiment]\ntrajectory = square\n", "trajectory"),
    ("not an ini", "malformed"),
])
def test_invalid_configs(tmp_path, text, match):
    cfg = tmp_path / "c.ini"
    cfg.write_text(text)
    with pytest.raises(ConfigError, match=match):
        build_spec(cfg)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "none.ini")
