import numpy as np
import pytest

from partforge.checkpoint import load_checkpoint, read_header, save_checkpoint
from partforge.config import RunConfig, config_from_mapping, load_config, with_seed
from partforge.denoiser import DenoiserConfig
from partforge.errors import ConfigError, ParseError
from partforge.flow import Adam

from helpers import random_model


def test_checkpoint_round_trip(tmp_path):
    model = random_model(3)
    opt = Adam(model.params, lr=0.01)
    for p in model.params.values():
        p.grad = np.ones_like(p.data)
    opt.step()
    path = save_checkpoint(tmp_path / "c.pfck", model, seed=9, step=1, optimizer=opt, extra={"note": [1, 2]})
    ck = load_checkpoint(path)
    assert ck.seed == 9 and ck.step == 1 and ck.extra == {"note": [1, 2]}
    assert ck.model.config == model.config
    for n, p in model.params.items():
        assert np.array_equal(ck.model.params[n].data, p.data.astype(np.float32).astype(np.float64))
        assert np.array_equal(ck.optimizer["m"][n], opt.m[n].astype(np.float32).astype(np.float64))
    assert ck.optimizer["t"] == 1 and ck.optimizer["lr"] == 0.01


def test_checkpoint_header_and_corruption(tmp_path):
    model = random_model(0)
    data = save_checkpoint(tmp_path / "c.pfck", model, 0, 0).read_bytes()
    header, pos = read_header(data)
    assert data[:4] == b"PFCK" and header["dtype"] == "<f4" and header["optimizer"] is None
    assert len(data) - pos == 4 * sum(p.data.size for p in model.params.values())
    with pytest.raises(ParseError):
        read_header(b"NOPE" + data[4:])
    for bad in (data[:-4], data + b"\0\0\0\0", data[:10]):
        (tmp_path / "bad.pfck").write_bytes(bad)
        with pytest.raises(ParseError):
            load_checkpoint(tmp_path / "bad.pfck")


def test_default_config_round_trips(tmp_path):
    cfg = RunConfig()
    path = tmp_path / "c.yaml"
    path.write_text(cfg.to_yaml())
    assert load_config(path) == cfg
    assert load_config(None) == cfg


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ConfigError, match="unknown top-level"):
        config_from_mapping({"modle": {}})
    with pytest.raises(ConfigError, match="unknown keys"):
        config_from_mapping({"train": {"learning_rate": 0.1}})
    with pytest.raises(ConfigError):
        config_from_mapping({"model": {"width": 10, "heads": 3}})
    with pytest.raises(ConfigError):
        config_from_mapping({"seed": "zero"})
    with pytest.raises(ConfigError):
        config_from_mapping({"model": [1, 2]})
    (tmp_path / "bad.yaml").write_text("seed: [unclosed")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_partial_sections_keep_defaults():
    cfg = config_from_mapping({"seed": 4, "model": {"depth": 2}, "train": {"steps": 3}})
    assert cfg.seed == 4 and cfg.model.depth == 2 and cfg.model.width == DenoiserConfig().width
    assert cfg.train.steps == 3 and cfg.metrics.tau == 0.1


def test_seed_override():
    cfg = with_seed(RunConfig(), 17)
    assert cfg.seed == 17 and cfg.train.seed == 17
    assert with_seed(RunConfig(), None).seed == 0
