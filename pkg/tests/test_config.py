import pytest

from recdiffseg import config
from recdiffseg.dataset import AugmentConfig
from recdiffseg.denoiser import DenoiserConfig
from recdiffseg.errors import InvalidParameterError
from recdiffseg.sampler import SampleConfig
from recdiffseg.trainer import TrainConfig


def test_build_coerces_strings():
    cfg = config.build(TrainConfig, {"T": "7", "lr": "1e-3", "epochs": "2"})
    assert cfg == TrainConfig(T=7, lr=1e-3, epochs=2)
    m = config.build(DenoiserConfig, {"num_classes": "3", "attention_at_bottleneck": "false"})
    assert m.attention_at_bottleneck is False


def test_steps_tuple():
    assert config.build(SampleConfig, {"steps": "5 3, 1"}).steps == (5, 3, 1)
    assert config.build(SampleConfig, {"steps": "None"}).steps is None


def test_unknown_and_unparseable():
    with pytest.raises(InvalidParameterError):
        config.build(TrainConfig, {"nope": "1"})
    with pytest.raises(InvalidParameterError):
        config.build(TrainConfig, {"T": "three"})


def test_merge_precedence():
    merged = config.merge({"train": {"T": "3", "lr": "0.1"}}, {"train": {"T": 9, "lr": None}, "model": {"depth": 2}})
    assert merged == {"train": {"T": 9, "lr": "0.1"}, "model": {"depth": 2}}


def test_resolved_round_trip(tmp_path):
    objs = {"model": DenoiserConfig(4, 8, 2, 16, False), "train": TrainConfig(T=5, lr=3e-4),
            "sample": SampleConfig(steps=(5, 2), M=2), "augment": AugmentConfig.vaihingen()}
    config.write_resolved(tmp_path / "r.ini", objs, {"data": "somewhere"})
    values = config.read_config_file(tmp_path / "r.ini")
    for section, obj in objs.items():
        assert config.build(type(obj), values[section]) == obj
    assert values["run"] == {"data": "somewhere"}


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        config.read_config_file(tmp_path / "none.ini")
    assert config.read_config_file(None) == {}


def test_output_root(monkeypatch, tmp_path):
    monkeypatch.setenv(config.OUTPUT_ROOT_ENV, str(tmp_path))
    assert config.default_output_root() == tmp_path
