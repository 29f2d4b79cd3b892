from pathlib import Path
import argparse

import pytest

from motionid.__main__ import config_with_cli_flags, read_config
from motionid.errors import UsageError
from motionid.pipeline import ScoreMode
from motionid.splits import make_split_plan
import motionid.config as configs


EXAMPLE_CONFIG = Path(__file__).parent.parent / "example-configs" / "motionid.yaml"


@pytest.fixture(scope="session")
def motionid_layout(tmp_path_factory):
    test_layout = tmp_path_factory.mktemp("motionid-test")
    data = test_layout / "data"
    data.mkdir()
    output = test_layout / "results"
    output.mkdir()
    config_path = test_layout / "motionid.yaml"
    config_path.write_text(
        f'data_dir: !path "{data}"\noutput_dir: "{output}"\nseed: 11\nn_base: 5\n',
        encoding="utf-8",
    )
    return {"data_dir": data, "output_dir": output, "config_path": config_path}


def test_missing_file_means_defaults(tmp_path):
    assert read_config(tmp_path / "absent.yaml") == configs.ExperimentConfig()


def test_read_config(motionid_layout):
    cfg = read_config(motionid_layout["config_path"])
    assert cfg.data_dir == motionid_layout["data_dir"]
    assert cfg.output_dir == motionid_layout["output_dir"]
    assert isinstance(cfg.output_dir, Path)
    assert (cfg.seed, cfg.n_base) == (11, 5)
    assert cfg.validate_data_dir() and cfg.validate_output_dir()


def test_example_config_parses():
    cfg = read_config(EXAMPLE_CONFIG)
    assert cfg.seed == 7
    assert cfg.mode is ScoreMode.CLASSIFIER


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "motionid.yaml"
    path.write_text("n_base: 5\nepocs: 3\n", encoding="utf-8")
    with pytest.raises(UsageError, match="epocs"):
        read_config(path)
    path.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(UsageError):
        read_config(path)


def test_cli_flags_take_precedence(motionid_layout):
    cfg = read_config(motionid_layout["config_path"])
    flags = argparse.Namespace(n_base=7, seed=None, epochs=None, verbosity=1, func=print)
    merged = config_with_cli_flags(cfg, flags)
    assert merged.n_base == 7
    assert merged.seed == 11
    assert merged.epochs == cfg.epochs
    assert merged.verbose()


def test_config_validation():
    with pytest.raises(AssertionError):
        configs.ExperimentConfig(score_mode="cosine")
    with pytest.raises(AssertionError):
        configs.ExperimentConfig(replication=True, n_base=8)
    with pytest.raises(AssertionError):
        configs.ExperimentConfig(replication=True, n_base=60)
    with pytest.raises(AssertionError):
        configs.ExperimentConfig(lr_reduction=1.0)
    configs.ExperimentConfig(n_base=1, skip_validation=True)


def test_replication_needs_seed():
    assert configs.ExperimentConfig().require_seed() == 0
    with pytest.raises(UsageError):
        configs.ExperimentConfig(replication=True, n_base=60, n_test_final=11).require_seed()
    replication = configs.ExperimentConfig(replication=True, n_base=60, n_test_final=11, seed=3)
    assert replication.require_seed() == 3


def test_derived_configs():
    cfg = configs.ExperimentConfig(seed=4, learning_rate=1e-2, lr_reduction=4.0, rate_hz=40.0)
    finetune = cfg.finetune_config()
    assert finetune.learning_rate == pytest.approx(2.5e-3)
    assert finetune.seed == 4
    assert cfg.augment_config().crop_out_len == 40
    assert cfg.train_config().loss == cfg.loss_config()
    assert cfg.preprocess_config().rate == 40.0


def test_defaults_split_a_default_synthetic_run():
    cfg = configs.ExperimentConfig()
    users = [f"user{i:03d}" for i in range(12)]
    plan = make_split_plan(users, cfg.n_base, cfg.n_test_final, seed=cfg.require_seed())
    assert plan.n_base == cfg.n_base
    assert len(plan.test_final_users) == cfg.n_test_final
    assert len(plan.val_add_users) >= 1
