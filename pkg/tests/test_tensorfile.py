import numpy as np
import pytest

from motionid.core import Window, WindowLabel
from motionid.errors import SchemaError, ShapeMismatch
from motionid.features import build_feature_tensor
from motionid.tensorfile import (
    TensorFile,
    attempts_to_tensorfile,
    features_to_tensorfile,
    read_tensorfile,
    tensorfile_to_attempts,
    tensorfile_to_features,
    tensorfile_to_windows,
    windows_to_tensorfile,
    write_tensorfile,
)

from tests.test_features import make_attempt


def windows(count, channels=("acc_x", "acc_y")):
    rng = np.random.default_rng(count)
    return [
        Window(
            "user001",
            WindowLabel.UNLOCK_POSITIVE if i % 2 else WindowLabel.UNLOCK_NEGATIVE,
            rng.normal(size=(len(channels), 150)).astype(np.float32),
            50.0,
            3.0,
            i * 10**9,
            channels,
            "device01",
        )
        for i in range(count)
    ]


def test_windows_survive_disk(tmp_path):
    original = windows(4)
    write_tensorfile(windows_to_tensorfile(original), tmp_path / "w.midt")
    back = tensorfile_to_windows(read_tensorfile(tmp_path / "w.midt"))
    assert [w.label for w in back] == [w.label for w in original]
    assert [w.end_ns for w in back] == [w.end_ns for w in original]
    assert back[3].device_id == "device01"
    assert all(np.array_equal(a.grid, b.grid) for a, b in zip(back, original))


def test_attempts_keep_clusters(tmp_path):
    attempts = [make_attempt(seed) for seed in range(2)]
    write_tensorfile(attempts_to_tensorfile(attempts), tmp_path / "a.midt")
    back = tensorfile_to_attempts(read_tensorfile(tmp_path / "a.midt"))
    assert [a.cluster for a in back] == [2, 2]
    assert back[0].channels == attempts[0].channels
    assert back[1].grid == pytest.approx(attempts[1].grid, rel=1e-6)


def test_features_keep_roster(tmp_path):
    tensors = [build_feature_tensor(make_attempt(seed)) for seed in range(2)]
    write_tensorfile(features_to_tensorfile(tensors), tmp_path / "f.midt")
    back = tensorfile_to_features(read_tensorfile(tmp_path / "f.midt"))
    assert back[0].roster == tensors[0].roster
    assert back[1].rows.shape == (66, 75)


def test_empty_stack(tmp_path):
    write_tensorfile(windows_to_tensorfile([]), tmp_path / "e.midt")
    assert read_tensorfile(tmp_path / "e.midt").count == 0


def test_mixed_channels_rejected():
    with pytest.raises(ShapeMismatch):
        windows_to_tensorfile(windows(1) + windows(1, channels=("gyro_x", "gyro_y")))


def test_label_count_must_match():
    with pytest.raises(ShapeMismatch):
        TensorFile(np.zeros((2, 1, 5)), ("acc_x",), ({},))


def test_corrupt_files(tmp_path):
    path = tmp_path / "bad.midt"
    write_tensorfile(windows_to_tensorfile(windows(2)), path)
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(SchemaError):
        read_tensorfile(path)
    path.write_bytes(raw[:-4])
    with pytest.raises(SchemaError):
        read_tensorfile(path)
    path.write_bytes(b"MID")
    with pytest.raises(SchemaError):
        read_tensorfile(path)
