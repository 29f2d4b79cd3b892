import numpy as np
import pytest

from motionid.core import EventKind, SensorKind
from motionid.ingest import MANIFEST_NAME, DatasetKind, load_manifest, load_recordings
from motionid.synth import (
    SynthUserProfile,
    all_motions_recording,
    random_profiles,
    specific_motion_recording,
    synth_all_motions,
    synth_specific_motion,
)


def unlocks(rec):
    return [e for e in rec.events if e.kind is EventKind.USER_PRESENT]


def tree_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def profile():
    return SynthUserProfile.random(5)


def test_one_unlock_per_lift(profile):
    rec = specific_motion_recording(profile, "user000", locations=6, lifts_per_location=2)
    assert len(unlocks(rec)) == 12
    assert set(rec.kinds) == set(SensorKind)
    assert not rec.partial


def test_same_seed_same_bytes(tmp_path_factory):
    first = tmp_path_factory.mktemp("first")
    second = tmp_path_factory.mktemp("second")
    synth_specific_motion(random_profiles(2, 7), first, locations=2, lifts_per_location=2)
    synth_specific_motion(random_profiles(2, 7), second, locations=2, lifts_per_location=2)
    assert tree_bytes(first) == tree_bytes(second)


def test_different_seeds_differ():
    a, b = random_profiles(2, 1)
    ra = specific_motion_recording(a, "u", locations=1, lifts_per_location=1)
    rb = specific_motion_recording(b, "u", locations=1, lifts_per_location=1)
    assert ra.stream(SensorKind.ACCELEROMETER) != rb.stream(SensorKind.ACCELEROMETER)


def test_rotation_vector_is_unit(profile):
    rec = specific_motion_recording(profile, "u", locations=1, lifts_per_location=2)
    norms = np.linalg.norm(rec.stream(SensorKind.ROTATION_VECTOR).values, axis=1)
    assert norms == pytest.approx(np.ones_like(norms), abs=1e-6)


def test_all_motions_day(profile):
    rec = all_motions_recording(profile, "user000", "device00", unlocks=10)
    assert len(unlocks(rec)) == 10
    linacc = rec.stream(SensorKind.LINEAR_ACCELERATION)
    at_rest = np.all(linacc.values == 0.0, axis=1)
    # Every cycle starts on the table.
    assert at_rest.sum() > 10 * 8 * 40
    first_unlock = unlocks(rec)[0].timestamp_ns
    ts = linacc.timestamps
    assert np.any(~at_rest[(ts > first_unlock - 3 * 10**9) & (ts <= first_unlock)])


def test_all_motions_days_are_disjoint(profile):
    day0 = all_motions_recording(profile, "u", "d", day=0, unlocks=1)
    day1 = all_motions_recording(profile, "u", "d", day=1, unlocks=1)
    assert day0.span()[1] < day1.span()[0]


def test_synth_all_motions_manifest(tmp_path):
    manifest = synth_all_motions(random_profiles(2, 3), tmp_path, days=2, unlocks_per_day=1)
    assert manifest.kind is DatasetKind.ALL_MOTIONS
    loaded = load_manifest(tmp_path / MANIFEST_NAME)
    assert loaded.user_ids == ("user000", "user001")
    assert loaded.entry("user001").device_id == "device01"
    recs = load_recordings(loaded.entry("user000"))
    assert [len(unlocks(r)) for r in recs] == [1, 1]


def test_rejects_empty_sessions(tmp_path):
    with pytest.raises(ValueError):
        synth_specific_motion(random_profiles(1, 0), tmp_path, lifts_per_location=0)
    with pytest.raises(ValueError):
        synth_all_motions(random_profiles(1, 0), tmp_path, days=0)
