import io
import json

import numpy as np
import pytest

from motionid.core import DeviceEvent, EventKind, SensorKind, SensorRecording, SensorStream
from motionid.errors import OrderError, RowError, SchemaError
from motionid.ingest import (
    MANIFEST_NAME,
    DatasetKind,
    DatasetManifest,
    ManifestEntry,
    RecordingFiles,
    load_manifest,
    load_recordings,
    parse_recording,
    quantize,
    save_manifest,
    write_recording,
)


SAMPLES = b"""timestamp_ns,sensor,x,y,z,w
0,ACCELEROMETER,0.1,0.2,9.8,
20000000,ACCELEROMETER,0.1,0.3,9.7,
40000000,ACCELEROMETER,0.2,0.2,9.8,
"""
EVENTS = b"""timestamp_ns,event
30000000,USER_PRESENT
"""


def to_bytes(rec):
    samples, events = io.BytesIO(), io.BytesIO()
    write_recording(rec, samples, events)
    return samples.getvalue(), events.getvalue()


def random_recording(rng):
    streams = {}
    for kind in SensorKind:
        if rng.uniform() < 0.3:
            continue
        n = int(rng.integers(1, 40))
        ts = np.sort(rng.integers(0, 10**12, n))
        streams[kind] = SensorStream(
            kind, ts, quantize(rng.normal(0.0, 20.0, (n, kind.components)))
        )
    times = np.unique(rng.integers(0, 10**12, int(rng.integers(0, 5))))
    kinds = list(EventKind)
    events = [DeviceEvent(int(t), kinds[int(rng.integers(0, 3))]) for t in times]
    return SensorRecording("u", "d", streams, events)


def test_minimal_recording():
    rec = parse_recording(SAMPLES, EVENTS)
    assert len(rec.stream(SensorKind.ACCELEROMETER)) == 3
    assert rec.events == (DeviceEvent(30_000_000, EventKind.USER_PRESENT),)
    assert not rec.partial


def test_unknown_sensor_reports_line():
    bad = SAMPLES + b"60000000,FOO,1,2,3,\n"
    with pytest.raises(RowError) as e:
        parse_recording(bad, EVENTS)
    assert e.value.line == 5


def test_non_finite_value_rejected():
    bad = SAMPLES.replace(b"0.3,9.7", b"nan,9.7")
    with pytest.raises(RowError) as e:
        parse_recording(bad, EVENTS)
    assert e.value.line == 3


def test_bad_header():
    with pytest.raises(SchemaError):
        parse_recording(b"ts,sensor,x,y,z,w\n", EVENTS)
    with pytest.raises(SchemaError):
        parse_recording(SAMPLES, b"")


def test_events_must_increase():
    events = EVENTS + b"30000000,SCREEN_OFF\n"
    with pytest.raises(OrderError):
        parse_recording(SAMPLES, events)


def test_three_component_rows_leave_w_empty():
    bad = SAMPLES.replace(b"9.8,\n", b"9.8,1.0\n", 1)
    with pytest.raises(RowError):
        parse_recording(bad, EVENTS)


def test_rotation_vector_needs_w():
    samples = b"timestamp_ns,sensor,x,y,z,w\n0,ROTATION_VECTOR,0,0,0,\n"
    with pytest.raises(RowError):
        parse_recording(samples, b"timestamp_ns,event\n")


def test_empty_recording_writes_headers_only():
    samples, events = to_bytes(SensorRecording("u", "d"))
    assert samples == b"timestamp_ns,sensor,x,y,z,w\n"
    assert events == b"timestamp_ns,event\n"


def test_write_then_parse_is_identity():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        rec = random_recording(rng)
        samples, events = to_bytes(rec)
        back = parse_recording(samples, events, "u", "d")
        assert back.kinds == rec.kinds
        for kind in rec.kinds:
            assert back.stream(kind) == rec.stream(kind)
        assert back.events == rec.events
        assert to_bytes(back) == (samples, events)


def test_written_files_use_lf(tmp_path):
    rec = parse_recording(SAMPLES, EVENTS)
    write_recording(rec, tmp_path / "s.csv", tmp_path / "e.csv")
    assert b"\r" not in (tmp_path / "s.csv").read_bytes()
    assert (tmp_path / "s.csv").read_bytes() == to_bytes(rec)[0]


@pytest.fixture(scope="module")
def dataset_layout(tmp_path_factory):
    root = tmp_path_factory.mktemp("dataset")
    rec = parse_recording(SAMPLES, EVENTS)
    entries = []
    for user in ("user000", "user001"):
        (root / user).mkdir()
        files = RecordingFiles(root / user / "s.csv", root / user / "e.csv")
        write_recording(rec, files.samples, files.events)
        entries.append(ManifestEntry(user, "device00", (files,)))
    manifest = DatasetManifest(DatasetKind.SPECIFIC_MOTION, 50.0, entries)
    save_manifest(manifest, root / MANIFEST_NAME)
    return root


def test_manifest_round_trip(dataset_layout):
    manifest = load_manifest(dataset_layout / MANIFEST_NAME)
    assert manifest.kind is DatasetKind.SPECIFIC_MOTION
    assert manifest.user_ids == ("user000", "user001")
    doc = json.loads((dataset_layout / MANIFEST_NAME).read_text())
    assert doc["users"][0]["recordings"][0]["samples"] == "user000/s.csv"
    (rec,) = load_recordings(manifest.entry("user001"))
    assert rec.user_id == "user001"
    assert len(rec.stream(SensorKind.ACCELEROMETER)) == 3


def test_manifest_with_missing_file(dataset_layout):
    doc = json.loads((dataset_layout / MANIFEST_NAME).read_text())
    doc["users"][0]["recordings"][0]["samples"] = "user000/missing.csv"
    broken = dataset_layout / "broken.json"
    broken.write_text(json.dumps(doc))
    with pytest.raises(FileNotFoundError):
        load_manifest(broken)


def test_manifest_user_ids_unique():
    entry = ManifestEntry("u", "d", ())
    with pytest.raises(AssertionError):
        DatasetManifest(DatasetKind.ALL_MOTIONS, 50.0, (entry, entry))
