"""
Read and write the canonical on-disk recording format.

A recording is two UTF-8, LF-terminated CSV files:

  samples.csv  timestamp_ns,sensor,x,y,z,w   (w empty for 3-component sensors)
  events.csv   timestamp_ns,event            (USER_PRESENT, SCREEN_ON, SCREEN_OFF)

A dataset is a manifest.json naming the dataset kind, the sampling-rate hint
and, for every user, the device and the recording files (relative to the
manifest).

Values are written with 9 fractional digits. Values that already went through
quantize() therefore survive write -> parse bit for bit.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Dict, Iterator, List, Tuple, Union
import contextlib
import csv
import enum
import io
import json
import logging
import math

import numpy as np

from motionid.core import DeviceEvent, EventKind, SensorKind, SensorRecording, SensorStream
from motionid.errors import OrderError, RowError, SchemaError
import motionid.validation as validate


logger = logging.getLogger(__name__)

SAMPLES_HEADER = ["timestamp_ns", "sensor", "x", "y", "z", "w"]
EVENTS_HEADER = ["timestamp_ns", "event"]
VALUE_FORMAT = "%.9f"

ByteSource = Union[bytes, BinaryIO, Path]
ByteSink = Union[BinaryIO, Path]


def quantize(values: np.ndarray) -> np.ndarray:
    """
    Round VALUES to what survives a write/parse round trip (9 fractional
    digits, parsed back as the nearest double).

    k / 1e9 is correctly rounded, so it is the same double that parsing the
    9-digit decimal k * 10**-9 yields.
    """
    values = np.asarray(values, dtype=np.float64)
    return np.rint(values * 1e9) / 1e9


@contextlib.contextmanager
def _open_text_source(source: ByteSource) -> Iterator[io.TextIOBase]:
    if isinstance(source, Path):
        with open(source, "r", encoding="utf-8", newline="") as f:
            yield f
    elif isinstance(source, (bytes, bytearray)):
        yield io.StringIO(bytes(source).decode("utf-8"), newline="")
    else:
        wrapper = io.TextIOWrapper(source, encoding="utf-8", newline="")
        try:
            yield wrapper
        finally:
            # Leave the caller's stream open.
            wrapper.detach()


@contextlib.contextmanager
def _open_text_sink(sink: ByteSink) -> Iterator[io.TextIOBase]:
    if isinstance(sink, Path):
        with open(sink, "w", encoding="utf-8", newline="\n") as f:
            yield f
    else:
        wrapper = io.TextIOWrapper(sink, encoding="utf-8", newline="\n")
        try:
            yield wrapper
        finally:
            wrapper.flush()
            wrapper.detach()


def _check_header(reader, expected: List[str], what: str) -> None:
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError(f"{what} is empty; expected header {','.join(expected)}")
    if header != expected:
        raise SchemaError(f"{what} header is {','.join(header)!r}; expected {','.join(expected)!r}")


def _parse_float(text: str, line: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise RowError(line, f"{column}={text!r} is not a number")
    if not math.isfinite(value):
        raise RowError(line, f"{column}={text!r} is not finite")
    return value


def _parse_int(text: str, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise RowError(line, f"timestamp_ns={text!r} is not an integer")


def parse_samples(sample_stream: ByteSource) -> Dict[SensorKind, SensorStream]:
    """
    Parse a samples.csv byte source into one sorted stream per sensor kind.
    """
    timestamps: Dict[SensorKind, List[int]] = {}
    values: Dict[SensorKind, List[Tuple[float, ...]]] = {}
    with _open_text_source(sample_stream) as text:
        reader = csv.reader(text)
        _check_header(reader, SAMPLES_HEADER, "samples.csv")
        for line, row in enumerate(reader, start=2):
            if len(row) != len(SAMPLES_HEADER):
                raise RowError(line, f"expected {len(SAMPLES_HEADER)} fields, got {len(row)}")
            ts = _parse_int(row[0], line)
            try:
                kind = SensorKind(row[1])
            except ValueError:
                raise RowError(line, f"unknown sensor kind {row[1]!r}")
            comps = [_parse_float(row[2 + i], line, "xyz"[i]) for i in range(3)]
            if kind.components == 4:
                comps.append(_parse_float(row[5], line, "w"))
            elif row[5] != "":
                raise RowError(line, f"{kind.value} rows must leave w empty")
            timestamps.setdefault(kind, []).append(ts)
            values.setdefault(kind, []).append(tuple(comps))

    streams = {}
    for kind in SensorKind:
        if kind not in timestamps:
            continue
        ts = np.array(timestamps[kind], dtype=np.int64)
        vals = np.array(values[kind], dtype=np.float64).reshape(-1, kind.components)
        order = np.argsort(ts, kind="stable")
        streams[kind] = SensorStream(kind, ts[order], vals[order])
    return streams


def parse_events(event_stream: ByteSource) -> Tuple[DeviceEvent, ...]:
    events: List[DeviceEvent] = []
    with _open_text_source(event_stream) as text:
        reader = csv.reader(text)
        _check_header(reader, EVENTS_HEADER, "events.csv")
        for line, row in enumerate(reader, start=2):
            if len(row) != len(EVENTS_HEADER):
                raise RowError(line, f"expected {len(EVENTS_HEADER)} fields, got {len(row)}")
            ts = _parse_int(row[0], line)
            try:
                kind = EventKind(row[1])
            except ValueError:
                raise RowError(line, f"unknown event {row[1]!r}")
            if events and ts <= events[-1].timestamp_ns:
                raise OrderError(
                    f"line {line}: event at {ts} does not follow {events[-1].timestamp_ns}"
                )
            events.append(DeviceEvent(ts, kind))
    return tuple(events)


def parse_recording(
    sample_stream: ByteSource,
    event_stream: ByteSource,
    user_id: str = "",
    device_id: str = "",
) -> SensorRecording:
    """
    Parse a samples/events CSV pair into a validated SensorRecording.
    """
    streams = parse_samples(sample_stream)
    events = parse_events(event_stream)
    rec = SensorRecording(user_id=user_id, device_id=device_id, streams=streams, events=events)
    logger.debug(
        f"Parsed recording {user_id}/{device_id}: "
        f"{sum(len(s) for s in streams.values())} samples, {len(events)} events"
    )
    return rec


def write_recording(rec: SensorRecording, samples_sink: ByteSink, events_sink: ByteSink) -> None:
    """
    Write REC as samples.csv and events.csv. Streams are emitted in sensor-kind
    order, each sorted by timestamp.
    """
    with _open_text_sink(samples_sink) as out:
        out.write(",".join(SAMPLES_HEADER) + "\n")
        for kind in rec.kinds:
            stream = rec.streams[kind]
            row_format = "%d," + kind.value + ("," + VALUE_FORMAT) * kind.components
            row_format += "\n" if kind.components == 4 else ",\n"
            out.writelines(
                row_format % (ts, *row)
                for ts, row in zip(stream.timestamps.tolist(), stream.values.tolist())
            )
    with _open_text_sink(events_sink) as out:
        out.write(",".join(EVENTS_HEADER) + "\n")
        for event in rec.events:
            out.write(f"{event.timestamp_ns},{event.kind.value}\n")


class DatasetKind(enum.Enum):
    ALL_MOTIONS = "all_motions"
    SPECIFIC_MOTION = "specific_motion"


@dataclass(frozen=True)
class RecordingFiles:
    samples: Path
    events: Path


@dataclass(frozen=True)
class ManifestEntry:
    user_id: str
    device_id: str
    recordings: Tuple[RecordingFiles, ...]


@dataclass(frozen=True)
class DatasetManifest:
    """
    The table of users, devices and recording files making up one dataset.
    """

    kind: DatasetKind
    rate_hint: float
    entries: Tuple[ManifestEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        users = [e.user_id for e in self.entries]
        assert len(users) == len(set(users)), "User ids in a manifest must be unique"

    @property
    def user_ids(self) -> Tuple[str, ...]:
        return tuple(e.user_id for e in self.entries)

    def entry(self, user_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.user_id == user_id:
                return e
        raise KeyError(user_id)


MANIFEST_NAME = "manifest.json"


def save_manifest(manifest: DatasetManifest, path: Path) -> None:
    """
    Write MANIFEST to PATH with recording paths relative to PATH's directory.
    """
    root = path.parent.resolve()

    def rel(p: Path) -> str:
        return p.resolve().relative_to(root).as_posix()

    doc = {
        "kind": manifest.kind.value,
        "rate_hint": manifest.rate_hint,
        "users": [
            {
                "user_id": e.user_id,
                "device_id": e.device_id,
                "recordings": [
                    {"samples": rel(r.samples), "events": rel(r.events)} for r in e.recordings
                ],
            }
            for e in manifest.entries
        ],
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    logger.info(f"Wrote manifest with {len(manifest.entries)} users to {path}")


def load_manifest(path: Path) -> DatasetManifest:
    """
    Read a manifest and check that every referenced file exists.
    """
    logger.info(f"Reading dataset manifest from {path.resolve()}")
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    root = path.parent
    entries = []
    for user in doc["users"]:
        recordings = []
        for r in user["recordings"]:
            files = RecordingFiles(root / r["samples"], root / r["events"])
            for p in (files.samples, files.events):
                if not validate.path_is_readable_file(p):
                    raise FileNotFoundError(f"Manifest {path} references missing {p}")
            recordings.append(files)
        entries.append(ManifestEntry(user["user_id"], user["device_id"], tuple(recordings)))
    return DatasetManifest(DatasetKind(doc["kind"]), float(doc["rate_hint"]), tuple(entries))


def load_recordings(entry: ManifestEntry) -> List[SensorRecording]:
    return [
        parse_recording(r.samples, r.events, user_id=entry.user_id, device_id=entry.device_id)
        for r in entry.recordings
    ]
