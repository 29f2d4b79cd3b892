"""
Binary container for stacks of fixed-grid windows.

Layout (all little-endian):

  magic      4 bytes  b"MIDT"
  version    u16
  channels   u32
  timesteps  u32
  count      u32
  table_len  u32      byte length of the JSON table that follows
  table      UTF-8 JSON {"channels": [...], "labels": [{...}, ...], "meta": {...}}
  data       count * channels * timesteps f32
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple
import json
import logging
import struct

import numpy as np

from motionid.core import Window, WindowLabel
from motionid.errors import SchemaError, ShapeMismatch
from motionid.features import FeatureRoster, FeatureTensor
from motionid.preprocess import VerificationAttempt


logger = logging.getLogger(__name__)

MAGIC = b"MIDT"
VERSION = 1
_HEADER = struct.Struct("<4sHIIII")


@dataclass(frozen=True, eq=False)
class TensorFile:
    data: np.ndarray
    """(count, channels, timesteps) float32."""
    channels: Tuple[str, ...]
    labels: Tuple[Dict[str, Any], ...]
    """One JSON-able record per item (user, label, end time, ...)."""
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "labels", tuple(self.labels))
        if data.ndim != 3:
            raise ShapeMismatch(f"Tensor stack must be 3-D, got shape {data.shape}")
        if data.shape[1] != len(self.channels) or data.shape[0] != len(self.labels):
            raise ShapeMismatch(
                f"Stack {data.shape} does not match {len(self.channels)} channels "
                f"and {len(self.labels)} labels"
            )

    @property
    def count(self) -> int:
        return self.data.shape[0]


def write_tensorfile(tf: TensorFile, path: Path) -> None:
    table = json.dumps(
        {"channels": list(tf.channels), "labels": list(tf.labels), "meta": tf.meta},
        sort_keys=True,
    ).encode("utf-8")
    count, channels, timesteps = tf.data.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, channels, timesteps, count, len(table)))
        f.write(table)
        f.write(tf.data.astype("<f4").tobytes())
    logger.info(f"Wrote {count} x {channels} x {timesteps} tensors to {path}")


def read_tensorfile(path: Path) -> TensorFile:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise SchemaError(f"{path} is too short to be a tensor file")
    magic, version, channels, timesteps, count, table_len = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SchemaError(f"{path} has magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise SchemaError(f"{path} has unsupported version {version}")
    offset = _HEADER.size
    table = json.loads(raw[offset : offset + table_len].decode("utf-8"))
    offset += table_len
    expected = count * channels * timesteps * 4
    if len(raw) - offset != expected:
        raise SchemaError(f"{path} holds {len(raw) - offset} data bytes, expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(count, channels, timesteps)
    return TensorFile(data.astype(np.float32), table["channels"], table["labels"], table["meta"])


def windows_to_tensorfile(windows: Sequence[Window]) -> TensorFile:
    """
    Stack pattern windows. They must share channels and grid length.
    """
    if not windows:
        return TensorFile(np.zeros((0, 0, 0), dtype=np.float32), (), ())
    channels = windows[0].channels
    for w in windows:
        if w.channels != channels or w.grid.shape != windows[0].grid.shape:
            raise ShapeMismatch("Windows in one tensor file must share channels and grid")
    labels = [
        {
            "user_id": w.user_id,
            "device_id": w.device_id,
            "label": w.label.value if isinstance(w.label, WindowLabel) else int(w.label),
            "end_ns": int(w.end_ns),
        }
        for w in windows
    ]
    meta = {"rate": windows[0].rate, "duration_s": windows[0].duration_s}
    return TensorFile(np.stack([w.grid for w in windows]), channels, labels, meta)


def tensorfile_to_windows(tf: TensorFile) -> List[Window]:
    out = []
    for grid, label in zip(tf.data, tf.labels):
        value = label["label"]
        out.append(
            Window(
                user_id=label["user_id"],
                label=WindowLabel(value) if isinstance(value, str) else int(value),
                grid=grid,
                rate=tf.meta["rate"],
                duration_s=tf.meta["duration_s"],
                end_ns=label["end_ns"],
                channels=tf.channels,
                device_id=label["device_id"],
            )
        )
    return out


def attempts_to_tensorfile(attempts: Sequence[VerificationAttempt]) -> TensorFile:
    if not attempts:
        return TensorFile(np.zeros((0, 0, 0), dtype=np.float32), (), ())
    channels = attempts[0].channels
    for a in attempts:
        if a.channels != channels or a.grid.shape != attempts[0].grid.shape:
            raise ShapeMismatch("Attempts in one tensor file must share channels and grid")
    labels = [
        {"user_id": a.user_id, "unlock_ns": int(a.unlock_ns), "cluster": a.cluster}
        for a in attempts
    ]
    meta = {"rate": attempts[0].rate}
    return TensorFile(np.stack([a.grid for a in attempts]), channels, labels, meta)


def tensorfile_to_attempts(tf: TensorFile) -> List[VerificationAttempt]:
    return [
        VerificationAttempt(
            user_id=label["user_id"],
            unlock_ns=label["unlock_ns"],
            grid=grid,
            channels=tf.channels,
            rate=tf.meta["rate"],
            cluster=label["cluster"],
        )
        for grid, label in zip(tf.data, tf.labels)
    ]


def features_to_tensorfile(tensors: Sequence[FeatureTensor]) -> TensorFile:
    if not tensors:
        return TensorFile(np.zeros((0, 0, 0), dtype=np.float32), (), ())
    first = tensors[0]
    labels = [{"user_id": t.user_id, "cluster": t.cluster} for t in tensors]
    meta = {"rate": first.rate, "roster": json.loads(first.roster.to_json())}
    return TensorFile(np.stack([t.rows for t in tensors]), first.channel_names, labels, meta)


def tensorfile_to_features(tf: TensorFile) -> List[FeatureTensor]:
    if tf.count == 0:
        return []
    roster = FeatureRoster.from_json(json.dumps(tf.meta["roster"]))
    return [
        FeatureTensor(rows, tf.meta["rate"], label["user_id"], label["cluster"], roster)
        for rows, label in zip(tf.data, tf.labels)
    ]
