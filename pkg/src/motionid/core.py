"""
Shared domain vocabulary: sensor samples and streams, device events, recordings,
quaternions and fixed-grid windows.

Timestamps are integer nanoseconds from a monotonic clock, the way mobile sensor
APIs report them. Seconds only appear at the edges (rates, durations).

Rotation convention: a RotationVector quaternion maps the device frame to the
Earth frame, so quat_rotate(q, v_device) returns the Earth-frame vector. This is
the convention of Android's rotation vector sensor.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional, Sequence, Tuple, Union
import enum
import logging

import numpy as np

from motionid.errors import EmptySpan, ZeroQuaternion
import motionid.validation as validate


logger = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000
DEFAULT_RATE_HZ = 50.0


def seconds_to_ns(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


class SensorKind(enum.Enum):
    """
    The IMU sensors a recording may carry. The value is the name used in CSV
    files.
    """

    ACCELEROMETER = "ACCELEROMETER"
    LINEAR_ACCELERATION = "LINEAR_ACCELERATION"
    GRAVITY = "GRAVITY"
    GYROSCOPE = "GYROSCOPE"
    MAGNETOMETER = "MAGNETOMETER"
    ROTATION_VECTOR = "ROTATION_VECTOR"

    @property
    def components(self) -> int:
        """Rotation vectors are unit quaternions (x, y, z, w); the rest are 3-vectors."""
        return 4 if self is SensorKind.ROTATION_VECTOR else 3

    @property
    def short_name(self) -> str:
        return _SHORT_NAMES[self]


_SHORT_NAMES = {
    SensorKind.ACCELEROMETER: "acc",
    SensorKind.LINEAR_ACCELERATION: "linacc",
    SensorKind.GRAVITY: "grav",
    SensorKind.GYROSCOPE: "gyro",
    SensorKind.MAGNETOMETER: "mag",
    SensorKind.ROTATION_VECTOR: "rot",
}

AXES = ("x", "y", "z", "w")


class EventKind(enum.Enum):
    USER_PRESENT = "USER_PRESENT"
    SCREEN_ON = "SCREEN_ON"
    SCREEN_OFF = "SCREEN_OFF"


@dataclass(frozen=True)
class SensorSample:
    """
    One reading of one sensor.
    """

    timestamp_ns: int
    kind: SensorKind
    values: Tuple[float, ...]
    """m/s^2 for accelerations, rad/s for the gyroscope, uT for the
    magnetometer, a unitless quaternion for the rotation vector."""

    def __post_init__(self):
        assert len(self.values) == self.kind.components, (
            f"{self.kind.value} samples carry {self.kind.components} components"
        )
        assert all(np.isfinite(self.values)), "Sample components must be finite"


@dataclass(frozen=True)
class DeviceEvent:
    timestamp_ns: int
    kind: EventKind


@dataclass(frozen=True, eq=False)
class SensorStream:
    """
    Every reading of one sensor in a recording, sorted by timestamp.

    The arrays are made read-only on construction.
    """

    kind: SensorKind
    timestamps: np.ndarray
    """int64 nanoseconds, shape (N,)."""
    values: np.ndarray
    """float64, shape (N, components)."""

    def __post_init__(self):
        timestamps = np.array(self.timestamps, dtype=np.int64).reshape(-1)
        values = np.array(self.values, dtype=np.float64).reshape(-1, self.kind.components)
        timestamps.flags.writeable = False
        values.flags.writeable = False
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "values", values)
        assert len(timestamps) == len(values), "One value row per timestamp"
        assert validate.is_sorted(timestamps), f"{self.kind.value} stream must be sorted"
        assert validate.array_is_finite(values), f"{self.kind.value} stream must be finite"

    @classmethod
    def from_samples(cls, kind: SensorKind, samples: Sequence[SensorSample]) -> "SensorStream":
        ordered = sorted(samples, key=lambda s: s.timestamp_ns)
        return cls(
            kind=kind,
            timestamps=np.array([s.timestamp_ns for s in ordered], dtype=np.int64),
            values=np.array([s.values for s in ordered], dtype=np.float64).reshape(
                -1, kind.components
            ),
        )

    def __len__(self) -> int:
        return len(self.timestamps)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SensorStream):
            return NotImplemented
        return (
            self.kind is other.kind
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values)
        )

    def samples(self) -> Iterator[SensorSample]:
        for ts, row in zip(self.timestamps, self.values):
            yield SensorSample(int(ts), self.kind, tuple(float(v) for v in row))

    def count_in(self, t0: int, t1: int) -> int:
        """
        Number of readings with t0 < timestamp <= t1.
        """
        lo = np.searchsorted(self.timestamps, t0, side="right")
        hi = np.searchsorted(self.timestamps, t1, side="right")
        return int(hi - lo)

    def slice(self, t0: int, t1: int) -> "SensorStream":
        """
        The readings with t0 < timestamp <= t1.
        """
        lo = np.searchsorted(self.timestamps, t0, side="right")
        hi = np.searchsorted(self.timestamps, t1, side="right")
        return SensorStream(self.kind, self.timestamps[lo:hi], self.values[lo:hi])


@dataclass(frozen=True)
class SensorRecording:
    """
    A multi-sensor recording of one user on one device, with its device events.
    """

    user_id: str
    device_id: str
    streams: Dict[SensorKind, SensorStream] = field(default_factory=dict)
    events: Tuple[DeviceEvent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        for kind, stream in self.streams.items():
            assert stream.kind is kind, f"Stream for {kind.value} holds {stream.kind.value}"
        times = np.array([e.timestamp_ns for e in self.events], dtype=np.int64)
        assert validate.is_sorted(times, strict=True), "Event timestamps must strictly increase"
        if self.partial:
            logger.warning(f"Recording {self.user_id}/{self.device_id} is partial")

    @property
    def kinds(self) -> Tuple[SensorKind, ...]:
        """Present sensor kinds in declaration order."""
        return tuple(k for k in SensorKind if k in self.streams)

    def stream(self, kind: SensorKind) -> Optional[SensorStream]:
        return self.streams.get(kind, None)

    def span(self) -> Optional[Tuple[int, int]]:
        """
        (first, last) sample timestamp over every stream, or None if empty.
        """
        firsts = [s.timestamps[0] for s in self.streams.values() if len(s)]
        lasts = [s.timestamps[-1] for s in self.streams.values() if len(s)]
        if not firsts:
            return None
        return int(min(firsts)), int(max(lasts))

    @property
    def partial(self) -> bool:
        """
        True when some event lies outside the sampled time range.
        """
        if not self.events:
            return False
        span = self.span()
        if span is None:
            return True
        return any(not (span[0] <= e.timestamp_ns <= span[1]) for e in self.events)

    def event_times(self, kind: EventKind) -> np.ndarray:
        return np.array(
            [e.timestamp_ns for e in self.events if e.kind is kind], dtype=np.int64
        )


@dataclass(frozen=True)
class Quaternion:
    """
    A quaternion x*i + y*j + z*k + w.
    """

    x: float
    y: float
    z: float
    w: float

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(0.0, 0.0, 0.0, 1.0)

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> "Quaternion":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        s = np.sin(angle / 2.0)
        return cls(*(axis * s), float(np.cos(angle / 2.0)))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Quaternion":
        x, y, z, w = (float(v) for v in values)
        return cls(x, y, z, w)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.w], dtype=np.float64)

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def normalized(self) -> "Quaternion":
        n = self.norm()
        if n < 1e-9:
            raise ZeroQuaternion(f"Cannot normalize {self}")
        return Quaternion.from_array(self.as_array() / n)

    def conjugate(self) -> "Quaternion":
        return Quaternion(-self.x, -self.y, -self.z, self.w)

    def inverse(self) -> "Quaternion":
        n2 = self.norm() ** 2
        if n2 < 1e-18:
            raise ZeroQuaternion(f"Cannot invert {self}")
        c = self.conjugate().as_array() / n2
        return Quaternion.from_array(c)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        x1, y1, z1, w1 = self.x, self.y, self.z, self.w
        x2, y2, z2, w2 = other.x, other.y, other.z, other.w
        return Quaternion(
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        )


def quat_rotate(q: Quaternion, v: Sequence[float]) -> np.ndarray:
    """
    Rotate the 3-vector V by Q, returning the vector part of q*v*q^-1.
    """
    u = q.normalized().as_array()
    return quat_rotate_series(u[np.newaxis, :], np.asarray(v, dtype=np.float64)[np.newaxis, :])[0]


def quat_rotate_series(quats: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """
    Rotate vectors[t] by quats[t] for every timestep t.

    QUATS has shape (L, 4) in (x, y, z, w) order and is normalized row by row;
    VECTORS has shape (L, 3).
    """
    quats = np.asarray(quats, dtype=np.float64)
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(quats, axis=1, keepdims=True)
    if np.any(norms < 1e-9):
        raise ZeroQuaternion("Rotation series holds a zero quaternion")
    quats = quats / norms
    u = quats[:, :3]
    w = quats[:, 3:4]
    uv = np.cross(u, vectors)
    return vectors + 2.0 * w * uv + 2.0 * np.cross(u, uv)


class WindowLabel(enum.Enum):
    UNLOCK_POSITIVE = "UNLOCK_POSITIVE"
    UNLOCK_NEGATIVE = "UNLOCK_NEGATIVE"


@dataclass(frozen=True, eq=False)
class Window:
    """
    A fixed-grid slice of a recording: channels x timesteps at RATE Hz, ending at
    END_NS.
    """

    user_id: str
    label: Union[WindowLabel, int]
    """An unlock label for pattern windows or a location cluster index 1-6."""
    grid: np.ndarray
    rate: float
    duration_s: float
    end_ns: int
    channels: Tuple[str, ...] = ()
    device_id: str = ""

    def __post_init__(self):
        grid = np.array(self.grid, dtype=np.float64)
        grid.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "channels", tuple(self.channels))
        assert grid.ndim == 2, "All channels share one uniform timestep grid"
        assert grid.shape[1] == int(round(self.rate * self.duration_s)), (
            "timesteps must equal round(rate * duration)"
        )
        assert not self.channels or len(self.channels) == grid.shape[0], (
            "One channel name per grid row"
        )
        if isinstance(self.label, int):
            assert 1 <= self.label <= 6, "Cluster indices run from 1 to 6"

    @property
    def timesteps(self) -> int:
        return self.grid.shape[1]


def channel_names(kind: SensorKind) -> Tuple[str, ...]:
    return tuple(f"{kind.short_name}_{a}" for a in AXES[: kind.components])


def resample_to_grid(
    samples: Union[SensorStream, Sequence[SensorSample]],
    rate: float,
    span: Tuple[int, int],
    endpoint: bool = False,
) -> np.ndarray:
    """
    Linearly interpolate SAMPLES onto a uniform grid at RATE Hz over SPAN.

    SPAN is (t0, t1) in nanoseconds. The grid has round((t1 - t0) * rate)
    points ending exactly at t1 (t1 - (L-1)/rate, ..., t1). With ENDPOINT the
    grid instead runs t0, t0 + 1/rate, ..., t1 inclusive (one more point).
    Outside the sampled range the nearest sample value is held.

    Returns an array of shape (components, L).
    """
    if not isinstance(samples, SensorStream):
        samples = list(samples)
        if not samples:
            raise EmptySpan("No samples to resample")
        samples = SensorStream.from_samples(samples[0].kind, samples)
    t0, t1 = int(span[0]), int(span[1])
    if t1 <= t0:
        raise ValueError(f"Span must have t1 > t0, got {span}")
    if rate <= 0:
        raise ValueError(f"Rate must be positive, got {rate}")

    ts = samples.timestamps
    inside = np.count_nonzero((ts >= t0) & (ts <= t1))
    if inside == 0:
        raise EmptySpan(f"No {samples.kind.value} sample overlaps [{t0}, {t1}]")

    length = int(round((t1 - t0) / NS_PER_S * rate))
    step = NS_PER_S / rate
    if endpoint:
        grid = np.arange(length + 1, dtype=np.float64) * step
    else:
        grid = float(t1 - t0) - np.arange(length - 1, -1, -1, dtype=np.float64) * step
    offsets = (ts - t0).astype(np.float64)
    return np.stack(
        [np.interp(grid, offsets, samples.values[:, c]) for c in range(samples.values.shape[1])]
    )
