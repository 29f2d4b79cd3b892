"""
Turn raw recordings into fixed-grid training material.

Pattern stage: 3 s windows that end at an unlock (positives) and 3 s windows
tiled out of the screen-off stretches that did not lead to one (negatives).

Verification stage: the trailing 1.5 s before every unlock of a
specific-motion session, grouped into the six collection locations. Only 1 s
of it is fed to the network; the extra half second is room for the random
crop of the augmentation step.
"""

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union
import logging
import math

import numpy as np

from motionid.core import (
    DEFAULT_RATE_HZ,
    DeviceEvent,
    EventKind,
    SensorKind,
    SensorRecording,
    Window,
    WindowLabel,
    channel_names,
    resample_to_grid,
    seconds_to_ns,
)
from motionid.errors import NoEvents, OrderError, TooFewAttempts


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreprocessConfig:
    rate: float = DEFAULT_RATE_HZ
    """Grid rate (Hz) every window is resampled to; also the expected raw rate."""

    window_s: float = 3.0
    """Length of pattern windows and of the stretch discarded before an unlock."""

    min_readings: int = 100
    """Raw readings every sensor needs inside a pattern window."""

    motionless_threshold: float = 1e-3
    """|linear acceleration| (m/s^2) below which an axis counts as zero."""

    segment_s: float = 1.5
    """Length of the retained verification segment."""

    min_reading_fraction: float = 2.0 / 3.0
    """Fraction of the expected raw readings a verification segment needs."""

    cluster_gap_s: float = 30.0
    """A pause longer than this between unlocks starts a new location cluster."""

    clusters: int = 6

    def __post_init__(self):
        assert self.rate > 0, "Rate must be positive"
        assert self.window_s > 0 and self.segment_s > 0, "Durations must be positive"
        assert 0 < self.min_reading_fraction <= 1, "Reading fraction must be in (0, 1]"


@dataclass(frozen=True)
class PatternWindowSet:
    user_id: str
    device_id: str
    positives: Tuple[Window, ...] = ()
    negatives: Tuple[Window, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "positives", tuple(self.positives))
        object.__setattr__(self, "negatives", tuple(self.negatives))

    def merged(self, other: "PatternWindowSet") -> "PatternWindowSet":
        return PatternWindowSet(
            self.user_id,
            self.device_id,
            self.positives + other.positives,
            self.negatives + other.negatives,
        )


@dataclass(frozen=True, eq=False)
class VerificationAttempt:
    """
    The regridded segment that ends at one unlock of one user.
    """

    user_id: str
    unlock_ns: int
    grid: np.ndarray
    """(channels, timesteps) at RATE Hz."""
    channels: Tuple[str, ...]
    rate: float = DEFAULT_RATE_HZ
    cluster: Optional[int] = None
    """Location cluster 1-6, once cluster_attempts has run."""

    def __post_init__(self):
        grid = np.array(self.grid, dtype=np.float64)
        grid.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "channels", tuple(self.channels))
        assert grid.ndim == 2 and grid.shape[0] == len(self.channels), "One row per channel"
        assert self.cluster is None or 1 <= self.cluster <= 6, "Cluster indices run from 1 to 6"

    @property
    def timesteps(self) -> int:
        return self.grid.shape[1]

    def channel(self, name: str) -> np.ndarray:
        return self.grid[self.channels.index(name)]

    def sensor(self, kind: SensorKind) -> Optional[np.ndarray]:
        """
        The (components, timesteps) block of KIND, or None if it was not recorded.
        """
        names = channel_names(kind)
        if names[0] not in self.channels:
            return None
        start = self.channels.index(names[0])
        return self.grid[start : start + len(names)]


def _regrid(
    rec: SensorRecording, t0: int, t1: int, rate: float
) -> Tuple[np.ndarray, Tuple[str, ...]]:
    rows = []
    names: List[str] = []
    for kind in rec.kinds:
        rows.append(resample_to_grid(rec.streams[kind], rate, (t0, t1)))
        names.extend(channel_names(kind))
    return np.concatenate(rows, axis=0), tuple(names)


def _has_readings(rec: SensorRecording, t0: int, t1: int, needed: int) -> bool:
    return all(stream.count_in(t0, t1) >= needed for stream in rec.streams.values())


def _is_motionless(rec: SensorRecording, t0: int, t1: int, cfg: PreprocessConfig) -> bool:
    """
    True when linear acceleration is (near) zero on all three axes for the
    whole of (t0, t1]. Without a linear acceleration stream it is derived as
    accelerometer minus gravity on the grid.
    """
    linear = rec.stream(SensorKind.LINEAR_ACCELERATION)
    if linear is not None:
        readings = linear.slice(t0, t1).values
        if len(readings) == 0:
            return False
        return bool(np.all(np.abs(readings) < cfg.motionless_threshold))
    acc = rec.stream(SensorKind.ACCELEROMETER)
    gravity = rec.stream(SensorKind.GRAVITY)
    if acc is None or gravity is None:
        return False
    if acc.count_in(t0, t1) == 0 or gravity.count_in(t0, t1) == 0:
        return False
    derived = resample_to_grid(acc, cfg.rate, (t0, t1)) - resample_to_grid(
        gravity, cfg.rate, (t0, t1)
    )
    return bool(np.all(np.abs(derived) < cfg.motionless_threshold))


def screen_off_intervals(rec: SensorRecording) -> List[Tuple[int, int]]:
    """
    (SCREEN_OFF, next SCREEN_ON or USER_PRESENT) intervals in nanoseconds. An
    interval still open at the end of the recording closes at the last sample.
    """
    intervals = []
    opened: Optional[int] = None
    for event in rec.events:
        if event.kind is EventKind.SCREEN_OFF:
            if opened is None:
                opened = event.timestamp_ns
        elif opened is not None:
            intervals.append((opened, event.timestamp_ns))
            opened = None
    if opened is not None:
        span = rec.span()
        if span is not None and span[1] > opened:
            intervals.append((opened, span[1]))
    return intervals


def extract_pattern_windows(
    rec: SensorRecording, cfg: PreprocessConfig = PreprocessConfig()
) -> PatternWindowSet:
    """
    Cut the positive and negative 3 s pattern windows out of REC.

    Positives end at every USER_PRESENT. Negatives tile every screen-off
    interval without overlap, after dropping its last 3 s, and skip windows
    where the phone lay still. Any window with fewer than MIN_READINGS raw
    readings of some sensor is dropped.
    """
    if not rec.events:
        raise NoEvents(f"Recording {rec.user_id}/{rec.device_id} has no events")
    if not rec.streams:
        return PatternWindowSet(rec.user_id, rec.device_id)
    width = seconds_to_ns(cfg.window_s)

    def window(t0: int, t1: int, label: WindowLabel) -> Window:
        grid, names = _regrid(rec, t0, t1, cfg.rate)
        return Window(
            user_id=rec.user_id,
            label=label,
            grid=grid,
            rate=cfg.rate,
            duration_s=cfg.window_s,
            end_ns=t1,
            channels=names,
            device_id=rec.device_id,
        )

    positives = []
    for unlock in rec.event_times(EventKind.USER_PRESENT):
        t0, t1 = int(unlock) - width, int(unlock)
        if not _has_readings(rec, t0, t1, cfg.min_readings):
            logger.debug(f"Dropping positive ending at {t1}: too few readings")
            continue
        positives.append(window(t0, t1, WindowLabel.UNLOCK_POSITIVE))

    negatives = []
    for start, end in screen_off_intervals(rec):
        usable_end = end - width
        count = max(0, (usable_end - start) // width)
        for k in range(count):
            t0 = start + k * width
            t1 = t0 + width
            if not _has_readings(rec, t0, t1, cfg.min_readings):
                logger.debug(f"Dropping negative ({t0}, {t1}]: too few readings")
                continue
            if _is_motionless(rec, t0, t1, cfg):
                logger.debug(f"Dropping negative ({t0}, {t1}]: phone motionless")
                continue
            negatives.append(window(t0, t1, WindowLabel.UNLOCK_NEGATIVE))

    logger.info(
        f"{rec.user_id}/{rec.device_id}: {len(positives)} positive and "
        f"{len(negatives)} negative pattern windows"
    )
    return PatternWindowSet(rec.user_id, rec.device_id, tuple(positives), tuple(negatives))


def extract_verification_attempts(
    rec: SensorRecording, cfg: PreprocessConfig = PreprocessConfig()
) -> List[VerificationAttempt]:
    """
    Keep the trailing SEGMENT_S seconds before every unlock, regridded to RATE.

    Attempts where some sensor delivered fewer than MIN_READING_FRACTION of
    the expected raw readings are dropped.
    """
    width = seconds_to_ns(cfg.segment_s)
    needed = math.ceil(cfg.min_reading_fraction * cfg.segment_s * cfg.rate - 1e-9)
    attempts = []
    if not rec.streams:
        return attempts
    for unlock in rec.event_times(EventKind.USER_PRESENT):
        t0, t1 = int(unlock) - width, int(unlock)
        if not _has_readings(rec, t0, t1, needed):
            logger.debug(f"Dropping attempt at {t1}: fewer than {needed} readings")
            continue
        grid, names = _regrid(rec, t0, t1, cfg.rate)
        attempts.append(VerificationAttempt(rec.user_id, t1, grid, names, cfg.rate))
    logger.info(f"{rec.user_id}: kept {len(attempts)} verification attempts")
    return attempts


def cluster_attempts(
    attempts: Sequence[VerificationAttempt],
    events: Sequence[DeviceEvent],
    cfg: PreprocessConfig = PreprocessConfig(),
) -> List[VerificationAttempt]:
    """
    Label every attempt with its location cluster (1-6).

    A pause longer than CLUSTER_GAP_S between consecutive unlocks starts a new
    cluster. If that does not give exactly six clusters, the attempts are split
    into six consecutive, nearly equal blocks instead.
    """
    n = len(attempts)
    if n < cfg.clusters:
        raise TooFewAttempts(f"Need at least {cfg.clusters} attempts, got {n}")
    times = np.array([a.unlock_ns for a in attempts], dtype=np.int64)
    if np.any(np.diff(times) < 0):
        raise OrderError("Attempts must be in chronological order")

    unlocks = np.array(
        [e.timestamp_ns for e in events if e.kind is EventKind.USER_PRESENT], dtype=np.int64
    )
    if len(unlocks) == 0:
        unlocks = times
    unlocks = np.sort(unlocks)
    gaps = np.diff(unlocks)
    breakpoints = unlocks[1:][gaps > seconds_to_ns(cfg.cluster_gap_s)]
    labels = 1 + np.searchsorted(breakpoints, times, side="right")

    if set(labels.tolist()) != set(range(1, cfg.clusters + 1)):
        logger.warning(
            f"Pause rule found {len(set(labels.tolist()))} clusters; "
            f"falling back to {cfg.clusters} equal blocks"
        )
        labels = np.empty(n, dtype=np.int64)
        for index, block in enumerate(np.array_split(np.arange(n), cfg.clusters)):
            labels[block] = index + 1

    return [replace(a, cluster=int(c)) for a, c in zip(attempts, labels)]


def verification_attempts_for(
    recordings: Sequence[SensorRecording], cfg: PreprocessConfig = PreprocessConfig()
) -> List[VerificationAttempt]:
    """
    Extract and cluster the attempts of every session of one user.

    Sessions are clustered independently.
    """
    out: List[VerificationAttempt] = []
    for rec in recordings:
        attempts = extract_verification_attempts(rec, cfg)
        if len(attempts) >= cfg.clusters:
            attempts = cluster_attempts(attempts, rec.events, cfg)
        else:
            logger.warning(f"{rec.user_id}: only {len(attempts)} attempts, left unclustered")
        out.extend(attempts)
    return out


def pattern_windows_for(
    recordings: Sequence[SensorRecording], cfg: PreprocessConfig = PreprocessConfig()
) -> Union[PatternWindowSet, None]:
    """
    Pattern windows of every recording of one user, merged.
    """
    merged = None
    for rec in recordings:
        windows = extract_pattern_windows(rec, cfg)
        merged = windows if merged is None else merged.merged(windows)
    return merged
