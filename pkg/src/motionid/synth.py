"""
Synthetic multi-user IMU datasets for desk-scale experiments.

Two generators mirror the two collection protocols:

  * specific motion: every user lifts a phone lying on a table, unlocks it,
    locks it and puts it back, LIFTS_PER_LOCATION times at each of six
    locations with a 30-120 s rest between locations;
  * all motions: a compressed "day" of habitual use where the phone rests on a
    table, is carried in a pocket, is lifted and unlocked, used, and put down.

Each user's motion is driven by a SynthUserProfile. A lift follows a quintic
displacement profile (zero velocity and acceleration at both ends) while the
phone turns towards the user; while the phone is in the hand a user-specific
2-8 Hz tremor rides on top. Every sensor is sampled on its own jittered
~50 Hz clock and white noise is added. Output is a pure function of the
profile seeds.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from motionid.core import (
    DEFAULT_RATE_HZ,
    NS_PER_S,
    DeviceEvent,
    EventKind,
    SensorKind,
    SensorRecording,
    SensorStream,
    quat_rotate_series,
)
from motionid.ingest import (
    DatasetKind,
    DatasetManifest,
    ManifestEntry,
    RecordingFiles,
    MANIFEST_NAME,
    quantize,
    save_manifest,
    write_recording,
)
from motionid.utils import ensure_dir


logger = logging.getLogger(__name__)

GRAVITY = np.array([0.0, 0.0, 9.81])
EARTH_FIELD_UT = np.array([0.0, 22.0, -42.0])
TREMOR_FREQS_HZ = (2.0, 4.0, 6.0, 8.0)
SPECIFIC_MOTION_SALT = 4121
ALL_MOTIONS_SALT = 7717


@dataclass(frozen=True)
class NoiseConfig:
    """White-noise floor added to every reading."""

    acc: float = 0.05
    """m/s^2, accelerometer and (while moving) linear acceleration."""
    gyro: float = 0.01
    """rad/s."""
    mag: float = 0.5
    """uT."""
    timing_jitter: float = 0.1
    """Fraction of the nominal sampling period each gap may deviate by."""


@dataclass(frozen=True)
class SynthUserProfile:
    """
    Everything that makes one synthetic user's motion their own.
    """

    seed: int
    lift_amplitude: float = 0.3
    """Height (m) the phone is lifted to."""
    lift_duration_mean: float = 1.2
    """Mean lift duration in seconds."""
    lift_duration_sigma: float = 0.05
    phase_offsets: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    """Per-axis tremor phase offsets (rad)."""
    tremor_weights: Tuple[float, ...] = (0.1, 0.05, 0.03, 0.02)
    """Tremor amplitude (m/s^2) at each of TREMOR_FREQS_HZ."""
    tilt_angle: float = 1.0
    """How far (rad) the phone turns towards the user during a lift."""
    tilt_azimuth: float = 0.0
    """Direction (rad) of the tilt axis within the device's x-y plane."""
    reach: float = 0.15
    """Horizontal distance (m) the phone travels towards the user."""
    hold_duration: float = 0.4
    """Seconds between the end of the lift and the unlock."""

    def __post_init__(self):
        assert 0.5 <= self.lift_duration_mean <= 3.0, "Lift duration mean must be in [0.5, 3.0] s"
        assert self.lift_duration_sigma >= 0, "Lift duration sigma must be non-negative"
        assert len(self.phase_offsets) == 3, "One phase offset per axis"
        assert len(self.tremor_weights) == len(TREMOR_FREQS_HZ), "One weight per tremor band"
        assert all(w >= 0 for w in self.tremor_weights), "Tremor weights must be non-negative"
        assert self.hold_duration >= 0, "Hold duration must be non-negative"

    @classmethod
    def random(cls, seed: int) -> "SynthUserProfile":
        """
        Draw a profile from plausible ranges, deterministically from SEED.
        """
        rng = np.random.default_rng(seed)
        return cls(
            seed=seed,
            lift_amplitude=float(rng.uniform(0.2, 0.5)),
            lift_duration_mean=float(rng.uniform(0.8, 1.6)),
            lift_duration_sigma=float(rng.uniform(0.03, 0.1)),
            phase_offsets=tuple(float(p) for p in rng.uniform(0.0, 2 * np.pi, 3)),
            tremor_weights=tuple(float(w) for w in rng.uniform(0.02, 0.25, len(TREMOR_FREQS_HZ))),
            tilt_angle=float(rng.uniform(0.6, 1.3)),
            tilt_azimuth=float(rng.uniform(-0.5, 0.5)),
            reach=float(rng.uniform(0.05, 0.3)),
            hold_duration=float(rng.uniform(0.25, 0.6)),
        )


def random_profiles(count: int, seed: int) -> List[SynthUserProfile]:
    """
    COUNT user profiles whose seeds derive from SEED.
    """
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [SynthUserProfile.random(int(s)) for s in seeds]


def _qmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = np.moveaxis(a, -1, 0)
    bx, by, bz, bw = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ],
        axis=-1,
    )


def _qconj(q: np.ndarray) -> np.ndarray:
    return q * np.array([-1.0, -1.0, -1.0, 1.0])


def _qexp(axis: np.ndarray, angle) -> np.ndarray:
    """Quaternion(s) rotating by ANGLE about the unit AXIS."""
    angle = np.asarray(angle, dtype=np.float64)[..., np.newaxis]
    return np.concatenate([axis * np.sin(angle / 2), np.cos(angle / 2)], axis=-1)


def _axis_angle(q: np.ndarray) -> Tuple[np.ndarray, float]:
    q = q / np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    angle = 2.0 * float(np.arccos(np.clip(q[3], -1.0, 1.0)))
    s = np.sin(angle / 2)
    if s < 1e-12:
        return np.array([1.0, 0.0, 0.0]), 0.0
    return q[:3] / s, angle


def _quintic(tau: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Position, first and second derivative (w.r.t. tau) of the minimum-jerk profile."""
    p = 10 * tau**3 - 15 * tau**4 + 6 * tau**5
    dp = 30 * tau**2 - 60 * tau**3 + 30 * tau**4
    ddp = 60 * tau - 180 * tau**2 + 120 * tau**3
    return p, dp, ddp


IDENTITY_Q = np.array([0.0, 0.0, 0.0, 1.0])
POCKET_Q = _qexp(np.array([1.0, 0.0, 0.0]), np.pi / 2)


@dataclass
class _Segment:
    kind: str
    """One of rest, move, hold, use, carry."""
    start: float
    end: float
    q_start: np.ndarray
    q_end: np.ndarray
    displacement: np.ndarray
    handheld: bool
    mag_offset: np.ndarray


@dataclass
class _Timeline:
    """
    A piecewise description of what the phone does, built front to back.
    Times are seconds from the start of the recording.
    """

    q: np.ndarray = field(default_factory=lambda: IDENTITY_Q.copy())
    mag_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t: float = 0.0
    segments: List[_Segment] = field(default_factory=list)
    events: List[Tuple[float, EventKind]] = field(default_factory=list)

    def stay(self, kind: str, duration: float, handheld: bool) -> None:
        self.segments.append(
            _Segment(
                kind,
                self.t,
                self.t + duration,
                self.q,
                self.q,
                np.zeros(3),
                handheld,
                self.mag_offset,
            )
        )
        self.t += duration

    def move(self, duration: float, q_end: np.ndarray, displacement: np.ndarray) -> None:
        self.segments.append(
            _Segment(
                "move",
                self.t,
                self.t + duration,
                self.q,
                q_end,
                np.asarray(displacement, dtype=np.float64),
                True,
                self.mag_offset,
            )
        )
        self.t += duration
        self.q = q_end

    def event(self, kind: EventKind, at: Optional[float] = None) -> None:
        self.events.append((self.t if at is None else at, kind))


def _tremor(profile: SynthUserProfile, t: np.ndarray) -> np.ndarray:
    out = np.zeros((len(t), 3))
    for k, (f, w) in enumerate(zip(TREMOR_FREQS_HZ, profile.tremor_weights)):
        for axis in range(3):
            out[:, axis] += w * np.sin(2 * np.pi * f * t + profile.phase_offsets[axis] + 0.7 * k)
    return out


def _evaluate(
    timeline: _Timeline, profile: SynthUserProfile, t: np.ndarray
) -> Dict[str, np.ndarray]:
    """
    Phone state at the (sorted) times T: orientation, Earth-frame linear
    acceleration, device-frame angular velocity, hand/motion masks and the
    location's magnetic offset.
    """
    n = len(t)
    q = np.tile(IDENTITY_Q, (n, 1))
    a_world = np.zeros((n, 3))
    omega = np.zeros((n, 3))
    handheld = np.zeros(n, dtype=bool)
    moving = np.zeros(n, dtype=bool)
    mag_offset = np.zeros((n, 3))

    for i, seg in enumerate(timeline.segments):
        lo = np.searchsorted(t, seg.start, side="left") if i else 0
        last = i == len(timeline.segments) - 1
        hi = n if last else np.searchsorted(t, seg.end, side="left")
        if hi <= lo:
            continue
        ts = t[lo:hi]
        handheld[lo:hi] = seg.handheld
        mag_offset[lo:hi] = seg.mag_offset
        if seg.kind == "move":
            duration = seg.end - seg.start
            tau = np.clip((ts - seg.start) / duration, 0.0, 1.0)
            p, dp, ddp = _quintic(tau)
            axis, angle = _axis_angle(_qmul(_qconj(seg.q_start), seg.q_end))
            q[lo:hi] = _qmul(np.broadcast_to(seg.q_start, (len(ts), 4)), _qexp(axis, angle * p))
            omega[lo:hi] = np.outer(angle * dp / duration, axis)
            a_world[lo:hi] = np.outer(ddp / duration**2, seg.displacement)
            moving[lo:hi] = True
        else:
            q[lo:hi] = seg.q_start
            if seg.kind == "carry":
                # Walking: ~1.8 Hz steps, vertical bounce plus fore-aft sway.
                a_world[lo:hi, 2] = 1.5 * np.sin(2 * np.pi * 1.8 * ts)
                a_world[lo:hi, 1] = 0.8 * np.sin(2 * np.pi * 1.8 * ts + np.pi / 2)
                moving[lo:hi] = True
            elif seg.kind == "use":
                a_world[lo:hi, 0] = 0.2 * np.sin(2 * np.pi * 0.5 * ts)
                moving[lo:hi] = True
            elif seg.kind == "hold":
                moving[lo:hi] = True

    return {
        "q": q,
        "a_world": a_world,
        "omega": omega,
        "handheld": handheld,
        "moving": moving,
        "mag_offset": mag_offset,
    }


def _sample_times(
    rng: np.random.Generator, duration: float, rate: float, jitter: float
) -> np.ndarray:
    period = 1.0 / rate
    count = int(np.ceil(duration / period)) + 2
    gaps = period * (1.0 + rng.uniform(-jitter, jitter, count))
    times = np.cumsum(gaps) - gaps[0] * rng.uniform(0.0, 1.0)
    return times[(times >= 0.0) & (times <= duration)]


def _render(
    timeline: _Timeline,
    profile: SynthUserProfile,
    rng: np.random.Generator,
    rate: float,
    noise: NoiseConfig,
    origin_ns: int,
    user_id: str,
    device_id: str,
) -> SensorRecording:
    duration = timeline.t
    streams = {}
    for kind in SensorKind:
        t = _sample_times(rng, duration, rate, noise.timing_jitter)
        state = _evaluate(timeline, profile, t)
        q = state["q"]
        inv = _qconj(q)
        hand = state["handheld"][:, np.newaxis]
        moving = state["moving"][:, np.newaxis]
        tremor = _tremor(profile, t) * hand
        n = len(t)

        match kind:
            case SensorKind.ACCELEROMETER:
                specific_force = state["a_world"] + GRAVITY
                values = quat_rotate_series(inv, specific_force) + tremor
                values = values + rng.normal(0.0, noise.acc, (n, 3))
            case SensorKind.LINEAR_ACCELERATION:
                values = quat_rotate_series(inv, state["a_world"]) + tremor
                # Zero noise while motionless: the sensor reads exactly zero at rest.
                values = values + rng.normal(0.0, noise.acc, (n, 3)) * moving
            case SensorKind.GRAVITY:
                values = quat_rotate_series(inv, np.broadcast_to(GRAVITY, (n, 3)))
            case SensorKind.GYROSCOPE:
                values = state["omega"] + 0.1 * tremor + rng.normal(0.0, noise.gyro, (n, 3))
            case SensorKind.MAGNETOMETER:
                field_world = EARTH_FIELD_UT + state["mag_offset"]
                values = quat_rotate_series(inv, field_world) + rng.normal(0.0, noise.mag, (n, 3))
            case SensorKind.ROTATION_VECTOR:
                values = np.where(q[:, 3:4] < 0, -q, q)

        timestamps = origin_ns + np.rint(t * NS_PER_S).astype(np.int64)
        streams[kind] = SensorStream(kind, timestamps, quantize(values))

    events = tuple(
        DeviceEvent(origin_ns + int(round(ts * NS_PER_S)), kind) for ts, kind in timeline.events
    )
    return SensorRecording(user_id=user_id, device_id=device_id, streams=streams, events=events)


def _hand_orientation(profile: SynthUserProfile, tilt: float) -> np.ndarray:
    axis = np.array([np.cos(profile.tilt_azimuth), np.sin(profile.tilt_azimuth), 0.0])
    return _qexp(axis, tilt)


def _lift_parameters(profile: SynthUserProfile, rng: np.random.Generator):
    duration = float(
        np.clip(rng.normal(profile.lift_duration_mean, profile.lift_duration_sigma), 0.5, 3.0)
    )
    amplitude = profile.lift_amplitude * (1.0 + 0.05 * rng.normal())
    reach = profile.reach * (1.0 + 0.05 * rng.normal())
    tilt = profile.tilt_angle + 0.04 * rng.normal()
    return duration, np.array([0.0, -reach, amplitude]), tilt


def specific_motion_recording(
    profile: SynthUserProfile,
    user_id: str,
    device_id: str = "galaxy-s20",
    locations: int = 6,
    lifts_per_location: int = 50,
    rate: float = DEFAULT_RATE_HZ,
    noise: NoiseConfig = NoiseConfig(),
) -> SensorRecording:
    """
    One user's specific-motion session: LOCATIONS x LIFTS_PER_LOCATION lifts,
    each ending in USER_PRESENT, with a 30-120 s rest between locations.
    """
    if lifts_per_location < 1:
        raise ValueError(f"{lifts_per_location=} must be at least 1")
    rng = np.random.default_rng([profile.seed, SPECIFIC_MOTION_SALT])
    tl = _Timeline()
    tl.stay("rest", 5.0, handheld=False)
    for location in range(locations):
        tl.mag_offset = rng.normal(0.0, 8.0, 3)
        if location > 0:
            tl.stay("rest", float(rng.uniform(30.0, 120.0)), handheld=False)
        for _ in range(lifts_per_location):
            tl.stay("rest", float(rng.uniform(1.0, 2.0)), handheld=False)
            duration, displacement, tilt = _lift_parameters(profile, rng)
            tl.move(duration, _hand_orientation(profile, tilt), displacement)
            hold = profile.hold_duration + float(rng.uniform(0.0, 0.1))
            tl.stay("hold", hold, handheld=True)
            tl.event(EventKind.SCREEN_ON, at=tl.t - min(0.2, hold / 2))
            tl.event(EventKind.USER_PRESENT)
            tl.stay("use", float(rng.uniform(0.8, 1.2)), handheld=True)
            tl.event(EventKind.SCREEN_OFF)
            tl.move(0.8 * duration, IDENTITY_Q.copy(), -displacement)
    tl.stay("rest", 3.0, handheld=False)
    return _render(tl, profile, rng, rate, noise, 0, user_id, device_id)


def all_motions_recording(
    profile: SynthUserProfile,
    user_id: str,
    device_id: str,
    day: int = 0,
    unlocks: int = 10,
    rate: float = DEFAULT_RATE_HZ,
    noise: NoiseConfig = NoiseConfig(),
) -> SensorRecording:
    """
    One compressed day of habitual use with exactly UNLOCKS unlock events.

    Each cycle: the phone rests on a table (linear acceleration exactly zero),
    is picked up and carried in a pocket, is lifted out and unlocked (at least
    3 s of motion precede USER_PRESENT), is used with the screen on, and is
    put back down after SCREEN_OFF.
    """
    rng = np.random.default_rng([profile.seed, ALL_MOTIONS_SALT, day])
    tl = _Timeline()
    tl.stay("rest", 5.0, handheld=False)
    for _ in range(unlocks):
        tl.stay("rest", float(rng.uniform(8.0, 20.0)), handheld=False)
        tl.move(1.0, POCKET_Q.copy(), np.array([0.0, 0.0, 0.3]))
        tl.stay("carry", float(rng.uniform(15.0, 40.0)), handheld=False)
        duration, displacement, tilt = _lift_parameters(profile, rng)
        tl.move(duration, _hand_orientation(profile, tilt), displacement)
        hold = profile.hold_duration + float(rng.uniform(0.0, 0.1))
        tl.stay("hold", hold, handheld=True)
        tl.event(EventKind.SCREEN_ON, at=tl.t - min(0.2, hold / 2))
        tl.event(EventKind.USER_PRESENT)
        tl.stay("use", float(rng.uniform(10.0, 30.0)), handheld=True)
        tl.event(EventKind.SCREEN_OFF)
        tl.move(1.0, IDENTITY_Q.copy(), np.array([0.0, 0.0, -0.3]))
    tl.stay("rest", 5.0, handheld=False)
    origin_ns = day * 86_400 * NS_PER_S
    return _render(tl, profile, rng, rate, noise, origin_ns, user_id, device_id)


def user_id_for(index: int) -> str:
    return f"user{index:03d}"


def _write(rec: SensorRecording, user_dir: Path, stem: str) -> RecordingFiles:
    files = RecordingFiles(user_dir / f"{stem}-samples.csv", user_dir / f"{stem}-events.csv")
    write_recording(rec, files.samples, files.events)
    return files


def synth_specific_motion(
    profiles: Sequence[SynthUserProfile],
    out_dir: Path,
    locations: int = 6,
    lifts_per_location: int = 50,
    rate: float = DEFAULT_RATE_HZ,
    noise: NoiseConfig = NoiseConfig(),
) -> DatasetManifest:
    """
    Write a specific-motion dataset (one recording per user) under OUT_DIR and
    return its manifest.
    """
    if lifts_per_location < 1:
        raise ValueError(f"{lifts_per_location=} must be at least 1")
    ensure_dir(out_dir)
    entries = []
    for i, profile in enumerate(profiles):
        user_id = user_id_for(i)
        rec = specific_motion_recording(
            profile, user_id, locations=locations, lifts_per_location=lifts_per_location,
            rate=rate, noise=noise,
        )
        files = _write(rec, ensure_dir(out_dir / user_id), "session")
        logger.info(f"Synthesized {user_id}: {len(rec.events)} events")
        entries.append(ManifestEntry(user_id, rec.device_id, (files,)))
    manifest = DatasetManifest(DatasetKind.SPECIFIC_MOTION, rate, tuple(entries))
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest


def synth_all_motions(
    profiles: Sequence[SynthUserProfile],
    out_dir: Path,
    days: int = 1,
    unlocks_per_day: int = 10,
    rate: float = DEFAULT_RATE_HZ,
    noise: NoiseConfig = NoiseConfig(),
) -> DatasetManifest:
    """
    Write an all-motions dataset (one recording per user per day) under
    OUT_DIR and return its manifest.
    """
    if days < 1:
        raise ValueError(f"{days=} must be at least 1")
    ensure_dir(out_dir)
    entries = []
    for i, profile in enumerate(profiles):
        user_id = user_id_for(i)
        device_id = f"device{i:02d}"
        user_dir = ensure_dir(out_dir / user_id)
        recordings = []
        for day in range(days):
            rec = all_motions_recording(
                profile, user_id, device_id, day=day, unlocks=unlocks_per_day, rate=rate,
                noise=noise,
            )
            recordings.append(_write(rec, user_dir, f"day{day:02d}"))
        logger.info(f"Synthesized {user_id} on {device_id}: {days} day(s)")
        entries.append(ManifestEntry(user_id, device_id, tuple(recordings)))
    manifest = DatasetManifest(DatasetKind.ALL_MOTIONS, rate, tuple(entries))
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    return manifest
