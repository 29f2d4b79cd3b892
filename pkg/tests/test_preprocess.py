import numpy as np
import pytest

from motionid.core import (
    NS_PER_S,
    DeviceEvent,
    EventKind,
    SensorKind,
    SensorRecording,
    SensorStream,
    WindowLabel,
)
from motionid.errors import NoEvents, OrderError, TooFewAttempts
from motionid.preprocess import (
    PreprocessConfig,
    VerificationAttempt,
    cluster_attempts,
    extract_pattern_windows,
    extract_verification_attempts,
    screen_off_intervals,
    verification_attempts_for,
)
from motionid.synth import SynthUserProfile, specific_motion_recording


def seconds(s):
    return int(round(s * NS_PER_S))


def wobble(t, components=3):
    return np.column_stack([np.sin(t + k) + 0.5 for k in range(components)])


def stream(kind, end_s, rate=50.0, values=wobble):
    ts = np.arange(int(end_s * rate) + 1) * int(NS_PER_S / rate)
    return SensorStream(kind, ts, values(ts / NS_PER_S, kind.components))


def recording(streams, events):
    return SensorRecording(
        "user000",
        "device00",
        {s.kind: s for s in streams},
        [DeviceEvent(seconds(t), k) for t, k in events],
    )


MOVING = [
    stream(SensorKind.ACCELEROMETER, 15),
    stream(SensorKind.LINEAR_ACCELERATION, 15),
]
STILL_LINACC = stream(
    SensorKind.LINEAR_ACCELERATION, 15, values=lambda t, c: np.zeros((len(t), c))
)
ONE_CYCLE = [(0, EventKind.SCREEN_OFF), (12, EventKind.USER_PRESENT)]


def test_positive_window_ends_at_unlock():
    rec = recording(MOVING, [(5, EventKind.USER_PRESENT)])
    (window,) = extract_pattern_windows(rec).positives
    assert window.label is WindowLabel.UNLOCK_POSITIVE
    assert window.grid.shape == (6, 150)
    assert window.channels[:3] == ("acc_x", "acc_y", "acc_z")
    assert window.end_ns == seconds(5)
    assert window.grid[0, -1] == pytest.approx(np.sin(5.0) + 0.5)


def test_positive_without_enough_history_is_dropped():
    rec = recording(MOVING, [(1, EventKind.USER_PRESENT), (5, EventKind.USER_PRESENT)])
    assert len(extract_pattern_windows(rec).positives) == 1


def test_sparse_sensor_drops_window():
    sparse = stream(SensorKind.GYROSCOPE, 15, rate=20.0)
    rec = recording(MOVING + [sparse], [(5, EventKind.USER_PRESENT)])
    assert extract_pattern_windows(rec).positives == ()


def test_negatives_tile_screen_off_interval():
    windows = extract_pattern_windows(recording(MOVING, ONE_CYCLE))
    assert [w.end_ns for w in windows.negatives] == [seconds(3), seconds(6), seconds(9)]
    assert all(w.label is WindowLabel.UNLOCK_NEGATIVE for w in windows.negatives)
    assert len(windows.positives) == 1


def test_short_interval_gives_no_negatives():
    rec = recording(MOVING, [(0, EventKind.SCREEN_OFF), (5.9, EventKind.SCREEN_ON)])
    assert extract_pattern_windows(rec).negatives == ()


def test_motionless_negatives_are_skipped():
    rec = recording([MOVING[0], STILL_LINACC], ONE_CYCLE)
    windows = extract_pattern_windows(rec)
    assert windows.negatives == ()
    assert len(windows.positives) == 1


def test_motion_derived_from_gravity_without_linear_acceleration():
    gravity = stream(SensorKind.GRAVITY, 15)
    still = recording([stream(SensorKind.ACCELEROMETER, 15), gravity], ONE_CYCLE)
    assert extract_pattern_windows(still).negatives == ()
    moving_acc = stream(SensorKind.ACCELEROMETER, 15, values=lambda t, c: wobble(2 * t, c))
    moving = recording([moving_acc, gravity], ONE_CYCLE)
    assert len(extract_pattern_windows(moving).negatives) == 3


def test_late_gravity_drops_negatives_without_error():
    gravity = stream(SensorKind.GRAVITY, 15).slice(seconds(10), seconds(15))
    rec = recording([stream(SensorKind.ACCELEROMETER, 15), gravity], ONE_CYCLE)
    windows = extract_pattern_windows(rec)
    assert windows.negatives == ()
    assert [w.end_ns for w in windows.positives] == [seconds(12)]


def test_open_screen_off_closes_at_last_sample():
    rec = recording(MOVING, [(2, EventKind.SCREEN_OFF)])
    assert screen_off_intervals(rec) == [(seconds(2), seconds(15))]


def test_repeated_screen_off_keeps_first():
    events = [(1, EventKind.SCREEN_OFF), (2, EventKind.SCREEN_OFF), (4, EventKind.SCREEN_ON)]
    rec = recording(MOVING, events)
    assert screen_off_intervals(rec) == [(seconds(1), seconds(4))]


def test_no_events():
    with pytest.raises(NoEvents):
        extract_pattern_windows(recording(MOVING, []))


def test_no_streams():
    windows = extract_pattern_windows(recording([], [(5, EventKind.USER_PRESENT)]))
    assert windows.positives == () and windows.negatives == ()
    assert extract_verification_attempts(recording([], [(5, EventKind.USER_PRESENT)])) == []


def test_verification_segment():
    rec = recording(MOVING, [(5, EventKind.USER_PRESENT)])
    (attempt,) = extract_verification_attempts(rec)
    assert attempt.grid.shape == (6, 75)
    assert attempt.unlock_ns == seconds(5)
    assert attempt.sensor(SensorKind.LINEAR_ACCELERATION).shape == (3, 75)
    assert attempt.sensor(SensorKind.GYROSCOPE) is None


def test_verification_needs_two_thirds_of_readings():
    # 30 Hz gives 45 readings in 1.5 s, below the 50 required.
    slow = stream(SensorKind.GYROSCOPE, 15, rate=30.0)
    rec = recording(MOVING + [slow], [(5, EventKind.USER_PRESENT)])
    assert extract_verification_attempts(rec) == []
    assert len(extract_verification_attempts(rec, PreprocessConfig(min_reading_fraction=0.5))) == 1


def attempts_at(times_s):
    return [
        VerificationAttempt("u", seconds(t), np.zeros((1, 75)), ("acc_x",)) for t in times_s
    ]


def unlock_events(times_s):
    return [DeviceEvent(seconds(t), EventKind.USER_PRESENT) for t in times_s]


def test_clusters_follow_pauses():
    times = [100 * g + k for g in range(6) for k in range(3)]
    labeled = cluster_attempts(attempts_at(times), unlock_events(times))
    assert [a.cluster for a in labeled] == [1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4, 5, 5, 5, 6, 6, 6]


def test_clusters_use_dropped_unlocks_for_pauses():
    times = [100 * g + k for g in range(6) for k in range(2)]
    kept = [t for t in times if t != 101]
    labeled = cluster_attempts(attempts_at(kept), unlock_events(times))
    assert [a.cluster for a in labeled] == [1, 1, 2, 3, 3, 4, 4, 5, 5, 6, 6]


def test_clusters_fall_back_to_equal_blocks():
    times = [100 * g + k for g in range(4) for k in range(4)]
    labeled = cluster_attempts(attempts_at(times), unlock_events(times))
    assert [a.cluster for a in labeled] == [1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4, 5, 5, 6, 6]


def test_clusters_need_six_attempts():
    with pytest.raises(TooFewAttempts):
        cluster_attempts(attempts_at(range(5)), unlock_events(range(5)))


def test_clusters_need_chronological_attempts():
    with pytest.raises(OrderError):
        cluster_attempts(attempts_at([6, 5, 4, 3, 2, 1]), unlock_events(range(1, 7)))


def test_synthetic_session_gives_six_locations():
    profile = SynthUserProfile.random(9)
    rec = specific_motion_recording(profile, "user000", locations=6, lifts_per_location=2)
    attempts = verification_attempts_for([rec])
    assert [a.cluster for a in attempts] == [1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6]
    assert all(a.grid.shape == (19, 75) for a in attempts)
