"""
Feature generation and augmentation for the verification stage.

Every attempt becomes 22 three-component feature series derived from the
accelerometer, gyroscope, magnetometer and rotation vector: the raw series,
the series rotated to the Earth-fixed frame, linear acceleration, differences
and integrals. The roster is a versioned table so alternatives can be swapped
in and tested.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import json
import logging

import numpy as np
import scipy.integrate
import scipy.signal

from motionid.core import SensorKind, quat_rotate_series
from motionid.errors import CropTooLong, GridMismatch, InsufficientData, TooShort
from motionid.preprocess import VerificationAttempt
from motionid.utils import parallel_map
import motionid.validation as validate


logger = logging.getLogger(__name__)

GRAVITY_EMA_ALPHA = 0.8

ROTATE = "rotate"
DIFF = "diff"
INTEGRATE = "integrate"

_SOURCES = {
    "acc": SensorKind.ACCELEROMETER,
    "gyro": SensorKind.GYROSCOPE,
    "mag": SensorKind.MAGNETOMETER,
    "rot": SensorKind.ROTATION_VECTOR,
    "linacc": SensorKind.LINEAR_ACCELERATION,
}


@dataclass(frozen=True)
class FeatureSpec:
    name: str
    source: str
    """Short sensor name: acc, gyro, mag, rot or linacc."""
    transforms: Tuple[str, ...] = ()
    """Applied left to right: rotate, diff, integrate."""

    def __post_init__(self):
        assert self.source in _SOURCES, f"Unknown feature source {self.source}"
        assert all(t in (ROTATE, DIFF, INTEGRATE) for t in self.transforms), (
            f"Unknown transform in {self.transforms}"
        )


@dataclass(frozen=True)
class FeatureRoster:
    version: int
    features: Tuple[FeatureSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = self.names
        assert len(names) == len(set(names)), "Feature names must be unique"

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def find(self, source: str, transforms: Tuple[str, ...]) -> Optional[int]:
        for i, f in enumerate(self.features):
            if f.source == source and f.transforms == transforms:
                return i
        return None

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": self.version,
                "features": [
                    {
                        "index": i,
                        "name": f.name,
                        "source": f.source,
                        "transforms": list(f.transforms),
                    }
                    for i, f in enumerate(self.features)
                ],
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "FeatureRoster":
        doc = json.loads(text)
        features = sorted(doc["features"], key=lambda f: f["index"])
        return cls(
            doc["version"],
            tuple(FeatureSpec(f["name"], f["source"], tuple(f["transforms"])) for f in features),
        )


def _default_roster() -> FeatureRoster:
    specs = [
        FeatureSpec("acc", "acc"),
        FeatureSpec("gyro", "gyro"),
        FeatureSpec("mag", "mag"),
        FeatureSpec("rot", "rot"),
        FeatureSpec("acc_rot", "acc", (ROTATE,)),
        FeatureSpec("gyro_rot", "gyro", (ROTATE,)),
        FeatureSpec("mag_rot", "mag", (ROTATE,)),
        FeatureSpec("linacc", "linacc"),
        FeatureSpec("linacc_rot", "linacc", (ROTATE,)),
    ]
    for frame, prefix in (((), ""), ((ROTATE,), "_rot")):
        for source in ("acc", "gyro", "mag"):
            specs.append(FeatureSpec(f"{source}{prefix}_diff", source, frame + (DIFF,)))
    for frame, prefix in (((), ""), ((ROTATE,), "_rot")):
        for source in ("acc", "gyro", "mag"):
            specs.append(FeatureSpec(f"{source}{prefix}_int", source, frame + (INTEGRATE,)))
    specs.append(FeatureSpec("linacc_diff", "linacc", (DIFF,)))
    return FeatureRoster(1, tuple(specs))


DEFAULT_ROSTER = _default_roster()
COMPONENTS = 3


def derive_linear_acceleration(
    acc: np.ndarray, gravity: Optional[np.ndarray] = None, alpha: float = GRAVITY_EMA_ALPHA
) -> np.ndarray:
    """
    Linear acceleration = acceleration - gravity, on a shared (T, 3) grid.

    Without a gravity series, gravity is estimated with the exponential moving
    average g_t = alpha * g_{t-1} + (1 - alpha) * acc_t, started at acc_0.
    """
    acc = np.asarray(acc, dtype=np.float64)
    if gravity is None:
        logger.warning("No gravity series; estimating gravity with a moving average")
        b, a = [1.0 - alpha], [1.0, -alpha]
        zi = alpha * acc[:1]
        gravity, _ = scipy.signal.lfilter(b, a, acc, axis=0, zi=zi)
    gravity = np.asarray(gravity, dtype=np.float64)
    if gravity.shape != acc.shape:
        raise GridMismatch(f"acc {acc.shape} and gravity {gravity.shape} differ in shape")
    return acc - gravity


def diff_feature(x: np.ndarray) -> np.ndarray:
    """
    Forward difference along the first axis; the last difference is repeated to
    keep the length.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] < 2:
        raise TooShort(f"Difference needs at least 2 steps, got {x.shape[0]}")
    d = np.diff(x, axis=0)
    return np.concatenate([d, d[-1:]], axis=0)


def integral_feature(x: np.ndarray, dt: float) -> np.ndarray:
    """
    Cumulative trapezoidal integral along the first axis, starting at 0.
    """
    assert dt > 0, "dt must be positive"
    x = np.asarray(x, dtype=np.float64)
    return scipy.integrate.cumulative_trapezoid(x, dx=dt, axis=0, initial=0.0)


@dataclass(frozen=True, eq=False)
class FeatureTensor:
    """
    22 features x 3 components stacked as (66, T) rows in roster order.
    """

    rows: np.ndarray
    rate: float
    user_id: str = ""
    cluster: Optional[int] = None
    roster: FeatureRoster = field(default=DEFAULT_ROSTER)

    def __post_init__(self):
        rows = np.array(self.rows, dtype=np.float64)
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)
        assert rows.ndim == 2 and rows.shape[0] == COMPONENTS * len(self.roster), (
            f"Expected {COMPONENTS * len(self.roster)} rows, got {rows.shape}"
        )
        assert validate.array_is_finite(rows), "Feature tensors must be finite"

    @property
    def timesteps(self) -> int:
        return self.rows.shape[1]

    @property
    def channel_names(self) -> Tuple[str, ...]:
        return tuple(f"{n}_{a}" for n in self.roster.names for a in "xyz")

    def feature(self, name: str) -> np.ndarray:
        """The (3, T) block of feature NAME."""
        i = self.roster.index(name)
        return self.rows[COMPONENTS * i : COMPONENTS * (i + 1)]

    def branches(self) -> np.ndarray:
        """(22, 3, T) view for the branched network."""
        return self.rows.reshape(len(self.roster), COMPONENTS, self.timesteps)

    def with_rows(self, rows: np.ndarray) -> "FeatureTensor":
        return FeatureTensor(rows, self.rate, self.user_id, self.cluster, self.roster)


def _series(attempt: VerificationAttempt, kind: SensorKind) -> Optional[np.ndarray]:
    block = attempt.sensor(kind)
    return None if block is None else np.asarray(block).T


def build_feature_tensor(
    attempt: VerificationAttempt,
    rotation: Optional[np.ndarray] = None,
    roster: FeatureRoster = DEFAULT_ROSTER,
) -> FeatureTensor:
    """
    Compute every roster feature of ATTEMPT.

    ROTATION is a (T, 4) series of device-to-Earth quaternions (x, y, z, w);
    by default it is the attempt's own rotation vector.
    """
    dt = 1.0 / attempt.rate
    length = attempt.timesteps
    if rotation is None:
        rotation = _series(attempt, SensorKind.ROTATION_VECTOR)
    if rotation is not None:
        rotation = np.asarray(rotation, dtype=np.float64)
        if rotation.shape != (length, 4):
            raise GridMismatch(f"Rotation series {rotation.shape} does not fit {length} steps")

    sources: Dict[str, np.ndarray] = {}
    for name in ("acc", "gyro", "mag"):
        series = _series(attempt, _SOURCES[name])
        if series is None:
            raise InsufficientData(f"Attempt of {attempt.user_id} has no {name} series")
        sources[name] = series
    sources["rot"] = rotation[:, :3] if rotation is not None else np.zeros((length, 3))
    sources["linacc"] = derive_linear_acceleration(
        sources["acc"], _series(attempt, SensorKind.GRAVITY)
    )

    rows = []
    for spec in roster.features:
        x = sources[spec.source]
        for transform in spec.transforms:
            if transform == ROTATE:
                if rotation is None:
                    raise InsufficientData(f"{spec.name} needs a rotation series")
                x = quat_rotate_series(rotation, x)
            elif transform == DIFF:
                x = diff_feature(x)
            else:
                x = integral_feature(x, dt)
        rows.append(x.T)
    return FeatureTensor(
        np.concatenate(rows, axis=0), attempt.rate, attempt.user_id, attempt.cluster, roster
    )


def feature_tensors_for(attempts: Sequence[VerificationAttempt]) -> List[FeatureTensor]:
    return parallel_map(build_feature_tensor, attempts)


def stack_branches(tensors: Sequence[FeatureTensor]) -> np.ndarray:
    """(B, 22, 3, T) batch for the verification model."""
    return np.stack([t.branches() for t in tensors])


@dataclass(frozen=True)
class AugmentConfig:
    crop_out_len: int = 50
    """Crop length in timesteps (1 s at 50 Hz)."""

    noise_fraction: float = 0.05
    """Gaussian noise sigma as a fraction of each row's standard deviation."""

    seed: int = 0

    recompute_integrals: bool = True
    """Integrate the cropped source rows again instead of slicing integral rows."""

    def __post_init__(self):
        assert self.crop_out_len >= 1, "Crop must keep at least one step"
        assert self.noise_fraction >= 0, "Noise fraction must be non-negative"


def _crop(t: FeatureTensor, offset: int, length: int, recompute_integrals: bool) -> np.ndarray:
    rows = t.rows[:, offset : offset + length].copy()
    if not recompute_integrals:
        return rows
    dt = 1.0 / t.rate
    for i, spec in enumerate(t.roster.features):
        if not spec.transforms or spec.transforms[-1] != INTEGRATE:
            continue
        source = t.roster.find(spec.source, spec.transforms[:-1])
        if source is None:
            continue
        cropped = rows[COMPONENTS * source : COMPONENTS * (source + 1)]
        rows[COMPONENTS * i : COMPONENTS * (i + 1)] = integral_feature(cropped.T, dt).T
    return rows


def augment(
    t: FeatureTensor, cfg: AugmentConfig, rng: Optional[np.random.Generator] = None
) -> FeatureTensor:
    """
    Random contiguous crop to CROP_OUT_LEN steps plus per-row Gaussian noise.

    With CFG.RECOMPUTE_INTEGRALS (the default) integral rows are integrated
    again over the crop, so they start at zero. Only the other rows are a
    plain slice of T when CFG.NOISE_FRACTION is 0.

    Deterministic for a given CFG.SEED; pass RNG to draw from a shared stream
    instead (training batches do this).
    """
    if cfg.crop_out_len > t.timesteps:
        raise CropTooLong(f"Cannot crop {cfg.crop_out_len} steps out of {t.timesteps}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    offset = int(rng.integers(0, t.timesteps - cfg.crop_out_len + 1))
    rows = _crop(t, offset, cfg.crop_out_len, cfg.recompute_integrals)
    if cfg.noise_fraction > 0:
        sigma = cfg.noise_fraction * rows.std(axis=1, keepdims=True)
        rows = rows + rng.normal(size=rows.shape) * sigma
    return t.with_rows(rows)


def eval_crop(
    t: FeatureTensor, crop_out_len: int = 50, recompute_integrals: bool = True
) -> FeatureTensor:
    """
    The deterministic evaluation crop: the last CROP_OUT_LEN steps, no noise.
    """
    if crop_out_len > t.timesteps:
        raise CropTooLong(f"Cannot crop {crop_out_len} steps out of {t.timesteps}")
    offset = t.timesteps - crop_out_len
    return t.with_rows(_crop(t, offset, crop_out_len, recompute_integrals))
