"""
Biometric statistics. Scores are "higher = more genuine" everywhere; an attempt
is accepted when its score is >= the threshold.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import List, Sequence, Tuple, Union
import logging
import math

import numpy as np
import scipy.stats

from motionid.errors import EmptySide, InsufficientAttempts
from motionid.utils import parallel_map
import motionid.validation as validate


logger = logging.getLogger(__name__)

Rate = Union[float, Fraction, str]

RULE_OF_30_ERRORS = 30
DEFAULT_TAR = 0.9


def as_fraction(rate: Rate) -> Fraction:
    """
    Exact value of RATE. Strings such as "1/50000" parse exactly; floats are
    snapped to the nearest fraction with a small denominator.
    """
    if isinstance(rate, Fraction):
        return rate
    if isinstance(rate, str):
        return Fraction(rate.strip())
    return Fraction(rate).limit_denominator(10**9)


@dataclass(frozen=True, eq=False)
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        genuine = np.asarray(self.genuine, dtype=np.float64).ravel()
        impostor = np.asarray(self.impostor, dtype=np.float64).ravel()
        assert validate.array_is_finite(genuine), "Genuine scores must be finite"
        assert validate.array_is_finite(impostor), "Impostor scores must be finite"
        object.__setattr__(self, "genuine", genuine)
        object.__setattr__(self, "impostor", impostor)

    def require_both(self) -> None:
        if len(self.genuine) == 0:
            raise EmptySide("No genuine scores")
        if len(self.impostor) == 0:
            raise EmptySide("No impostor scores")


def roc_auc(s: ScoreSet) -> float:
    """
    Mann-Whitney AUC: the probability that a genuine score beats an impostor
    score, ties counting half.
    """
    s.require_both()
    ranks = scipy.stats.rankdata(np.concatenate([s.genuine, s.impostor]))
    n_g, n_i = len(s.genuine), len(s.impostor)
    u = ranks[:n_g].sum() - n_g * (n_g + 1) / 2.0
    return float(u / (n_g * n_i))


def genuine_threshold(genuine: np.ndarray, tar: float = DEFAULT_TAR) -> float:
    """
    The largest threshold that still accepts at least TAR of GENUINE: the
    ceil(tar * N)-th largest genuine score.
    """
    if not 0 < tar <= 1:
        raise ValueError(f"TAR must lie in (0, 1], got {tar}")
    genuine = np.sort(np.asarray(genuine, dtype=np.float64))[::-1]
    if len(genuine) == 0:
        raise EmptySide("No genuine scores")
    k = max(1, math.ceil(tar * len(genuine) - 1e-9))
    return float(genuine[k - 1])


def far_at_tar(s: ScoreSet, tar: float = DEFAULT_TAR) -> float:
    s.require_both()
    threshold = genuine_threshold(s.genuine, tar)
    return float(np.mean(s.impostor >= threshold))


def tar_at_far(s: ScoreSet, far: float) -> float:
    """
    The largest TAR whose threshold accepts at most FAR of the impostors.
    """
    if not 0 <= far <= 1:
        raise ValueError(f"FAR must lie in [0, 1], got {far}")
    s.require_both()
    impostor = np.sort(s.impostor)[::-1]
    allowed = math.floor(far * len(impostor) + 1e-9)
    if allowed >= len(impostor):
        return 1.0
    return float(np.mean(s.genuine > impostor[allowed]))


def rule_of_30(target_error_rate: Rate) -> int:
    """
    Comparisons needed to observe 30 errors at TARGET_ERROR_RATE.
    """
    rate = as_fraction(target_error_rate)
    if not 0 < rate < 1:
        raise ValueError(f"Error rate must lie in (0, 1), got {rate}")
    return math.ceil(RULE_OF_30_ERRORS / rate)


def attempts_for_budget(n: int, impostor_target: int) -> int:
    """
    Attempts per user so that n * (n - 1) * m cross-comparisons reach the target.
    """
    if n < 2:
        raise ValueError(f"Need at least 2 users, got {n}")
    return math.ceil(Fraction(impostor_target, n * (n - 1)))


def theoretical_far(n: int, m: int) -> Fraction:
    """
    The smallest nonzero FAR cross-comparison of N users with M test attempts
    each can resolve.
    """
    if n < 2 or m < 1:
        raise ValueError(f"Need n >= 2 and m >= 1, got {n=!s} {m=!s}")
    return Fraction(1, n * (n - 1) * m)


@dataclass(frozen=True)
class ComparisonBudget:
    n: int
    """Users."""
    m: int
    """Attempts per user."""
    target_far: Fraction = Fraction(1, 50000)
    target_tar: Fraction = Fraction(9, 10)
    confidence: float = 0.9

    def __post_init__(self):
        object.__setattr__(self, "target_far", as_fraction(self.target_far))
        object.__setattr__(self, "target_tar", as_fraction(self.target_tar))
        assert self.n >= 2, "A budget needs at least two users"
        assert self.m >= 1, "A budget needs at least one attempt per user"
        for rate in (self.target_far, self.target_tar, self.confidence):
            assert 0 < rate < 1, "Rates must lie in (0, 1)"

    @property
    def genuine_needed(self) -> int:
        return rule_of_30(1 - self.target_tar)

    @property
    def impostor_needed(self) -> int:
        return rule_of_30(self.target_far)

    @property
    def genuine_available(self) -> int:
        return self.n * self.m

    @property
    def impostor_available(self) -> int:
        return self.n * (self.n - 1) * self.m

    @property
    def sufficient(self) -> bool:
        return (
            self.genuine_available >= self.genuine_needed
            and self.impostor_available >= self.impostor_needed
        )

    @property
    def attempts_needed(self) -> int:
        return attempts_for_budget(self.n, self.impostor_needed)


def _chunks(total: int, parts: int) -> List[Tuple[int, int]]:
    bounds = np.linspace(0, total, parts + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def bootstrap_far(
    genuine: Sequence[float],
    impostor_pool: Sequence[float],
    sample_size: int = 90,
    iterations: int = 5000,
    seed: int = 0,
    tar: float = DEFAULT_TAR,
) -> Tuple[float, float, np.ndarray]:
    """
    FAR at TAR with a fixed genuine set and SAMPLE_SIZE impostor scores drawn
    without replacement from IMPOSTOR_POOL, repeated ITERATIONS times.

    Every iteration draws from its own stream spawned from SEED, so the result
    does not depend on how the iterations are spread over threads. Returns
    (mean, std, per-iteration FARs).
    """
    genuine = np.asarray(genuine, dtype=np.float64)
    pool = np.asarray(impostor_pool, dtype=np.float64)
    if len(pool) < sample_size:
        raise InsufficientAttempts(
            f"Impostor pool holds {len(pool)} scores, {sample_size} needed per iteration"
        )
    assert iterations >= 1, "Need at least one iteration"
    threshold = genuine_threshold(genuine, tar)
    accepted = pool >= threshold
    streams = np.random.SeedSequence(seed).spawn(iterations)

    def run(bounds: Tuple[int, int]) -> np.ndarray:
        out = np.empty(bounds[1] - bounds[0])
        for i, child in enumerate(streams[bounds[0] : bounds[1]]):
            rng = np.random.default_rng(child)
            picked = rng.choice(len(pool), size=sample_size, replace=False)
            out[i] = accepted[picked].mean()
        return out

    fars = np.concatenate(parallel_map(run, _chunks(iterations, 16)))
    mean, std = float(fars.mean()), float(fars.std())
    logger.debug(f"Bootstrap FAR over {iterations=!s}: {mean:.6f} +/- {std:.6f}")
    return mean, std, fars
