"""
Who trains, who validates and who is held out.

Users are split three ways: base users train the baseline classifier, val_add
users serve as impostors when a fine-tuned model's epoch is chosen, and
test_final users are fine-tuned for and tested on. Within a user, attempts are
split into train/val/test sets (the on-line approach).
"""

from dataclasses import asdict, dataclass, InitVar
from pathlib import Path
from typing import Sequence, Tuple
import json
import logging

import numpy as np

from motionid.errors import InsufficientAttempts, InsufficientData


logger = logging.getLogger(__name__)

REPLICATION_N_BASE = (60, 65, 70, 75, 80, 85)
REPLICATION_USERS = 90
"""Users shared between subset_base and val_add in replication mode."""
REPLICATION_N_TEST_FINAL = 11


@dataclass(frozen=True)
class AttemptSplit:
    train: Tuple[int, ...]
    val: Tuple[int, ...]
    test: Tuple[int, ...]


@dataclass(frozen=True)
class SplitPlan:
    base_users: Tuple[str, ...]
    val_add_users: Tuple[str, ...]
    test_final_users: Tuple[str, ...]
    seed: int = 0
    train_fraction: float = 0.7
    val_fraction: float = 0.15
    replication: InitVar[bool] = False

    def __post_init__(self, replication: bool):
        for name in ("base_users", "val_add_users", "test_final_users"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        base, val_add, test = map(set, (self.base_users, self.val_add_users, self.test_final_users))
        assert not (base & val_add or base & test or val_add & test), (
            "User sets of a split plan must be pairwise disjoint"
        )
        assert 0 < self.train_fraction < 1 and 0 < self.val_fraction < 1, (
            "Attempt fractions must lie in (0, 1)"
        )
        assert self.train_fraction + self.val_fraction < 1, "No attempts left for testing"
        if replication:
            assert self.n_base in REPLICATION_N_BASE, (
                f"Replication runs use n_base in {REPLICATION_N_BASE}, got {self.n_base}"
            )

    @property
    def n_base(self) -> int:
        return len(self.base_users)

    @property
    def all_users(self) -> Tuple[str, ...]:
        return self.base_users + self.val_add_users + self.test_final_users

    def class_index(self, user_id: str) -> int:
        return self.base_users.index(user_id)

    def _rng(self, user_id: str, repetition: int, purpose: int) -> np.random.Generator:
        index = sorted(self.all_users).index(user_id)
        entropy = [self.seed, repetition, purpose, index]
        return np.random.default_rng(np.random.SeedSequence(entropy))

    def attempt_split(self, user_id: str, n_attempts: int, repetition: int = 0) -> AttemptSplit:
        """
        Shuffle a user's attempts into train/val/test; each set keeps at least
        one attempt. REPETITION draws a fresh split.
        """
        n_train = max(1, int(round(self.train_fraction * n_attempts)))
        n_val = max(1, int(round(self.val_fraction * n_attempts)))
        if n_train + n_val >= n_attempts:
            raise InsufficientData(f"{user_id} has only {n_attempts} attempts to split three ways")
        order = self._rng(user_id, repetition, 0).permutation(n_attempts)
        return AttemptSplit(
            tuple(sorted(order[:n_train].tolist())),
            tuple(sorted(order[n_train : n_train + n_val].tolist())),
            tuple(sorted(order[n_train + n_val :].tolist())),
        )

    def target_split(
        self, user_id: str, n_attempts: int, test_attempts: int, val_fraction: float
    ) -> AttemptSplit:
        """
        Split a held-out user's attempts: TEST_ATTEMPTS for the final test, the
        rest into fine-tuning train and validation sets.
        """
        rest = n_attempts - test_attempts
        n_val = max(1, int(round(val_fraction * rest)))
        if rest - n_val < 1:
            raise InsufficientAttempts(
                f"{user_id} has {n_attempts} attempts; {test_attempts} test attempts "
                "leave nothing to fine-tune on"
            )
        order = self._rng(user_id, 0, 1).permutation(n_attempts)
        return AttemptSplit(
            tuple(sorted(order[test_attempts + n_val :].tolist())),
            tuple(sorted(order[test_attempts : test_attempts + n_val].tolist())),
            tuple(sorted(order[:test_attempts].tolist())),
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SplitPlan":
        return cls(**json.loads(text))

    def save(self, path: Path) -> None:
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        logger.info(f"Wrote split plan to {path}")

    @classmethod
    def load(cls, path: Path) -> "SplitPlan":
        return cls.from_json(path.read_text(encoding="utf-8"))


def make_split_plan(
    user_ids: Sequence[str],
    n_base: int,
    n_test_final: int = 2,
    seed: int = 0,
    train_fraction: float = 0.7,
    val_fraction: float = 0.15,
    replication: bool = False,
) -> SplitPlan:
    """
    Shuffle USER_IDS with SEED and cut them into base, val_add and test_final.

    In replication mode exactly 90 users are shared between base and val_add,
    so the dataset must hold 90 + N_TEST_FINAL users.
    """
    users = sorted(user_ids)
    if replication and len(users) != REPLICATION_USERS + n_test_final:
        raise InsufficientData(
            f"Replication needs {REPLICATION_USERS + n_test_final} users, got {len(users)}"
        )
    if n_base < 2:
        raise InsufficientData(f"A baseline classifier needs at least 2 users, got {n_base=!s}")
    if n_base + n_test_final > len(users):
        raise InsufficientData(
            f"{len(users)} users cannot hold {n_base} base and {n_test_final} held-out users"
        )
    order = np.random.default_rng(seed).permutation(len(users))
    shuffled = [users[i] for i in order]
    test_final = shuffled[len(users) - n_test_final :]
    pool = shuffled[: len(users) - n_test_final]
    plan = SplitPlan(
        base_users=tuple(pool[:n_base]),
        val_add_users=tuple(pool[n_base:]),
        test_final_users=tuple(test_final),
        seed=seed,
        train_fraction=train_fraction,
        val_fraction=val_fraction,
        replication=replication,
    )
    logger.info(
        f"Split {len(users)} users: {plan.n_base} base, {len(plan.val_add_users)} val_add, "
        f"{len(plan.test_final_users)} test_final"
    )
    return plan
