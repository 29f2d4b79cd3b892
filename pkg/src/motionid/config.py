"""
Definition of and produces a single object that represents the user's requested
experiment configuration.
"""

from dataclasses import dataclass, InitVar
from pathlib import Path
from typing import Optional
import logging

from motionid.core import DEFAULT_RATE_HZ
from motionid.errors import UsageError
from motionid.features import AugmentConfig
from motionid.nn.losses import LossConfig
from motionid.pipeline import FineTuneConfig, PatternTrainConfig, ScoreMode, TrainConfig
from motionid.preprocess import PreprocessConfig
from motionid.splits import REPLICATION_N_BASE, REPLICATION_N_TEST_FINAL
import motionid.validation as validate


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Everything a run of motionid needs to know. Every randomized stage derives
    its randomness from SEED alone.
    """

    data_dir: Path = Path("data")
    """Where synthesized or collected datasets live (one sub-directory per dataset kind)."""

    output_dir: Path = Path("results")
    """Where every stage writes its tensors, models, metrics and reports."""

    seed: Optional[int] = None
    """
    Root seed. Outside replication mode a missing seed means 0; replication runs
    refuse to start without one.
    """

    replication: bool = False
    """Hold the run to the full-scale protocol (90 + 11 users, n_base in 60..85)."""

    rate_hz: float = DEFAULT_RATE_HZ
    """Grid every window is resampled to."""

    n_base: int = 8
    """Users in subset_base; the rest of the non-held-out users form val_add."""

    n_test_final: int = 2
    """Users held out for fine-tuning and the final test; replication runs hold out 11."""

    train_fraction: float = 0.7
    val_fraction: float = 0.15

    repetitions: int = 5
    """Independent trainings (with fresh attempt splits) per baseline and pattern model."""

    margin: float = 1.0
    p_norm: float = 2.0
    alpha_tm: float = 1.0
    temperature: float = 0.1
    sc_reduction: str = "mean"

    noise_fraction: float = 0.05
    """Augmentation noise sigma as a fraction of each feature row's std."""

    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3

    pattern_epochs: int = 20

    finetune_epochs: int = 10
    lr_reduction: float = 2.0
    """Fine-tuning divides learning_rate by this."""

    test_attempts: int = 90
    """Genuine test attempts per held-out user, and impostor draws per bootstrap iteration."""

    bootstrap_iterations: int = 5000

    far_theory_attempts: int = 3
    """Test attempts per user m in the theoretical FAR 1 / (n (n - 1) m)."""

    score_mode: str = ScoreMode.CLASSIFIER.value
    """classifier (genuine-class probability) or embedding (distance to enrolment centroid)."""

    verbosity: int = 0
    """
    How verbosely to log, higher values produce more logs.
    """

    skip_validation: InitVar[bool] = False

    def __post_init__(self, skip_validation: bool = False):
        """
        Validate that the experiment configuration that was constructed is valid.
        """
        if skip_validation:
            return
        assert self.rate_hz > 0, "Sampling rate must be positive"
        assert self.n_base >= 2, "The baseline needs at least two users"
        assert self.n_test_final >= 1, "Hold out at least one user"
        assert self.repetitions >= 1, "Repeat every training at least once"
        assert self.epochs >= 1 and self.finetune_epochs >= 1 and self.pattern_epochs >= 1, (
            "Train for at least one epoch"
        )
        assert self.lr_reduction > 1, "Fine-tuning must use a smaller learning rate"
        assert self.bootstrap_iterations >= 1, "Bootstrap needs at least one iteration"
        assert self.score_mode in {m.value for m in ScoreMode}, (
            f"Unknown score mode {self.score_mode!r}"
        )
        if self.replication:
            assert self.n_base in REPLICATION_N_BASE, (
                f"Replication runs use n_base in {REPLICATION_N_BASE}"
            )
            assert self.n_test_final == REPLICATION_N_TEST_FINAL, (
                f"Replication runs hold out {REPLICATION_N_TEST_FINAL} users"
            )

    def verbose(self) -> bool:
        return self.verbosity > 0

    def require_seed(self) -> int:
        """
        The root seed for a randomized stage. Replication runs must set it.
        """
        if self.seed is None:
            if self.replication:
                raise UsageError("Replication runs need an explicit seed (--seed or seed:)")
            return 0
        return self.seed

    def validate_data_dir(self) -> bool:
        return validate.path_is_readable_dir(self.data_dir)

    def validate_output_dir(self) -> bool:
        return all(
            [
                validate.path_is_readable_dir(self.output_dir),
                validate.path_is_writable_dir(self.output_dir),
            ]
        )

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig(rate=self.rate_hz)

    def loss_config(self) -> LossConfig:
        return LossConfig(
            margin=self.margin,
            p_norm=self.p_norm,
            alpha_tm=self.alpha_tm,
            temperature=self.temperature,
            sc_reduction=self.sc_reduction,
        )

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(
            crop_out_len=int(round(self.rate_hz)),
            noise_fraction=self.noise_fraction,
            seed=self.require_seed(),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.require_seed(),
            loss=self.loss_config(),
            augment=self.augment_config(),
        )

    def pattern_train_config(self) -> PatternTrainConfig:
        return PatternTrainConfig(
            epochs=self.pattern_epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.require_seed(),
            train_fraction=self.train_fraction,
            val_fraction=self.val_fraction,
        )

    def finetune_config(self, checkpoint_dir: Optional[Path] = None) -> FineTuneConfig:
        return FineTuneConfig(
            epochs=self.finetune_epochs,
            base_learning_rate=self.learning_rate,
            lr_reduction=self.lr_reduction,
            batch_size=self.batch_size,
            test_attempts=self.test_attempts,
            seed=self.require_seed(),
            augment=self.augment_config(),
            checkpoint_dir=checkpoint_dir,
        )

    @property
    def mode(self) -> ScoreMode:
        return ScoreMode(self.score_mode)
