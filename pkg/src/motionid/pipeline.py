"""
Training and evaluation procedures.

Pattern stage: train_pattern_model. Verification stage: train_baseline on the
base users, then for every held-out user finetune_user, select_epoch (val_add
users as impostors) and final_test (the other held-out users as impostors).
Authenticator chains both stages.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union
import enum
import logging
import math

import numpy as np

from motionid.core import Window, WindowLabel
from motionid.errors import (
    EmptyValidation,
    InsufficientAttempts,
    InsufficientData,
    ShapeMismatch,
    UserNotHeldOut,
)
from motionid.evaluation import (
    DEFAULT_TAR,
    ScoreSet,
    bootstrap_far,
    far_at_tar,
    genuine_threshold,
    roc_auc,
    theoretical_far,
)
from motionid.features import AugmentConfig, FeatureTensor, augment, eval_crop, stack_branches
from motionid.nn.checkpoint import save_checkpoint
from motionid.nn.layers import Parameter
from motionid.nn.losses import (
    LossConfig,
    batch_triplet_loss,
    cross_entropy,
    supervised_contrastive,
    total_loss,
)
from motionid.nn.models import PatternConfig, PatternModel, VerificationConfig, VerificationModel
from motionid.nn.optim import Adam
from motionid.preprocess import PatternWindowSet
from motionid.report import BaselineSummary, MetricRow, PatternAccuracy, metric_series
from motionid.splits import AttemptSplit, SplitPlan
from motionid.utils import ensure_dir, parallel_map


logger = logging.getLogger(__name__)

FeaturesByUser = Mapping[str, Sequence[FeatureTensor]]


class ScoreMode(enum.Enum):
    CLASSIFIER = "classifier"
    """Softmax probability of the genuine class."""
    EMBEDDING = "embedding"
    """Negative distance between the siamese embedding and the enrolment centroid."""


def _batches(order: np.ndarray, size: int) -> List[np.ndarray]:
    return [order[i : i + size] for i in range(0, len(order), size)]


def _copy_state(model) -> Dict[str, np.ndarray]:
    return {k: v.copy() for k, v in model.state_dict().items()}


# Pattern stage


@dataclass(frozen=True)
class PatternTrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    train_fraction: float = 0.7
    val_fraction: float = 0.15
    hidden: Tuple[int, ...] = (32, 32)

    def __post_init__(self):
        assert self.epochs >= 1, "Train for at least one epoch"
        assert self.batch_size >= 1, "Batches hold at least one window"
        assert self.train_fraction + self.val_fraction <= 1, "Fractions exceed 1"


@dataclass(eq=False)
class PatternTrainResult:
    model: PatternModel
    metrics: List[MetricRow]
    best_epoch: int
    best_val_auc: float
    test_accuracy: Optional[float]


def _stratified_split(
    labels: np.ndarray, train_fraction: float, val_fraction: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    train, val, test = [], [], []
    for value in np.unique(labels):
        members = rng.permutation(np.flatnonzero(labels == value))
        n_train = max(1, int(round(train_fraction * len(members))))
        n_val = max(1, int(round(val_fraction * len(members))))
        train.extend(members[:n_train])
        val.extend(members[n_train : n_train + n_val])
        test.extend(members[n_train + n_val :])
    return tuple(np.sort(np.array(s, dtype=np.int64)) for s in (train, val, test))


def pattern_arrays(windows: Sequence[Window]) -> Tuple[np.ndarray, np.ndarray]:
    """(N, C, T) grids and 0/1 labels (1 = unlock follows)."""
    if not windows:
        raise InsufficientData("No pattern windows")
    shape = windows[0].grid.shape
    if any(w.grid.shape != shape for w in windows):
        raise ShapeMismatch("Pattern windows must share channels and length")
    x = np.stack([w.grid for w in windows])
    y = np.array([int(w.label is WindowLabel.UNLOCK_POSITIVE) for w in windows], dtype=np.int64)
    return x, y


def _pattern_metrics(model: PatternModel, x: np.ndarray, y: np.ndarray) -> Tuple[float, float]:
    scores = model.predict_proba(x)
    accuracy = float(np.mean((scores >= 0.5) == (y == 1)))
    return accuracy, roc_auc(ScoreSet(scores[y == 1], scores[y == 0]))


def train_pattern_model(
    windows: Union[PatternWindowSet, Sequence[Window]],
    cfg: PatternTrainConfig = PatternTrainConfig(),
) -> PatternTrainResult:
    """
    Train the unlock predictor and keep the epoch with the best validation
    ROC-AUC (ties keep the earlier epoch).
    """
    if isinstance(windows, PatternWindowSet):
        windows = windows.positives + windows.negatives
    x, y = pattern_arrays(windows)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    train, val, test = _stratified_split(y, cfg.train_fraction, cfg.val_fraction, rng)
    for name, idx in (("train", train), ("val", val)):
        positives = int(np.sum(y[idx] == 1))
        negatives = len(idx) - positives
        if positives < 2 or negatives < 2:
            raise InsufficientData(
                f"{name} split has {positives} positive and {negatives} negative windows; "
                "need at least 2 of each"
            )

    model = PatternModel(PatternConfig(x.shape[1], cfg.hidden), seed=cfg.seed)
    model.fit_standardization(x[train])
    optimizer = Adam(model.parameters(), cfg.learning_rate)
    metrics: List[MetricRow] = []
    best_auc, best_epoch, best_state = -1.0, 0, None

    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for batch in _batches(rng.permutation(train), cfg.batch_size):
            optimizer.zero_grad()
            loss, dlogits = cross_entropy(model.forward(x[batch]), y[batch])
            model.backward(dlogits)
            optimizer.step()
            losses.append(loss)
        val_acc, val_auc = _pattern_metrics(model, x[val], y[val])
        metrics.append(MetricRow(epoch, "train", "loss", float(np.mean(losses))))
        metrics.append(MetricRow(epoch, "val", "accuracy", val_acc))
        metrics.append(MetricRow(epoch, "val", "roc_auc", val_auc))
        if len(np.unique(y[test])) == 2:
            test_acc, test_auc = _pattern_metrics(model, x[test], y[test])
            metrics.append(MetricRow(epoch, "test", "accuracy", test_acc))
            metrics.append(MetricRow(epoch, "test", "roc_auc", test_auc))
        logger.info(f"Pattern epoch {epoch}: val accuracy {val_acc:.3f}, ROC-AUC {val_auc:.3f}")
        if val_auc > best_auc:
            best_auc, best_epoch, best_state = val_auc, epoch, _copy_state(model)

    model.load_state_dict(best_state)
    test_accuracy = None
    if len(test):
        test_accuracy = float(np.mean((model.predict_proba(x[test]) >= 0.5) == (y[test] == 1)))
    logger.info(f"Best pattern epoch {best_epoch} with validation ROC-AUC {best_auc:.3f}")
    return PatternTrainResult(model, metrics, best_epoch, best_auc, test_accuracy)


@dataclass(eq=False)
class PatternUserResult:
    accuracy: PatternAccuracy
    first: Optional[PatternTrainResult] = None
    """The first repetition's trained model, if training was possible."""


def pattern_accuracy(
    windows_by_user: Mapping[Tuple[str, str], PatternWindowSet],
    cfg: PatternTrainConfig = PatternTrainConfig(),
    repetitions: int = 1,
) -> List[PatternUserResult]:
    """
    Train one unlock predictor per (device, user) REPETITIONS times with fresh
    splits. Users without enough windows get no accuracies (N/A in reports).
    """

    def run(key: Tuple[str, str]) -> PatternUserResult:
        accuracies, first = [], None
        for r in range(repetitions):
            try:
                result = train_pattern_model(windows_by_user[key], replace(cfg, seed=cfg.seed + r))
            except InsufficientData as e:
                logger.warning(f"No pattern accuracy for {key}: {e}")
                return PatternUserResult(PatternAccuracy(key[0], key[1]))
            first = first or result
            if result.test_accuracy is not None:
                accuracies.append(result.test_accuracy)
        return PatternUserResult(PatternAccuracy(key[0], key[1], tuple(accuracies)), first)

    return parallel_map(run, sorted(windows_by_user))


# Verification stage: scoring


def _eval_batch(tensors: Sequence[FeatureTensor], crop: int) -> np.ndarray:
    return stack_branches([eval_crop(t, crop) for t in tensors])


def enrolment_centroid(
    model: VerificationModel, tensors: Sequence[FeatureTensor], crop: int = 50
) -> np.ndarray:
    if not tensors:
        raise InsufficientData("Embedding scores need enrolment attempts")
    return model.embed(_eval_batch(tensors, crop)).mean(axis=0)


def score_tensors(
    model: VerificationModel,
    tensors: Sequence[FeatureTensor],
    mode: ScoreMode = ScoreMode.CLASSIFIER,
    centroid: Optional[np.ndarray] = None,
    crop: int = 50,
    genuine_class: int = 1,
) -> np.ndarray:
    """
    Verification scores (higher = more likely the owner) of TENSORS.
    """
    if not tensors:
        return np.zeros(0)
    x = _eval_batch(tensors, crop)
    if mode is ScoreMode.CLASSIFIER:
        return model.predict_proba(x)[:, genuine_class]
    if centroid is None:
        raise InsufficientData("Embedding scores need an enrolment centroid")
    return -np.linalg.norm(model.embed(x) - centroid, axis=1)


def cross_comparison(probabilities: np.ndarray, labels: np.ndarray) -> ScoreSet:
    """
    Multi-class verification scores: every attempt is compared with every
    class. Its own class gives one genuine score, the n - 1 others give
    impostor scores.
    """
    rows = np.arange(len(labels))
    impostor = np.ones(probabilities.shape, dtype=bool)
    impostor[rows, labels] = False
    return ScoreSet(probabilities[rows, labels], probabilities[impostor])


# Verification stage: baseline


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    tar: float = DEFAULT_TAR
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: VerificationConfig = field(default_factory=VerificationConfig)

    def __post_init__(self):
        assert self.epochs >= 1, "Train for at least one epoch"
        assert self.batch_size >= 2, "Contrastive batches need at least two attempts"
        assert self.learning_rate > 0, "Learning rate must be positive"


@dataclass(eq=False)
class BaselineResult:
    model: VerificationModel
    metrics: List[MetricRow]
    splits: Dict[str, AttemptSplit]
    repetition: int = 0

    def final(self, split: str, metric: str) -> float:
        return metric_series(self.metrics, split, metric)[-1]


def training_step(
    model: VerificationModel, x: np.ndarray, labels: np.ndarray, cfg: LossConfig
) -> Tuple[float, float, float, float]:
    """
    One forward/backward pass with L_total = L_CE + alpha_TM * L_TM + L_SC.
    Returns (total, ce, tm, sc); gradients are left in the parameters.
    """
    out = model.forward(x)
    ce, dlogits = cross_entropy(out.logits, labels)
    tm, dembedding = batch_triplet_loss(out.embedding, labels, cfg)
    sc, dprojection = supervised_contrastive(
        out.projection, labels, cfg.temperature, cfg.sc_reduction
    )
    model.backward(dlogits, cfg.alpha_tm * dembedding, dprojection)
    return total_loss(ce, tm, sc, cfg), ce, tm, sc


def _select(features: FeaturesByUser, user: str, indices: Sequence[int]) -> List[FeatureTensor]:
    tensors = features[user]
    return [tensors[i] for i in indices]


def train_baseline(
    features: FeaturesByUser,
    plan: SplitPlan,
    cfg: TrainConfig = TrainConfig(),
    repetition: int = 0,
) -> BaselineResult:
    """
    Train the n-class baseline on the base users with twice-augmented batches.

    Every epoch logs train loss, validation/test accuracy and
    validation/test FAR at the target TAR (multi-class cross-comparison among
    the base users only).
    """
    if plan.n_base < 2:
        raise InsufficientData(f"Baseline needs at least 2 base users, got {plan.n_base}")
    splits = {u: plan.attempt_split(u, len(features[u]), repetition) for u in plan.base_users}

    def gather(part: str) -> Tuple[List[FeatureTensor], np.ndarray]:
        tensors, labels = [], []
        for u in plan.base_users:
            picked = _select(features, u, getattr(splits[u], part))
            tensors.extend(picked)
            labels.extend([plan.class_index(u)] * len(picked))
        return tensors, np.array(labels, dtype=np.int64)

    train_t, train_y = gather("train")
    val_t, val_y = gather("val")
    test_t, test_y = gather("test")
    crop = cfg.augment.crop_out_len

    seed = cfg.seed + repetition
    model = VerificationModel(plan.n_base, cfg.model, seed=seed)
    model.fit_standardization(_eval_batch(train_t, crop))
    optimizer = Adam(model.parameters(), cfg.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    metrics: List[MetricRow] = []

    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for batch in _batches(rng.permutation(len(train_t)), cfg.batch_size):
            views = [augment(train_t[i], cfg.augment, rng) for i in batch]
            views += [augment(train_t[i], cfg.augment, rng) for i in batch]
            labels = np.concatenate([train_y[batch], train_y[batch]])
            optimizer.zero_grad()
            total, ce, tm, sc = training_step(model, stack_branches(views), labels, cfg.loss)
            optimizer.step()
            losses.append(total)
            logger.debug(f"epoch {epoch}: {total=:.4f} {ce=:.4f} {tm=:.4f} {sc=:.4f}")
        metrics.append(MetricRow(epoch, "train", "loss", float(np.mean(losses))))
        for name, tensors, labels in (("val", val_t, val_y), ("test", test_t, test_y)):
            probabilities = model.predict_proba(_eval_batch(tensors, crop))
            accuracy = float(np.mean(probabilities.argmax(axis=1) == labels))
            far = far_at_tar(cross_comparison(probabilities, labels), cfg.tar)
            metrics.append(MetricRow(epoch, name, "accuracy", accuracy))
            metrics.append(MetricRow(epoch, name, "far_at_tar", far))
        logger.info(
            f"Baseline epoch {epoch}: loss {metrics[-5].value:.4f}, "
            f"val accuracy {metrics[-4].value:.3f}, val FAR {metrics[-3].value:.4f}"
        )
    return BaselineResult(model, metrics, splits, repetition)


def train_baseline_repeated(
    features: FeaturesByUser, plan: SplitPlan, cfg: TrainConfig, repetitions: int = 5
) -> List[BaselineResult]:
    """REPETITIONS independent baselines, each with freshly resampled attempt splits."""
    return parallel_map(lambda r: train_baseline(features, plan, cfg, r), range(repetitions))


def baseline_summary(
    results: Sequence[BaselineResult], n_base: int, test_attempts: int = 3
) -> BaselineSummary:
    def column(split: str, metric: str) -> Tuple[float, ...]:
        return tuple(r.final(split, metric) for r in results)

    return BaselineSummary(
        n_base=n_base,
        far_theoretical=theoretical_far(n_base, test_attempts),
        acc_val=column("val", "accuracy"),
        acc_test=column("test", "accuracy"),
        far_val=column("val", "far_at_tar"),
        far_test=column("test", "far_at_tar"),
    )


# Verification stage: per-user fine-tuning


@dataclass(frozen=True)
class FineTuneConfig:
    epochs: int = 10
    base_learning_rate: float = 1e-3
    lr_reduction: float = 2.0
    """The fine-tuning learning rate is base_learning_rate / lr_reduction."""
    batch_size: int = 32
    freeze_extractor: bool = True
    test_attempts: int = 90
    """Genuine attempts of the held-out user kept for the final test."""
    val_fraction: float = 0.2
    """Share of the remaining attempts used for epoch selection."""
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    checkpoint_dir: Optional[Path] = None

    def __post_init__(self):
        assert self.epochs >= 1, "Fine-tune for at least one epoch"
        assert self.lr_reduction > 1, "Fine-tuning must use a smaller learning rate"
        assert self.batch_size >= 2, "Balanced batches need at least two attempts"

    @property
    def learning_rate(self) -> float:
        return self.base_learning_rate / self.lr_reduction


@dataclass(eq=False)
class FineTuneResult:
    user_id: str
    checkpoints: Tuple[VerificationModel, ...]
    metrics: List[MetricRow]
    split: AttemptSplit


def finetune_user(
    base: VerificationModel,
    features: FeaturesByUser,
    target_user: str,
    plan: SplitPlan,
    cfg: FineTuneConfig = FineTuneConfig(),
) -> FineTuneResult:
    """
    Fine-tune a copy of BASE into a 2-class verifier for TARGET_USER: class 0
    is the base users, class 1 the target. Batches hold both classes 1:1.
    Every epoch yields a checkpoint.
    """
    if target_user not in plan.test_final_users:
        raise UserNotHeldOut(f"{target_user} is not one of the held-out users")
    tensors = features[target_user]
    split = plan.target_split(target_user, len(tensors), cfg.test_attempts, cfg.val_fraction)
    genuine = [tensors[i] for i in split.train]
    others = [
        t
        for u in plan.base_users
        for t in _select(features, u, plan.attempt_split(u, len(features[u])).train)
    ]
    if not others:
        raise InsufficientData("No base-user attempts to fine-tune against")

    model = base.clone()
    if cfg.freeze_extractor:
        model.freeze_extractor()
    model.replace_classifier(2, seed=cfg.seed)
    params: Dict[str, Parameter] = {
        n: p
        for n, p in model.parameters().items()
        if p.trainable and (n.startswith("classifier.") or not cfg.freeze_extractor)
    }
    optimizer = Adam(params, cfg.learning_rate)
    user_index = sorted(plan.all_users).index(target_user)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3, user_index]))
    half = cfg.batch_size // 2
    steps = max(1, math.ceil((len(others) + len(genuine)) / cfg.batch_size))
    val = [tensors[i] for i in split.val]
    if cfg.checkpoint_dir is not None:
        ensure_dir(cfg.checkpoint_dir)

    checkpoints, metrics = [], []
    for epoch in range(1, cfg.epochs + 1):
        losses = []
        for _ in range(steps):
            picked0 = rng.choice(len(others), half, replace=len(others) < half)
            picked1 = rng.choice(len(genuine), half, replace=len(genuine) < half)
            views = [augment(others[i], cfg.augment, rng) for i in picked0]
            views += [augment(genuine[i], cfg.augment, rng) for i in picked1]
            labels = np.repeat(np.array([0, 1], dtype=np.int64), half)
            optimizer.zero_grad()
            loss, dlogits = cross_entropy(model.forward(stack_branches(views)).logits, labels)
            model.backward(dlogits=dlogits)
            optimizer.step()
            losses.append(loss)
        snapshot = model.clone()
        checkpoints.append(snapshot)
        genuine_accuracy = float(np.mean(score_tensors(snapshot, val) >= 0.5))
        metrics.append(MetricRow(epoch, "train", "loss", float(np.mean(losses))))
        metrics.append(MetricRow(epoch, "val", "genuine_accuracy", genuine_accuracy))
        logger.info(
            f"{target_user} fine-tune epoch {epoch}: genuine accuracy {genuine_accuracy:.3f}"
        )
        if cfg.checkpoint_dir is not None:
            save_checkpoint(
                snapshot,
                cfg.checkpoint_dir / f"{target_user}-epoch{epoch:03d}.npz",
                {"user_id": target_user, "epoch": epoch},
            )
    return FineTuneResult(target_user, tuple(checkpoints), metrics, split)


# Verification stage: epoch selection and final test


@dataclass(eq=False)
class EpochSelection:
    index: int
    """0-based position of the chosen checkpoint."""
    model: VerificationModel
    fars: Tuple[float, ...]

    @property
    def epoch(self) -> int:
        return self.index + 1


def select_by_scores(
    score_sets: Sequence[ScoreSet], tar: float = DEFAULT_TAR
) -> Tuple[int, List[float]]:
    """Index of the lowest FAR at TAR; ties go to the earliest."""
    if not score_sets:
        raise EmptyValidation("No checkpoints to choose from")
    fars = [far_at_tar(s, tar) for s in score_sets]
    return int(np.argmin(fars)), fars


def select_epoch(
    checkpoints: Sequence[VerificationModel],
    genuine_val: Sequence[FeatureTensor],
    impostor_val: Sequence[FeatureTensor],
    tar: float = DEFAULT_TAR,
    mode: ScoreMode = ScoreMode.CLASSIFIER,
    enrolment: Sequence[FeatureTensor] = (),
) -> EpochSelection:
    """
    Pick the checkpoint with the lowest validation FAR at TAR, with the target's
    validation attempts as genuine and val_add attempts as impostors.
    """
    if not checkpoints:
        raise EmptyValidation("No checkpoints to choose from")
    if not genuine_val or not impostor_val:
        raise EmptyValidation("Epoch selection needs genuine and impostor validation attempts")
    score_sets = []
    for model in checkpoints:
        centroid = enrolment_centroid(model, enrolment) if mode is ScoreMode.EMBEDDING else None
        score_sets.append(
            ScoreSet(
                score_tensors(model, genuine_val, mode, centroid),
                score_tensors(model, impostor_val, mode, centroid),
            )
        )
    index, fars = select_by_scores(score_sets, tar)
    logger.info(f"Selected epoch {index + 1} with FAR {fars[index]:.4f}")
    return EpochSelection(index, checkpoints[index], tuple(fars))


def val_add_attempts(features: FeaturesByUser, plan: SplitPlan) -> List[FeatureTensor]:
    if not plan.val_add_users:
        raise EmptyValidation("The split plan has no val_add users")
    return [t for u in plan.val_add_users for t in features[u]]


@dataclass(frozen=True)
class FinalTestResult:
    user_id: str
    far_mean: float
    far_std: float
    fars: np.ndarray = field(repr=False, compare=False)


def final_test(
    model: VerificationModel,
    features: FeaturesByUser,
    plan: SplitPlan,
    target_user: str,
    genuine_test: Sequence[FeatureTensor],
    iterations: int = 5000,
    seed: int = 0,
    sample_size: int = 90,
    tar: float = DEFAULT_TAR,
    mode: ScoreMode = ScoreMode.CLASSIFIER,
    centroid: Optional[np.ndarray] = None,
) -> FinalTestResult:
    """
    Bootstrap FAR at TAR: the target's genuine test attempts fix the
    threshold; every iteration draws SAMPLE_SIZE impostor attempts from the
    other held-out users.
    """
    if len(genuine_test) < sample_size:
        raise InsufficientAttempts(
            f"{target_user} has {len(genuine_test)} test attempts, {sample_size} needed"
        )
    pool = [t for u in plan.test_final_users if u != target_user for t in features[u]]
    if len(pool) < sample_size:
        raise InsufficientAttempts(f"Only {len(pool)} impostor attempts, {sample_size} needed")
    genuine_scores = score_tensors(model, genuine_test, mode, centroid)
    pool_scores = score_tensors(model, pool, mode, centroid)
    mean, std, fars = bootstrap_far(genuine_scores, pool_scores, sample_size, iterations, seed, tar)
    logger.info(f"{target_user}: FAR@TAR{tar:.0%} = {mean:.4f} +/- {std:.4f}")
    return FinalTestResult(target_user, mean, std, fars)


@dataclass(eq=False)
class HeldOutResult:
    user_id: str
    finetune: FineTuneResult
    selection: EpochSelection
    final: FinalTestResult


def evaluate_held_out_user(
    base: VerificationModel,
    features: FeaturesByUser,
    plan: SplitPlan,
    target_user: str,
    cfg: FineTuneConfig = FineTuneConfig(),
    iterations: int = 5000,
    tar: float = DEFAULT_TAR,
    mode: ScoreMode = ScoreMode.CLASSIFIER,
) -> HeldOutResult:
    """Fine-tune, select an epoch and run the final test for one held-out user."""
    tuned = finetune_user(base, features, target_user, plan, cfg)
    tensors = features[target_user]
    enrolment = [tensors[i] for i in tuned.split.train]
    selection = select_epoch(
        tuned.checkpoints,
        [tensors[i] for i in tuned.split.val],
        val_add_attempts(features, plan),
        tar,
        mode,
        enrolment,
    )
    centroid = (
        enrolment_centroid(selection.model, enrolment) if mode is ScoreMode.EMBEDDING else None
    )
    final = final_test(
        selection.model,
        features,
        plan,
        target_user,
        [tensors[i] for i in tuned.split.test],
        iterations,
        seed=cfg.seed,
        sample_size=cfg.test_attempts,
        tar=tar,
        mode=mode,
        centroid=centroid,
    )
    return HeldOutResult(target_user, tuned, selection, final)


def evaluate_held_out_users(
    base: VerificationModel,
    features: FeaturesByUser,
    plan: SplitPlan,
    cfg: FineTuneConfig = FineTuneConfig(),
    iterations: int = 5000,
    tar: float = DEFAULT_TAR,
    mode: ScoreMode = ScoreMode.CLASSIFIER,
) -> List[HeldOutResult]:
    return parallel_map(
        lambda u: evaluate_held_out_user(base, features, plan, u, cfg, iterations, tar, mode),
        plan.test_final_users,
    )


# Two-stage authentication


@dataclass(frozen=True)
class AuthDecision:
    unlock_predicted: bool
    pattern_score: float
    verified: bool
    verification_score: Optional[float] = None

    @property
    def accepted(self) -> bool:
        return self.unlock_predicted and self.verified


@dataclass(eq=False)
class Authenticator:
    """
    Runs the verifier only when the pattern model predicts an unlock.
    """

    pattern_model: PatternModel
    verification_model: VerificationModel
    threshold: float
    """Verification threshold, normally fixed at TAR on the owner's validation attempts."""
    pattern_threshold: float = 0.5
    mode: ScoreMode = ScoreMode.CLASSIFIER
    centroid: Optional[np.ndarray] = None

    @classmethod
    def calibrate(
        cls,
        pattern_model: PatternModel,
        verification_model: VerificationModel,
        genuine_val: Sequence[FeatureTensor],
        tar: float = DEFAULT_TAR,
        mode: ScoreMode = ScoreMode.CLASSIFIER,
        enrolment: Sequence[FeatureTensor] = (),
        pattern_threshold: float = 0.5,
    ) -> "Authenticator":
        centroid = None
        if mode is ScoreMode.EMBEDDING:
            centroid = enrolment_centroid(verification_model, enrolment)
        scores = score_tensors(verification_model, genuine_val, mode, centroid)
        return cls(
            pattern_model,
            verification_model,
            genuine_threshold(scores, tar),
            pattern_threshold,
            mode,
            centroid,
        )

    def authenticate(self, pattern_window: Window, feature_tensor: FeatureTensor) -> AuthDecision:
        pattern_score = float(self.pattern_model.predict_proba(pattern_window.grid[None])[0])
        if pattern_score < self.pattern_threshold:
            return AuthDecision(False, pattern_score, False)
        score = float(
            score_tensors(self.verification_model, [feature_tensor], self.mode, self.centroid)[0]
        )
        return AuthDecision(True, pattern_score, score >= self.threshold, score)
