from dataclasses import replace

import numpy as np
import pytest

from motionid.core import Window, WindowLabel
from motionid.errors import EmptyValidation, InsufficientAttempts, InsufficientData, UserNotHeldOut
from motionid.evaluation import ScoreSet
from motionid.features import AugmentConfig, FeatureTensor
from motionid.nn.models import PatternConfig, PatternModel, VerificationConfig
from motionid.pipeline import (
    Authenticator,
    FineTuneConfig,
    PatternTrainConfig,
    ScoreMode,
    TrainConfig,
    baseline_summary,
    cross_comparison,
    evaluate_held_out_users,
    final_test,
    finetune_user,
    pattern_accuracy,
    score_tensors,
    select_by_scores,
    select_epoch,
    train_baseline,
    train_pattern_model,
)
from motionid.preprocess import PatternWindowSet
from motionid.report import metric_series
from motionid.splits import make_split_plan
from motionid.synth import user_id_for


TINY = VerificationConfig(channels=(4,), kernels=(3,), embedding_dim=8, projection_dims=(8,))
USERS = [user_id_for(i) for i in range(9)]
ATTEMPTS = 30


def user_tensors(index, count=ATTEMPTS, seed=0):
    rng = np.random.default_rng([seed, index])
    signature = np.zeros((66, 1))
    signature[3 * (index % 22) : 3 * (index % 22) + 3] = 4.0
    return [
        FeatureTensor(rng.normal(size=(66, 75)) + signature, 50.0, user_id_for(index), 1)
        for _ in range(count)
    ]


@pytest.fixture(scope="module")
def features():
    return {user_id_for(i): user_tensors(i) for i in range(len(USERS))}


@pytest.fixture(scope="module")
def plan():
    return make_split_plan(USERS, n_base=4, n_test_final=3, seed=2)


@pytest.fixture(scope="module")
def train_cfg():
    return TrainConfig(
        epochs=2,
        batch_size=16,
        learning_rate=1e-2,
        augment=AugmentConfig(seed=0),
        model=TINY,
    )


@pytest.fixture(scope="module")
def finetune_cfg():
    return FineTuneConfig(epochs=2, base_learning_rate=1e-2, batch_size=8, test_attempts=10)


@pytest.fixture(scope="module")
def baseline(features, plan, train_cfg):
    return train_baseline(features, plan, train_cfg)


def pattern_windows(count, shift=2.0, seed=0):
    rng = np.random.default_rng(seed)
    windows = []
    for i in range(2 * count):
        positive = i % 2 == 0
        grid = rng.normal(size=(3, 150)) + (shift if positive else 0.0)
        label = WindowLabel.UNLOCK_POSITIVE if positive else WindowLabel.UNLOCK_NEGATIVE
        windows.append(Window("u", label, grid, 50.0, 3.0, i, ("acc_x", "acc_y", "acc_z")))
    return windows


def test_pattern_model_separates_shifted_windows():
    cfg = PatternTrainConfig(epochs=20, learning_rate=1e-2, hidden=(8,))
    result = train_pattern_model(pattern_windows(40), cfg)
    assert result.best_val_auc >= 0.99
    assert 1 <= result.best_epoch <= 20
    assert len(metric_series(result.metrics, "val", "roc_auc")) == 20


def test_pattern_model_needs_both_classes():
    positives = [w for w in pattern_windows(10) if w.label is WindowLabel.UNLOCK_POSITIVE]
    with pytest.raises(InsufficientData):
        train_pattern_model(positives, PatternTrainConfig(epochs=1))


def test_pattern_accuracy_marks_small_users():
    windows = pattern_windows(20)
    tiny = pattern_windows(1)
    by_user = {
        ("device00", "user000"): PatternWindowSet(
            "user000", "device00", windows[::2], windows[1::2]
        ),
        ("device01", "user001"): PatternWindowSet("user001", "device01", tiny[::2], tiny[1::2]),
    }
    cfg = PatternTrainConfig(epochs=2, hidden=(4,))
    results = pattern_accuracy(by_user, cfg, repetitions=2)
    assert [r.accuracy.user_id for r in results] == ["user000", "user001"]
    assert len(results[0].accuracy.accuracies) == 2
    assert results[1].accuracy.accuracies == ()
    assert results[1].first is None


def test_cross_comparison():
    probabilities = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1]])
    scores = cross_comparison(probabilities, np.array([0, 1]))
    assert scores.genuine.tolist() == [0.7, 0.8]
    assert sorted(scores.impostor.tolist()) == [0.1, 0.1, 0.1, 0.2]


def test_baseline_logs_every_epoch(baseline, plan):
    assert baseline.model.n_classes == plan.n_base
    for split in ("val", "test"):
        for metric in ("accuracy", "far_at_tar"):
            values = metric_series(baseline.metrics, split, metric)
            assert len(values) == 2
            assert all(0.0 <= v <= 1.0 for v in values)
    assert set(baseline.splits) == set(plan.base_users)


def test_baseline_is_reproducible(baseline, features, plan, train_cfg):
    again = train_baseline(features, plan, train_cfg)
    assert again.metrics == baseline.metrics


def test_baseline_summary(baseline):
    summary = baseline_summary([baseline, baseline], n_base=4, test_attempts=3)
    assert summary.acc_val == (baseline.final("val", "accuracy"),) * 2
    assert str(summary.far_theoretical) == "1/36"


def test_finetune_keeps_extractor(baseline, features, plan, finetune_cfg, tmp_path):
    target = plan.test_final_users[0]
    cfg = replace(finetune_cfg, checkpoint_dir=tmp_path)
    tuned = finetune_user(baseline.model, features, target, plan, cfg)
    assert len(tuned.checkpoints) == 2
    assert len(tuned.split.test) == 10
    base_extractor = baseline.model.extractor_parameters()
    for model in tuned.checkpoints:
        assert model.n_classes == 2
        for name, p in model.extractor_parameters().items():
            assert p.data.tobytes() == base_extractor[name].data.tobytes()
    assert sorted(p.name for p in tmp_path.iterdir()) == [
        f"{target}-epoch001.npz",
        f"{target}-epoch002.npz",
    ]


def test_finetune_only_held_out_users(baseline, features, plan, finetune_cfg):
    with pytest.raises(UserNotHeldOut):
        finetune_user(baseline.model, features, plan.base_users[0], plan, finetune_cfg)


def test_select_by_scores_prefers_earliest_tie():
    good = ScoreSet([0.9, 0.8], [0.1])
    bad = ScoreSet([0.9, 0.8], [0.95])
    assert select_by_scores([bad, good, good])[0] == 1
    with pytest.raises(EmptyValidation):
        select_by_scores([])


def test_select_epoch_needs_validation(baseline, features):
    with pytest.raises(EmptyValidation):
        select_epoch([baseline.model], [], features[USERS[0]])


def test_final_test_needs_enough_attempts(baseline, features, plan):
    target = plan.test_final_users[0]
    with pytest.raises(InsufficientAttempts):
        final_test(baseline.model, features, plan, target, features[target][:5], sample_size=10)


def test_embedding_scores_need_centroid(baseline, features):
    with pytest.raises(InsufficientData):
        score_tensors(baseline.model, features[USERS[0]][:2], ScoreMode.EMBEDDING)


@pytest.mark.parametrize("mode", list(ScoreMode))
def test_held_out_evaluation(baseline, features, plan, finetune_cfg, mode):
    results = evaluate_held_out_users(
        baseline.model, features, plan, finetune_cfg, iterations=50, mode=mode
    )
    assert [r.user_id for r in results] == list(plan.test_final_users)
    for r in results:
        assert 1 <= r.selection.epoch <= 2
        assert 0.0 <= r.final.far_mean <= 1.0
        assert len(r.final.fars) == 50


def test_authenticator_gates_on_pattern(baseline, features, plan):
    pattern = PatternModel(PatternConfig(in_channels=3, hidden=(4,)))
    genuine = features[plan.base_users[0]]
    window = pattern_windows(1)[0]
    never = Authenticator.calibrate(pattern, baseline.model, genuine[:10], pattern_threshold=1.1)
    decision = never.authenticate(window, genuine[0])
    assert not decision.unlock_predicted and not decision.accepted
    assert decision.verification_score is None
    always = Authenticator.calibrate(pattern, baseline.model, genuine[:10], pattern_threshold=0.0)
    scores = score_tensors(baseline.model, genuine[:10])
    best = genuine[int(np.argmax(scores))]
    assert always.authenticate(window, best).accepted
