from fractions import Fraction

import numpy as np
import pytest

from motionid.errors import EmptySide, InsufficientAttempts
from motionid.evaluation import (
    ComparisonBudget,
    ScoreSet,
    attempts_for_budget,
    bootstrap_far,
    far_at_tar,
    genuine_threshold,
    roc_auc,
    rule_of_30,
    tar_at_far,
    theoretical_far,
)
from motionid.utils import THREADS_ENV_VAR


TENTHS = np.arange(1, 11) / 10


def test_auc_examples():
    assert roc_auc(ScoreSet([0.9, 0.8], [0.1, 0.2])) == 1.0
    assert roc_auc(ScoreSet([0.3, 0.3], [0.3, 0.3])) == 0.5
    assert roc_auc(ScoreSet([0.9, 0.4], [0.5])) == 0.5


def test_auc_ignores_monotone_transforms():
    rng = np.random.default_rng(0)
    genuine, impostor = rng.normal(1.0, 1.0, 50), rng.normal(0.0, 1.0, 70)
    direct = roc_auc(ScoreSet(genuine, impostor))
    assert roc_auc(ScoreSet(np.exp(genuine), np.exp(impostor))) == pytest.approx(direct)
    assert roc_auc(ScoreSet(3 * genuine + 1, 3 * impostor + 1)) == pytest.approx(direct)


def test_auc_needs_both_sides():
    with pytest.raises(EmptySide):
        roc_auc(ScoreSet([], [0.1]))
    with pytest.raises(EmptySide):
        roc_auc(ScoreSet([0.1], []))


def test_far_at_tar_examples():
    assert genuine_threshold(TENTHS, 0.9) == 0.2
    assert far_at_tar(ScoreSet(TENTHS, [0.15]), 0.9) == 0.0
    assert far_at_tar(ScoreSet(TENTHS, [0.01, 0.05]), 0.9) == 0.0
    assert far_at_tar(ScoreSet(TENTHS, [0.2, 0.5, 0.0, 0.1])) == 0.5


def test_far_of_identical_distributions():
    rng = np.random.default_rng(1)
    scores = ScoreSet(rng.uniform(size=20000), rng.uniform(size=20000))
    assert far_at_tar(scores, 0.9) == pytest.approx(0.9, abs=0.01)
    same = rng.uniform(size=1000)
    assert far_at_tar(ScoreSet(same, same), 0.9) == pytest.approx(0.9)


def test_far_grows_with_tar():
    rng = np.random.default_rng(2)
    scores = ScoreSet(rng.normal(1.0, 1.0, 200), rng.normal(0.0, 1.0, 300))
    fars = [far_at_tar(scores, tar) for tar in (0.5, 0.7, 0.9, 0.99)]
    assert fars == sorted(fars)


def test_tar_at_far_examples():
    assert tar_at_far(ScoreSet(TENTHS, [0.05]), 0.0) == 1.0
    assert tar_at_far(ScoreSet(TENTHS, [0.15]), 0.0) == pytest.approx(0.9)
    assert tar_at_far(ScoreSet(TENTHS, [0.15]), 1.0) == 1.0


def test_tar_at_far_inverts_far_at_tar():
    rng = np.random.default_rng(3)
    scores = ScoreSet(rng.normal(1.0, 1.0, 150), rng.normal(0.0, 1.0, 250))
    for tar in (0.5, 0.8, 0.9, 0.95):
        assert tar_at_far(scores, far_at_tar(scores, tar)) >= tar


def test_rule_of_30():
    assert rule_of_30("1/50000") == 1_500_000
    assert rule_of_30(Fraction(1, 10)) == 300
    assert rule_of_30(0.5) == 60
    with pytest.raises(ValueError):
        rule_of_30(0)


def test_attempts_for_budget():
    assert attempts_for_budget(90, 1_500_000) == 188
    assert attempts_for_budget(2, 2) == 1
    assert attempts_for_budget(101, 1_500_000) == 149


@pytest.mark.parametrize(
    "n, expected",
    [(60, 10620), (65, 12480), (70, 14490), (75, 16650), (80, 18960), (85, 21420)],
)
def test_theoretical_far(n, expected):
    assert theoretical_far(n, 3) == Fraction(1, expected)


def test_theoretical_far_of_two_users():
    assert theoretical_far(2, 1) == Fraction(1, 2)


def test_comparison_budget():
    budget = ComparisonBudget(90, 188)
    assert budget.genuine_needed == 300
    assert budget.impostor_needed == 1_500_000
    assert budget.sufficient
    assert not ComparisonBudget(90, 187).sufficient
    assert budget.attempts_needed == 188


def test_bootstrap_of_separated_scores_is_zero():
    mean, std, fars = bootstrap_far(TENTHS + 1, np.zeros(200), sample_size=90, iterations=50)
    assert (mean, std) == (0.0, 0.0)
    assert len(fars) == 50


def test_bootstrap_is_deterministic(monkeypatch):
    rng = np.random.default_rng(4)
    genuine, pool = rng.normal(1.0, 1.0, 90), rng.normal(0.0, 1.0, 500)
    monkeypatch.setenv(THREADS_ENV_VAR, "1")
    _, _, serial = bootstrap_far(genuine, pool, iterations=200, seed=9)
    monkeypatch.setenv(THREADS_ENV_VAR, "4")
    _, _, threaded = bootstrap_far(genuine, pool, iterations=200, seed=9)
    assert np.array_equal(serial, threaded)


def test_bootstrap_needs_enough_impostors():
    with pytest.raises(InsufficientAttempts):
        bootstrap_far(TENTHS, np.zeros(89), sample_size=90)


def uniform_case(seed):
    rng = np.random.default_rng(seed)
    genuine = rng.uniform(0.5, 1.0, 90)
    pool = rng.uniform(0.0, 1.0, 900)
    analytic = float(np.mean(pool >= genuine_threshold(genuine)))
    return genuine, pool, analytic


def test_bootstrap_mean_matches_pool_far():
    genuine, pool, analytic = uniform_case(0)
    mean, std, _ = bootstrap_far(genuine, pool, iterations=1000, seed=1)
    assert abs(mean - analytic) <= 2 * std


@pytest.mark.slow
def test_bootstrap_consistency_across_seeds():
    for seed in range(20):
        genuine, pool, analytic = uniform_case(seed)
        mean, std, _ = bootstrap_far(genuine, pool, iterations=5000, seed=seed)
        assert abs(mean - analytic) <= 2 * std
