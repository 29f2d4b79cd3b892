import pytest

from motionid.errors import InsufficientAttempts, InsufficientData
from motionid.splits import SplitPlan, make_split_plan
from motionid.synth import user_id_for


USERS = [user_id_for(i) for i in range(12)]


def test_plan_partitions_users():
    plan = make_split_plan(USERS, n_base=8, n_test_final=2, seed=3)
    assert plan.n_base == 8
    assert len(plan.val_add_users) == 2
    assert len(plan.test_final_users) == 2
    assert sorted(plan.all_users) == USERS


def test_plan_depends_only_on_seed():
    assert make_split_plan(USERS, 8, 2, seed=3) == make_split_plan(reversed(USERS), 8, 2, seed=3)
    assert make_split_plan(USERS, 8, 2, seed=3) != make_split_plan(USERS, 8, 2, seed=4)


def test_plan_needs_enough_users():
    with pytest.raises(InsufficientData):
        make_split_plan(USERS, n_base=11, n_test_final=2)
    with pytest.raises(InsufficientData):
        make_split_plan(USERS, n_base=1, n_test_final=2)


def test_overlapping_sets_rejected():
    with pytest.raises(AssertionError):
        SplitPlan(("a", "b"), ("b",), ("c",))


def test_replication_protocol():
    users = [user_id_for(i) for i in range(101)]
    plan = make_split_plan(users, n_base=60, n_test_final=11, replication=True)
    assert len(plan.base_users) + len(plan.val_add_users) == 90
    with pytest.raises(AssertionError):
        make_split_plan(users, n_base=61, n_test_final=11, replication=True)
    with pytest.raises(InsufficientData):
        make_split_plan(users[:100], n_base=60, n_test_final=11, replication=True)


def test_attempt_split():
    plan = make_split_plan(USERS, 8, 2, seed=1)
    user = plan.base_users[0]
    split = plan.attempt_split(user, 30)
    assert (len(split.train), len(split.val), len(split.test)) == (21, 4, 5)
    assert sorted(split.train + split.val + split.test) == list(range(30))
    assert plan.attempt_split(user, 30) == split
    assert plan.attempt_split(user, 30, repetition=1) != split


def test_attempt_split_needs_three_attempts():
    plan = make_split_plan(USERS, 8, 2)
    with pytest.raises(InsufficientData):
        plan.attempt_split(plan.base_users[0], 2)


def test_target_split_keeps_test_attempts():
    plan = make_split_plan(USERS, 8, 2, seed=1)
    split = plan.target_split(plan.test_final_users[0], 40, test_attempts=20, val_fraction=0.2)
    assert (len(split.train), len(split.val), len(split.test)) == (16, 4, 20)
    assert sorted(split.train + split.val + split.test) == list(range(40))
    with pytest.raises(InsufficientAttempts):
        plan.target_split(plan.test_final_users[0], 21, test_attempts=20, val_fraction=0.2)


def test_plan_file(tmp_path):
    plan = make_split_plan(USERS, 8, 2, seed=5, train_fraction=0.6, val_fraction=0.2)
    plan.save(tmp_path / "plan.json")
    assert SplitPlan.load(tmp_path / "plan.json") == plan
