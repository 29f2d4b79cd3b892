import json

import pytest

from motionid.__main__ import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from motionid.report import metric_series, read_metrics, read_rows


@pytest.fixture(autouse=True)
def in_tmp_path(tmp_path, monkeypatch):
    # Keep a stray motionid.yaml in the invoking directory out of the tests.
    monkeypatch.chdir(tmp_path)


def test_plan_prints_budget(capsys):
    assert main(["plan"]) == EXIT_OK
    assert "300 genuine / 1,500,000 impostor comparisons" in capsys.readouterr().out


def test_plan_checks_available_attempts(capsys):
    assert main(["plan", "--users", "90", "--attempts", "188"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "90 users need 188 attempts each" in out
    assert out.rstrip().endswith("sufficient")
    assert main(["plan", "-u", "90", "-m", "100"]) == EXIT_OK
    assert capsys.readouterr().out.rstrip().endswith("insufficient")


@pytest.mark.parametrize(
    "argv",
    [
        ["plan", "--tar", "2"],
        ["plan", "--target-far", "often"],
        ["plan", "--users", "1"],
        ["synth", "--replication"],
    ],
)
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE
    assert capsys.readouterr().err.startswith("motionid: error:")


def test_unknown_command_is_a_usage_error():
    with pytest.raises(SystemExit) as exit:
        main(["unlock"])
    assert exit.value.code == EXIT_USAGE


def test_missing_stage_output_is_a_data_error(tmp_path, capsys):
    assert main(["features", "-o", str(tmp_path / "out")]) == EXIT_DATA
    assert "InsufficientData" in capsys.readouterr().err
    assert main(["report", "-o", str(tmp_path / "out")]) == EXIT_DATA


def test_bad_config_is_a_usage_error(tmp_path):
    (tmp_path / "bad.yaml").write_text("n_bsae: 3\n", encoding="utf-8")
    assert main(["-c", str(tmp_path / "bad.yaml"), "plan"]) == EXIT_USAGE


def synth_argv(data_dir, seed):
    return [
        "synth",
        "--data-dir",
        str(data_dir),
        "--seed",
        str(seed),
        "--users",
        "2",
        "--unlocks-per-day",
        "2",
        "--lifts-per-location",
        "1",
    ]


def tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_is_deterministic(tmp_path):
    assert main(synth_argv(tmp_path / "a", 5)) == EXIT_OK
    assert main(synth_argv(tmp_path / "b", 5)) == EXIT_OK
    assert main(synth_argv(tmp_path / "c", 6)) == EXIT_OK
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    assert tree(tmp_path / "a") != tree(tmp_path / "c")


def test_missing_data_dir_is_a_data_error(tmp_path, capsys):
    argv = ["preprocess", "patterns", "--data-dir", str(tmp_path / "absent")]
    assert main(argv + ["--output-dir", str(tmp_path / "results")]) == EXIT_DATA
    assert "UnusableDirectory" in capsys.readouterr().err


def test_output_dir_that_is_a_file_is_a_data_error(tmp_path, capsys):
    occupied = tmp_path / "results"
    occupied.write_text("not a directory\n", encoding="utf-8")
    assert main(["features", "--output-dir", str(occupied)]) == EXIT_DATA
    assert "UnusableDirectory" in capsys.readouterr().err


SMOKE_CONFIG = """\
data_dir: !path "{root}/data"
output_dir: !path "{root}/results"
seed: 3
n_base: {n_base}
n_test_final: 2
repetitions: 1
epochs: {epochs}
pattern_epochs: {epochs}
finetune_epochs: {finetune_epochs}
batch_size: 16
test_attempts: {test_attempts}
bootstrap_iterations: {iterations}
"""


def run_every_stage(root, users=7, lifts=5, days=1, **config):
    settings = dict(n_base=3, epochs=1, finetune_epochs=1, test_attempts=10, iterations=20)
    settings.update(config)
    root.mkdir(parents=True, exist_ok=True)
    config_path = root / "motionid.yaml"
    config_path.write_text(SMOKE_CONFIG.format(root=root, **settings), encoding="utf-8")
    stages = [
        ["synth", "--users", str(users), "--days", str(days), "--lifts-per-location", str(lifts)],
        ["preprocess", "patterns"],
        ["preprocess", "verify"],
        ["features"],
        ["train", "patterns"],
        ["train", "baseline"],
        ["finetune"],
        ["select-epoch"],
        ["final-test"],
        ["report", "--format", "csv"],
    ]
    for argv in stages:
        assert main(["-c", str(config_path)] + argv) == EXIT_OK, argv
    return root / "results"


@pytest.mark.slow
def test_every_stage_in_order(tmp_path, capsys):
    results = run_every_stage(tmp_path / "run")
    assert capsys.readouterr().out.count("FAR@TAR90") >= 2
    assert (results / "plan-n3.json").is_file()
    assert (results / "selection-n3.json").is_file()
    assert len(list((results / "checkpoints" / "n3").glob("*-epoch001.npz"))) == 2
    for name in ("pattern", "baseline", "finetune"):
        assert (results / "reports" / f"{name}.csv").is_file()
        assert (results / "reports" / f"{name}.txt").is_file()


@pytest.mark.slow
def test_same_seed_same_metrics(tmp_path):
    first = run_every_stage(tmp_path / "first")
    second = run_every_stage(tmp_path / "second")
    assert tree(first / "metrics")
    assert tree(first / "metrics") == tree(second / "metrics")
    assert tree(first / "reports") == tree(second / "reports")


@pytest.mark.slow
def test_synthetic_users_are_separable(tmp_path):
    results = run_every_stage(
        tmp_path / "run",
        users=12,
        lifts=25,
        days=4,
        n_base=8,
        epochs=15,
        finetune_epochs=5,
        test_attempts=90,
        iterations=5000,
    )
    plan = json.loads((results / "plan-n8.json").read_text(encoding="utf-8"))
    first_held_out = plan["test_final_users"][0]
    finals = {row["user_id"]: row for row in read_rows(results / "results" / "final-n8.csv")}
    assert float(finals[first_held_out]["far_mean"]) <= 0.05
    for path in (results / "metrics").glob("pattern-*.csv"):
        assert max(metric_series(read_metrics(path), "val", "roc_auc")) >= 0.95, path.name
