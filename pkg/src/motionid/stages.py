"""
File-level stages behind every subcommand.

Each stage reads what the previous one wrote under the output directory, so a
run can be resumed or repeated one step at a time:

  patterns/<user>.midt            pattern windows (preprocess patterns)
  attempts/<user>.midt            clustered verification attempts (preprocess verify)
  features/<user>.midt            22x3 feature tensors, features/roster.json
  plan-n<N>.json                  user split for n_base = N
  models/                         pattern and baseline checkpoints
  metrics/                        per-epoch metrics logs
  checkpoints/n<N>/               per-epoch fine-tune checkpoints
  selection-n<N>.json             chosen fine-tune epoch per held-out user
  results/                        raw result rows the report is built from
  reports/                        rendered tables
"""

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Tuple
import json
import logging
import sys

from motionid.config import ExperimentConfig
from motionid.core import WindowLabel
from motionid.errors import InsufficientData, NoEvents, SchemaError, UnusableDirectory
from motionid.evaluation import (
    DEFAULT_TAR,
    ComparisonBudget,
    as_fraction,
    attempts_for_budget,
    rule_of_30,
)
from motionid.features import DEFAULT_ROSTER, FeatureTensor, feature_tensors_for
from motionid.ingest import MANIFEST_NAME, DatasetKind, load_manifest, load_recordings
from motionid.nn.checkpoint import load_checkpoint, save_checkpoint
from motionid.nn.models import VerificationModel
from motionid.pipeline import (
    ScoreMode,
    baseline_summary,
    enrolment_centroid,
    final_test as bootstrap_final_test,
    finetune_user,
    pattern_accuracy,
    select_epoch,
    train_baseline_repeated,
    val_add_attempts,
)
from motionid.preprocess import (
    PatternWindowSet,
    pattern_windows_for,
    verification_attempts_for,
)
from motionid.report import (
    BaselineSummary,
    PatternAccuracy,
    ReportBundle,
    baseline_table,
    finetune_table,
    format_rate,
    pattern_table,
    read_rows,
    write_metrics,
    write_rows,
)
from motionid.splits import SplitPlan, make_split_plan
from motionid.synth import NoiseConfig, random_profiles, synth_all_motions, synth_specific_motion
from motionid.tensorfile import (
    attempts_to_tensorfile,
    features_to_tensorfile,
    read_tensorfile,
    tensorfile_to_attempts,
    tensorfile_to_features,
    tensorfile_to_windows,
    windows_to_tensorfile,
    write_tensorfile,
)
from motionid.utils import ensure_dir, parallel_map


logger = logging.getLogger(__name__)

TENSOR_SUFFIX = ".midt"
PATTERN_RESULTS_HEADER = ["device_id", "user_id", "accuracies"]
BASELINE_RESULTS_HEADER = [
    "n_base",
    "repetition",
    "acc_val",
    "acc_test",
    "far_val",
    "far_test",
    "far_theoretical",
]
FINAL_RESULTS_HEADER = ["n_base", "user_id", "epoch", "far_mean", "far_std"]


@dataclass(frozen=True)
class Layout:
    """
    Where every stage of one experiment reads and writes.
    """

    data_dir: Path
    output_dir: Path

    def dataset_dir(self, kind: DatasetKind) -> Path:
        return self.data_dir / kind.value

    def manifest_path(self, kind: DatasetKind) -> Path:
        return self.dataset_dir(kind) / MANIFEST_NAME

    @property
    def patterns_dir(self) -> Path:
        return self.output_dir / "patterns"

    @property
    def attempts_dir(self) -> Path:
        return self.output_dir / "attempts"

    @property
    def features_dir(self) -> Path:
        return self.output_dir / "features"

    @property
    def models_dir(self) -> Path:
        return self.output_dir / "models"

    @property
    def metrics_dir(self) -> Path:
        return self.output_dir / "metrics"

    @property
    def results_dir(self) -> Path:
        return self.output_dir / "results"

    @property
    def reports_dir(self) -> Path:
        return self.output_dir / "reports"

    def plan_path(self, n_base: int) -> Path:
        return self.output_dir / f"plan-n{n_base}.json"

    def checkpoints_dir(self, n_base: int) -> Path:
        return self.output_dir / "checkpoints" / f"n{n_base}"

    def selection_path(self, n_base: int) -> Path:
        return self.output_dir / f"selection-n{n_base}.json"

    def baseline_model_path(self, n_base: int, repetition: int) -> Path:
        return self.models_dir / f"baseline-n{n_base}-rep{repetition}.npz"

    def pattern_model_path(self, user_id: str) -> Path:
        return self.models_dir / f"pattern-{user_id}.npz"

    def finetune_checkpoints(self, n_base: int, user_id: str) -> List[Path]:
        return sorted(self.checkpoints_dir(n_base).glob(f"{user_id}-epoch*.npz"))

    @classmethod
    def of(cls, cfg: ExperimentConfig) -> "Layout":
        return cls(cfg.data_dir, cfg.output_dir)


def _checked_layout(cfg: ExperimentConfig, reads_data: bool = False) -> Layout:
    """
    The layout of CFG once its output directory exists and is usable. With
    READS_DATA the data directory must be readable too.
    """
    if reads_data and not cfg.validate_data_dir():
        raise UnusableDirectory(f"Data directory {cfg.data_dir} is not readable")
    ensure_dir(cfg.output_dir)
    if not cfg.validate_output_dir():
        raise UnusableDirectory(f"Output directory {cfg.output_dir} is not writable")
    return Layout.of(cfg)


def _tensor_files(directory: Path) -> List[Path]:
    if not directory.is_dir():
        raise InsufficientData(f"{directory} does not exist; run the earlier stage first")
    files = sorted(directory.glob(f"*{TENSOR_SUFFIX}"))
    if not files:
        raise InsufficientData(f"No {TENSOR_SUFFIX} files in {directory}")
    return files


# synth


def synth(
    cfg: ExperimentConfig,
    users: int = 12,
    days: int = 1,
    unlocks_per_day: int = 10,
    lifts_per_location: int = 50,
    noise: NoiseConfig = NoiseConfig(),
) -> Layout:
    """
    Write both synthetic datasets (specific motion and all motions) for USERS
    simulated users under the data directory.
    """
    layout = Layout.of(cfg)
    seed = cfg.require_seed()
    profiles = random_profiles(users, seed)
    logger.info(f"Synthesizing {users} users with {seed=!s} into {layout.data_dir}")
    synth_specific_motion(
        profiles,
        layout.dataset_dir(DatasetKind.SPECIFIC_MOTION),
        lifts_per_location=lifts_per_location,
        rate=cfg.rate_hz,
        noise=noise,
    )
    synth_all_motions(
        profiles,
        layout.dataset_dir(DatasetKind.ALL_MOTIONS),
        days=days,
        unlocks_per_day=unlocks_per_day,
        rate=cfg.rate_hz,
        noise=noise,
    )
    return layout


# preprocess


def preprocess_patterns(cfg: ExperimentConfig) -> Dict[str, int]:
    """
    Cut every all-motions recording into pattern windows. Returns the number
    of windows written per user.
    """
    layout = _checked_layout(cfg, reads_data=True)
    manifest = load_manifest(layout.manifest_path(DatasetKind.ALL_MOTIONS))
    out_dir = ensure_dir(layout.patterns_dir)
    pcfg = cfg.preprocess_config()

    def run(entry) -> int:
        try:
            windows = pattern_windows_for(load_recordings(entry), pcfg)
        except NoEvents as e:
            logger.warning(f"Skipping {entry.user_id}: {e}")
            return 0
        if windows is None:
            return 0
        merged = windows.positives + windows.negatives
        if not merged:
            logger.warning(f"{entry.user_id} produced no pattern windows")
            return 0
        write_tensorfile(
            windows_to_tensorfile(merged), out_dir / f"{entry.user_id}{TENSOR_SUFFIX}"
        )
        logger.info(
            f"{entry.user_id}: {len(windows.positives)} positive, "
            f"{len(windows.negatives)} negative windows"
        )
        return len(merged)

    counts = parallel_map(run, manifest.entries)
    return {e.user_id: c for e, c in zip(manifest.entries, counts)}


def preprocess_verify(cfg: ExperimentConfig) -> Dict[str, int]:
    """
    Extract and cluster the verification attempts of every specific-motion
    user. Returns the number of attempts written per user.
    """
    layout = _checked_layout(cfg, reads_data=True)
    manifest = load_manifest(layout.manifest_path(DatasetKind.SPECIFIC_MOTION))
    out_dir = ensure_dir(layout.attempts_dir)
    pcfg = cfg.preprocess_config()

    def run(entry) -> int:
        attempts = verification_attempts_for(load_recordings(entry), pcfg)
        if not attempts:
            logger.warning(f"{entry.user_id} produced no verification attempts")
            return 0
        write_tensorfile(
            attempts_to_tensorfile(attempts), out_dir / f"{entry.user_id}{TENSOR_SUFFIX}"
        )
        return len(attempts)

    counts = parallel_map(run, manifest.entries)
    return {e.user_id: c for e, c in zip(manifest.entries, counts)}


def features(cfg: ExperimentConfig) -> Dict[str, int]:
    """
    Turn every user's attempts into feature tensors.
    """
    layout = _checked_layout(cfg)
    out_dir = ensure_dir(layout.features_dir)
    (out_dir / "roster.json").write_text(DEFAULT_ROSTER.to_json() + "\n", encoding="utf-8")
    counts = {}
    for path in _tensor_files(layout.attempts_dir):
        tensors = feature_tensors_for(tensorfile_to_attempts(read_tensorfile(path)))
        write_tensorfile(features_to_tensorfile(tensors), out_dir / path.name)
        counts[path.stem] = len(tensors)
    return counts


def load_features(cfg: ExperimentConfig) -> Dict[str, List[FeatureTensor]]:
    return {
        path.stem: tensorfile_to_features(read_tensorfile(path))
        for path in _tensor_files(Layout.of(cfg).features_dir)
    }


def load_pattern_windows(cfg: ExperimentConfig) -> Dict[Tuple[str, str], PatternWindowSet]:
    """Pattern windows keyed by (device, user)."""
    out = {}
    for path in _tensor_files(Layout.of(cfg).patterns_dir):
        windows = tensorfile_to_windows(read_tensorfile(path))
        positives = tuple(w for w in windows if w.label is WindowLabel.UNLOCK_POSITIVE)
        negatives = tuple(w for w in windows if w.label is WindowLabel.UNLOCK_NEGATIVE)
        device_id = windows[0].device_id
        out[(device_id, path.stem)] = PatternWindowSet(path.stem, device_id, positives, negatives)
    return out


# train


def train_patterns(cfg: ExperimentConfig) -> List[PatternAccuracy]:
    """
    Train the unlock predictor of every (device, user), save the first
    repetition's model and metrics, and record every repetition's accuracy.
    """
    layout = _checked_layout(cfg)
    ensure_dir(layout.models_dir)
    ensure_dir(layout.metrics_dir)
    ensure_dir(layout.results_dir)
    results = pattern_accuracy(
        load_pattern_windows(cfg), cfg.pattern_train_config(), cfg.repetitions
    )
    for result in results:
        acc = result.accuracy
        if result.first is None:
            continue
        save_checkpoint(
            result.first.model,
            layout.pattern_model_path(acc.user_id),
            {"user_id": acc.user_id, "device_id": acc.device_id, "epoch": result.first.best_epoch},
        )
        write_metrics(result.first.metrics, layout.metrics_dir / f"pattern-{acc.user_id}.csv")
    write_rows(
        layout.results_dir / "pattern.csv",
        PATTERN_RESULTS_HEADER,
        [
            (r.accuracy.device_id, r.accuracy.user_id, " ".join(map(repr, r.accuracy.accuracies)))
            for r in results
        ],
    )
    return [r.accuracy for r in results]


def split_plan(cfg: ExperimentConfig, user_ids: Sequence[str]) -> SplitPlan:
    """
    The split plan for cfg.n_base. Written on first use and reused by every
    later stage, so fine-tuning and testing see the baseline's split.
    """
    path = Layout.of(cfg).plan_path(cfg.n_base)
    if path.exists():
        plan = SplitPlan.load(path)
        if set(plan.all_users) != set(user_ids):
            raise SchemaError(f"{path} was made for a different set of users")
        return plan
    plan = make_split_plan(
        user_ids,
        cfg.n_base,
        cfg.n_test_final,
        seed=cfg.require_seed(),
        train_fraction=cfg.train_fraction,
        val_fraction=cfg.val_fraction,
        replication=cfg.replication,
    )
    ensure_dir(path.parent)
    plan.save(path)
    return plan


def train_baseline(cfg: ExperimentConfig) -> BaselineSummary:
    """
    Train cfg.repetitions baselines on the base users, save each model and
    metrics log, and record their final metrics.
    """
    layout = _checked_layout(cfg)
    feats = load_features(cfg)
    plan = split_plan(cfg, sorted(feats))
    ensure_dir(layout.models_dir)
    ensure_dir(layout.metrics_dir)
    ensure_dir(layout.results_dir)
    results = train_baseline_repeated(feats, plan, cfg.train_config(), cfg.repetitions)
    n = plan.n_base
    for r in results:
        save_checkpoint(
            r.model,
            layout.baseline_model_path(n, r.repetition),
            {"n_base": n, "repetition": r.repetition},
        )
        write_metrics(r.metrics, layout.metrics_dir / f"baseline-n{n}-rep{r.repetition}.csv")
    summary = baseline_summary(results, n, cfg.far_theory_attempts)
    write_rows(
        layout.results_dir / f"baseline-n{n}.csv",
        BASELINE_RESULTS_HEADER,
        [
            (
                n,
                r.repetition,
                r.final("val", "accuracy"),
                r.final("test", "accuracy"),
                r.final("val", "far_at_tar"),
                r.final("test", "far_at_tar"),
                format_rate(summary.far_theoretical),
            )
            for r in results
        ],
    )
    return summary


# fine-tune, select, test


def _load_verifier(path: Path) -> VerificationModel:
    if not path.is_file():
        raise InsufficientData(f"{path} does not exist; run the earlier stage first")
    model, _ = load_checkpoint(path)
    if not isinstance(model, VerificationModel):
        raise SchemaError(f"{path} does not hold a verification model")
    return model


def finetune(cfg: ExperimentConfig) -> Dict[str, int]:
    """
    Fine-tune the first baseline repetition for every held-out user; every
    epoch is checkpointed. Returns the number of checkpoints per user.
    """
    layout = _checked_layout(cfg)
    feats = load_features(cfg)
    plan = split_plan(cfg, sorted(feats))
    base = _load_verifier(layout.baseline_model_path(plan.n_base, 0))
    ensure_dir(layout.metrics_dir)
    ft_cfg = cfg.finetune_config(ensure_dir(layout.checkpoints_dir(plan.n_base)))

    def run(user_id: str) -> int:
        result = finetune_user(base, feats, user_id, plan, ft_cfg)
        write_metrics(
            result.metrics, layout.metrics_dir / f"finetune-n{plan.n_base}-{user_id}.csv"
        )
        return len(result.checkpoints)

    counts = parallel_map(run, plan.test_final_users)
    return dict(zip(plan.test_final_users, counts))


def select_epochs(cfg: ExperimentConfig) -> Dict[str, int]:
    """
    Choose every held-out user's fine-tune epoch by validation FAR with the
    val_add users as impostors. Returns the chosen 1-based epoch per user.
    """
    layout = _checked_layout(cfg)
    feats = load_features(cfg)
    plan = split_plan(cfg, sorted(feats))
    ft_cfg = cfg.finetune_config()
    impostors = val_add_attempts(feats, plan)

    def run(user_id: str) -> dict:
        paths = layout.finetune_checkpoints(plan.n_base, user_id)
        if not paths:
            raise InsufficientData(f"No fine-tune checkpoints for {user_id}; run finetune first")
        tensors = feats[user_id]
        split = plan.target_split(user_id, len(tensors), ft_cfg.test_attempts, ft_cfg.val_fraction)
        selection = select_epoch(
            [_load_verifier(p) for p in paths],
            [tensors[i] for i in split.val],
            impostors,
            mode=cfg.mode,
            enrolment=[tensors[i] for i in split.train],
        )
        return {
            "checkpoint": paths[selection.index].name,
            "epoch": selection.epoch,
            "fars": list(selection.fars),
        }

    chosen = dict(zip(plan.test_final_users, parallel_map(run, plan.test_final_users)))
    path = layout.selection_path(plan.n_base)
    path.write_text(json.dumps(chosen, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Wrote epoch selection to {path}")
    return {u: c["epoch"] for u, c in chosen.items()}


def final_test(cfg: ExperimentConfig) -> Dict[str, tuple]:
    """
    Bootstrap FAR at TAR = 90% for every held-out user with the selected
    checkpoint. Returns (mean, std) per user.
    """
    layout = _checked_layout(cfg)
    feats = load_features(cfg)
    plan = split_plan(cfg, sorted(feats))
    ft_cfg = cfg.finetune_config()
    selection_path = layout.selection_path(plan.n_base)
    if not selection_path.is_file():
        raise InsufficientData(f"{selection_path} does not exist; run select-epoch first")
    chosen = json.loads(selection_path.read_text(encoding="utf-8"))
    ensure_dir(layout.results_dir)
    rows, out = [], {}
    for user_id in plan.test_final_users:
        model = _load_verifier(layout.checkpoints_dir(plan.n_base) / chosen[user_id]["checkpoint"])
        tensors = feats[user_id]
        split = plan.target_split(user_id, len(tensors), ft_cfg.test_attempts, ft_cfg.val_fraction)
        centroid = None
        if cfg.mode is ScoreMode.EMBEDDING:
            centroid = enrolment_centroid(model, [tensors[i] for i in split.train])
        result = bootstrap_final_test(
            model,
            feats,
            plan,
            user_id,
            [tensors[i] for i in split.test],
            iterations=cfg.bootstrap_iterations,
            seed=cfg.require_seed(),
            sample_size=cfg.test_attempts,
            tar=DEFAULT_TAR,
            mode=cfg.mode,
            centroid=centroid,
        )
        epoch = chosen[user_id]["epoch"]
        rows.append((plan.n_base, user_id, epoch, result.far_mean, result.far_std))
        out[user_id] = (result.far_mean, result.far_std)
    write_rows(layout.results_dir / f"final-n{plan.n_base}.csv", FINAL_RESULTS_HEADER, rows)
    return out


# report


def _floats(cell: str) -> tuple:
    return tuple(float(v) for v in cell.split())


def build_report(cfg: ExperimentConfig) -> ReportBundle:
    """
    Tables from whatever result rows exist: pattern accuracy, baseline
    metrics per n_base and fine-tuned FAR per user and n_base.
    """
    results_dir = Layout.of(cfg).results_dir
    bundle = ReportBundle()
    pattern_path = results_dir / "pattern.csv"
    if pattern_path.is_file():
        entries = [
            PatternAccuracy(row["device_id"], row["user_id"], _floats(row["accuracies"]))
            for row in read_rows(pattern_path)
        ]
        bundle.tables["pattern"] = pattern_table(entries)

    baselines = []
    for path in sorted(results_dir.glob("baseline-n*.csv")):
        rows = read_rows(path)
        if not rows:
            continue
        baselines.append(
            BaselineSummary(
                n_base=int(rows[0]["n_base"]),
                far_theoretical=Fraction(rows[0]["far_theoretical"]),
                acc_val=tuple(float(r["acc_val"]) for r in rows),
                acc_test=tuple(float(r["acc_test"]) for r in rows),
                far_val=tuple(float(r["far_val"]) for r in rows),
                far_test=tuple(float(r["far_test"]) for r in rows),
            )
        )
    if baselines:
        bundle.tables["baseline"] = baseline_table(baselines)

    finals = {}
    for path in sorted(results_dir.glob("final-n*.csv")):
        for row in read_rows(path):
            finals[(row["user_id"], int(row["n_base"]))] = (
                float(row["far_mean"]),
                float(row["far_std"]),
            )
    if finals:
        bundle.tables["finetune"] = finetune_table(finals)

    if not bundle.tables:
        raise InsufficientData(f"No result rows under {results_dir}; run a training stage first")
    return bundle


def report(
    cfg: ExperimentConfig, fmt: str = "csv", stream: Optional[TextIO] = None
) -> ReportBundle:
    bundle = build_report(cfg)
    bundle.write(ensure_dir(_checked_layout(cfg).reports_dir), fmt, stream)
    return bundle


# plan


def plan_budget(
    target_far: str = "1/50000",
    tar: str = "9/10",
    users: Optional[int] = None,
    attempts: Optional[int] = None,
    stream: TextIO = sys.stdout,
) -> Dict[str, int]:
    """
    Print the rule-of-30 comparison budget for TARGET_FAR and TAR and, given
    USERS, the attempts per user cross-comparison needs to reach it.
    """
    genuine = rule_of_30(1 - as_fraction(tar))
    impostor = rule_of_30(target_far)
    out = {"genuine": genuine, "impostor": impostor}
    stream.write(f"{genuine:,} genuine / {impostor:,} impostor comparisons\n")
    if users is not None:
        out["attempts_per_user"] = attempts_for_budget(users, impostor)
        stream.write(f"{users} users need {out['attempts_per_user']:,} attempts each\n")
        if attempts is not None:
            budget = ComparisonBudget(users, attempts, as_fraction(target_far), as_fraction(tar))
            out["genuine_available"] = budget.genuine_available
            out["impostor_available"] = budget.impostor_available
            stream.write(
                f"{users} users x {attempts} attempts give {budget.genuine_available:,} genuine / "
                f"{budget.impostor_available:,} impostor comparisons: "
                f"{'sufficient' if budget.sufficient else 'insufficient'}\n"
            )
    return out
