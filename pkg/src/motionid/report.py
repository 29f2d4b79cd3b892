"""
Metrics logs and the results tables (pattern accuracy, baseline metrics,
per-user fine-tuned FAR) as CSV and aligned text.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple
import csv
import logging
import math

import numpy as np


logger = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "split", "metric", "value"]
NOT_AVAILABLE = "N/A"


@dataclass(frozen=True)
class MetricRow:
    epoch: int
    split: str
    metric: str
    value: float


def write_metrics(rows: Iterable[MetricRow], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow([row.epoch, row.split, row.metric, repr(float(row.value))])
    logger.info(f"Wrote metrics log {path}")


def read_metrics(path: Path) -> List[MetricRow]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header != METRICS_HEADER:
            raise ValueError(f"{path} is not a metrics log (header {header})")
        return [MetricRow(int(e), s, m, float(v)) for e, s, m, v in reader]


def metric_series(rows: Sequence[MetricRow], split: str, metric: str) -> List[float]:
    """Values of one (split, metric) pair in epoch order."""
    picked = sorted(
        (r for r in rows if r.split == split and r.metric == metric), key=lambda r: r.epoch
    )
    return [r.value for r in picked]


def format_mean_std(mean: float, std: float) -> str:
    """
    "mean ± std" with std rounded to one significant digit (two when that
    digit would be a 1) and mean rounded to the same decimal place. An exact
    zero prints as "0".
    """
    if mean == 0 and std == 0:
        return "0"
    if std == 0:
        return f"{mean:g} ± 0"
    exponent = math.floor(math.log10(abs(std)))
    leading = int(abs(std) / 10**exponent)
    digits = 2 if leading == 1 else 1
    decimals = max(0, digits - 1 - exponent)
    return f"{mean:.{decimals}f} ± {std:.{decimals}f}"


def format_rate(rate: Fraction) -> str:
    """A rate as "1/k" ("0" when zero)."""
    rate = Fraction(rate)
    if rate == 0:
        return "0"
    return f"{rate.numerator}/{rate.denominator}"


def summarize(values: Sequence[float]) -> str:
    if len(values) == 0:
        return NOT_AVAILABLE
    values = np.asarray(values, dtype=np.float64)
    return format_mean_std(float(values.mean()), float(values.std()))


def write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Plain result rows; floats are written with repr so they read back exactly."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    logger.info(f"Wrote results {path}")


def read_rows(path: Path) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


@dataclass(frozen=True)
class Table:
    title: str
    header: Tuple[str, ...]
    rows: Tuple[Tuple[str, ...], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "header", tuple(self.header))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        assert all(len(r) == len(self.header) for r in self.rows), "Ragged table"

    def write_csv(self, out: TextIO) -> None:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(self.header)
        writer.writerows(self.rows)

    def to_text(self) -> str:
        widths = [
            max(len(cell) for cell in column) for column in zip(self.header, *self.rows)
        ]
        lines = [self.title, "  ".join(h.ljust(w) for h, w in zip(self.header, widths))]
        lines.append("  ".join("-" * w for w in widths))
        for row in self.rows:
            lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
        return "\n".join(line.rstrip() for line in lines) + "\n"

    @classmethod
    def read_csv(cls, source: TextIO, title: str = "") -> "Table":
        rows = list(csv.reader(source))
        return cls(title, rows[0], rows[1:])


@dataclass(frozen=True)
class PatternAccuracy:
    device_id: str
    user_id: str
    accuracies: Tuple[float, ...] = ()
    """Test accuracy of every repetition; empty when there was too little data."""


def pattern_table(entries: Sequence[PatternAccuracy]) -> Table:
    rows = [
        (e.device_id, e.user_id, summarize(e.accuracies))
        for e in sorted(entries, key=lambda e: (e.device_id, e.user_id))
    ]
    return Table("Unlock prediction accuracy", ("device", "user", "accuracy"), rows)


@dataclass(frozen=True)
class BaselineSummary:
    n_base: int
    far_theoretical: Fraction
    acc_val: Tuple[float, ...] = ()
    acc_test: Tuple[float, ...] = ()
    far_val: Tuple[float, ...] = ()
    far_test: Tuple[float, ...] = ()


def baseline_table(entries: Sequence[BaselineSummary]) -> Table:
    rows = [
        (
            str(e.n_base),
            summarize(e.acc_val),
            summarize(e.acc_test),
            summarize(e.far_val),
            summarize(e.far_test),
            format_rate(e.far_theoretical),
        )
        for e in sorted(entries, key=lambda e: e.n_base)
    ]
    header = ("n", "Acc_val", "Acc_test", "FAR_val@TAR90", "FAR_test@TAR90", "FAR_theor")
    return Table("Baseline verification", header, rows)


def finetune_table(results: Mapping[Tuple[str, int], Tuple[float, float]]) -> Table:
    """
    RESULTS maps (user, n_base) to the bootstrap FAR (mean, std). One row per
    user, one column per n_base; missing cells print N/A.
    """
    users = sorted({u for u, _ in results})
    splits = sorted({n for _, n in results})
    rows = []
    for user in users:
        cells = [user]
        for n in splits:
            cell = results.get((user, n))
            cells.append(NOT_AVAILABLE if cell is None else format_mean_std(*cell))
        rows.append(tuple(cells))
    return Table("Fine-tuned FAR@TAR90", ("user",) + tuple(str(n) for n in splits), rows)


@dataclass
class ReportBundle:
    """Every table a run produced, keyed by a short name."""

    tables: Dict[str, Table] = field(default_factory=dict)

    def write(self, out_dir: Path, fmt: str = "csv", stream: Optional[TextIO] = None) -> None:
        """
        Write every table to OUT_DIR as both <name>.csv and <name>.txt and echo
        it to STREAM in FMT.
        """
        for name, table in self.tables.items():
            with open(out_dir / f"{name}.csv", "w", encoding="utf-8", newline="") as f:
                table.write_csv(f)
            (out_dir / f"{name}.txt").write_text(table.to_text(), encoding="utf-8")
            if stream is not None:
                if fmt == "csv":
                    table.write_csv(stream)
                else:
                    stream.write(table.to_text())
                stream.write("\n")
