"""Evaluation metrics and report emission.

Regression targets are scored with MAE, symmetric accuracy (mean of
min(pred/true, true/pred)), and R^2; band predictions with accuracy, macro
F1 over the 4 bands, and a row-normalized confusion matrix. Reports are
written as JSON plus comma-delimited plot-data tables.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .domain import JobTelemetry, N_BANDS, TARGET_NAMES
from .errors import DataError

PERCENTILE_KEYS = (
    ("p5", 5.0),
    ("p10", 10.0),
    ("p25", 25.0),
    ("p50", 50.0),
    ("p75", 75.0),
    ("p90", 90.0),
    ("p95", 95.0),
)


def _pair(y, y_hat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).ravel()
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    if y.size != y_hat.size:
        raise DataError(f"length mismatch: {y.size} true vs {y_hat.size} predicted")
    if y.size == 0:
        raise DataError("empty input vectors")
    return y, y_hat


def mae(y, y_hat) -> float:
    """Mean absolute error, in target units."""
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


def sym_accuracy(y, y_hat) -> float:
    """Mean of min(pred/true, true/pred); symmetric and in [0, 1].

    Zero handling: a pair of zeros scores 1 (perfect), a single zero scores
    0, keeping the metric total and symmetric where the ratio form is
    undefined.
    """
    y, y_hat = _pair(y, y_hat)
    if (y < 0).any() or (y_hat < 0).any():
        raise DataError("sym_accuracy requires nonnegative values")
    both_zero = (y == 0) & (y_hat == 0)
    one_zero = ((y == 0) | (y_hat == 0)) & ~both_zero
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ratio = np.minimum(y_hat / y, y / y_hat)
    terms = np.where(both_zero, 1.0, np.where(one_zero, 0.0, ratio))
    return float(np.mean(terms))


def r2(y, y_hat) -> float | None:
    """Coefficient of determination; None when true values are constant."""
    y, y_hat = _pair(y, y_hat)
    mean = np.mean(y)
    ss_tot = float(np.sum((y - mean) ** 2))
    if ss_tot == 0.0:
        return None
    ss_res = float(np.sum((y - y_hat) ** 2))
    return 1.0 - ss_res / ss_tot


@dataclass(frozen=True)
class RegressionReport:
    mae: float
    sym_accuracy: float
    r2: float | None
    n: int

    def to_dict(self) -> dict:
        return {"mae": self.mae, "sym_accuracy": self.sym_accuracy, "r2": self.r2, "n": self.n}


def regression_report(y, y_hat) -> RegressionReport:
    y, y_hat = _pair(y, y_hat)
    return RegressionReport(
        mae=mae(y, y_hat),
        sym_accuracy=sym_accuracy(y, y_hat),
        r2=r2(y, y_hat),
        n=int(y.size),
    )


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    macro_f1: float
    confusion: tuple[tuple[float, ...], ...]  # row-normalized, zero rows stay zero
    counts: tuple[tuple[int, ...], ...]  # raw confusion counts
    n: int

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "confusion": [list(r) for r in self.confusion],
            "counts": [list(r) for r in self.counts],
            "n": self.n,
        }


def classification_metrics(true_bands, predicted_bands) -> ClassificationReport:
    """Accuracy, macro F1, and confusion over the 4 power bands.

    A band absent from the true labels contributes an F1 of 0 unless it was
    also never predicted, in which case it is skipped and the macro divisor
    reduced.
    """
    t = np.asarray(true_bands, dtype=np.int64).ravel()
    p = np.asarray(predicted_bands, dtype=np.int64).ravel()
    if t.size != p.size:
        raise DataError(f"length mismatch: {t.size} true vs {p.size} predicted")
    if t.size == 0:
        raise DataError("empty label vectors")
    for name, v in (("true", t), ("predicted", p)):
        if v.min() < 0 or v.max() >= N_BANDS:
            raise DataError(f"{name} bands must be in 0..{N_BANDS - 1}")

    counts = np.zeros((N_BANDS, N_BANDS), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    accuracy = float(np.trace(counts) / t.size)

    f1_sum = 0.0
    f1_n = 0
    for c in range(N_BANDS):
        tp = counts[c, c]
        fp = counts[:, c].sum() - tp
        fn = counts[c, :].sum() - tp
        if fn + tp == 0 and fp == 0:
            continue  # band never occurred on either side
        denom = 2 * tp + fp + fn
        f1_sum += (2 * tp / denom) if denom else 0.0
        f1_n += 1
    macro_f1 = f1_sum / f1_n

    supports = counts.sum(axis=1)
    norm = np.zeros((N_BANDS, N_BANDS), dtype=np.float64)
    nz = supports > 0
    norm[nz] = counts[nz] / supports[nz, None]

    return ClassificationReport(
        accuracy=accuracy,
        macro_f1=float(macro_f1),
        confusion=tuple(tuple(float(v) for v in row) for row in norm),
        counts=tuple(tuple(int(v) for v in row) for row in counts),
        n=int(t.size),
    )


@dataclass(frozen=True)
class MetricDistribution:
    percentiles: dict[str, float]
    bin_edges: tuple[float, ...]
    counts: tuple[int, ...]
    n: int

    def density(self) -> tuple[float, ...]:
        return tuple(c / self.n for c in self.counts)

    def cumulative(self) -> tuple[float, ...]:
        total = 0
        out = []
        for c in self.counts:
            total += c
            out.append(total / self.n)
        return tuple(out)

    def to_dict(self) -> dict:
        return {
            "percentiles": self.percentiles,
            "bin_edges": list(self.bin_edges),
            "counts": list(self.counts),
            "n": self.n,
        }


@dataclass(frozen=True)
class DistributionReport:
    metrics: dict[str, MetricDistribution]

    def to_dict(self) -> dict:
        return {name: m.to_dict() for name, m in self.metrics.items()}


def distribution_of(values: Sequence[float], n_hist_bins: int = 20) -> MetricDistribution:
    """Percentiles (linear interpolation) plus histogram tables."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError("distribution of empty value list")
    percentiles = {
        key: float(np.percentile(values, q, method="linear")) for key, q in PERCENTILE_KEYS
    }
    counts, edges = np.histogram(values, bins=n_hist_bins)
    return MetricDistribution(
        percentiles=percentiles,
        bin_edges=tuple(float(e) for e in edges),
        counts=tuple(int(c) for c in counts),
        n=int(values.size),
    )


def distribution_report(jobs: Iterable[JobTelemetry], n_hist_bins: int = 20) -> DistributionReport:
    """Distributions of the three aggregate targets across jobs."""
    jobs = [j for j in jobs if j.targets is not None]
    if not jobs:
        raise DataError("distribution_report: no jobs with targets")
    metrics = {}
    for i, name in enumerate(TARGET_NAMES):
        values = [j.targets.as_tuple()[i] for j in jobs]
        metrics[name] = distribution_of(values, n_hist_bins)
    return DistributionReport(metrics=metrics)


# ---------------------------------------------------------------------------
# Report emission


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_json_report(path: str | Path, report: Mapping) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_distribution_tables(report: DistributionReport, out_dir: str | Path) -> list[Path]:
    """Percentile and histogram CSVs per metric, plus a combined JSON."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, dist in report.metrics.items():
        p = out_dir / f"percentiles_{name}.csv"
        write_csv(p, ("percentile", "value"), [(k, v) for k, v in dist.percentiles.items()])
        written.append(p)
        h = out_dir / f"histogram_{name}.csv"
        dens = dist.density()
        cum = dist.cumulative()
        write_csv(
            h,
            ("bin_left", "bin_right", "count", "density", "cumulative"),
            [
                (dist.bin_edges[i], dist.bin_edges[i + 1], dist.counts[i], dens[i], cum[i])
                for i in range(len(dist.counts))
            ],
        )
        written.append(h)
    j = out_dir / "distributions.json"
    write_json_report(j, report.to_dict())
    written.append(j)
    return written


def confusion_rows(report: ClassificationReport) -> list[list]:
    rows = []
    for i, row in enumerate(report.confusion):
        rows.append([f"band_{i}", *row])
    return rows


def write_confusion_csv(path: str | Path, report: ClassificationReport) -> None:
    header = ["true\\pred"] + [f"band_{j}" for j in range(N_BANDS)]
    write_csv(path, header, confusion_rows(report))


def write_importance_csv(path: str | Path, names: Sequence[str], weights: Sequence[float]) -> None:
    if len(names) != len(weights):
        raise DataError(f"{len(names)} names for {len(weights)} importance weights")
    order = np.argsort(weights)[::-1]
    write_csv(path, ("feature", "importance"), [(names[i], float(weights[i])) for i in order])
