"""Data preparation: chronological split, encoding, scaling, band labels,
and sliding-window construction for runtime prediction.

The submission-feature set defaults to the four categorical fields (user,
job_name, account, category) plus req_nodes and time_limit; on systems where
CPU/GPU/memory requests are not tied to the node count the set is
configurable through :class:`FeatureConfig`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .domain import (
    DCGM_METRICS,
    JobTelemetry,
    PowerBandScheme,
    SAMPLE_INTERVAL_S,
    SlurmJobRecord,
    band_of,
)
from .errors import ConfigError, DataError

#: Code returned for category values never seen during fit.
UNSEEN_CODE = -1

#: Number of telemetry steps fed to the runtime classifier.
WINDOW_LENGTH = 3


@dataclass(frozen=True)
class FeatureConfig:
    """Which submission fields feed the models."""

    categorical: tuple[str, ...] = ("user", "job_name", "account", "category")
    numeric: tuple[str, ...] = ("req_nodes", "time_limit")

    def __post_init__(self):
        if not self.categorical and not self.numeric:
            raise ConfigError("feature config selects no features")

    @property
    def names(self) -> tuple[str, ...]:
        return self.categorical + self.numeric


class OrdinalEncoder:
    """Per-feature category -> integer codes, assigned in first-seen order.

    Unseen values transform to -1, so prediction never fails on a new user
    or job name.
    """

    def __init__(self, features: Sequence[str], mapping: dict[str, dict[str, int]]):
        self.features = tuple(features)
        self.mapping = mapping

    def transform_value(self, feature: str, value: str) -> int:
        return self.mapping[feature].get(value, UNSEEN_CODE)

    def transform_record(self, record: SlurmJobRecord) -> list[int]:
        return [self.transform_value(f, getattr(record, f)) for f in self.features]

    def to_dict(self) -> dict:
        return {"features": list(self.features), "mapping": self.mapping}

    @classmethod
    def from_dict(cls, d: dict) -> "OrdinalEncoder":
        return cls(tuple(d["features"]), {f: dict(m) for f, m in d["mapping"].items()})


def fit_encoder(records: Iterable[SlurmJobRecord], features: Sequence[str]) -> OrdinalEncoder:
    records = list(records)
    if not records:
        raise DataError("fit_encoder: no training records")
    if not features:
        raise ConfigError("fit_encoder: empty feature list")
    mapping: dict[str, dict[str, int]] = {f: {} for f in features}
    for rec in records:
        for f in features:
            codes = mapping[f]
            value = getattr(rec, f)
            if value not in codes:
                codes[value] = len(codes)
    return OrdinalEncoder(features, mapping)


class StandardScaler:
    """Column-wise zero-mean, unit-variance scaling with train statistics.

    Constant training columns get scale 1 so they transform to all zeros.
    """

    def __init__(self, means: np.ndarray, scales: np.ndarray):
        self.means = np.asarray(means, dtype=np.float64)
        self.scales = np.asarray(scales, dtype=np.float64)

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.means.shape[0]:
            raise DataError(
                f"scaler fitted on {self.means.shape[0]} columns, got {X.shape[-1]}"
            )
        return (X - self.means) / self.scales

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "scales": self.scales.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardScaler":
        return cls(np.array(d["means"]), np.array(d["scales"]))


def fit_scaler(X: np.ndarray) -> StandardScaler:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("fit_scaler: need a nonempty 2-D matrix")
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    scales = np.where(sds > 0, sds, 1.0)
    return StandardScaler(means, scales)


def chrono_split(
    jobs: Sequence[JobTelemetry], train_fraction: float = 0.8
) -> tuple[list[JobTelemetry], list[JobTelemetry]]:
    """Time-ordered split: earliest ceil(fraction * n) jobs go to train.

    Ties on start_time break by job_id so the split is deterministic.
    """
    if not 0 < train_fraction < 1:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if len(jobs) < 2:
        raise DataError("chrono_split: need at least 2 jobs")
    ordered = sorted(jobs, key=lambda j: (j.record.start_time, j.record.job_id))
    n_train = math.ceil(train_fraction * len(ordered))
    return ordered[:n_train], ordered[n_train:]


def fit_band_scheme(
    avg_power_values: Sequence[float],
    mode: str = "quantile",
    boundaries: Sequence[float] | None = None,
) -> PowerBandScheme:
    """Derive the 4-band wattage scheme from training power values.

    quantile mode puts the boundaries at the training quartiles (linear
    interpolation); explicit mode validates user-supplied thresholds.
    """
    if mode == "explicit":
        if boundaries is None or len(boundaries) != 3:
            raise ConfigError("explicit band scheme needs exactly 3 boundaries")
        return PowerBandScheme(tuple(float(b) for b in boundaries))
    if mode != "quantile":
        raise ConfigError(f"unknown band scheme mode {mode!r}")
    values = np.asarray(avg_power_values, dtype=np.float64)
    if values.size == 0:
        raise DataError("fit_band_scheme: no training power values")
    if np.unique(values).size < 4:
        raise DataError(
            "fit_band_scheme: need at least 4 distinct power values for quantile mode"
        )
    qs = np.percentile(values, [25.0, 50.0, 75.0], method="linear")
    if not (qs[0] < qs[1] < qs[2]):
        raise DataError(
            f"fit_band_scheme: power quartiles are not strictly increasing: {qs.tolist()}"
        )
    return PowerBandScheme((float(qs[0]), float(qs[1]), float(qs[2])))


# ---------------------------------------------------------------------------
# Stage-1 design matrix


def stage1_features(
    records: Iterable[SlurmJobRecord],
    encoder: OrdinalEncoder,
    config: FeatureConfig = FeatureConfig(),
) -> np.ndarray:
    """Raw (unscaled) submission-feature matrix, one row per record."""
    rows = []
    for rec in records:
        codes = [float(encoder.transform_value(f, getattr(rec, f))) for f in config.categorical]
        nums = [float(getattr(rec, f)) for f in config.numeric]
        rows.append(codes + nums)
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(config.names))


def stage1_targets(jobs: Iterable[JobTelemetry]) -> np.ndarray:
    """(n, 3) target matrix: max GPU util, max mem util, avg power."""
    rows = []
    for job in jobs:
        if job.targets is None:
            raise DataError(f"job {job.record.job_id} has no targets (empty telemetry)")
        rows.append(job.targets.as_tuple())
    return np.array(rows, dtype=np.float64).reshape(len(rows), 3)


# ---------------------------------------------------------------------------
# Stage-2 sliding windows


@dataclass(frozen=True)
class WindowInstance:
    """One runtime prediction instance: three observed steps -> next step.

    ``features`` concatenates the job-level mean of each DCGM metric at
    steps t-2, t-1, t (8 metrics per step) with the static submission
    features. ``power_history`` and ``target_power`` keep the raw wattages
    for the naive baselines and for labeling.
    """

    job_id: str
    prediction_time: int  # epoch seconds of step t+1
    features: tuple[float, ...]
    power_history: tuple[float, float, float]
    target_power: float
    label: int | None = None


def window_feature_names(config: FeatureConfig = FeatureConfig()) -> tuple[str, ...]:
    names = []
    for lag in ("t-2", "t-1", "t"):
        names.extend(f"{m}[{lag}]" for m in DCGM_METRICS)
    names.extend(config.names)
    return tuple(names)


def job_step_means(job: JobTelemetry) -> tuple[list[int], np.ndarray]:
    """Average all GPU/node samples of each 10 s step into one metric row.

    Steps are bins anchored at the job's start time; bins with no samples
    are simply absent. Returns (sorted bin indices, (n_bins, 8) means).
    """
    start = job.record.start_time
    buckets: dict[int, list[list[float]]] = {}
    for s in job.samples:
        b = (s.timestamp - start) // SAMPLE_INTERVAL_S
        buckets.setdefault(b, []).append(
            [
                s.gpu_utilization,
                s.mem_utilization,
                s.sm_active,
                s.sm_occupancy,
                s.dram_active,
                s.fp64_active,
                s.tensor_active,
                s.power_usage,
            ]
        )
    bins = sorted(buckets)
    if not bins:
        return [], np.empty((0, len(DCGM_METRICS)), dtype=np.float64)
    means = np.array(
        [np.asarray(buckets[b], dtype=np.float64).mean(axis=0) for b in bins]
    )
    return bins, means


_POWER_COL = DCGM_METRICS.index("power_usage")


def build_windows(
    job: JobTelemetry,
    encoder: OrdinalEncoder,
    scaler: StandardScaler | None = None,
    scheme: PowerBandScheme | None = None,
    config: FeatureConfig = FeatureConfig(),
) -> list[WindowInstance]:
    """All prediction instances of a job.

    A window needs four consecutive present steps (t-2, t-1, t, t+1); a
    gapless job with T steps yields exactly T - 3 instances, and windows
    never span a missing step. Features are scaled when a scaler is given;
    labels are assigned when a band scheme is given.
    """
    bins, means = job_step_means(job)
    if len(bins) < WINDOW_LENGTH + 1:
        return []
    start = job.record.start_time
    static = [float(encoder.transform_value(f, getattr(job.record, f))) for f in config.categorical]
    static += [float(getattr(job.record, f)) for f in config.numeric]

    index_of = {b: i for i, b in enumerate(bins)}
    instances = []
    for t in bins:
        if any(b not in index_of for b in (t - 2, t - 1, t + 1)):
            continue
        i2, i1, i = index_of[t - 2], index_of[t - 1], index_of[t]
        inext = index_of[t + 1]
        raw = np.concatenate([means[i2], means[i1], means[i], static])
        feats = scaler.transform(raw) if scaler is not None else raw
        target_power = float(means[inext, _POWER_COL])
        instances.append(
            WindowInstance(
                job_id=job.record.job_id,
                prediction_time=start + (t + 1) * SAMPLE_INTERVAL_S,
                features=tuple(float(v) for v in feats),
                power_history=(
                    float(means[i2, _POWER_COL]),
                    float(means[i1, _POWER_COL]),
                    float(means[i, _POWER_COL]),
                ),
                target_power=target_power,
                label=band_of(target_power, scheme) if scheme is not None else None,
            )
        )
    return instances
