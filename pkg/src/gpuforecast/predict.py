"""The two prediction stages and the comparison baselines.

Stage 1: three boosted regressors (max GPU utilization, max memory
utilization, average power) over submission features only, sharing one
fitted encoder and scaler. Stage 2: a 4-band classifier over sliding
telemetry windows. Baselines: per-user KNN regression (trained only for
users with enough history) and the naive max/mean band predictors over the
window's power history.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import SCHEMA_VERSION
from .domain import AggregateTargets, JobTelemetry, PowerBandScheme, SlurmJobRecord, TARGET_NAMES, band_of
from .errors import ConfigError, DataError
from .featurize import (
    FeatureConfig,
    OrdinalEncoder,
    StandardScaler,
    WINDOW_LENGTH,
    WindowInstance,
    build_windows,
    fit_band_scheme,
    fit_encoder,
    fit_scaler,
    stage1_features,
    stage1_targets,
    window_feature_names,
)
from .gbdt import GbdtModel, GbdtParams, fit_multiclass, fit_regression
from .gbdt.serialize import load_json, model_from_dict, model_to_dict, save_json


def _clamp_targets(gpu_util: float, mem_util: float, power: float) -> AggregateTargets:
    return AggregateTargets(
        max_gpu_utilization=float(np.clip(gpu_util, 0.0, 100.0)),
        max_mem_utilization=float(np.clip(mem_util, 0.0, 100.0)),
        avg_power=float(max(power, 0.0)),
    )


@dataclass
class Stage1Predictor:
    """Pre-submission regressors for the three aggregate targets."""

    models: dict[str, GbdtModel]  # keyed by target name, same feature schema
    encoder: OrdinalEncoder
    scaler: StandardScaler
    config: FeatureConfig

    def _matrix(self, records: Sequence[SlurmJobRecord]) -> np.ndarray:
        return self.scaler.transform(stage1_features(records, self.encoder, self.config))

    def predict_record(self, record: SlurmJobRecord) -> AggregateTargets:
        X = self._matrix([record])
        return _clamp_targets(*(self.models[t].predict(X)[0] for t in TARGET_NAMES))

    def predict_batch(self, records: Sequence[SlurmJobRecord]) -> np.ndarray:
        """(n, 3) clamped predictions, columns in TARGET_NAMES order."""
        X = self._matrix(records)
        cols = []
        for i, t in enumerate(TARGET_NAMES):
            raw = self.models[t].predict(X)
            hi = 100.0 if i < 2 else np.inf
            cols.append(np.clip(raw, 0.0, hi))
        return np.column_stack(cols)

    def importances(self, kind: str = "gain") -> dict[str, np.ndarray]:
        return {t: m.feature_importance(kind) for t, m in self.models.items()}


def train_stage1(
    train_jobs: Sequence[JobTelemetry],
    config: FeatureConfig = FeatureConfig(),
    params: GbdtParams = GbdtParams(),
) -> Stage1Predictor:
    jobs = [j for j in train_jobs if j.targets is not None]
    if len(jobs) < 2:
        raise DataError("train_stage1: need at least 2 jobs with targets")
    records = [j.record for j in jobs]
    encoder = fit_encoder(records, config.categorical)
    raw = stage1_features(records, encoder, config)
    scaler = fit_scaler(raw)
    X = scaler.transform(raw)
    y = stage1_targets(jobs)
    preprocessing = {
        "encoder": encoder.to_dict(),
        "scaler": scaler.to_dict(),
        "feature_config": {"categorical": list(config.categorical), "numeric": list(config.numeric)},
    }
    models = {}
    for i, target in enumerate(TARGET_NAMES):
        model = fit_regression(X, y[:, i], params, feature_names=config.names)
        model.preprocessing = preprocessing
        models[target] = model
    return Stage1Predictor(models=models, encoder=encoder, scaler=scaler, config=config)


def predict_stage1(predictor: Stage1Predictor, record: SlurmJobRecord) -> AggregateTargets:
    return predictor.predict_record(record)


@dataclass
class Stage2Predictor:
    """Next-step power-band classifier over 3-step telemetry windows."""

    model: GbdtModel
    encoder: OrdinalEncoder
    scaler: StandardScaler
    scheme: PowerBandScheme
    config: FeatureConfig
    window: int = WINDOW_LENGTH

    def windows_for(self, job: JobTelemetry) -> list[WindowInstance]:
        """Raw (unscaled) windows; scaling happens at prediction time."""
        return build_windows(job, self.encoder, config=self.config)

    def predict_window(self, window: WindowInstance) -> tuple[int, np.ndarray]:
        bands, probs = self.predict_windows([window])
        return int(bands[0]), probs[0]

    def predict_windows(self, windows: Sequence[WindowInstance]) -> tuple[np.ndarray, np.ndarray]:
        if not windows:
            return np.empty(0, dtype=np.int64), np.empty((0, 4))
        X = self.scaler.transform(np.array([w.features for w in windows], dtype=np.float64))
        probs = self.model.predict_proba(X)
        return np.argmax(probs, axis=1), probs

    def label_window(self, window: WindowInstance) -> int:
        return band_of(window.target_power, self.scheme)


def train_stage2(
    train_jobs: Sequence[JobTelemetry],
    params: GbdtParams = GbdtParams(),
    band_mode: str = "quantile",
    boundaries: Sequence[float] | None = None,
    config: FeatureConfig = FeatureConfig(),
) -> Stage2Predictor:
    """Fit the runtime classifier on every window of the training jobs.

    The band scheme comes from the training windows' next-step power values
    (quantile mode) or from explicit thresholds. Single-band training data
    degrades to a flagged constant-probability model rather than failing.
    """
    jobs = [j for j in train_jobs if not j.empty]
    if not jobs:
        raise DataError("train_stage2: no jobs with telemetry")
    encoder = fit_encoder([j.record for j in jobs], config.categorical)
    windows: list[WindowInstance] = []
    for job in jobs:
        windows.extend(build_windows(job, encoder, config=config))
    if not windows:
        raise DataError("train_stage2: no jobs long enough to form windows")

    raw = np.array([w.features for w in windows], dtype=np.float64)
    scaler = fit_scaler(raw)
    X = scaler.transform(raw)
    target_power = [w.target_power for w in windows]
    scheme = fit_band_scheme(target_power, mode=band_mode, boundaries=boundaries)
    labels = np.array([band_of(p, scheme) for p in target_power], dtype=np.int64)

    model = fit_multiclass(X, labels, params, feature_names=window_feature_names(config))
    model.preprocessing = {
        "encoder": encoder.to_dict(),
        "scaler": scaler.to_dict(),
        "feature_config": {"categorical": list(config.categorical), "numeric": list(config.numeric)},
        "band_scheme": {"boundaries": list(scheme.boundaries)},
        "window": WINDOW_LENGTH,
    }
    return Stage2Predictor(model=model, encoder=encoder, scaler=scaler, scheme=scheme, config=config)


def predict_stage2(predictor: Stage2Predictor, window: WindowInstance) -> tuple[int, np.ndarray]:
    return predictor.predict_window(window)


def baseline_max(window: WindowInstance, scheme: PowerBandScheme) -> int:
    """Band of the maximum power over the three observed steps."""
    return band_of(max(window.power_history), scheme)


def baseline_mean(window: WindowInstance, scheme: PowerBandScheme) -> int:
    """Band of the mean power over the three observed steps."""
    return band_of(sum(window.power_history) / len(window.power_history), scheme)


@dataclass
class UopcBaseline:
    """Per-user KNN regressors over scaled submission features.

    Users with fewer than ``min_jobs`` training jobs (or unseen at training
    time) are excluded: prediction returns None, never a silent default.
    """

    k: int
    min_jobs: int
    encoder: OrdinalEncoder
    scaler: StandardScaler
    config: FeatureConfig
    users: dict[str, tuple[np.ndarray, np.ndarray]]  # user -> (X, y3)
    excluded_users: frozenset[str]

    def covered(self, user: str) -> bool:
        return user in self.users


def train_uopc(
    train_jobs: Sequence[JobTelemetry],
    k: int = 5,
    min_jobs: int = 10,
    config: FeatureConfig = FeatureConfig(),
) -> UopcBaseline:
    if k < 1:
        raise ConfigError("k must be >= 1")
    if min_jobs < 1:
        raise ConfigError("min_jobs must be >= 1")
    jobs = [j for j in train_jobs if j.targets is not None]
    if not jobs:
        raise DataError("train_uopc: no jobs with targets")
    records = [j.record for j in jobs]
    encoder = fit_encoder(records, config.categorical)
    raw = stage1_features(records, encoder, config)
    scaler = fit_scaler(raw)
    X = scaler.transform(raw)
    y = stage1_targets(jobs)

    by_user: dict[str, list[int]] = {}
    for i, rec in enumerate(records):
        by_user.setdefault(rec.user, []).append(i)

    users = {}
    excluded = set()
    for user, idxs in by_user.items():
        if len(idxs) >= min_jobs:
            users[user] = (X[idxs], y[idxs])
        else:
            excluded.add(user)
    return UopcBaseline(
        k=k,
        min_jobs=min_jobs,
        encoder=encoder,
        scaler=scaler,
        config=config,
        users=users,
        excluded_users=frozenset(excluded),
    )


def predict_uopc(baseline: UopcBaseline, record: SlurmJobRecord) -> AggregateTargets | None:
    """Mean targets of the k nearest same-user training jobs, or None."""
    entry = baseline.users.get(record.user)
    if entry is None:
        return None
    Xu, yu = entry
    x = baseline.scaler.transform(stage1_features([record], baseline.encoder, baseline.config))[0]
    d2 = np.sum((Xu - x) ** 2, axis=1)
    order = np.argsort(d2, kind="stable")[: baseline.k]
    mean = yu[order].mean(axis=0)
    return _clamp_targets(mean[0], mean[1], mean[2])


# ---------------------------------------------------------------------------
# Predictor bundles: the gbdt model format plus a manifest


def _feature_config_from_dict(d: dict) -> FeatureConfig:
    return FeatureConfig(categorical=tuple(d["categorical"]), numeric=tuple(d["numeric"]))


def save_stage1(path: str | Path, predictor: Stage1Predictor) -> None:
    save_json(
        path,
        {
            "schema_version": SCHEMA_VERSION,
            "kind": "stage1_bundle",
            "manifest": {"targets": list(TARGET_NAMES), "features": list(predictor.config.names)},
            "models": {t: model_to_dict(m) for t, m in predictor.models.items()},
        },
    )


def load_stage1(path: str | Path) -> Stage1Predictor:
    d = load_json(path)
    if d.get("kind") != "stage1_bundle":
        raise DataError(f"{path}: not a stage-1 bundle")
    models = {t: model_from_dict(md) for t, md in d["models"].items()}
    missing = [t for t in TARGET_NAMES if t not in models]
    if missing:
        raise DataError(f"{path}: bundle missing target models {missing}")
    pre = models[TARGET_NAMES[0]].preprocessing
    return Stage1Predictor(
        models=models,
        encoder=OrdinalEncoder.from_dict(pre["encoder"]),
        scaler=StandardScaler.from_dict(pre["scaler"]),
        config=_feature_config_from_dict(pre["feature_config"]),
    )


def save_stage2(path: str | Path, predictor: Stage2Predictor) -> None:
    save_json(
        path,
        {
            "schema_version": SCHEMA_VERSION,
            "kind": "stage2_bundle",
            "manifest": {"window": predictor.window, "bands": 4},
            "model": model_to_dict(predictor.model),
        },
    )


def load_stage2(path: str | Path) -> Stage2Predictor:
    d = load_json(path)
    if d.get("kind") != "stage2_bundle":
        raise DataError(f"{path}: not a stage-2 bundle")
    model = model_from_dict(d["model"])
    pre = model.preprocessing
    return Stage2Predictor(
        model=model,
        encoder=OrdinalEncoder.from_dict(pre["encoder"]),
        scaler=StandardScaler.from_dict(pre["scaler"]),
        scheme=PowerBandScheme(tuple(pre["band_scheme"]["boundaries"])),
        config=_feature_config_from_dict(pre["feature_config"]),
        window=int(pre["window"]),
    )
