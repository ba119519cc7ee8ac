"""Command-line interface.

Subcommands cover the whole pipeline: synth -> ingest -> stats ->
train/eval stage 1 and 2 -> replay. Every command is deterministic given
its inputs, flags, and seeds.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Each subcommand accepts --config FILE (JSON object of flag defaults);
explicitly passed flags win over config values.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import SCHEMA_VERSION, __version__
from .domain import TARGET_NAMES
from .errors import ConfigError, DataError, GpuForecastError
from .evaluation import (
    classification_metrics,
    distribution_report,
    regression_report,
    write_confusion_csv,
    write_csv,
    write_distribution_tables,
    write_importance_csv,
    write_json_report,
)
from .featurize import WINDOW_LENGTH, chrono_split, job_step_means, window_feature_names
from .gbdt import GbdtParams
from .ingest import IngestConfig, filter_irregular, iter_dcgm, join, parse_slurm, read_telemetry, write_telemetry
from .predict import (
    baseline_max,
    baseline_mean,
    load_stage1,
    load_stage2,
    predict_uopc,
    save_stage1,
    save_stage2,
    train_stage1,
    train_stage2,
    train_uopc,
)
from .synth import SynthConfig, generate


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise _UsageError(message)


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    return cfg


def _resolve(args: argparse.Namespace, defaults: dict) -> dict:
    """Flag > config file > built-in default."""
    config = _load_config(args.config)
    unknown = set(config) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for key, default in defaults.items():
        value = getattr(args, key, None)
        if value is None:
            value = config.get(key, default)
        out[key] = value
    return out


def _require(opts: dict, *keys: str) -> None:
    for k in keys:
        if opts[k] is None:
            raise _UsageError(f"missing required option --{k.replace('_', '-')}")


def _parse_params(text: str | None) -> GbdtParams:
    if not text:
        return GbdtParams()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--params is not valid JSON: {exc}") from None
    try:
        return dataclasses.replace(GbdtParams(), **d)
    except TypeError as exc:
        raise ConfigError(f"--params: {exc}") from None


def _parse_bands(text: str) -> tuple[str, list[float] | None]:
    if text == "quantile":
        return "quantile", None
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"--bands must be 'quantile' or three comma-separated watts, got {text!r}") from None
    if len(values) != 3:
        raise ConfigError("--bands needs exactly three thresholds")
    return "explicit", values


def _split_jobs(path: str, fraction: float):
    jobs = [j for j in read_telemetry(path) if j.targets is not None]
    return chrono_split(jobs, fraction)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_synth(args) -> int:
    opts = _resolve(args, {"out": None, "seed": None, "synth_config": None})
    _require(opts, "out")
    if opts["synth_config"]:
        p = Path(opts["synth_config"])
        if not p.is_file():
            raise ConfigError(f"generator config not found: {p}")
        try:
            cfg = SynthConfig.from_dict(json.loads(p.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"{p}: invalid generator config: {exc}") from None
    else:
        cfg = SynthConfig()
    if opts["seed"] is not None:
        cfg = dataclasses.replace(cfg, seed=int(opts["seed"]))
    out = generate(cfg, opts["out"])
    n_steps = sum(len(t.step_bands) for t in out.truth.values())
    print(f"generated {len(out.truth)} jobs, {n_steps} steps -> {out.slurm_path.parent}")
    print(f"band boundaries: {list(out.scheme.boundaries)}")
    band_counts = np.zeros(4, dtype=int)
    for t in out.truth.values():
        for _, b in t.step_bands:
            band_counts[b] += 1
    print(f"true step bands: {band_counts.tolist()}")
    return 0


def cmd_ingest(args) -> int:
    opts = _resolve(
        args,
        {
            "slurm": None,
            "dcgm": None,
            "out": None,
            "app_filter": None,
            "min_interval": 10.0,
            "tolerance": 0.5,
        },
    )
    _require(opts, "slurm", "dcgm", "out")
    cfg = IngestConfig(
        min_interval_s=float(opts["min_interval"]),
        interval_tolerance_s=float(opts["tolerance"]),
        application_filter=opts["app_filter"],
    )
    slurm = parse_slurm(opts["slurm"])
    dcgm_rejects: list = []
    samples = filter_irregular(iter_dcgm(opts["dcgm"], dcgm_rejects), cfg)
    result = join(slurm.records, samples, cfg)
    write_telemetry(opts["out"], result.jobs)
    print(
        f"{len(result.jobs)} jobs, {result.sample_count} samples, "
        f"{result.orphan_count} orphans, {result.empty_job_count} empty jobs, "
        f"{result.filtered_job_count} filtered by app"
    )
    rejects = [("slurm", d) for d in slurm.rejected] + [("dcgm", d) for d in dcgm_rejects]
    if rejects:
        print(f"rejected {len(rejects)} rows:", file=sys.stderr)
        for source, diag in rejects:
            print(f"  {source} {diag}", file=sys.stderr)
        return 2
    return 0


def cmd_stats(args) -> int:
    opts = _resolve(args, {"infile": None, "out": None})
    _require(opts, "infile", "out")
    jobs = read_telemetry(opts["infile"])
    report = distribution_report(jobs)
    written = write_distribution_tables(report, opts["out"])
    for name, dist in report.metrics.items():
        p = dist.percentiles
        print(f"{name}: p10={p['p10']:.2f} p50={p['p50']:.2f} p75={p['p75']:.2f} p95={p['p95']:.2f}")
    print(f"wrote {len(written)} files to {opts['out']}")
    return 0


def cmd_train_stage1(args) -> int:
    opts = _resolve(args, {"infile": None, "model": None, "split": 0.8, "params": None})
    _require(opts, "infile", "model")
    train, _ = _split_jobs(opts["infile"], float(opts["split"]))
    predictor = train_stage1(train, params=_parse_params(opts["params"]))
    save_stage1(opts["model"], predictor)
    print(f"trained stage-1 bundle on {len(train)} jobs -> {opts['model']}")
    for target, imp in predictor.importances().items():
        order = np.argsort(imp)[::-1][:3]
        names = predictor.config.names
        tops = ", ".join(f"{names[i]}={imp[i]:.3f}" for i in order)
        print(f"  {target}: top importances {tops}")
    return 0


def cmd_eval_stage1(args) -> int:
    opts = _resolve(
        args,
        {
            "infile": None,
            "model": None,
            "split": 0.8,
            "out": None,
            "baseline": None,
            "k": 5,
            "min_jobs": 10,
        },
    )
    _require(opts, "infile", "model")
    train, test = _split_jobs(opts["infile"], float(opts["split"]))
    if not test:
        raise DataError("eval-stage1: empty test split")
    predictor = load_stage1(opts["model"])

    records = [j.record for j in test]
    truth = np.array([j.targets.as_tuple() for j in test])
    pred = predictor.predict_batch(records)

    report: dict = {"n_train": len(train), "n_test": len(test), "targets": {}}
    for i, target in enumerate(TARGET_NAMES):
        rr = regression_report(truth[:, i], pred[:, i])
        report["targets"][target] = rr.to_dict()
        r2s = "undefined" if rr.r2 is None else f"{rr.r2:.3f}"
        print(f"{target}: sym_acc={rr.sym_accuracy:.3f} mae={rr.mae:.3f} r2={r2s}")

    if opts["baseline"] == "uopc":
        baseline = train_uopc(train, k=int(opts["k"]), min_jobs=int(opts["min_jobs"]))
        covered_idx = [i for i, r in enumerate(records) if baseline.covered(r.user)]
        test_users = {r.user for r in records}
        covered_users = {records[i].user for i in covered_idx}
        print(
            f"uopc coverage: {len(covered_idx)}/{len(records)} test jobs, "
            f"{len(covered_users)}/{len(test_users)} test users "
            f"(min_jobs={baseline.min_jobs}, k={baseline.k})"
        )
        report["uopc"] = {
            "k": baseline.k,
            "min_jobs": baseline.min_jobs,
            "covered_jobs": len(covered_idx),
            "test_jobs": len(records),
            "covered_users": len(covered_users),
            "test_users": len(test_users),
            "targets": {},
            "framework_on_covered": {},
        }
        if covered_idx:
            up = np.array([predict_uopc(baseline, records[i]).as_tuple() for i in covered_idx])
            tc = truth[covered_idx]
            fc = pred[covered_idx]
            for i, target in enumerate(TARGET_NAMES):
                ur = regression_report(tc[:, i], up[:, i])
                fr = regression_report(tc[:, i], fc[:, i])
                report["uopc"]["targets"][target] = ur.to_dict()
                report["uopc"]["framework_on_covered"][target] = fr.to_dict()
                print(
                    f"  {target} (covered jobs): framework sym_acc={fr.sym_accuracy:.3f} "
                    f"vs uopc sym_acc={ur.sym_accuracy:.3f}"
                )

    if opts["out"]:
        out_dir = Path(opts["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json_report(out_dir / "stage1_report.json", report)
        for target, model in predictor.models.items():
            write_importance_csv(
                out_dir / f"importance_{target}.csv",
                predictor.config.names,
                model.feature_importance("gain"),
            )
        print(f"wrote report to {out_dir}")
    return 0


def cmd_train_stage2(args) -> int:
    opts = _resolve(
        args,
        {
            "infile": None,
            "model": None,
            "split": 0.8,
            "bands": "quantile",
            "window": WINDOW_LENGTH,
            "params": None,
        },
    )
    _require(opts, "infile", "model")
    window = int(opts["window"])
    if window < 1:
        raise ConfigError("--window must be >= 1")
    if window != WINDOW_LENGTH:
        raise ConfigError(f"this build supports only --window {WINDOW_LENGTH}")
    mode, boundaries = _parse_bands(str(opts["bands"]))
    train, _ = _split_jobs(opts["infile"], float(opts["split"]))
    predictor = train_stage2(train, params=_parse_params(opts["params"]), band_mode=mode, boundaries=boundaries)
    save_stage2(opts["model"], predictor)
    n_windows = sum(len(predictor.windows_for(j)) for j in train)
    print(
        f"trained stage-2 bundle on {len(train)} jobs ({n_windows} windows) -> {opts['model']}"
    )
    print(f"band scheme ({mode}): {list(predictor.scheme.boundaries)}")
    return 0


def cmd_eval_stage2(args) -> int:
    opts = _resolve(args, {"infile": None, "model": None, "split": 0.8, "out": None})
    _require(opts, "infile", "model")
    train, test = _split_jobs(opts["infile"], float(opts["split"]))
    if not test:
        raise DataError("eval-stage2: empty test split")
    predictor = load_stage2(opts["model"])

    windows = []
    for job in test:
        windows.extend(predictor.windows_for(job))
    if not windows:
        raise DataError("eval-stage2: no test job is long enough to form windows")
    truth = np.array([predictor.label_window(w) for w in windows])
    model_bands, _ = predictor.predict_windows(windows)
    max_bands = np.array([baseline_max(w, predictor.scheme) for w in windows])
    mean_bands = np.array([baseline_mean(w, predictor.scheme) for w in windows])

    reports = {
        "model": classification_metrics(truth, model_bands),
        "baseline_max": classification_metrics(truth, max_bands),
        "baseline_mean": classification_metrics(truth, mean_bands),
    }
    header = f"band scheme: {list(predictor.scheme.boundaries)}"
    print(header)
    for name, rep in reports.items():
        print(f"{name}: accuracy={rep.accuracy:.3f} macro_f1={rep.macro_f1:.3f}")

    if opts["out"]:
        out_dir = Path(opts["out"])
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json_report(
            out_dir / "stage2_report.json",
            {
                "band_scheme": list(predictor.scheme.boundaries),
                "n_windows": len(windows),
                "n_test_jobs": len(test),
                **{name: rep.to_dict() for name, rep in reports.items()},
            },
        )
        for name, rep in reports.items():
            write_confusion_csv(out_dir / f"confusion_{name}.csv", rep)
        write_importance_csv(
            out_dir / "importance_stage2.csv",
            window_feature_names(predictor.config),
            predictor.model.feature_importance("gain"),
        )
        write_csv(
            out_dir / "trace_bands.csv",
            ("job_id", "prediction_time", "true_band", "model_band", "max_band", "mean_band"),
            [
                (w.job_id, w.prediction_time, int(truth[i]), int(model_bands[i]), int(max_bands[i]), int(mean_bands[i]))
                for i, w in enumerate(windows)
            ],
        )
        print(f"wrote report to {out_dir}")
    return 0


def cmd_replay(args) -> int:
    opts = _resolve(args, {"infile": None, "model": None, "job": None, "out": None})
    _require(opts, "infile", "model", "job", "out")
    predictor = load_stage2(opts["model"])
    jobs = {j.record.job_id: j for j in read_telemetry(opts["infile"])}
    job = jobs.get(str(opts["job"]))
    if job is None:
        raise DataError(f"unknown job id {opts['job']!r}")
    windows = predictor.windows_for(job)
    if not windows:
        raise DataError(
            f"job {job.record.job_id} is too short to replay: "
            f"need at least {WINDOW_LENGTH + 1} aligned steps"
        )
    windows.sort(key=lambda w: w.prediction_time)
    bands, _ = predictor.predict_windows(windows)

    directives = []
    last_band = None
    for w, band in zip(windows, bands):
        band = int(band)
        if band != last_band:
            bound = predictor.scheme.boundaries
            cap = repr(bound[band]) if band < len(bound) else "inf"
            directives.append((w.prediction_time, band, cap))
            last_band = band
    write_csv(opts["out"], ("timestamp", "band", "cap_watts"), directives)

    n_steps = len(job_step_means(job)[0])
    print(
        f"job {job.record.job_id}: steps={n_steps} predictions={len(windows)} "
        f"directives={len(directives)} cap_changes={len(directives) - 1}"
    )
    return 0


# ---------------------------------------------------------------------------


def _add_common(p: _Parser) -> None:
    p.add_argument("--config", help="JSON file of flag defaults (flags win)")


def build_parser() -> _Parser:
    parser = _Parser(prog="gpuforecast", description=__doc__)
    parser.add_argument(
        "--version", action="version", version=f"gpuforecast {__version__} (schema {SCHEMA_VERSION})"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic trace with ground truth")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="RNG seed (overrides config)")
    p.add_argument("--synth-config", dest="synth_config", help="JSON generator config")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse, filter, and join trace files")
    p.add_argument("--slurm", help="scheduler accounting CSV")
    p.add_argument("--dcgm", help="telemetry CSV")
    p.add_argument("--out", help="joined telemetry output (JSONL)")
    p.add_argument("--app-filter", dest="app_filter", help="fnmatch pattern on executable")
    p.add_argument("--min-interval", dest="min_interval", type=float, help="sample cadence seconds")
    p.add_argument("--tolerance", type=float, help="cadence tolerance seconds")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", help="distribution report of the three targets")
    p.add_argument("--in", dest="infile", help="joined telemetry JSONL")
    p.add_argument("--out", help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train-stage1", help="train pre-submission regressors")
    p.add_argument("--in", dest="infile", help="joined telemetry JSONL")
    p.add_argument("--model", help="bundle output path")
    p.add_argument("--split", type=float, help="chronological train fraction")
    p.add_argument("--params", help="JSON overrides for training params")
    _add_common(p)
    p.set_defaults(func=cmd_train_stage1)

    p = sub.add_parser("eval-stage1", help="evaluate stage-1 bundle on the test split")
    p.add_argument("--in", dest="infile", help="joined telemetry JSONL")
    p.add_argument("--model", help="bundle path")
    p.add_argument("--split", type=float, help="chronological train fraction")
    p.add_argument("--out", help="report output directory")
    p.add_argument("--baseline", choices=["uopc"], help="also evaluate the per-user KNN baseline")
    p.add_argument("--k", type=int, help="baseline neighbor count")
    p.add_argument("--min-jobs", dest="min_jobs", type=int, help="baseline per-user training minimum")
    _add_common(p)
    p.set_defaults(func=cmd_eval_stage1)

    p = sub.add_parser("train-stage2", help="train the runtime band classifier")
    p.add_argument("--in", dest="infile", help="joined telemetry JSONL")
    p.add_argument("--model", help="bundle output path")
    p.add_argument("--split", type=float, help="chronological train fraction")
    p.add_argument("--bands", help="'quantile' or three comma-separated watt thresholds")
    p.add_argument("--window", type=int, help="observed steps per window")
    p.add_argument("--params", help="JSON overrides for training params")
    _add_common(p)
    p.set_defaults(func=cmd_train_stage2)

    p = sub.add_parser("eval-stage2", help="evaluate stage-2 bundle and naive baselines")
    p.add_argument("--in", dest="infile", help="joined telemetry JSONL")
    p.add_argument("--model", help="bundle path")
    p.add_argument("--split", type=float, help="chronological train fraction")
    p.add_argument("--out", help="report output directory")
    _add_common(p)
    p.set_defaults(func=cmd_eval_stage2)

    p = sub.add_parser("replay", help="stream one job and emit power-cap directives")
    p.add_argument("--in", dest="infile", help="joined telemetry JSONL")
    p.add_argument("--model", help="stage-2 bundle path")
    p.add_argument("--job", help="job id to replay")
    p.add_argument("--out", help="directive log output (CSV)")
    _add_common(p)
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except GpuForecastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - safety net
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
