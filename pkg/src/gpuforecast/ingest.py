"""Parsing, filtering, and joining of scheduler and telemetry files.

Input formats (both UTF-8, comma-delimited, one header row):

* scheduler file: columns ``job_id,user,job_name,account,category,req_cpus,
  req_nodes,req_gpus,req_mem_mb,time_limit_s,start_time,end_time,node_list,
  executable``. ``node_list`` is ``;``-separated node names, each either a
  plain name or a bracket range like ``nid[001-004,007]``.
* telemetry file: columns ``job_id,node,gpu_index,timestamp,gpu_utilization,
  fb_used,fb_free,sm_active,sm_occupancy,dram_active,fp64_active,
  tensor_active,power_usage``.

Malformed rows are never fatal: they are skipped, counted, and reported with
row numbers. Structural problems (missing file, missing column, duplicate
job ids) raise :class:`~gpuforecast.errors.DataError`.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from fnmatch import fnmatch
from pathlib import Path
from typing import Iterable, Iterator

from .domain import AggregateTargets, DcgmSample, JobTelemetry, SlurmJobRecord, aggregate_targets
from .errors import ConfigError, DataError

SLURM_COLUMNS = (
    "job_id", "user", "job_name", "account", "category",
    "req_cpus", "req_nodes", "req_gpus", "req_mem_mb", "time_limit_s",
    "start_time", "end_time", "node_list", "executable",
)

DCGM_COLUMNS = (
    "job_id", "node", "gpu_index", "timestamp",
    "gpu_utilization", "fb_used", "fb_free",
    "sm_active", "sm_occupancy", "dram_active", "fp64_active",
    "tensor_active", "power_usage",
)


@dataclass(frozen=True)
class IngestConfig:
    """Knobs for sample filtering and job selection."""

    min_interval_s: float = 10.0
    interval_tolerance_s: float = 0.5
    application_filter: str | None = None  # fnmatch pattern on executable

    def __post_init__(self):
        if self.min_interval_s <= 0:
            raise ConfigError("min_interval_s must be positive")
        if not 0 <= self.interval_tolerance_s < self.min_interval_s:
            raise ConfigError("interval_tolerance_s must be in [0, min_interval_s)")


@dataclass(frozen=True)
class RowDiagnostic:
    """Why a data row was rejected. ``row`` is 1-based and counts the header."""

    row: int
    reason: str

    def __str__(self) -> str:
        return f"row {self.row}: {self.reason}"


@dataclass
class SlurmParseResult:
    records: list[SlurmJobRecord] = field(default_factory=list)
    rejected: list[RowDiagnostic] = field(default_factory=list)


_BRACKET_RE = re.compile(r"^([^\[\]]*)\[([0-9,\-]+)\]$")


def expand_node_list(text: str) -> frozenset[str]:
    """Expand a ``;``-separated node list with optional bracket ranges.

    ``nid[001-003]`` expands to ``nid001, nid002, nid003``; zero padding is
    taken from the left endpoint of each span.
    """
    nodes: set[str] = set()
    for token in text.split(";"):
        token = token.strip()
        if not token:
            continue
        m = _BRACKET_RE.match(token)
        if m is None:
            if "[" in token or "]" in token:
                raise DataError(f"malformed node range {token!r}")
            nodes.add(token)
            continue
        prefix, body = m.groups()
        for part in body.split(","):
            if not part:
                raise DataError(f"malformed node range {token!r}")
            lo, sep, hi = part.partition("-")
            try:
                lo_i = int(lo)
                hi_i = int(hi) if sep else lo_i
            except ValueError:
                raise DataError(f"malformed node range {token!r}") from None
            if hi_i < lo_i:
                raise DataError(f"descending node range {token!r}")
            width = len(lo)
            nodes.update(f"{prefix}{i:0{width}d}" for i in range(lo_i, hi_i + 1))
    if not nodes:
        raise DataError(f"empty node list {text!r}")
    return frozenset(nodes)


def _open_csv(path: str | Path, expected: tuple[str, ...]) -> tuple[object, csv.DictReader]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    fh = path.open(newline="", encoding="utf-8")
    reader = csv.DictReader(fh)
    header = reader.fieldnames or []
    missing = [c for c in expected if c not in header]
    if missing:
        fh.close()
        raise DataError(f"{path}: missing mandatory columns {missing}")
    return fh, reader


def parse_slurm(path: str | Path) -> SlurmParseResult:
    """Read scheduler records, preserving file order.

    Rows whose mandatory fields do not parse (bad integers, bad node
    ranges, violated record invariants) are rejected with a diagnostic.
    """
    fh, reader = _open_csv(path, SLURM_COLUMNS)
    result = SlurmParseResult()
    with fh:
        for lineno, row in enumerate(reader, start=2):
            try:
                result.records.append(
                    SlurmJobRecord(
                        job_id=row["job_id"],
                        user=row["user"],
                        job_name=row["job_name"],
                        account=row["account"],
                        category=row["category"],
                        req_cpus=_int_field(row, "req_cpus"),
                        req_nodes=_int_field(row, "req_nodes"),
                        req_gpus=_int_field(row, "req_gpus"),
                        req_mem=_int_field(row, "req_mem_mb"),
                        time_limit=_int_field(row, "time_limit_s"),
                        start_time=_int_field(row, "start_time"),
                        end_time=_int_field(row, "end_time"),
                        node_list=expand_node_list(row["node_list"]),
                        executable=row["executable"],
                    )
                )
            except DataError as exc:
                result.rejected.append(RowDiagnostic(lineno, str(exc)))
    return result


def _int_field(row: dict, name: str) -> int:
    try:
        return int(row[name])
    except (TypeError, ValueError):
        raise DataError(f"field {name}: cannot parse {row.get(name)!r} as integer") from None


def _float_field(row: dict, name: str) -> float:
    try:
        return float(row[name])
    except (TypeError, ValueError):
        raise DataError(f"field {name}: cannot parse {row.get(name)!r} as number") from None


def iter_dcgm(
    path: str | Path,
    rejected: list[RowDiagnostic] | None = None,
) -> Iterator[DcgmSample]:
    """Stream telemetry samples in file order with bounded memory.

    Invalid rows are appended to ``rejected`` (if given) and skipped.
    """
    fh, reader = _open_csv(path, DCGM_COLUMNS)
    with fh:
        for lineno, row in enumerate(reader, start=2):
            try:
                yield DcgmSample(
                    job_id=row["job_id"],
                    node=row["node"],
                    gpu_index=_int_field(row, "gpu_index"),
                    timestamp=_int_field(row, "timestamp"),
                    gpu_utilization=_float_field(row, "gpu_utilization"),
                    fb_used=_float_field(row, "fb_used"),
                    fb_free=_float_field(row, "fb_free"),
                    sm_active=_float_field(row, "sm_active"),
                    sm_occupancy=_float_field(row, "sm_occupancy"),
                    dram_active=_float_field(row, "dram_active"),
                    fp64_active=_float_field(row, "fp64_active"),
                    tensor_active=_float_field(row, "tensor_active"),
                    power_usage=_float_field(row, "power_usage"),
                )
            except DataError as exc:
                if rejected is not None:
                    rejected.append(RowDiagnostic(lineno, str(exc)))


def filter_irregular(
    samples: Iterable[DcgmSample],
    cfg: IngestConfig = IngestConfig(),
) -> Iterator[DcgmSample]:
    """Drop samples arriving faster than the collection cadence.

    Greedy keep-first scan per (job_id, node, gpu_index) key: the first
    sample of a key is kept, and a later one is kept iff it is at least
    ``min_interval_s - interval_tolerance_s`` after the last kept one.
    Keys may interleave, but each key's timestamps must be non-decreasing.
    """
    threshold = cfg.min_interval_s - cfg.interval_tolerance_s
    last_seen: dict[tuple[str, str, int], int] = {}
    last_kept: dict[tuple[str, str, int], int] = {}
    for s in samples:
        key = (s.job_id, s.node, s.gpu_index)
        prev = last_seen.get(key)
        if prev is not None and s.timestamp < prev:
            raise DataError(
                f"unsorted telemetry for key {key}: timestamp {s.timestamp} "
                f"after {prev}"
            )
        last_seen[key] = s.timestamp
        kept = last_kept.get(key)
        if kept is None or s.timestamp - kept >= threshold:
            last_kept[key] = s.timestamp
            yield s


@dataclass
class JoinResult:
    """Joined jobs plus the data-quality counters of the run."""

    jobs: list[JobTelemetry]
    orphan_count: int
    filtered_job_count: int  # records dropped by the application filter

    @property
    def sample_count(self) -> int:
        return sum(len(j.samples) for j in self.jobs)

    @property
    def empty_job_count(self) -> int:
        return sum(1 for j in self.jobs if j.empty)


def join(
    records: Iterable[SlurmJobRecord],
    samples: Iterable[DcgmSample],
    cfg: IngestConfig = IngestConfig(),
) -> JoinResult:
    """Attach each sample to its job by id, node membership, and time range.

    Samples matching no retained record are counted as orphans. Records with
    zero samples are emitted with empty telemetry. Jobs are returned in
    record order.
    """
    retained: dict[str, SlurmJobRecord] = {}
    filtered = 0
    for rec in records:
        if rec.job_id in retained:
            raise DataError(f"duplicate job_id among records: {rec.job_id}")
        if cfg.application_filter is not None and not fnmatch(rec.executable, cfg.application_filter):
            filtered += 1
            continue
        retained[rec.job_id] = rec

    per_job: dict[str, list[DcgmSample]] = {job_id: [] for job_id in retained}
    orphans = 0
    for s in samples:
        rec = retained.get(s.job_id)
        if (
            rec is None
            or s.node not in rec.node_list
            or not rec.start_time <= s.timestamp <= rec.end_time
        ):
            orphans += 1
            continue
        per_job[s.job_id].append(s)

    jobs = []
    for job_id, rec in retained.items():
        job_samples = tuple(per_job[job_id])
        targets = aggregate_targets(job_samples) if job_samples else None
        jobs.append(JobTelemetry(record=rec, samples=job_samples, targets=targets))
    return JoinResult(jobs=jobs, orphan_count=orphans, filtered_job_count=filtered)


# ---------------------------------------------------------------------------
# Joined-telemetry file format: one JSON object per line, field names exactly
# as in the domain types. node_list is serialized sorted for determinism.

def _record_to_dict(rec: SlurmJobRecord) -> dict:
    return {
        "job_id": rec.job_id,
        "user": rec.user,
        "job_name": rec.job_name,
        "account": rec.account,
        "category": rec.category,
        "req_cpus": rec.req_cpus,
        "req_nodes": rec.req_nodes,
        "req_gpus": rec.req_gpus,
        "req_mem": rec.req_mem,
        "time_limit": rec.time_limit,
        "start_time": rec.start_time,
        "end_time": rec.end_time,
        "node_list": sorted(rec.node_list),
        "executable": rec.executable,
    }


def _sample_to_dict(s: DcgmSample) -> dict:
    return {
        "job_id": s.job_id,
        "node": s.node,
        "gpu_index": s.gpu_index,
        "timestamp": s.timestamp,
        "gpu_utilization": s.gpu_utilization,
        "fb_used": s.fb_used,
        "fb_free": s.fb_free,
        "sm_active": s.sm_active,
        "sm_occupancy": s.sm_occupancy,
        "dram_active": s.dram_active,
        "fp64_active": s.fp64_active,
        "tensor_active": s.tensor_active,
        "power_usage": s.power_usage,
    }


def job_to_dict(job: JobTelemetry) -> dict:
    targets = None
    if job.targets is not None:
        targets = {
            "max_gpu_utilization": job.targets.max_gpu_utilization,
            "max_mem_utilization": job.targets.max_mem_utilization,
            "avg_power": job.targets.avg_power,
        }
    return {
        "record": _record_to_dict(job.record),
        "samples": [_sample_to_dict(s) for s in job.samples],
        "targets": targets,
    }


def job_from_dict(d: dict) -> JobTelemetry:
    r = dict(d["record"])
    r["node_list"] = frozenset(r["node_list"])
    record = SlurmJobRecord(**r)
    samples = tuple(DcgmSample(**s) for s in d["samples"])
    targets = AggregateTargets(**d["targets"]) if d.get("targets") else None
    return JobTelemetry(record=record, samples=samples, targets=targets)


def write_telemetry(path: str | Path, jobs: Iterable[JobTelemetry]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for job in jobs:
            fh.write(json.dumps(job_to_dict(job), sort_keys=True))
            fh.write("\n")


def read_telemetry(path: str | Path) -> list[JobTelemetry]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"input file not found: {path}")
    jobs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                jobs.append(job_from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
    return jobs
