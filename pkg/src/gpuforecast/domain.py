"""Core data types for GPU job traces and the derived quantities on them.

A trace consists of scheduler accounting records (one per job) and per-GPU
telemetry samples collected on a 10-second cadence. Everything downstream
(feature building, training, evaluation) works on the joined form,
:class:`JobTelemetry`, and the aggregate targets derived from it.

All types are immutable after construction and validate their invariants
eagerly, so a constructed value is always safe to share.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable

from .errors import ConfigError, DataError

#: Telemetry cadence in seconds. Sample streams are regular multiples of
#: this after irregular-point filtering.
SAMPLE_INTERVAL_S = 10

#: Number of power bands used for runtime classification.
N_BANDS = 4

#: DCGM metric names in the order they appear in window feature vectors.
DCGM_METRICS = (
    "gpu_utilization",
    "mem_utilization",
    "sm_active",
    "sm_occupancy",
    "dram_active",
    "fp64_active",
    "tensor_active",
    "power_usage",
)


@dataclass(frozen=True)
class SlurmJobRecord:
    """Submission-time accounting fields for one GPU job."""

    job_id: str
    user: str
    job_name: str
    account: str
    category: str
    req_cpus: int
    req_nodes: int
    req_gpus: int
    req_mem: int  # MiB
    time_limit: int  # seconds
    start_time: int  # epoch seconds
    end_time: int  # epoch seconds
    node_list: frozenset[str]
    executable: str

    def __post_init__(self):
        if self.end_time < self.start_time:
            raise DataError(
                f"job {self.job_id}: end_time {self.end_time} precedes "
                f"start_time {self.start_time}"
            )
        if self.time_limit <= 0:
            raise DataError(f"job {self.job_id}: time_limit must be positive")
        if self.req_nodes < 1:
            raise DataError(f"job {self.job_id}: req_nodes must be >= 1")
        if not self.node_list:
            raise DataError(f"job {self.job_id}: empty node_list")
        if len(self.node_list) != self.req_nodes:
            raise DataError(
                f"job {self.job_id}: node_list has {len(self.node_list)} "
                f"nodes but req_nodes is {self.req_nodes}"
            )

    @property
    def duration_s(self) -> int:
        return self.end_time - self.start_time


@dataclass(frozen=True)
class DcgmSample:
    """One timestamped telemetry reading for a single GPU."""

    job_id: str
    node: str
    gpu_index: int
    timestamp: int  # epoch seconds
    gpu_utilization: float  # percent 0-100
    fb_used: float  # MB
    fb_free: float  # MB
    sm_active: float  # ratio 0-1
    sm_occupancy: float
    dram_active: float
    fp64_active: float
    tensor_active: float
    power_usage: float  # watts

    def __post_init__(self):
        if self.fb_used < 0 or self.fb_free < 0 or self.fb_used + self.fb_free <= 0:
            raise DataError(
                f"sample ({self.job_id}, {self.node}, gpu {self.gpu_index}, "
                f"t={self.timestamp}): framebuffer sizes invalid "
                f"(used={self.fb_used}, free={self.fb_free})"
            )
        for name in ("sm_active", "sm_occupancy", "dram_active", "fp64_active", "tensor_active"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(
                    f"sample ({self.job_id}, {self.node}, gpu {self.gpu_index}, "
                    f"t={self.timestamp}): {name}={v} outside [0, 1]"
                )
        if not 0.0 <= self.gpu_utilization <= 100.0:
            raise DataError(
                f"sample ({self.job_id}, {self.node}, gpu {self.gpu_index}, "
                f"t={self.timestamp}): gpu_utilization={self.gpu_utilization} "
                f"outside [0, 100]"
            )
        if self.power_usage < 0:
            raise DataError(
                f"sample ({self.job_id}, {self.node}, gpu {self.gpu_index}, "
                f"t={self.timestamp}): negative power_usage"
            )

    @property
    def mem_utilization(self) -> float:
        return mem_utilization(self.fb_used, self.fb_free)


@dataclass(frozen=True)
class AggregateTargets:
    """The three per-job prediction targets."""

    max_gpu_utilization: float  # percent
    max_mem_utilization: float  # percent
    avg_power: float  # watts

    def __post_init__(self):
        if not (0.0 <= self.max_gpu_utilization <= 100.0):
            raise DataError(f"max_gpu_utilization {self.max_gpu_utilization} outside [0, 100]")
        if not (0.0 <= self.max_mem_utilization <= 100.0):
            raise DataError(f"max_mem_utilization {self.max_mem_utilization} outside [0, 100]")
        if self.avg_power < 0:
            raise DataError(f"avg_power {self.avg_power} is negative")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.max_gpu_utilization, self.max_mem_utilization, self.avg_power)


TARGET_NAMES = ("max_gpu_utilization", "max_mem_utilization", "avg_power")


@dataclass(frozen=True)
class JobTelemetry:
    """A job joined with its (filtered) telemetry and derived targets.

    ``targets`` is None for jobs that matched no samples; such jobs are kept
    so data-quality problems stay visible rather than silently shrinking
    the corpus.
    """

    record: SlurmJobRecord
    samples: tuple[DcgmSample, ...]
    targets: AggregateTargets | None

    def __post_init__(self):
        rec = self.record
        for s in self.samples:
            if s.job_id != rec.job_id:
                raise DataError(
                    f"job {rec.job_id}: sample with foreign job_id {s.job_id}"
                )
            if s.node not in rec.node_list:
                raise DataError(
                    f"job {rec.job_id}: sample on node {s.node} not in node_list"
                )
            if not rec.start_time <= s.timestamp <= rec.end_time:
                raise DataError(
                    f"job {rec.job_id}: sample timestamp {s.timestamp} outside "
                    f"[{rec.start_time}, {rec.end_time}]"
                )
        if self.samples and self.targets is None:
            raise DataError(f"job {rec.job_id}: has samples but no targets")

    @property
    def empty(self) -> bool:
        return not self.samples


@dataclass(frozen=True)
class PowerBandScheme:
    """Three watt thresholds partitioning [0, inf) into 4 power bands.

    Intervals are lower-inclusive: band i covers [boundaries[i-1],
    boundaries[i]) with implicit boundaries of 0 below and infinity above.
    """

    boundaries: tuple[float, float, float]

    def __post_init__(self):
        b = self.boundaries
        if len(b) != N_BANDS - 1:
            raise ConfigError(f"need exactly {N_BANDS - 1} band boundaries, got {len(b)}")
        if not all(math.isfinite(x) for x in b):
            raise ConfigError(f"band boundaries must be finite: {b}")
        if not (b[0] < b[1] < b[2]):
            raise ConfigError(f"band boundaries must be strictly increasing: {b}")

    def band_of(self, power: float) -> int:
        return band_of(power, self)


def mem_utilization(fb_used: float, fb_free: float) -> float:
    """GPU memory utilization in percent: used over total framebuffer."""
    if fb_used < 0 or fb_free < 0:
        raise DataError(f"framebuffer sizes must be nonnegative: ({fb_used}, {fb_free})")
    total = fb_used + fb_free
    if total <= 0:
        raise DataError("degenerate framebuffer: fb_used + fb_free must be > 0")
    return 100.0 * fb_used / total


def aggregate_targets(samples: Iterable[DcgmSample]) -> AggregateTargets:
    """Collapse a job's sample series into its three prediction targets.

    Max GPU / memory utilization are maxima over every sample from every
    GPU; average power is the arithmetic mean of all reported power values.
    """
    samples = list(samples)
    if not samples:
        raise DataError("aggregate_targets: empty sample list")
    max_gpu = max(s.gpu_utilization for s in samples)
    max_mem = max(s.mem_utilization for s in samples)
    avg_power = math.fsum(s.power_usage for s in samples) / len(samples)
    return AggregateTargets(max_gpu, max_mem, avg_power)


def band_of(power: float, scheme: PowerBandScheme) -> int:
    """Map a wattage onto its power band index (0 = lowest)."""
    if power < 0:
        raise DataError(f"power must be nonnegative, got {power}")
    return bisect_right(scheme.boundaries, power)
