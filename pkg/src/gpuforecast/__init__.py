"""Two-stage GPU resource and power prediction for HPC job traces.

Stage 1 regresses per-job maximum GPU utilization, maximum GPU-memory
utilization, and average power from scheduler submission features alone.
Stage 2 classifies the next-step average power band at runtime from sliding
windows of GPU telemetry. Both stages are built on an in-package
histogram-based gradient-boosted tree learner.
"""

__version__ = "0.1.0"

#: Version of every on-disk format this package writes (model bundles,
#: joined telemetry, ground-truth files).
SCHEMA_VERSION = 1

from .domain import (  # noqa: E402,F401
    AggregateTargets,
    DcgmSample,
    JobTelemetry,
    PowerBandScheme,
    SlurmJobRecord,
    aggregate_targets,
    band_of,
    mem_utilization,
)
from .errors import ConfigError, DataError, GpuForecastError  # noqa: E402,F401
